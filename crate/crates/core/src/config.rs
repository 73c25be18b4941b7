//! Flat TOML run configuration shared by the command-line tools.
//!
//! Every key is optional; a missing key keeps the library default. Keys:
//!
//! | group | keys |
//! |---|---|
//! | model | `d_mem`, `d_emb`, `d_time`, `k_nbr`, `heads`, `gmm_components`, `d_seq`, `d_step`, `disable_attention` |
//! | training | `batch_size`, `epochs`, `learning_rate`, `candidate_multiplier`, `noise_sigma_start`, `noise_sigma_end`, `seed`, `disable_noise` |
//! | generation | `num_interactions`, `node_pool_size`, `generation_batch_size` |
//! | data | `f_train`, `f_val` |
//! | evaluation | `n_snapshots`, `bins_1d`, `bins_2d`, `negative_sampling` |
//!
//! `batch_size` also sets the generation batch size unless
//! `generation_batch_size` is given; `seed` feeds every random stream.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvaluationConfig, NegativeSampling};
use crate::generator::GenerationConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub const DEFAULT_F_TRAIN: f64 = 0.70;
pub const DEFAULT_F_VAL: f64 = 0.15;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d_mem: Option<usize>,
    pub d_emb: Option<usize>,
    pub d_time: Option<usize>,
    pub k_nbr: Option<usize>,
    pub heads: Option<usize>,
    pub gmm_components: Option<usize>,
    pub d_seq: Option<usize>,
    pub d_step: Option<usize>,
    pub disable_attention: Option<bool>,

    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub candidate_multiplier: Option<f64>,
    pub noise_sigma_start: Option<f64>,
    pub noise_sigma_end: Option<f64>,
    pub seed: Option<u64>,
    pub disable_noise: Option<bool>,

    pub num_interactions: Option<usize>,
    pub node_pool_size: Option<usize>,
    pub generation_batch_size: Option<usize>,

    pub f_train: Option<f64>,
    pub f_val: Option<f64>,

    pub n_snapshots: Option<usize>,
    pub bins_1d: Option<usize>,
    pub bins_2d: Option<usize>,
    pub negative_sampling: Option<NegativeSampling>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Keys set in `other` replace the ones here.
    pub fn overridden_by(mut self, other: &RunConfig) -> Self {
        overlay!(self, other;
            d_mem, d_emb, d_time, k_nbr, heads, gmm_components, d_seq, d_step, disable_attention,
            batch_size, epochs, learning_rate, candidate_multiplier, noise_sigma_start, noise_sigma_end,
            seed, disable_noise, num_interactions, node_pool_size, generation_batch_size,
            f_train, f_val, n_snapshots, bins_1d, bins_2d, negative_sampling,
        );
        self
    }

    pub fn model(&self) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            d_mem: self.d_mem.unwrap_or(d.d_mem),
            d_emb: self.d_emb.unwrap_or(d.d_emb),
            d_time: self.d_time.unwrap_or(d.d_time),
            k_nbr: self.k_nbr.unwrap_or(d.k_nbr),
            heads: self.heads.unwrap_or(d.heads),
            gmm_components: self.gmm_components.unwrap_or(d.gmm_components),
            d_seq: self.d_seq.or(d.d_seq),
            d_step: self.d_step.unwrap_or(d.d_step),
            disable_attention: self.disable_attention.unwrap_or(d.disable_attention),
        }
    }

    pub fn train(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            candidate_multiplier: self.candidate_multiplier.unwrap_or(d.candidate_multiplier),
            noise_sigma_start: self.noise_sigma_start.unwrap_or(d.noise_sigma_start),
            noise_sigma_end: self.noise_sigma_end.unwrap_or(d.noise_sigma_end),
            seed: self.seed.unwrap_or(d.seed),
            disable_attention: self.disable_attention.unwrap_or(d.disable_attention),
            disable_noise: self.disable_noise.unwrap_or(d.disable_noise),
        }
    }

    /// Generation settings; the pool defaults to `universe`, the node count
    /// of the training graph.
    pub fn generation(&self, universe: usize) -> GenerationConfig {
        let d = GenerationConfig::default();
        GenerationConfig {
            num_interactions: self.num_interactions.unwrap_or(d.num_interactions),
            batch_size: self
                .generation_batch_size
                .or(self.batch_size)
                .unwrap_or(TrainConfig::default().batch_size),
            node_pool_size: self.node_pool_size.unwrap_or(universe),
            seed: self.seed.unwrap_or(d.seed),
        }
    }

    pub fn split(&self) -> (f64, f64) {
        (
            self.f_train.unwrap_or(DEFAULT_F_TRAIN),
            self.f_val.unwrap_or(DEFAULT_F_VAL),
        )
    }

    pub fn evaluation(&self) -> EvaluationConfig {
        let d = EvaluationConfig::default();
        EvaluationConfig {
            n_snapshots: self.n_snapshots.unwrap_or(d.n_snapshots),
            bins_1d: self.bins_1d.unwrap_or(d.bins_1d),
            bins_2d: self.bins_2d.unwrap_or(d.bins_2d),
        }
    }

    pub fn negatives(&self) -> NegativeSampling {
        self.negative_sampling.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.model(), ModelConfig::default());
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.evaluation(), EvaluationConfig::default());
        assert_eq!(c.split(), (0.70, 0.15));
        let g = c.generation(37);
        assert_eq!(g.node_pool_size, 37);
        assert_eq!(g.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn keys_reach_their_configs() {
        let c = RunConfig::parse(
            "d_emb = 8\nheads = 4\nepochs = 3\nlearning_rate = 0.01\nseed = 9\nbatch_size = 50\n\
             disable_attention = true\nnum_interactions = 10\nf_val = 0.0\nnegative_sampling = \"random\"\n",
        )
        .unwrap();
        let (m, t, g) = (c.model(), c.train(), c.generation(5));
        assert_eq!((m.d_emb, m.heads), (8, 4));
        assert!(m.disable_attention && t.disable_attention);
        assert_eq!((t.epochs, t.learning_rate, t.seed, t.batch_size), (3, 0.01, 9, 50));
        assert_eq!((g.num_interactions, g.batch_size, g.seed), (10, 50, 9));
        assert_eq!(c.split(), (0.70, 0.0));
        assert_eq!(c.negatives(), NegativeSampling::Random);
    }

    #[test]
    fn unknown_key_is_config_error() {
        assert!(matches!(RunConfig::parse("epoch = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("epochs = \"three\""), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_win_and_round_trip() {
        let file = RunConfig::parse("epochs = 3\nseed = 1").unwrap();
        let flags = RunConfig {
            seed: Some(2),
            ..RunConfig::default()
        };
        let merged = file.overridden_by(&flags);
        assert_eq!((merged.epochs, merged.seed), (Some(3), Some(2)));
        assert_eq!(RunConfig::parse(&merged.to_toml().unwrap()).unwrap(), merged);
    }
}
