//! The full encoder-decoder model and its hyperparameters.

use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, Realized};
use crate::distributions::InteractionDistribution;
use crate::encoder::{Encoder, NodeStates};
use crate::error::{Error, Result};
use crate::event_store::FeatureSchema;
use crate::nn::ParamStore;
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_mem: usize,
    pub d_emb: usize,
    pub d_time: usize,
    /// Neighbor list capacity and attention fan-in.
    pub k_nbr: usize,
    pub heads: usize,
    pub gmm_components: usize,
    /// Hidden size of the time-and-features sequence model; `None` uses `d_emb`.
    pub d_seq: Option<usize>,
    /// Width of the sequence model's step inputs.
    pub d_step: usize,
    pub disable_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_mem: 100,
            d_emb: 100,
            d_time: 8,
            k_nbr: 10,
            heads: 2,
            gmm_components: 3,
            d_seq: None,
            d_step: 16,
            disable_attention: false,
        }
    }
}

impl ModelConfig {
    /// Width of the reshape, product and merge hidden layers.
    pub fn hidden(&self) -> usize {
        self.d_emb
    }

    pub fn sequence_hidden(&self) -> usize {
        self.d_seq.unwrap_or(self.d_emb)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_mem", self.d_mem),
            ("d_emb", self.d_emb),
            ("d_time", self.d_time),
            ("k_nbr", self.k_nbr),
            ("heads", self.heads),
            ("gmm_components", self.gmm_components),
            ("d_step", self.d_step),
            ("d_seq", self.sequence_hidden()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// Freshly initialized weights drawn from the seed's init stream.
    pub fn new(config: ModelConfig, schema: FeatureSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, &config, &schema)?;
        let decoder = Decoder::new(&mut params, &mut rng, &config, &schema)?;
        Ok(Model {
            config,
            schema,
            params,
            encoder,
            decoder,
        })
    }

    /// Rebuild the architecture and install previously trained weights,
    /// checking that names and shapes line up.
    pub fn with_params(config: ModelConfig, schema: FeatureSchema, params: ParamStore) -> Result<Self> {
        let mut model = Model::new(config, schema, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors where {} expected",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            let (want, got) = (model.params.value(id), params.value(id));
            if model.params.name(id) != params.name(id) || (want.rows, want.cols) != (got.rows, got.cols) {
                return Err(Error::Shape(format!(
                    "parameter `{}` {}x{} does not match `{}` {}x{}",
                    params.name(id),
                    got.rows,
                    got.cols,
                    model.params.name(id),
                    want.rows,
                    want.cols
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn fresh_states(&self, num_nodes: usize, origin_time: f64) -> NodeStates {
        self.encoder.fresh_states(num_nodes, origin_time)
    }

    /// Every decoder distribution for one interaction, with the source and
    /// destination categoricals normalized over `candidates` embedded at
    /// `at_time`. The feature heads are teacher forced on `realized`.
    pub fn interaction_distribution(
        &self,
        states: &NodeStates,
        candidates: &[usize],
        at_time: f64,
        src: usize,
        dst: usize,
        realized: Option<&Realized>,
    ) -> Result<InteractionDistribution> {
        let find = |node: usize| {
            candidates
                .iter()
                .position(|&c| c == node)
                .ok_or_else(|| Error::Argument(format!("node {node} is not a candidate")))
        };
        let (si, di) = (find(src)?, find(dst)?);
        let z: Vec<Vec<f64>> = self
            .encoder
            .embed(&self.params, states, candidates, at_time)?
            .into_iter()
            .map(|e| e.vector)
            .collect();
        let source = self.decoder.source_distribution(&self.params, &z)?;
        let destination = self.decoder.destination_distribution(&self.params, &z[si], &z)?;
        let h0 = self.decoder.merge(&self.params, &z[si], &z[di])?;
        let (time, feature_heads) = self.decoder.time_msg_params(&self.params, &h0, realized)?;
        Ok(InteractionDistribution {
            source,
            destination,
            time,
            feature_heads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let schema: FeatureSchema = "cat:2,num".parse().unwrap();
        let config = ModelConfig {
            d_mem: 5,
            d_emb: 4,
            ..ModelConfig::default()
        };
        let a = Model::new(config.clone(), schema.clone(), 3).unwrap();
        let b = Model::new(config.clone(), schema.clone(), 3).unwrap();
        let c = Model::new(config, schema, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn with_params_checks_shapes() {
        let schema: FeatureSchema = "num".parse().unwrap();
        let small = ModelConfig {
            d_mem: 3,
            d_emb: 2,
            heads: 1,
            ..ModelConfig::default()
        };
        let a = Model::new(small.clone(), schema.clone(), 1).unwrap();
        assert!(Model::with_params(small.clone(), schema.clone(), a.params.clone()).is_ok());
        let other = ModelConfig { d_mem: 4, ..small };
        assert!(matches!(
            Model::with_params(other, schema, a.params),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_dimensions_rejected() {
        let config = ModelConfig {
            d_time: 0,
            ..ModelConfig::default()
        };
        assert!(Model::new(config, FeatureSchema::empty(), 0).is_err());
    }
}
