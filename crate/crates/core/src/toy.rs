//! Synthetic bipartite streams with a known generating process.
//!
//! Sources `0..n_src` pick destinations `n_src..n_src + n_dst`. The
//! destinations are split into contiguous blocks; source `s` prefers block
//! `s mod n_blocks`, choosing a uniform member of it with probability
//! `preference` and otherwise a uniform destination outside it. Deltas are
//! i.i.d. Exponential, the categorical feature follows the pmf of the
//! destination's group (`block mod group_pmfs.len()`), and the numerical
//! feature is drawn from a fixed Gaussian mixture.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{write_events, EventStream, FeatureDescriptor, FeatureKind, FeatureSchema, Interaction};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_src_nodes: usize,
    pub n_dst_nodes: usize,
    pub n_events: usize,
    /// Rate of the Exponential inter-event times.
    pub rate: f64,
    pub n_blocks: usize,
    /// Probability of picking a destination from the preferred block.
    pub preference: f64,
    /// Categorical feature pmf per destination group.
    pub group_pmfs: Vec<Vec<f64>>,
    pub gmm_means: Vec<f64>,
    pub gmm_stds: Vec<f64>,
    pub gmm_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_src_nodes: 20,
            n_dst_nodes: 30,
            n_events: 20_000,
            rate: 1.0,
            n_blocks: 10,
            preference: 0.9,
            group_pmfs: vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            gmm_means: vec![-2.0, 2.0],
            gmm_stds: vec![0.5, 0.5],
            gmm_weights: vec![0.5, 0.5],
            seed: 0,
        }
    }
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("{what} is not a probability vector: {p:?}")));
    }
    Ok(())
}

fn draw(pmf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.len() - 1
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_src_nodes == 0 || self.n_dst_nodes == 0 || self.n_events == 0 {
            return Err(Error::Argument("toy node and event counts must be positive".into()));
        }
        if self.n_blocks == 0 || self.n_blocks > self.n_dst_nodes {
            return Err(Error::Argument(format!(
                "n_blocks {} must lie in [1, {}]",
                self.n_blocks, self.n_dst_nodes
            )));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Argument(format!("rate {} must be positive", self.rate)));
        }
        if !(0.0..=1.0).contains(&self.preference) {
            return Err(Error::Argument(format!(
                "preference {} outside [0, 1]",
                self.preference
            )));
        }
        if self.n_blocks == 1 && self.preference < 1.0 {
            return Err(Error::Argument(
                "a single block leaves nothing outside the preferred block".into(),
            ));
        }
        if self.group_pmfs.is_empty() {
            return Err(Error::Argument("at least one group pmf is required".into()));
        }
        let card = self.group_pmfs[0].len();
        for p in &self.group_pmfs {
            check_pmf(p, "group pmf")?;
            if p.len() != card {
                return Err(Error::Argument("group pmfs must share one cardinality".into()));
            }
        }
        let m = self.gmm_means.len();
        if m == 0 || self.gmm_stds.len() != m || self.gmm_weights.len() != m {
            return Err(Error::Argument(
                "GMM means, stds and weights must have one equal nonzero length".into(),
            ));
        }
        if self.gmm_stds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Argument("GMM stds must be positive".into()));
        }
        check_pmf(&self.gmm_weights, "GMM weights")
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureDescriptor {
                name: "group".into(),
                kind: FeatureKind::Categorical {
                    cardinality: self.group_pmfs.first().map_or(1, Vec::len),
                },
            },
            FeatureDescriptor {
                name: "value".into(),
                kind: FeatureKind::Numerical,
            },
        ])
        .expect("valid toy schema")
    }

    /// Block of destination `j` (0-based within the destinations).
    pub fn block_of(&self, j: usize) -> usize {
        j * self.n_blocks / self.n_dst_nodes
    }
}

/// Sample the stream and, when `out` is given, write it as CSV.
pub fn make_toy(config: &ToyConfig, out: Option<&Path>) -> Result<EventStream> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Data);
    let exp = Exp::new(config.rate).map_err(|e| Error::Argument(e.to_string()))?;
    let normals = config
        .gmm_means
        .iter()
        .zip(&config.gmm_stds)
        .map(|(&m, &s)| Normal::new(m, s).map_err(|e| Error::Argument(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let blocks: Vec<Vec<usize>> = (0..config.n_blocks)
        .map(|b| (0..config.n_dst_nodes).filter(|&j| config.block_of(j) == b).collect())
        .collect();
    let outside: Vec<Vec<usize>> = (0..config.n_blocks)
        .map(|b| (0..config.n_dst_nodes).filter(|&j| config.block_of(j) != b).collect())
        .collect();

    let mut t = 0.0;
    let mut xs = Vec::with_capacity(config.n_events);
    for _ in 0..config.n_events {
        t += exp.sample(&mut rng);
        let src = rng.random_range(0..config.n_src_nodes);
        let preferred = src % config.n_blocks;
        let pick = if rng.random::<f64>() < config.preference {
            &blocks[preferred]
        } else {
            &outside[preferred]
        };
        let j = pick[rng.random_range(0..pick.len())];
        let group = config.block_of(j) % config.group_pmfs.len();
        let category = draw(&config.group_pmfs[group], &mut rng);
        let component = draw(&config.gmm_weights, &mut rng);
        let value = normals[component].sample(&mut rng);
        xs.push(Interaction {
            src,
            dst: config.n_src_nodes + j,
            t,
            features: vec![category as f64, value],
        });
    }
    let stream = EventStream::new(xs, config.schema(), config.n_src_nodes + config.n_dst_nodes, 0.0)?;
    if let Some(path) = out {
        write_events(&stream, path)?;
    }
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::inter_event_deltas;

    #[test]
    fn construction_contract() {
        let config = ToyConfig {
            n_events: 1000,
            ..ToyConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let s = make_toy(&config, Some(&path)).unwrap();
        assert_eq!(s.len(), 1000);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1000);
        assert!(s.timestamps().windows(2).all(|w| w[0] <= w[1]));
        for x in s.interactions() {
            assert!(x.src < 20 && (20..50).contains(&x.dst));
        }
        let again = dir.path().join("again.csv");
        make_toy(&config, Some(&again)).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn mean_delta_matches_rate() {
        let config = ToyConfig {
            n_events: 100_000,
            rate: 2.5,
            ..ToyConfig::default()
        };
        let s = make_toy(&config, None).unwrap();
        let d = inter_event_deltas(&s).unwrap();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        // Exponential: standard deviation equals the mean.
        let se = (1.0 / 2.5) / (d.len() as f64).sqrt();
        assert!((mean - 0.4).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn preferred_block_dominates() {
        let config = ToyConfig {
            n_events: 20_000,
            ..ToyConfig::default()
        };
        let s = make_toy(&config, None).unwrap();
        let hits = s
            .interactions()
            .iter()
            .filter(|x| config.block_of(x.dst - 20) == x.src % config.n_blocks)
            .count();
        let frac = hits as f64 / s.len() as f64;
        assert!((frac - 0.9).abs() < 0.01, "{frac}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            ToyConfig {
                rate: 0.0,
                ..ToyConfig::default()
            },
            ToyConfig {
                group_pmfs: vec![vec![0.5, 0.4]],
                ..ToyConfig::default()
            },
            ToyConfig {
                gmm_stds: vec![0.5, 0.0],
                ..ToyConfig::default()
            },
            ToyConfig {
                n_blocks: 31,
                ..ToyConfig::default()
            },
            ToyConfig {
                n_events: 0,
                ..ToyConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(make_toy(&c, None), Err(Error::Argument(_))));
        }
    }
}
