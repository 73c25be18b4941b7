//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DGG1" | u32 version | u64 header length | JSON header | f64 payload
//! ```
//!
//! The JSON header holds the configurations, schema, counters, random
//! generator position, the parameter names and shapes, and the node-state
//! layout. The payload follows in this order: parameter values, the first
//! and second Adam moments (same shapes as the parameters), then for every
//! node its memory, its last update time and its neighbor entries
//! `(peer, t, features…)` with `peer` stored as an f64 holding an integer.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Neighbor, NodeState, NodeStates};
use crate::error::{Error, Result};
use crate::event_store::FeatureSchema;
use crate::model::{Model, ModelConfig};
use crate::nn::{Adam, ParamStore};
use crate::tape::Matrix;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"DGG1";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or to generate.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub adam: Adam,
    pub states: NodeStates,
    pub rng: ChaCha8Rng,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub epoch_nll_sum: f64,
    pub epoch_events: u64,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    schema: String,
    train_config: TrainConfig,
    step: u64,
    epoch_nll_sum: f64,
    epoch_events: u64,
    learning_rate: f64,
    adam_step: u64,
    rng: RngState,
    params: Vec<ParamShape>,
    num_nodes: usize,
    neighbor_capacity: usize,
    /// Neighbor entries per node, in node order.
    neighbor_counts: Vec<usize>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("bad rng seed `{s}`"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = &self.model.params;
        let header = Header {
            model_config: self.model.config.clone(),
            schema: self.model.schema.to_string(),
            train_config: self.train_config.clone(),
            step: self.step,
            epoch_nll_sum: self.epoch_nll_sum,
            epoch_events: self.epoch_events,
            learning_rate: self.adam.learning_rate,
            adam_step: self.adam.step,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            params: params
                .ids()
                .map(|id| {
                    let v = params.value(id);
                    ParamShape {
                        name: params.name(id).to_string(),
                        rows: v.rows,
                        cols: v.cols,
                    }
                })
                .collect(),
            num_nodes: self.states.len(),
            neighbor_capacity: self.states.capacity(),
            neighbor_counts: self.states.iter().map(|s| s.neighbors.len()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        let (first, second) = self.adam.moments();
        for m in params.ids().map(|id| params.value(id)).chain(first).chain(second) {
            m.data.iter().for_each(|&v| put(v));
        }
        for s in self.states.iter() {
            s.memory.iter().for_each(|&v| put(v));
            put(s.last_update);
            for nb in &s.neighbors {
                put(nb.peer as f64);
                put(nb.t);
                nb.features.iter().for_each(|&v| put(v));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {VERSION})"
            )));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let schema: FeatureSchema = header.schema.parse()?;

        let mut params = ParamStore::new();
        for p in &header.params {
            let m = r.matrix(p.rows, p.cols)?;
            params.add(p.name.clone(), m);
        }
        let moments = |r: &mut Reader| {
            header
                .params
                .iter()
                .map(|p| r.matrix(p.rows, p.cols))
                .collect::<Result<Vec<_>>>()
        };
        let first = moments(&mut r)?;
        let second = moments(&mut r)?;
        let adam = Adam::from_parts(header.learning_rate, header.adam_step, first, second);
        let model = Model::with_params(header.model_config.clone(), schema.clone(), params)?;

        if header.neighbor_counts.len() != header.num_nodes {
            return Err(Error::Checkpoint("neighbor table does not cover every node".into()));
        }
        let d_mem = header.model_config.d_mem;
        let n_feat = schema.len();
        let mut nodes = Vec::with_capacity(header.num_nodes);
        for &count in &header.neighbor_counts {
            let memory = (0..d_mem).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let last_update = r.f64()?;
            let mut neighbors = VecDeque::with_capacity(count);
            for _ in 0..count {
                let peer = r.f64()?;
                if !(peer >= 0.0 && peer.fract() == 0.0 && (peer as usize) < header.num_nodes) {
                    return Err(Error::Checkpoint(format!("bad neighbor id {peer}")));
                }
                let t = r.f64()?;
                let features = (0..n_feat).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                neighbors.push_back(Neighbor {
                    peer: peer as usize,
                    t,
                    features,
                });
            }
            nodes.push(NodeState {
                memory,
                last_update,
                neighbors,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut rng = ChaCha8Rng::from_seed(unhex(&header.rng.seed)?);
        rng.set_stream(header.rng.stream);
        let word_pos: u128 = header
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position `{}`", header.rng.word_pos)))?;
        rng.set_word_pos(word_pos);

        Ok(Checkpoint {
            model,
            train_config: header.train_config,
            adam,
            states: NodeStates::from_parts(nodes, header.neighbor_capacity),
            rng,
            step: header.step,
            epoch_nll_sum: header.epoch_nll_sum,
            epoch_events: header.epoch_events,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::{EventStream, Interaction};
    use crate::trainer::Trainer;
    use rand::Rng;

    fn trained() -> Checkpoint {
        let schema: FeatureSchema = "cat:2,num".parse().unwrap();
        let xs = (0..12)
            .map(|i| Interaction {
                src: i % 3,
                dst: 3 + i % 2,
                t: i as f64 * 0.5,
                features: vec![(i % 2) as f64, 0.1 * i as f64],
            })
            .collect();
        let stream = EventStream::new(xs, schema, 5, 0.0).unwrap();
        let model = ModelConfig {
            d_mem: 3,
            d_emb: 2,
            d_time: 2,
            heads: 1,
            d_step: 2,
            ..ModelConfig::default()
        };
        let config = TrainConfig {
            epochs: 1,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&model, &config, &stream).unwrap();
        t.step().unwrap();
        t.step().unwrap();
        t.checkpoint()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = trained();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model.params, c.model.params);
        assert_eq!(back.states, c.states);
        assert_eq!(back.adam, c.adam);
        let (mut a, mut b) = (c.rng.clone(), back.rng.clone());
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn file_round_trip() {
        let c = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dgg");
        c.save(&path).unwrap();
        assert_eq!(
            Checkpoint::load(&path).unwrap().to_bytes().unwrap(),
            c.to_bytes().unwrap()
        );
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = trained().to_bytes().unwrap();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let good = trained().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
    }
}
