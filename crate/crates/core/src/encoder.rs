//! Node memory and temporal embeddings.
//!
//! Every node carries a memory vector that a gated recurrent cell updates
//! from the node's latest interaction in each batch. Embeddings at a given
//! time attend from the node's own memory over the memories of its most
//! recent neighbors, then pass through a small feed-forward projection.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use crate::error::{Error, Result};
use crate::event_store::{FeatureSchema, Interaction};
use crate::model::ModelConfig;
use crate::nn::{GruCell, Linear, ParamId, ParamStore};
use crate::tape::{Matrix, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub peer: usize,
    pub t: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub memory: Vec<f64>,
    pub last_update: f64,
    /// Oldest first.
    pub neighbors: VecDeque<Neighbor>,
}

impl NodeState {
    pub fn fresh(d_mem: usize, origin_time: f64) -> Self {
        NodeState {
            memory: vec![0.0; d_mem],
            last_update: origin_time,
            neighbors: VecDeque::new(),
        }
    }

    /// Up to `k` neighbors that interacted strictly before `at_time`, most
    /// recent first. Equal times keep insertion order (later = more recent).
    pub fn recent_neighbors(&self, at_time: f64, k: usize) -> Vec<&Neighbor> {
        self.neighbors.iter().rev().filter(|n| n.t < at_time).take(k).collect()
    }
}

/// Encoder state for the whole node universe.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    nodes: Vec<NodeState>,
    capacity: usize,
}

impl NodeStates {
    pub fn new(num_nodes: usize, d_mem: usize, capacity: usize, origin_time: f64) -> Self {
        NodeStates {
            nodes: vec![NodeState::fresh(d_mem, origin_time); num_nodes],
            capacity,
        }
    }

    pub(crate) fn from_parts(nodes: Vec<NodeState>, capacity: usize) -> Self {
        NodeStates { nodes, capacity }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, node: usize) -> &NodeState {
        &self.nodes[node]
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter()
    }

    fn memory_matrix(&self) -> Matrix {
        let d = self.nodes.first().map_or(0, |n| n.memory.len());
        let mut m = Matrix::zeros(self.nodes.len(), d);
        for (i, n) in self.nodes.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&n.memory);
        }
        m
    }

    /// Append the batch to both endpoints' neighbor lists, evicting the
    /// oldest entries beyond capacity.
    pub(crate) fn record_neighbors(&mut self, batch: &[Interaction]) {
        for x in batch {
            self.push_neighbor(x.src, x.dst, x);
            if x.dst != x.src {
                self.push_neighbor(x.dst, x.src, x);
            }
        }
    }

    fn push_neighbor(&mut self, node: usize, peer: usize, x: &Interaction) {
        let list = &mut self.nodes[node].neighbors;
        list.push_back(Neighbor {
            peer,
            t: x.t,
            features: x.features.clone(),
        });
        while list.len() > self.capacity {
            list.pop_front();
        }
    }

    pub(crate) fn commit_memory(&mut self, update: &MemoryUpdate, rows: &Matrix) {
        for (r, (&node, &t)) in update.nodes.iter().zip(&update.times).enumerate() {
            let state = &mut self.nodes[node];
            state.memory.copy_from_slice(rows.row(r));
            state.last_update = t;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEmbedding {
    pub vector: Vec<f64>,
    pub node: usize,
    pub at_time: f64,
}

/// Memory rows recomputed on a tape for the nodes a batch touches.
#[derive(Debug)]
pub(crate) struct MemoryUpdate {
    pub nodes: Vec<usize>,
    pub times: Vec<f64>,
    pub rows: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub(crate) omega: ParamId,
    pub(crate) phi: ParamId,
    memory_cell: GruCell,
    query: Linear,
    key: Linear,
    value: Linear,
    ffn_hidden: Linear,
    ffn_out: Linear,
    schema: FeatureSchema,
    d_mem: usize,
    d_emb: usize,
    k_nbr: usize,
    heads: usize,
    attention: bool,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: &ModelConfig,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        if config.heads == 0 || !config.d_emb.is_multiple_of(config.heads) {
            return Err(Error::Argument(format!(
                "d_emb = {} must be a positive multiple of heads = {}",
                config.d_emb, config.heads
            )));
        }
        let d_time = config.d_time;
        // Frequencies spread geometrically over [1e-4, 1], the usual
        // starting point for learnable cosine time encodings.
        let omega = (0..d_time)
            .map(|j| {
                if d_time == 1 {
                    1.0
                } else {
                    10f64.powf(-4.0 * j as f64 / (d_time - 1) as f64)
                }
            })
            .collect();
        let omega = store.add("encoder.time.omega", Matrix::row_vector(omega));
        let phi = store.add("encoder.time.phi", Matrix::zeros(1, d_time));

        let feat = schema.encoded_width();
        // Message: own memory, peer memory, time encoding, edge features and
        // a direction flag (1 when the node was the source).
        let msg = 2 * config.d_mem + d_time + feat + 1;
        let memory_cell = GruCell::new(store, rng, "encoder.memory", msg, config.d_mem);
        let query = Linear::new(
            store,
            rng,
            "encoder.attn.query",
            config.d_mem + d_time,
            config.d_emb,
            false,
        );
        let kv_in = config.d_mem + d_time + feat;
        let key = Linear::new(store, rng, "encoder.attn.key", kv_in, config.d_emb, false);
        let value = Linear::new(store, rng, "encoder.attn.value", kv_in, config.d_emb, false);
        let ffn_hidden = Linear::new(
            store,
            rng,
            "encoder.ffn.hidden",
            config.d_emb + config.d_mem,
            config.d_emb,
            true,
        );
        let ffn_out = Linear::new(store, rng, "encoder.ffn.out", config.d_emb, config.d_emb, true);
        Ok(Encoder {
            omega,
            phi,
            memory_cell,
            query,
            key,
            value,
            ffn_hidden,
            ffn_out,
            schema: schema.clone(),
            d_mem: config.d_mem,
            d_emb: config.d_emb,
            k_nbr: config.k_nbr,
            heads: config.heads,
            attention: !config.disable_attention,
        })
    }

    pub fn d_mem(&self) -> usize {
        self.d_mem
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn k_nbr(&self) -> usize {
        self.k_nbr
    }

    pub fn fresh_states(&self, num_nodes: usize, origin_time: f64) -> NodeStates {
        NodeStates::new(num_nodes, self.d_mem, self.k_nbr, origin_time)
    }

    /// `cos(ω_j · delta + φ_j)` for every frequency.
    pub fn time_encode(&self, params: &ParamStore, delta: f64) -> Vec<f64> {
        let mut tape = Tape::new(params);
        let (om, ph) = (tape.param(self.omega), tape.param(self.phi));
        let v = tape.time_encode(&[delta], om, ph);
        tape.value(v).data.clone()
    }

    /// Recompute the memory of every node in `batch` on the tape. Each node
    /// uses only the message from its most recent interaction; messages are
    /// built from the memories held before the batch.
    pub(crate) fn memory_update(
        &self,
        tape: &mut Tape,
        states: &NodeStates,
        batch: &[Interaction],
    ) -> Result<Option<MemoryUpdate>> {
        if batch.is_empty() {
            return Ok(None);
        }
        let mut prev = f64::NEG_INFINITY;
        // node -> (peer, batch index, is_source)
        let mut latest: BTreeMap<usize, (usize, usize, bool)> = BTreeMap::new();
        for (i, x) in batch.iter().enumerate() {
            if x.t < prev {
                return Err(Error::Argument(format!("batch not chronological at index {i}")));
            }
            prev = x.t;
            for node in [x.src, x.dst] {
                if node >= states.len() {
                    return Err(Error::Domain(format!(
                        "node {node} outside universe of {}",
                        states.len()
                    )));
                }
                let last = states.get(node).last_update;
                if x.t < last {
                    return Err(Error::TemporalConsistency {
                        node,
                        t: x.t,
                        last_update: last,
                    });
                }
            }
            latest.insert(x.dst, (x.src, i, false));
            latest.insert(x.src, (x.dst, i, true));
        }

        let n = latest.len();
        let mut nodes = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        let mut mems = Matrix::zeros(n, 2 * self.d_mem);
        let mut own = Matrix::zeros(n, self.d_mem);
        let feat_w = self.schema.encoded_width() + 1;
        let mut extra = Matrix::zeros(n, feat_w);
        let mut buf = Vec::with_capacity(feat_w);
        for (r, (&node, &(peer, i, is_src))) in latest.iter().enumerate() {
            let x = &batch[i];
            let st = states.get(node);
            nodes.push(node);
            times.push(x.t);
            deltas.push(x.t - st.last_update);
            mems.row_mut(r)[..self.d_mem].copy_from_slice(&st.memory);
            mems.row_mut(r)[self.d_mem..].copy_from_slice(&states.get(peer).memory);
            own.row_mut(r).copy_from_slice(&st.memory);
            buf.clear();
            self.schema.encode_into(&x.features, &mut buf);
            buf.push(if is_src { 1.0 } else { 0.0 });
            extra.row_mut(r).copy_from_slice(&buf);
        }
        let mems = tape.constant(mems);
        let (om, ph) = (tape.param(self.omega), tape.param(self.phi));
        let te = tape.time_encode(&deltas, om, ph);
        let extra = tape.constant(extra);
        let msg = tape.concat_cols(&[mems, te, extra]);
        let h = tape.constant(own);
        let rows = self.memory_cell.forward(tape, msg, h);
        Ok(Some(MemoryUpdate { nodes, times, rows }))
    }

    /// Memory of every node as a tape matrix, with `update` rows spliced in.
    pub(crate) fn memory_var(&self, tape: &mut Tape, states: &NodeStates, update: Option<&MemoryUpdate>) -> Var {
        let base = tape.constant(states.memory_matrix());
        match update {
            Some(u) => tape.replace_rows(base, u.rows, &u.nodes),
            None => base,
        }
    }

    /// Embeddings `[nodes.len() × d_emb]` at `at_time` given node memories.
    pub(crate) fn embed_var(
        &self,
        tape: &mut Tape,
        memory: Var,
        states: &NodeStates,
        nodes: &[usize],
        at_time: f64,
    ) -> Var {
        let own = tape.gather_rows(memory, nodes);
        let attended = if self.attention {
            self.attend(tape, memory, own, states, nodes, at_time)
        } else {
            None
        };
        let attended = attended.unwrap_or_else(|| tape.constant(Matrix::zeros(nodes.len(), self.d_emb)));
        let joined = tape.concat_cols(&[attended, own]);
        let hidden = self.ffn_hidden.forward(tape, joined);
        let hidden = tape.relu(hidden);
        self.ffn_out.forward(tape, hidden)
    }

    fn attend(
        &self,
        tape: &mut Tape,
        memory: Var,
        own: Var,
        states: &NodeStates,
        nodes: &[usize],
        at_time: f64,
    ) -> Option<Var> {
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        offsets.push(0);
        let mut peers = Vec::new();
        let mut deltas = Vec::new();
        let mut feats = Vec::new();
        for &node in nodes {
            for nb in states.get(node).recent_neighbors(at_time, self.k_nbr) {
                peers.push(nb.peer);
                deltas.push(at_time - nb.t);
                self.schema.encode_into(&nb.features, &mut feats);
            }
            offsets.push(peers.len());
        }
        if peers.is_empty() {
            return None;
        }
        let (om, ph) = (tape.param(self.omega), tape.param(self.phi));
        let te0 = tape.time_encode(&vec![0.0; nodes.len()], om, ph);
        let q_in = tape.concat_cols(&[own, te0]);
        let q = self.query.forward(tape, q_in);

        let peer_mem = tape.gather_rows(memory, &peers);
        let te = tape.time_encode(&deltas, om, ph);
        let mut parts = vec![peer_mem, te];
        let fw = self.schema.encoded_width();
        if fw > 0 {
            parts.push(tape.constant(Matrix::from_vec(peers.len(), fw, feats)));
        }
        let kv_in = tape.concat_cols(&parts);
        let k = self.key.forward(tape, kv_in);
        let v = self.value.forward(tape, kv_in);
        Some(tape.segment_attention(q, k, v, &offsets, self.heads))
    }

    /// Pure embedding lookup: no state is modified.
    pub fn embed(
        &self,
        params: &ParamStore,
        states: &NodeStates,
        nodes: &[usize],
        at_time: f64,
    ) -> Result<Vec<TemporalEmbedding>> {
        if let Some(&bad) = nodes.iter().find(|&&n| n >= states.len()) {
            return Err(Error::Domain(format!(
                "node {bad} outside universe of {}",
                states.len()
            )));
        }
        if nodes.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(params);
        let memory = self.memory_var(&mut tape, states, None);
        let z = self.embed_var(&mut tape, memory, states, nodes, at_time);
        let z = tape.value(z);
        Ok(nodes
            .iter()
            .enumerate()
            .map(|(r, &node)| TemporalEmbedding {
                vector: z.row(r).to_vec(),
                node,
                at_time,
            })
            .collect())
    }

    /// Apply a batch: memories of touched nodes advance one recurrent step,
    /// `last_update` moves to each node's latest time, neighbor lists grow.
    pub fn update_memory(&self, params: &ParamStore, states: &mut NodeStates, batch: &[Interaction]) -> Result<()> {
        let mut tape = Tape::new(params);
        if let Some(update) = self.memory_update(&mut tape, states, batch)? {
            let rows = tape.value(update.rows).clone();
            states.commit_memory(&update, &rows);
        }
        states.record_neighbors(batch);
        Ok(())
    }
}
