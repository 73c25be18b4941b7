//! Snapshot discretization and static-graph topology statistics.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::EventStream;

/// Undirected simple graph over nodes `0..num_nodes`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StaticGraph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl StaticGraph {
    /// Self-loops are dropped and parallel edges collapse.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![BTreeSet::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Domain(format!("edge ({u}, {v}) outside {num_nodes} nodes")));
            }
            if u != v {
                adjacency[u].insert(v);
                adjacency[v].insert(u);
            }
        }
        Ok(StaticGraph { adjacency })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().copied()
    }

    /// Distinct undirected edges as `(low, high)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.range(u + 1..).map(|&v| (u, v)));
        }
        out
    }
}

/// Split the time range into `n_bins` equal-width intervals (the last one
/// closed) and collapse each interval's interactions into a static graph
/// over the nodes they touch. Self-loop interactions are ignored.
pub fn discretize(stream: &EventStream, n_bins: usize) -> Result<Vec<StaticGraph>> {
    if n_bins == 0 {
        return Err(Error::Argument("snapshot count must be positive".into()));
    }
    let xs = stream.interactions();
    let mut bins: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bins];
    if let (Some(first), Some(last)) = (xs.first(), xs.last()) {
        let (lo, hi) = (first.t, last.t);
        for x in xs {
            let k = if hi > lo {
                ((n_bins as f64 * (x.t - lo) / (hi - lo)).floor() as usize).min(n_bins - 1)
            } else {
                0
            };
            bins[k].push((x.src, x.dst));
        }
    }
    bins.iter()
        .map(|edges| {
            let mut local: BTreeMap<usize, usize> = BTreeMap::new();
            let mut mapped = Vec::with_capacity(edges.len());
            for &(u, v) in edges.iter().filter(|(u, v)| u != v) {
                let n = local.len();
                let a = *local.entry(u).or_insert(n);
                let n = local.len();
                let b = *local.entry(v).or_insert(n);
                mapped.push((a, b));
            }
            StaticGraph::new(local.len(), &mapped)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotStats {
    /// Mean closeness centrality.
    pub cc: f64,
    /// Mean degree.
    pub md: f64,
    /// Number of connected components.
    pub nc: usize,
    /// Power-law exponent of the degree distribution.
    pub ple: f64,
    /// Wedge count.
    pub wc: u64,
}

/// Topology statistics of one snapshot. An empty graph yields all zeros.
///
/// Closeness is component-scaled: a node reaching `r` of the other `n − 1`
/// nodes at total distance `s` scores `(r / s) · (r / (n − 1))`, and an
/// isolated node scores 0. The exponent is the continuous maximum
/// likelihood estimate `1 + k / Σ ln(d / (1 − 0.5))` over the `k` nodes of
/// degree `d ≥ 1`.
pub fn graph_stats(g: &StaticGraph) -> SnapshotStats {
    let n = g.num_nodes();
    if n == 0 {
        return SnapshotStats::default();
    }
    let md = 2.0 * g.num_edges() as f64 / n as f64;
    let wc = (0..n)
        .map(|v| {
            let d = g.degree(v) as u64;
            d * d.saturating_sub(1) / 2
        })
        .sum();

    let mut component = vec![usize::MAX; n];
    let mut nc = 0;
    let mut closeness_sum = 0.0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        queue.push_back(s);
        let (mut reached, mut total) = (0usize, 0usize);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    reached += 1;
                    total += dist[v];
                    queue.push_back(v);
                }
            }
        }
        if component[s] == usize::MAX {
            for (v, d) in dist.iter().enumerate() {
                if *d != usize::MAX {
                    component[v] = nc;
                }
            }
            nc += 1;
        }
        if reached > 0 {
            let r = reached as f64;
            closeness_sum += (r / total as f64) * (r / (n - 1) as f64);
        }
    }

    let (mut k, mut log_sum) = (0usize, 0.0);
    for v in 0..n {
        let d = g.degree(v);
        if d >= 1 {
            k += 1;
            log_sum += (d as f64 / 0.5).ln();
        }
    }
    let ple = if k > 0 { 1.0 + k as f64 / log_sum } else { 0.0 };

    SnapshotStats {
        cc: closeness_sum / n as f64,
        md,
        nc,
        ple,
        wc,
    }
}

/// Per-metric errors between two snapshot sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricErrors {
    pub cc: f64,
    pub md: f64,
    pub nc: f64,
    pub ple: f64,
    pub wc: f64,
}

impl MetricErrors {
    fn from_fn(f: impl Fn(&dyn Fn(&SnapshotStats) -> f64) -> f64) -> Self {
        MetricErrors {
            cc: f(&|s| s.cc),
            md: f(&|s| s.md),
            nc: f(&|s| s.nc as f64),
            ple: f(&|s| s.ple),
            wc: f(&|s| s.wc as f64),
        }
    }
}

pub(crate) fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median over paired snapshots of `|real_k − synth_k|`, per metric.
pub fn median_abs_error(real: &[SnapshotStats], synth: &[SnapshotStats]) -> Result<MetricErrors> {
    if real.len() != synth.len() {
        return Err(Error::Argument(format!(
            "{} real snapshots against {} synthetic",
            real.len(),
            synth.len()
        )));
    }
    Ok(MetricErrors::from_fn(|get| {
        median(real.iter().zip(synth).map(|(a, b)| (get(a) - get(b)).abs()).collect())
    }))
}

/// Per-metric means over a snapshot sequence.
pub fn mean_stats(stats: &[SnapshotStats]) -> MetricErrors {
    let n = stats.len().max(1) as f64;
    MetricErrors::from_fn(|get| stats.iter().map(get).sum::<f64>() / n)
}
