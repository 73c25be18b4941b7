//! Fidelity report comparing a synthetic stream to a real one.

use serde::{Deserialize, Serialize};

use super::graph::{discretize, graph_stats, mean_stats, median_abs_error, MetricErrors, SnapshotStats};
use super::histogram::{feature_histograms, js_distance, shared_ranges, FeatureHistograms};
use super::sampling::edge_overlap;
use crate::error::{Error, Result};
use crate::event_store::EventStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_snapshots: usize,
    pub bins_1d: usize,
    pub bins_2d: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_snapshots: 10,
            bins_1d: 100,
            bins_2d: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub real: Vec<SnapshotStats>,
    pub synth: Vec<SnapshotStats>,
    pub median_abs_error: MetricErrors,
    pub real_mean: MetricErrors,
    pub synth_mean: MetricErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureJs {
    pub feature: String,
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairJs {
    pub first: String,
    pub second: String,
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsReport {
    pub features: Vec<FeatureJs>,
    pub pairs: Vec<PairJs>,
    pub feature_mean: Option<f64>,
    pub feature_std: Option<f64>,
    pub pair_mean: Option<f64>,
    pub pair_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredictionReport {
    pub average_precision: f64,
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub real_events: usize,
    pub synth_events: usize,
    pub topology: TopologyReport,
    pub js: JsReport,
    /// Share of the real stream's `(src, dst, t)` triples found in the
    /// synthetic stream.
    pub edge_overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_prediction: Option<LinkPredictionReport>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Histograms of both streams over one shared binning.
pub fn paired_histograms(
    real: &EventStream,
    synth: &EventStream,
    config: &EvaluationConfig,
) -> Result<(FeatureHistograms, FeatureHistograms)> {
    if real.schema() != synth.schema() {
        return Err(Error::Schema("real and synthetic streams use different schemas".into()));
    }
    let ranges = shared_ranges(real.schema(), &[real, synth]);
    Ok((
        feature_histograms(real, &ranges, config.bins_1d, config.bins_2d)?,
        feature_histograms(synth, &ranges, config.bins_1d, config.bins_2d)?,
    ))
}

/// Topology errors, feature JS distances and edge overlap of `synth`
/// measured against `real`.
pub fn compare_streams(real: &EventStream, synth: &EventStream, config: &EvaluationConfig) -> Result<Report> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Argument("both streams must be nonempty".into()));
    }
    let stats = |s: &EventStream| -> Result<Vec<SnapshotStats>> {
        Ok(discretize(s, config.n_snapshots)?.iter().map(graph_stats).collect())
    };
    let (rs, ss) = (stats(real)?, stats(synth)?);
    let topology = TopologyReport {
        median_abs_error: median_abs_error(&rs, &ss)?,
        real_mean: mean_stats(&rs),
        synth_mean: mean_stats(&ss),
        real: rs,
        synth: ss,
    };

    let (hr, hs) = paired_histograms(real, synth, config)?;
    let names: Vec<String> = real.schema().features().iter().map(|f| f.name.clone()).collect();
    let features = hr
        .single
        .iter()
        .zip(&hs.single)
        .zip(&names)
        .map(|((a, b), name)| {
            Ok(FeatureJs {
                feature: name.clone(),
                js: js_distance(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = hr
        .pairs
        .iter()
        .zip(&hs.pairs)
        .map(|(((i, j), a), (_, b))| {
            Ok(PairJs {
                first: names[*i].clone(),
                second: names[*j].clone(),
                js: js_distance(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (feature_mean, feature_std) = mean_std(&features.iter().map(|f| f.js).collect::<Vec<_>>());
    let (pair_mean, pair_std) = mean_std(&pairs.iter().map(|p| p.js).collect::<Vec<_>>());

    Ok(Report {
        real_events: real.len(),
        synth_events: synth.len(),
        topology,
        js: JsReport {
            features,
            pairs,
            feature_mean,
            feature_std,
            pair_mean,
            pair_std,
        },
        edge_overlap: edge_overlap(real, synth)?,
        link_prediction: None,
    })
}
