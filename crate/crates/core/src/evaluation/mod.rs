//! Fidelity, originality and link-prediction metrics.

mod graph;
mod histogram;
pub mod plot;
mod ranking;
mod report;
mod sampling;

pub use graph::{discretize, graph_stats, mean_stats, median_abs_error, MetricErrors, SnapshotStats, StaticGraph};
pub use histogram::{feature_histograms, js_distance, shared_ranges, Axis, FeatureHistograms, Histogram};
pub use ranking::{auroc, average_precision};
pub use report::{
    compare_streams, paired_histograms, EvaluationConfig, FeatureJs, JsReport, LinkPredictionReport, PairJs, Report,
    TopologyReport,
};
pub use sampling::{
    edge_overlap, inductive_negative_sampling, negative_sampling, LabelledLink, NegativeSample, NegativeSampling,
};
