//! Interaction streams: schema, ingestion, validation and temporal partitioning.
//!
//! The on-disk format is header-less CSV, one interaction per line:
//!
//! ```text
//! src,dst,timestamp,state_label,feat_1,...,feat_n
//! ```
//!
//! `state_label` is read and discarded; it is written back as `0`. Node ids in
//! the file can be any token; they are remapped to a dense `0..num_nodes`
//! range in order of first appearance.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical { cardinality: usize },
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered description of the edge-feature vector.
///
/// Textual form is a comma-separated list of `cat:K` or `num` entries, each
/// optionally prefixed with `name=`; the empty string is the feature-less
/// schema.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureDescriptor>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDescriptor>) -> Result<Self> {
        for f in &features {
            if let FeatureKind::Categorical { cardinality: 0 } = f.kind {
                return Err(Error::Schema(format!("feature `{}` has cardinality 0", f.name)));
            }
        }
        Ok(FeatureSchema { features })
    }

    pub fn empty() -> Self {
        FeatureSchema::default()
    }

    pub fn from_kinds(kinds: &[FeatureKind]) -> Result<Self> {
        Self::new(
            kinds
                .iter()
                .enumerate()
                .map(|(i, &kind)| FeatureDescriptor {
                    name: format!("f{}", i + 1),
                    kind,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.features[i].kind
    }

    /// Width of the dense encoding used by the encoder: one-hot blocks for
    /// categorical features, one slot per numerical feature.
    pub fn encoded_width(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Categorical { cardinality } => cardinality,
                FeatureKind::Numerical => 1,
            })
            .sum()
    }

    pub fn encode_into(&self, values: &[f64], out: &mut Vec<f64>) {
        for (f, &v) in self.features.iter().zip(values) {
            match f.kind {
                FeatureKind::Categorical { cardinality } => {
                    let start = out.len();
                    out.resize(start + cardinality, 0.0);
                    out[start + v as usize] = 1.0;
                }
                FeatureKind::Numerical => out.push(v),
            }
        }
    }

    pub fn validate(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                values.len()
            )));
        }
        for (f, &v) in self.features.iter().zip(values) {
            match f.kind {
                FeatureKind::Categorical { cardinality } => {
                    if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < cardinality) {
                        return Err(Error::Schema(format!(
                            "feature `{}`: {v} is not a category in [0, {cardinality})",
                            f.name
                        )));
                    }
                }
                FeatureKind::Numerical => {
                    if !v.is_finite() {
                        return Err(Error::Schema(format!("feature `{}`: non-finite value {v}", f.name)));
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.features.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}=", d.name)?;
            match d.kind {
                FeatureKind::Categorical { cardinality } => write!(f, "cat:{cardinality}")?,
                FeatureKind::Numerical => f.write_str("num")?,
            }
        }
        Ok(())
    }
}

impl FromStr for FeatureSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(FeatureSchema::empty());
        }
        let mut features = Vec::new();
        for (i, entry) in s.split(',').enumerate() {
            let entry = entry.trim();
            let (name, spec) = match entry.split_once('=') {
                Some((n, k)) => (n.trim().to_string(), k.trim()),
                None => (format!("f{}", i + 1), entry),
            };
            let kind = if spec == "num" {
                FeatureKind::Numerical
            } else if let Some(k) = spec.strip_prefix("cat:") {
                let cardinality = k
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad cardinality in `{entry}`")))?;
                FeatureKind::Categorical { cardinality }
            } else {
                return Err(Error::Schema(format!("unknown feature kind `{entry}`")));
            };
            features.push(FeatureDescriptor { name, kind });
        }
        FeatureSchema::new(features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    pub features: Vec<f64>,
}

/// Chronologically ordered, validated interaction sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    interactions: Vec<Interaction>,
    schema: FeatureSchema,
    num_nodes: usize,
    origin_time: f64,
    node_labels: Option<Vec<String>>,
}

impl EventStream {
    pub fn new(
        interactions: Vec<Interaction>,
        schema: FeatureSchema,
        num_nodes: usize,
        origin_time: f64,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Argument("node universe must be nonempty".into()));
        }
        if !origin_time.is_finite() {
            return Err(Error::Argument(format!("origin time {origin_time} is not finite")));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, x) in interactions.iter().enumerate() {
            if x.src >= num_nodes || x.dst >= num_nodes {
                return Err(Error::Domain(format!(
                    "interaction {i}: node id outside [0, {num_nodes})"
                )));
            }
            if !(x.t.is_finite() && x.t >= 0.0) {
                return Err(Error::Domain(format!("interaction {i}: bad timestamp {}", x.t)));
            }
            if x.t < prev {
                return Err(Error::Ordering {
                    line: i + 1,
                    t: x.t,
                    prev,
                });
            }
            prev = x.t;
            schema.validate(&x.features)?;
        }
        Ok(EventStream {
            interactions,
            schema,
            num_nodes,
            origin_time,
            node_labels: None,
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn origin_time(&self) -> f64 {
        self.origin_time
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Original file token for each dense node id, when loaded from a file.
    pub fn node_labels(&self) -> Option<&[String]> {
        self.node_labels.as_deref()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.interactions.iter().map(|x| x.t).collect()
    }

    fn slice(&self, range: std::ops::Range<usize>, origin_time: f64) -> EventStream {
        EventStream {
            interactions: self.interactions[range].to_vec(),
            schema: self.schema.clone(),
            num_nodes: self.num_nodes,
            origin_time,
            node_labels: self.node_labels.clone(),
        }
    }
}

/// How node tokens in a file become node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeIds {
    /// Dense ids in order of first appearance; the tokens are kept as labels.
    #[default]
    Remap,
    /// Tokens are already nonnegative integer ids; the universe is
    /// `0..=max id`. Files written by this crate use this form.
    Verbatim,
}

/// Load a stream; `origin_time` defaults to the first timestamp.
pub fn load_events(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<EventStream> {
    load_events_with(path, schema, NodeIds::Remap)
}

pub fn load_events_with(path: impl AsRef<Path>, schema: &FeatureSchema, ids: NodeIds) -> Result<EventStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_events_with(BufReader::new(file), schema, None, ids)
}

pub fn read_events(reader: impl BufRead, schema: &FeatureSchema, origin_time: Option<f64>) -> Result<EventStream> {
    read_events_with(reader, schema, origin_time, NodeIds::Remap)
}

pub fn read_events_with(
    reader: impl BufRead,
    schema: &FeatureSchema,
    origin_time: Option<f64>,
    mode: NodeIds,
) -> Result<EventStream> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut max_id = 0usize;
    let mut node = |token: &str, line: usize| -> Result<usize> {
        if mode == NodeIds::Verbatim {
            let id: usize = token.parse().map_err(|_| Error::Parse {
                line,
                message: format!("node id `{token}` is not a nonnegative integer"),
            })?;
            max_id = max_id.max(id);
            return Ok(id);
        }
        if let Some(&i) = ids.get(token) {
            return Ok(i);
        }
        let i = labels.len();
        ids.insert(token.to_string(), i);
        labels.push(token.to_string());
        Ok(i)
    };

    let expected = 4 + schema.len();
    let mut interactions = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        if fields.len() != expected {
            return Err(Error::Schema(format!(
                "line {line_no}: expected {expected} fields for {} features, found {}",
                schema.len(),
                fields.len()
            )));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty node id".into(),
            });
        }
        let t: f64 = parse_real(fields[2], line_no, "timestamp")?;
        if t < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("negative timestamp {t}"),
            });
        }
        if t < prev {
            return Err(Error::Ordering { line: line_no, t, prev });
        }
        prev = t;
        let features = fields[4..]
            .iter()
            .map(|f| parse_real(f, line_no, "feature"))
            .collect::<Result<Vec<_>>>()?;
        schema
            .validate(&features)
            .map_err(|e| Error::Schema(format!("line {line_no}: {e}")))?;
        let src = node(fields[0], line_no)?;
        let dst = node(fields[1], line_no)?;
        interactions.push(Interaction { src, dst, t, features });
    }

    let origin = origin_time.unwrap_or_else(|| interactions.first().map_or(0.0, |x| x.t));
    let num_nodes = match mode {
        NodeIds::Remap => labels.len().max(1),
        NodeIds::Verbatim => max_id + 1,
    };
    let mut stream = EventStream::new(interactions, schema.clone(), num_nodes, origin)?;
    if mode == NodeIds::Remap {
        stream.node_labels = Some(labels);
    }
    Ok(stream)
}

fn parse_real(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} `{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{what} `{s}` is not finite"),
        });
    }
    Ok(v)
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write_events_to(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_events_to(stream: &EventStream, w: &mut impl Write) -> Result<()> {
    for x in &stream.interactions {
        write!(w, "{},{},{},0", x.src, x.dst, x.t)?;
        for (i, v) in x.features.iter().enumerate() {
            match stream.schema.kind(i) {
                FeatureKind::Categorical { .. } => write!(w, ",{}", *v as usize)?,
                FeatureKind::Numerical => write!(w, ",{v}")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Split into train/validation/test partitions by position. Each partition's
/// origin is the last timestamp of the partition before it, so inter-event
/// deltas stay measured against the globally previous interaction.
pub fn chronological_split(
    stream: &EventStream,
    f_train: f64,
    f_val: f64,
) -> Result<(EventStream, EventStream, EventStream)> {
    if !(f_train > 0.0 && f_val >= 0.0 && f_train + f_val < 1.0) {
        return Err(Error::Argument(format!(
            "split fractions ({f_train}, {f_val}) must satisfy 0 < train, 0 <= val, train + val < 1"
        )));
    }
    if stream.is_empty() {
        return Err(Error::Argument("cannot split an empty stream".into()));
    }
    let tau = stream.len() as f64;
    let n_train = (f_train * tau).floor() as usize;
    let n_train_val = ((f_train + f_val) * tau).floor() as usize;
    let boundary_time = |end: usize, fallback: f64| {
        if end == 0 {
            fallback
        } else {
            stream.interactions[end - 1].t
        }
    };
    let origin = stream.origin_time;
    let train = stream.slice(0..n_train, origin);
    let val_origin = boundary_time(n_train, origin);
    let val = stream.slice(n_train..n_train_val, val_origin);
    let test = stream.slice(n_train_val..stream.len(), boundary_time(n_train_val, val_origin));
    Ok((train, val, test))
}

/// Inter-event times against the globally previous interaction (the first
/// against the stream origin). Each delta is chosen so that a left-to-right
/// running sum starting at the origin reproduces every timestamp bit-exactly.
pub fn inter_event_deltas(stream: &EventStream) -> Result<Vec<f64>> {
    if stream.is_empty() {
        return Err(Error::Argument("inter-event deltas of an empty stream".into()));
    }
    let mut deltas = Vec::with_capacity(stream.len());
    let mut clock = stream.origin_time;
    for x in &stream.interactions {
        let d = exact_delta(clock, x.t);
        clock += d;
        deltas.push(d);
    }
    Ok(deltas)
}

/// Running sum `origin + d_0 + ... + d_i` for every `i`.
pub fn cumulative_times(origin: f64, deltas: &[f64]) -> Vec<f64> {
    let mut clock = origin;
    deltas
        .iter()
        .map(|d| {
            clock += d;
            clock
        })
        .collect()
}

fn exact_delta(from: f64, to: f64) -> f64 {
    let mut d = (to - from).max(0.0);
    // The rounded difference is within an ulp of one that lands exactly.
    for _ in 0..8 {
        let s = from + d;
        if s == to {
            break;
        }
        d = if s < to { d.next_up() } else { d.next_down().max(0.0) };
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_num() -> FeatureSchema {
        "num,num".parse().unwrap()
    }

    fn stream_with_times(times: &[f64], origin: f64) -> EventStream {
        let xs = times
            .iter()
            .map(|&t| Interaction {
                src: 0,
                dst: 1,
                t,
                features: vec![],
            })
            .collect();
        EventStream::new(xs, FeatureSchema::empty(), 2, origin).unwrap()
    }

    #[test]
    fn verbatim_ids_keep_tokens() {
        let text = "7,2,1.0,0\n0,7,2.0,0\n";
        let s = read_events_with(text.as_bytes(), &FeatureSchema::empty(), None, NodeIds::Verbatim).unwrap();
        assert_eq!(s.num_nodes(), 8);
        assert_eq!((s.interactions()[0].src, s.interactions()[0].dst), (7, 2));
        assert!(s.node_labels().is_none());
        let remapped = read_events(text.as_bytes(), &FeatureSchema::empty(), None).unwrap();
        assert_eq!(remapped.num_nodes(), 3);
        let bad = read_events_with(
            "a,1,1.0,0\n".as_bytes(),
            &FeatureSchema::empty(),
            None,
            NodeIds::Verbatim,
        );
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn reads_numerical_row() {
        let s = read_events("0,1,3.5,0,0.2,0.8\n".as_bytes(), &two_num(), Some(0.0)).unwrap();
        assert_eq!(
            s.interactions()[0],
            Interaction {
                src: 0,
                dst: 1,
                t: 3.5,
                features: vec![0.2, 0.8]
            }
        );
    }

    #[test]
    fn decreasing_timestamp_is_ordering_error() {
        let err = read_events("0,1,5.0,0\n1,0,2.0,0\n".as_bytes(), &FeatureSchema::empty(), None).unwrap_err();
        assert!(matches!(err, Error::Ordering { line: 2, .. }), "{err}");
    }

    #[test]
    fn feature_count_mismatch_is_schema_error() {
        let err = read_events("0,1,5.0,0,1.0\n".as_bytes(), &two_num(), None).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let err = read_events("0,1,1.0,0\n0,1,abc,0\n".as_bytes(), &FeatureSchema::empty(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn categorical_out_of_range_rejected() {
        let schema: FeatureSchema = "cat:2".parse().unwrap();
        assert!(read_events("0,1,1.0,0,2\n".as_bytes(), &schema, None).is_err());
        assert!(read_events("0,1,1.0,0,1\n".as_bytes(), &schema, None).is_ok());
    }

    #[test]
    fn ids_remapped_in_first_appearance_order() {
        let s = read_events(
            "u7,i3,1,0\ni3,u9,2,0\nu7,u9,3,0\n".as_bytes(),
            &FeatureSchema::empty(),
            None,
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.num_nodes(), 3);
        assert_eq!(s.node_labels().unwrap(), ["u7", "i3", "u9"]);
        assert_eq!(s.interactions()[2].src, 0);
        assert_eq!(s.interactions()[2].dst, 2);
        assert_eq!(s.origin_time(), 1.0);
    }

    #[test]
    fn schema_text_round_trip() {
        let schema: FeatureSchema = "colour=cat:3,num".parse().unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema.encoded_width(), 4);
        let again: FeatureSchema = schema.to_string().parse().unwrap();
        assert_eq!(schema, again);
        assert!("cat:0".parse::<FeatureSchema>().is_err());
        assert!("".parse::<FeatureSchema>().unwrap().is_empty());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = stream_with_times(&(0..10).map(f64::from).collect::<Vec<_>>(), 0.0);
        let (a, b, c) = chronological_split(&s, 0.7, 0.15).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        assert_eq!(b.origin_time(), 6.0);
        assert_eq!(c.origin_time(), 7.0);
        assert!(chronological_split(&s, 0.5, 0.6).is_err());
        assert!(chronological_split(&s, 1.0, 0.0).is_err());
        assert!(chronological_split(&s, 0.0, 0.1).is_err());
    }

    #[test]
    fn deltas_by_direct_differencing() {
        let s = stream_with_times(&[2.0, 5.0, 5.0, 9.0], 0.0);
        assert_eq!(inter_event_deltas(&s).unwrap(), vec![2.0, 3.0, 0.0, 4.0]);
        let s = stream_with_times(&[7.0], 0.0);
        assert_eq!(inter_event_deltas(&s).unwrap(), vec![7.0]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let schema: FeatureSchema = "cat:3,num".parse().unwrap();
        let xs = vec![
            Interaction {
                src: 0,
                dst: 1,
                t: 0.1,
                features: vec![2.0, -0.3],
            },
            Interaction {
                src: 1,
                dst: 2,
                t: 0.30000000000000004,
                features: vec![0.0, 1e-17],
            },
        ];
        let s = EventStream::new(xs, schema.clone(), 3, 0.1).unwrap();
        let mut buf = Vec::new();
        write_events_to(&s, &mut buf).unwrap();
        let back = read_events(buf.as_slice(), &schema, Some(0.1)).unwrap();
        assert_eq!(back.interactions(), s.interactions());
    }

    proptest! {
        #[test]
        fn deltas_reconstruct_timestamps_exactly(
            origin in 0.0f64..1e3,
            gaps in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, 0.0f64..1e6], 1..100)
        ) {
            let times = cumulative_times(origin, &gaps);
            let s = stream_with_times(&times, origin);
            let d = inter_event_deltas(&s).unwrap();
            prop_assert!(d.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(cumulative_times(origin, &d), times);
        }

        #[test]
        fn split_concatenation_reproduces_input(n in 1usize..60, ft in 0.05f64..0.9, fv in 0.0f64..0.09) {
            let s = stream_with_times(&(0..n).map(|i| i as f64 * 0.5).collect::<Vec<_>>(), 0.0);
            let (a, b, c) = chronological_split(&s, ft, fv).unwrap();
            let joined: Vec<_> = a.interactions().iter().chain(b.interactions()).chain(c.interactions()).cloned().collect();
            prop_assert_eq!(joined.as_slice(), s.interactions());
        }
    }
}
