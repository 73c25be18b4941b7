//! Feature histograms and the Jensen-Shannon distance between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{EventStream, FeatureKind, FeatureSchema};

/// One histogram dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    /// One bin per category.
    Categorical { cardinality: usize },
    /// `bins` equal-width bins over `[lo, hi]`, the last bin closed.
    Uniform { lo: f64, hi: f64, bins: usize },
}

impl Axis {
    pub fn len(&self) -> usize {
        match *self {
            Axis::Categorical { cardinality } => cardinality,
            Axis::Uniform { bins, .. } => bins,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bin of `x`; values outside the range land in the nearest end bin.
    pub fn index(&self, x: f64) -> usize {
        match *self {
            Axis::Categorical { cardinality } => (x.max(0.0) as usize).min(cardinality - 1),
            Axis::Uniform { lo, hi, bins } => {
                let k = (bins as f64 * (x - lo) / (hi - lo)).floor();
                if k.is_nan() || k < 0.0 {
                    0
                } else {
                    (k as usize).min(bins - 1)
                }
            }
        }
    }

    /// Centre of bin `k` (the category itself for categorical axes).
    pub fn center(&self, k: usize) -> f64 {
        match *self {
            Axis::Categorical { .. } => k as f64,
            Axis::Uniform { lo, hi, bins } => lo + (k as f64 + 0.5) * (hi - lo) / bins as f64,
        }
    }
}

/// Dense counts over the product of its axes, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    axes: Vec<Axis>,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(Axis::is_empty) {
            return Err(Error::Argument("histogram axes must be nonempty".into()));
        }
        if let Some(Axis::Uniform { lo, hi, .. }) = axes
            .iter()
            .find(|a| matches!(a, Axis::Uniform { lo, hi, .. } if !(hi > lo && lo.is_finite() && hi.is_finite())))
        {
            return Err(Error::Argument(format!("bad histogram range [{lo}, {hi}]")));
        }
        let size = axes.iter().map(Axis::len).product();
        Ok(Histogram {
            axes,
            counts: vec![0.0; size],
        })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn add(&mut self, point: &[f64]) {
        let mut flat = 0;
        for (a, &x) in self.axes.iter().zip(point) {
            flat = flat * a.len() + a.index(x);
        }
        self.counts[flat] += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Counts normalized to sum to one.
    pub fn pmf(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Argument("empty histogram has no mass function".into()));
        }
        Ok(self.counts.iter().map(|c| c / total).collect())
    }

    /// Counts summed over every axis except `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes[axis].len()];
        let inner: usize = self.axes[axis + 1..].iter().map(Axis::len).product();
        let size = self.axes[axis].len();
        for (flat, &c) in self.counts.iter().enumerate() {
            out[(flat / inner) % size] += c;
        }
        out
    }
}

/// `√JSD(P, Q)` with base-2 logarithms, in `[0, 1]`.
pub fn js_distance(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.axes != q.axes {
        return Err(Error::Argument("histograms use different binnings".into()));
    }
    let (p, q) = (p.pmf()?, q.pmf()?);
    let mut jsd = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
        jsd += 0.5 * term(a) + 0.5 * term(b);
    }
    Ok(jsd.clamp(0.0, 1.0).sqrt())
}

/// Shared value range of each numerical feature over several streams;
/// `None` for categorical features. A degenerate range is widened by 0.5
/// on each side.
pub fn shared_ranges(schema: &FeatureSchema, streams: &[&EventStream]) -> Vec<Option<(f64, f64)>> {
    (0..schema.len())
        .map(|i| match schema.kind(i) {
            FeatureKind::Categorical { .. } => None,
            FeatureKind::Numerical => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for s in streams {
                    for x in s.interactions() {
                        lo = lo.min(x.features[i]);
                        hi = hi.max(x.features[i]);
                    }
                }
                if lo > hi {
                    (lo, hi) = (0.0, 0.0);
                }
                if hi <= lo {
                    (lo, hi) = (lo - 0.5, hi + 0.5);
                }
                Some((lo, hi))
            }
        })
        .collect()
}

fn axis_for(schema: &FeatureSchema, i: usize, range: Option<(f64, f64)>, bins: usize) -> Result<Axis> {
    match (schema.kind(i), range) {
        (FeatureKind::Categorical { cardinality }, _) => Ok(Axis::Categorical { cardinality }),
        (FeatureKind::Numerical, Some((lo, hi))) => Ok(Axis::Uniform { lo, hi, bins }),
        (FeatureKind::Numerical, None) => Err(Error::Argument(format!("no range for numerical feature {i}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHistograms {
    /// One per feature.
    pub single: Vec<Histogram>,
    /// One per feature pair `(i, j)` with `i < j`.
    pub pairs: Vec<((usize, usize), Histogram)>,
}

/// Histograms of every feature and every feature pair. Numerical features
/// use `bins_1d` bins alone and `bins_2d` bins inside pairs, over the
/// caller's `ranges` so that compared streams share one binning.
pub fn feature_histograms(
    stream: &EventStream,
    ranges: &[Option<(f64, f64)>],
    bins_1d: usize,
    bins_2d: usize,
) -> Result<FeatureHistograms> {
    let schema = stream.schema();
    let n = schema.len();
    if ranges.len() != n {
        return Err(Error::Argument(format!("{} ranges for {n} features", ranges.len())));
    }
    let mut single = Vec::with_capacity(n);
    for (i, &range) in ranges.iter().enumerate() {
        let mut h = Histogram::new(vec![axis_for(schema, i, range, bins_1d)?])?;
        for x in stream.interactions() {
            h.add(&[x.features[i]]);
        }
        single.push(h);
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let axes = vec![
                axis_for(schema, i, ranges[i], bins_2d)?,
                axis_for(schema, j, ranges[j], bins_2d)?,
            ];
            let mut h = Histogram::new(axes)?;
            for x in stream.interactions() {
                h.add(&[x.features[i], x.features[j]]);
            }
            pairs.push(((i, j), h));
        }
    }
    Ok(FeatureHistograms { single, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::Interaction;
    use proptest::prelude::*;

    fn hist(counts: &[f64]) -> Histogram {
        Histogram {
            axes: vec![Axis::Categorical {
                cardinality: counts.len(),
            }],
            counts: counts.to_vec(),
        }
    }

    #[test]
    fn js_closed_forms() {
        assert_eq!(js_distance(&hist(&[3.0, 1.0]), &hist(&[3.0, 1.0])).unwrap(), 0.0);
        assert!((js_distance(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-9);
        let d = js_distance(&hist(&[1.0, 0.0]), &hist(&[0.5, 0.5])).unwrap();
        assert!((d - 0.31128_f64.sqrt()).abs() < 1e-4);
        assert!((d - 0.5579).abs() < 1e-4);
        assert!(js_distance(&hist(&[1.0, 0.0]), &hist(&[1.0, 0.0, 0.0])).is_err());
        assert!(js_distance(&hist(&[0.0, 0.0]), &hist(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn counting_and_boundaries() {
        let mut c = Histogram::new(vec![Axis::Categorical { cardinality: 2 }]).unwrap();
        for v in [0.0, 0.0, 1.0, 0.0] {
            c.add(&[v]);
        }
        assert_eq!(c.counts(), &[3.0, 1.0]);
        let mut u = Histogram::new(vec![Axis::Uniform {
            lo: 0.0,
            hi: 1.0,
            bins: 2,
        }])
        .unwrap();
        u.add(&[0.0]);
        u.add(&[1.0]);
        assert_eq!(u.counts(), &[1.0, 1.0]);
        assert!(Histogram::new(vec![Axis::Uniform {
            lo: 1.0,
            hi: 1.0,
            bins: 2
        }])
        .is_err());
    }

    #[test]
    fn pair_marginals_equal_single_histograms() {
        let schema: FeatureSchema = "cat:3,num,num".parse().unwrap();
        let xs: Vec<Interaction> = (0..200)
            .map(|i| Interaction {
                src: 0,
                dst: 1,
                t: i as f64,
                features: vec![(i % 3) as f64, (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos() * 3.0],
            })
            .collect();
        let s = EventStream::new(xs, schema.clone(), 2, 0.0).unwrap();
        let ranges = shared_ranges(&schema, &[&s]);
        // Equal bin counts so each 2D marginal lines up with its 1D histogram.
        let h = feature_histograms(&s, &ranges, 10, 10).unwrap();
        assert_eq!(h.single.len(), 3);
        assert_eq!(h.pairs.len(), 3);
        for ((i, j), pair) in &h.pairs {
            assert_eq!(pair.marginal(0), h.single[*i].counts());
            assert_eq!(pair.marginal(1), h.single[*j].counts());
        }
        let empty = EventStream::new(vec![], FeatureSchema::empty(), 1, 0.0).unwrap();
        let none = feature_histograms(&empty, &[], 10, 10).unwrap();
        assert!(none.single.is_empty() && none.pairs.is_empty());
    }

    #[test]
    fn degenerate_range_widened() {
        let schema: FeatureSchema = "num".parse().unwrap();
        let xs = vec![Interaction {
            src: 0,
            dst: 1,
            t: 0.0,
            features: vec![2.0],
        }];
        let s = EventStream::new(xs, schema.clone(), 2, 0.0).unwrap();
        assert_eq!(shared_ranges(&schema, &[&s]), vec![Some((1.5, 2.5))]);
    }

    proptest! {
        #[test]
        fn js_is_symmetric_and_bounded(
            p in prop::collection::vec(0.0..5.0f64, 6),
            q in prop::collection::vec(0.0..5.0f64, 6),
        ) {
            prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
            let (a, b) = (hist(&p), hist(&q));
            let d = js_distance(&a, &b).unwrap();
            prop_assert_eq!(d, js_distance(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(js_distance(&a, &a).unwrap(), 0.0);
        }
    }
}
