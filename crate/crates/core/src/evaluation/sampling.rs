//! Edge overlap and negative sampling for link prediction.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{EventStream, Interaction};

/// Fraction of the source's distinct `(src, dst, t)` triples that also
/// occur in the synthetic stream.
pub fn edge_overlap(source: &EventStream, synth: &EventStream) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::Argument("edge overlap of an empty source stream".into()));
    }
    let key = |x: &Interaction| (x.src, x.dst, x.t.to_bits());
    let src: HashSet<_> = source.interactions().iter().map(key).collect();
    let syn: HashSet<_> = synth.interactions().iter().map(key).collect();
    Ok(src.intersection(&syn).count() as f64 / src.len() as f64)
}

/// A scored link with its label. Negatives copy the time and features of
/// the positive they were drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledLink {
    pub interaction: Interaction,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    /// Each kept positive immediately followed by its negative.
    pub links: Vec<LabelledLink>,
    /// Positives dropped because no eligible destination existed.
    pub skipped: usize,
}

/// How negative destinations are chosen for link prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSampling {
    /// Only destinations the source never met in training.
    #[default]
    Inductive,
    /// Any destination other than the positive one.
    Random,
}

/// One negative per test interaction: same source and time, destination
/// drawn uniformly from destinations (of either stream) that the source
/// never interacted with in training, excluding the source itself and the
/// positive's own destination.
pub fn inductive_negative_sampling(
    train: &EventStream,
    test: &EventStream,
    rng: &mut impl Rng,
) -> Result<NegativeSample> {
    negative_sampling(train, test, NegativeSampling::Inductive, rng)
}

/// Negatives under either protocol. `Random` ignores training history and
/// only excludes the source and the positive's destination.
pub fn negative_sampling(
    train: &EventStream,
    test: &EventStream,
    mode: NegativeSampling,
    rng: &mut impl Rng,
) -> Result<NegativeSample> {
    if train.num_nodes() != test.num_nodes() {
        return Err(Error::Argument(format!(
            "streams use different node universes ({} and {})",
            train.num_nodes(),
            test.num_nodes()
        )));
    }
    let destinations: BTreeSet<usize> = train
        .interactions()
        .iter()
        .chain(test.interactions())
        .map(|x| x.dst)
        .collect();
    let mut seen: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    if mode == NegativeSampling::Inductive {
        for x in train.interactions() {
            seen.entry(x.src).or_default().insert(x.dst);
        }
    }
    let mut eligible: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut links = Vec::with_capacity(2 * test.len());
    let mut skipped = 0;
    for x in test.interactions() {
        let pool = eligible.entry(x.src).or_insert_with(|| {
            let partners = seen.get(&x.src);
            destinations
                .iter()
                .copied()
                .filter(|&d| d != x.src && !partners.is_some_and(|p| p.contains(&d)))
                .collect()
        });
        let usable = pool.len() - usize::from(pool.binary_search(&x.dst).is_ok());
        if usable == 0 {
            skipped += 1;
            continue;
        }
        let dst = loop {
            let d = pool[rng.random_range(0..pool.len())];
            if d != x.dst {
                break d;
            }
        };
        links.push(LabelledLink {
            interaction: x.clone(),
            positive: true,
        });
        links.push(LabelledLink {
            interaction: Interaction { dst, ..x.clone() },
            positive: false,
        });
    }
    if skipped > 0 {
        log::warn!("{skipped} test interactions had no eligible negative destination and were skipped");
    }
    Ok(NegativeSample { links, skipped })
}
