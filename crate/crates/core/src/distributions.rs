//! Parameterized distributions produced by the decoder heads.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::tape::{log_sum_exp, softplus};

/// Lower bound added after every softplus positivity transform, so that
/// extreme raw outputs still give strictly positive rates and scales.
pub const POSITIVE_FLOOR: f64 = 1e-6;

pub(crate) fn positive(raw: f64) -> f64 {
    softplus(raw) + POSITIVE_FLOOR
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Exponential inter-event time with density `λ·exp(−λx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialParam {
    pub rate: f64,
}

impl ExponentialParam {
    pub fn from_raw(raw: f64) -> Self {
        ExponentialParam { rate: positive(raw) }
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!("inter-event time {x} is negative")));
        }
        Ok(self.rate.ln() - self.rate * x)
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        Exp::new(self.rate).expect("rate is positive").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    pub logits: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Argument("categorical over an empty support".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("non-finite logit".into()));
        }
        Ok(CategoricalParams { logits })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probabilities().into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, index: usize) -> Result<f64> {
        if index >= self.logits.len() {
            return Err(Error::Domain(format!(
                "category {index} outside support of size {}",
                self.logits.len()
            )));
        }
        Ok(self.logits[index] - log_sum_exp(&self.logits))
    }

    pub fn argmax(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &l)| if l > best.1 { (i, l) } else { best },
            )
            .0
    }

    /// Inverse-CDF draw using one uniform variate.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub components: Vec<GmmComponent>,
}

impl GmmParams {
    /// Raw head output laid out as `[means; raw stds; raw weights]`, `m` each.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || !raw.len().is_multiple_of(3) {
            return Err(Error::Shape(format!("GMM head needs 3·m outputs, got {}", raw.len())));
        }
        let m = raw.len() / 3;
        let weights = CategoricalParams::new(raw[2 * m..].to_vec())?.probabilities();
        Ok(GmmParams {
            components: (0..m)
                .map(|j| GmmComponent {
                    mean: raw[j],
                    std: positive(raw[m + j]),
                    weight: weights[j],
                })
                .collect(),
        })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.std;
                c.weight.ln() - 0.5 * z * z - c.std.ln() - HALF_LN_2PI
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// Mean of the heaviest component.
    pub fn dominant_mean(&self) -> f64 {
        self.components
            .iter()
            .fold((f64::NEG_INFINITY, 0.0), |best, c| {
                if c.weight > best.0 {
                    (c.weight, c.mean)
                } else {
                    best
                }
            })
            .1
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = j;
                break;
            }
        }
        let c = self.components[chosen];
        Normal::new(c.mean, c.std).expect("std is positive").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureHeadParams {
    Categorical(CategoricalParams),
    Gmm(GmmParams),
}

impl FeatureHeadParams {
    pub fn log_likelihood(&self, value: f64) -> Result<f64> {
        match self {
            FeatureHeadParams::Categorical(c) => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(Error::Domain(format!("{value} is not a category index")));
                }
                c.log_prob(value as usize)
            }
            FeatureHeadParams::Gmm(g) => {
                if !value.is_finite() {
                    return Err(Error::Domain(format!("non-finite feature value {value}")));
                }
                Ok(g.log_density(value))
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            FeatureHeadParams::Categorical(c) => c.sample(rng) as f64,
            FeatureHeadParams::Gmm(g) => g.sample(rng),
        }
    }

    /// Most likely category, or the mean of the heaviest mixture component.
    pub fn mode(&self) -> f64 {
        match self {
            FeatureHeadParams::Categorical(c) => c.argmax() as f64,
            FeatureHeadParams::Gmm(g) => g.dominant_mean(),
        }
    }
}

/// Full factorized distribution of one interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDistribution {
    pub source: CategoricalParams,
    pub destination: CategoricalParams,
    pub time: ExponentialParam,
    pub feature_heads: Vec<FeatureHeadParams>,
}

/// An interaction expressed against the supports of an
/// [`InteractionDistribution`]: `src` and `dst` index the candidate lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedInteraction {
    pub src: usize,
    pub dst: usize,
    pub delta: f64,
    pub features: Vec<f64>,
}

pub fn interaction_log_likelihood(dist: &InteractionDistribution, observed: &ObservedInteraction) -> Result<f64> {
    if observed.features.len() != dist.feature_heads.len() {
        return Err(Error::Argument(format!(
            "{} feature values for {} heads",
            observed.features.len(),
            dist.feature_heads.len()
        )));
    }
    let mut ll = dist.source.log_prob(observed.src)?
        + dist.destination.log_prob(observed.dst)?
        + dist.time.log_density(observed.delta)?;
    for (head, &v) in dist.feature_heads.iter().zip(&observed.features) {
        ll += head.log_likelihood(v)?;
    }
    Ok(ll)
}
