//! Primitive laws for the coefficient `C` and the weights `T_i`.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma};

use crate::error::{config, Result};

/// A nonnegative real-valued law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Point { value: f64 },
    Exponential { rate: f64 },
    Uniform { low: f64, high: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        config(format!("{name} must be finite, got {x}"))
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return config("probability vector is empty");
    }
    for &p in probs {
        finite("probability", p)?;
        if p < 0.0 {
            return config(format!("negative probability {p}"));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return config(format!("probabilities sum to {total}, expected 1"));
    }
    Ok(())
}

/// Inverse-CDF draw from a finite probability vector.
fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: fall back to the last atom with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl Law {
    pub fn point(value: f64) -> Self {
        Law::Point { value }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Law::Uniform { low, high }
    }

    pub fn exponential(rate: f64) -> Self {
        Law::Exponential { rate }
    }

    /// Checks parameters; every law here must be supported on `[0, ∞)`.
    pub fn validate(&self) -> Result<()> {
        match self {
            Law::Point { value } => {
                finite("point value", *value)?;
                if *value < 0.0 {
                    return config(format!("point mass at negative value {value}"));
                }
            }
            Law::Exponential { rate } => {
                finite("exponential rate", *rate)?;
                if *rate <= 0.0 {
                    return config(format!("exponential rate must be positive, got {rate}"));
                }
            }
            Law::Uniform { low, high } => {
                finite("uniform low", *low)?;
                finite("uniform high", *high)?;
                if *low < 0.0 || high < low {
                    return config(format!("uniform({low}, {high}) needs 0 <= low <= high"));
                }
            }
            Law::Lognormal { mu, sigma } => {
                finite("lognormal mu", *mu)?;
                finite("lognormal sigma", *sigma)?;
                if *sigma < 0.0 {
                    return config(format!("lognormal sigma must be nonnegative, got {sigma}"));
                }
            }
            Law::Discrete { values, probs } => {
                if values.len() != probs.len() {
                    return config("discrete law: values and probs differ in length");
                }
                check_probs(probs)?;
                for &v in values {
                    finite("discrete value", v)?;
                    if v < 0.0 {
                        return config(format!("discrete law has negative atom {v}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Law::Point { value } => *value,
            Law::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Law::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    low + (high - low) * rng.random::<f64>()
                }
            }
            Law::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma)
                .expect("validated lognormal")
                .sample(rng),
            Law::Discrete { values, probs } => values[draw_index(probs, rng)],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Law::Point { value } => *value,
            Law::Exponential { rate } => 1.0 / rate,
            Law::Uniform { low, high } => 0.5 * (low + high),
            Law::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Law::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Law::Point { .. } => 0.0,
            Law::Exponential { rate } => 1.0 / (rate * rate),
            Law::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Law::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
            Law::Discrete { values, probs } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m).powi(2)).sum()
            }
        }
    }

    pub fn prob_positive(&self) -> f64 {
        match self {
            Law::Point { value } => f64::from(u8::from(*value > 0.0)),
            Law::Exponential { .. } | Law::Lognormal { .. } => 1.0,
            Law::Uniform { low, high } => f64::from(u8::from(*high > 0.0 || *low > 0.0)),
            Law::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v > 0.0)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// `E[X^θ; X > 0]`, possibly `+∞`.
    pub fn positive_moment(&self, theta: f64) -> f64 {
        match self {
            Law::Point { value } => {
                if *value > 0.0 {
                    value.powf(theta)
                } else {
                    0.0
                }
            }
            Law::Exponential { rate } => {
                if theta <= -1.0 {
                    f64::INFINITY
                } else {
                    gamma(theta + 1.0) * rate.powf(-theta)
                }
            }
            Law::Uniform { low, high } => {
                if low == high {
                    return Law::point(*low).positive_moment(theta);
                }
                let s = theta + 1.0;
                if *low == 0.0 && s <= 0.0 {
                    return f64::INFINITY;
                }
                if s.abs() < 1e-12 {
                    (high.ln() - low.ln()) / (high - low)
                } else {
                    (high.powf(s) - low.powf(s)) / (s * (high - low))
                }
            }
            Law::Lognormal { mu, sigma } => (theta * mu + 0.5 * theta * theta * sigma * sigma).exp(),
            Law::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v > 0.0)
                .map(|(v, p)| p * v.powf(theta))
                .sum(),
        }
    }

    /// `E[X^θ log X; X > 0]`, the θ-derivative of [`Law::positive_moment`].
    pub fn positive_log_moment(&self, theta: f64) -> f64 {
        match self {
            Law::Point { value } => {
                if *value > 0.0 {
                    value.powf(theta) * value.ln()
                } else {
                    0.0
                }
            }
            Law::Exponential { rate } => {
                if theta <= -1.0 {
                    f64::NEG_INFINITY
                } else {
                    gamma(theta + 1.0) * rate.powf(-theta) * (digamma(theta + 1.0) - rate.ln())
                }
            }
            Law::Uniform { low, high } => {
                if low == high {
                    return Law::point(*low).positive_log_moment(theta);
                }
                let s = theta + 1.0;
                if *low == 0.0 && s <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let xlog = |x: f64| if x > 0.0 { x.powf(s) * x.ln() } else { 0.0 };
                if s.abs() < 1e-12 {
                    0.5 * (high.ln().powi(2) - low.ln().powi(2)) / (high - low)
                } else {
                    let num = (xlog(*high) - xlog(*low)) * s - (high.powf(s) - low.powf(s));
                    num / (s * s * (high - low))
                }
            }
            Law::Lognormal { mu, sigma } => {
                (mu + theta * sigma * sigma) * self.positive_moment(theta)
            }
            Law::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v > 0.0)
                .map(|(v, p)| p * v.powf(theta) * v.ln())
                .sum(),
        }
    }

    pub fn as_point(&self) -> Option<f64> {
        match self {
            Law::Point { value } => Some(*value),
            Law::Uniform { low, high } if low == high => Some(*low),
            Law::Lognormal { mu, sigma } if *sigma == 0.0 => Some(mu.exp()),
            Law::Discrete { values, probs } => {
                let support: Vec<f64> = values
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(v, _)| *v)
                    .collect();
                if support.iter().all(|&v| v == support[0]) {
                    Some(support[0])
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Smallest closed interval containing the support.
    pub fn support_bounds(&self) -> (f64, f64) {
        match self {
            Law::Point { value } => (*value, *value),
            Law::Exponential { .. } => (0.0, f64::INFINITY),
            Law::Uniform { low, high } => (*low, *high),
            Law::Lognormal { sigma, mu } => {
                if *sigma == 0.0 {
                    (mu.exp(), mu.exp())
                } else {
                    (0.0, f64::INFINITY)
                }
            }
            Law::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| {
                    (lo.min(*v), hi.max(*v))
                }),
        }
    }

    /// True when every atom lies in `{0, 1}`.
    pub fn zero_one_valued(&self) -> bool {
        match self {
            Law::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .all(|(v, p)| *p == 0.0 || *v == 0.0 || *v == 1.0),
            other => matches!(other.as_point(), Some(v) if v == 0.0 || v == 1.0),
        }
    }

    /// Law of `1 - X` for laws supported in `[0, 1]`.
    pub fn one_minus(&self) -> Option<Law> {
        let (lo, hi) = self.support_bounds();
        if lo < 0.0 || hi > 1.0 {
            return None;
        }
        match self {
            Law::Point { value } => Some(Law::point(1.0 - value)),
            Law::Uniform { low, high } => Some(Law::uniform(1.0 - high, 1.0 - low)),
            Law::Discrete { values, probs } => Some(Law::Discrete {
                values: values.iter().map(|v| 1.0 - v).collect(),
                probs: probs.clone(),
            }),
            Law::Lognormal { mu, sigma } if *sigma == 0.0 => Some(Law::point(1.0 - mu.exp())),
            _ => None,
        }
    }
}

/// A law on the nonnegative integers, given by its probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pmf {
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let p = Self { probs };
        p.validate()?;
        Ok(p)
    }

    pub fn point(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs }
    }

    pub fn binomial(trials: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return config(format!("binomial success probability {p} outside [0, 1]"));
        }
        let mut probs = Vec::with_capacity(trials + 1);
        let mut coeff = 1.0f64;
        for k in 0..=trials {
            if k > 0 {
                coeff *= (trials - k + 1) as f64 / k as f64;
            }
            probs.push(coeff * p.powi(k as i32) * (1.0 - p).powi((trials - k) as i32));
        }
        Self::new(probs)
    }

    pub fn validate(&self) -> Result<()> {
        check_probs(&self.probs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw_index(&self.probs, rng)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0)
    }

    /// `E[K^p]` with the convention `0^p = 0`.
    pub fn moment(&self, p: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, q)| q * (k as f64).powf(p))
            .sum()
    }

    pub fn max_support(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn as_point(&self) -> Option<usize> {
        let mut atoms = self.probs.iter().enumerate().filter(|(_, p)| **p > 0.0);
        let first = atoms.next()?;
        if atoms.next().is_none() {
            Some(first.0)
        } else {
            None
        }
    }

    /// Iterator over `(k, P(K = k))` for atoms with positive mass.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().copied().enumerate().filter(|(_, p)| *p > 0.0)
    }
}
