//! Generative models for the basic sequence `(C, T_1, T_2, ...)`.
//!
//! Built-in kinds carry exact spectral data (`m(θ)`, its derivative, `E N`)
//! computed from the primitive laws; `custom` models are sampled only.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::law::{Law, Pmf};
use crate::rng::RngStream;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N_CAP: usize = 10_000;

/// One draw of the basic sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedSequence {
    pub c: f64,
    /// Weights `T_1, ..., T_k`; index `i` is child label `i + 1`. Zeros are kept.
    pub t: Vec<f64>,
    /// The model's support exceeded `n_cap` on this draw.
    pub truncated: bool,
}

/// Weight rule for `explicit` models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightLaw {
    /// `T_i` drawn independently from `laws[i - 1]`.
    Independent { laws: Vec<Law> },
    /// `T = (U, 1 - U)` with `U` from `u`, supported in `[0, 1]`.
    Split { u: Law },
    /// Draw `N` from `count`, then `T_1..T_N` by `weight`.
    Counted { count: Pmf, weight: CountedWeight },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountedWeight {
    Constant { value: f64 },
    /// `T_i = scale / N`.
    Reciprocal { scale: f64 },
    Iid { law: Law },
}

/// A joint draw rule for `custom` models, where `C` and `T` may be dependent.
pub trait JointRule: Send + Sync {
    fn name(&self) -> &str;
    /// Draws `C` and fills `t` (cleared by the caller) with at most `n_cap`
    /// weights; returns `(c, truncated)`.
    fn draw(&self, rng: &mut dyn RngCore, n_cap: usize, t: &mut Vec<f64>) -> (f64, bool);
}

#[derive(Clone)]
pub struct CustomRule(pub Arc<dyn JointRule>);

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomRule({})", self.0.name())
    }
}

impl PartialEq for CustomRule {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    Explicit {
        c_law: Law,
        t_law: WeightLaw,
    },
    /// `C ≡ 1`, `T_i = 1{Z ≥ i}` with `Z` the offspring count.
    GaltonWatson {
        offspring: Pmf,
    },
    /// `C = U`, `N ~ Poisson(λU)`, `T_i = 1{i ≤ N}` with `U` the service time.
    Mg1Queue {
        arrival_rate: f64,
        service: Law,
    },
    /// `T_i = damping / D` for `i ≤ D`, `C` from `teleport`.
    Pagerank {
        damping: f64,
        out_degree: Pmf,
        teleport: Law,
    },
    /// `T_i = c / ((i+1) log²(i+1))` for all `i ≥ 1`, cut at `n_cap`.
    Counterexample {
        c: f64,
        c_law: Law,
    },
    #[serde(skip)]
    Custom(CustomRule),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Explicit { .. } => "explicit",
            ModelKind::GaltonWatson { .. } => "galton_watson",
            ModelKind::Mg1Queue { .. } => "mg1_queue",
            ModelKind::Pagerank { .. } => "pagerank",
            ModelKind::Counterexample { .. } => "counterexample",
            ModelKind::Custom(_) => "custom",
        }
    }
}

fn default_n_cap() -> usize {
    DEFAULT_N_CAP
}

/// Generative description of the basic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicSequenceModel {
    pub schema: u32,
    #[serde(default = "default_n_cap")]
    pub n_cap: usize,
    pub sequence: ModelKind,
}

/// Terms `c / ((i+1) log²(i+1))` for `i = 1..=n`.
fn counterexample_weights(c: f64, n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |i| {
        let k = (i + 1) as f64;
        c / (k * k.ln().powi(2))
    })
}

/// `Σ_{k > K} (c / (k log² k))^θ` for `θ ≥ 1` via Euler-Maclaurin about the
/// integral, the integral done on `u = log K / s`, `s ∈ (0, 1]`.
fn counterexample_tail(c: f64, theta: f64, big_k: f64) -> f64 {
    let f = |x: f64| (c / (x * x.ln().powi(2))).powf(theta);
    let lk = big_k.ln();
    let integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let u = lk / s;
        // x = e^u, dx = e^u du, du = lk / s^2 ds
        let log_val = theta * (c.ln() - u - 2.0 * u.ln()) + u;
        log_val.exp() * lk / (s * s)
    };
    let n = 4000;
    let h = 1.0 / n as f64;
    let mut sum = integrand(0.0) + integrand(1.0);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(j as f64 * h);
    }
    let integral = sum * h / 3.0;
    let eps = 1e-3 * big_k;
    let fprime = (f(big_k + eps) - f(big_k - eps)) / (2.0 * eps);
    integral - 0.5 * f(big_k) - fprime / 12.0
}

impl BasicSequenceModel {
    pub fn new(sequence: ModelKind) -> Result<Self> {
        Self::with_cap(sequence, DEFAULT_N_CAP)
    }

    pub fn with_cap(sequence: ModelKind, n_cap: usize) -> Result<Self> {
        let m = Self { schema: SCHEMA_VERSION, n_cap, sequence };
        m.validate()?;
        Ok(m)
    }

    /// Convenience: explicit model with point-mass `C` and point-mass weights.
    pub fn deterministic(c: f64, weights: &[f64]) -> Result<Self> {
        Self::new(ModelKind::Explicit {
            c_law: Law::point(c),
            t_law: WeightLaw::Independent { laws: weights.iter().map(|&w| Law::point(w)).collect() },
        })
    }

    pub fn custom(rule: Arc<dyn JointRule>, n_cap: usize) -> Result<Self> {
        Self::with_cap(ModelKind::Custom(CustomRule(rule)), n_cap)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        if matches!(self.sequence, ModelKind::Custom(_)) {
            return config("custom models have no JSON representation");
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical JSON form (`custom` hashes its rule name).
    pub fn hash(&self) -> String {
        let body = match &self.sequence {
            ModelKind::Custom(rule) => format!("custom:{}:{}", rule.0.name(), self.n_cap),
            _ => serde_json::to_string(self).expect("serializable model"),
        };
        hex::encode(Sha256::digest(body.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return config(format!("unsupported model schema {}, expected {SCHEMA_VERSION}", self.schema));
        }
        if self.n_cap == 0 {
            return config("n_cap must be positive");
        }
        match &self.sequence {
            ModelKind::Explicit { c_law, t_law } => {
                c_law.validate()?;
                match t_law {
                    WeightLaw::Independent { laws } => {
                        for l in laws {
                            l.validate()?;
                        }
                    }
                    WeightLaw::Split { u } => {
                        u.validate()?;
                        if u.one_minus().is_none() {
                            return config("split rule needs a law supported in [0, 1] (point, uniform or discrete)");
                        }
                    }
                    WeightLaw::Counted { count, weight } => {
                        count.validate()?;
                        match weight {
                            CountedWeight::Constant { value } => Law::point(*value).validate()?,
                            CountedWeight::Reciprocal { scale } => Law::point(*scale).validate()?,
                            CountedWeight::Iid { law } => law.validate()?,
                        }
                    }
                }
            }
            ModelKind::GaltonWatson { offspring } => offspring.validate()?,
            ModelKind::Mg1Queue { arrival_rate, service } => {
                service.validate()?;
                if !arrival_rate.is_finite() || *arrival_rate <= 0.0 {
                    return config(format!("arrival rate must be positive, got {arrival_rate}"));
                }
                let mu = service.mean();
                if !(mu > 0.0) {
                    return config("service law must have positive mean");
                }
                let rho = arrival_rate * mu;
                if rho > 1.0 + 1e-12 {
                    return Err(Error::Refused(format!(
                        "traffic intensity rho = {rho} exceeds 1; busy periods are not a.s. finite"
                    )));
                }
            }
            ModelKind::Pagerank { damping, out_degree, teleport } => {
                out_degree.validate()?;
                teleport.validate()?;
                if !(*damping > 0.0 && *damping < 1.0) {
                    return config(format!("damping must lie in (0, 1), got {damping}"));
                }
            }
            ModelKind::Counterexample { c, c_law } => {
                c_law.validate()?;
                if !c.is_finite() || *c <= 0.0 {
                    return config(format!("counterexample scale must be positive, got {c}"));
                }
            }
            ModelKind::Custom(_) => {}
        }
        Ok(())
    }

    /// Draws `(C, T)` into `t` (cleared first); returns `(c, truncated)`.
    pub fn draw_into<R: Rng>(&self, rng: &mut R, t: &mut Vec<f64>) -> (f64, bool) {
        t.clear();
        let cap = self.n_cap;
        match &self.sequence {
            ModelKind::Explicit { c_law, t_law } => {
                let c = c_law.sample(rng);
                let truncated = match t_law {
                    WeightLaw::Independent { laws } => {
                        let mut dropped = false;
                        for (i, l) in laws.iter().enumerate() {
                            let w = l.sample(rng);
                            if i < cap {
                                t.push(w);
                            } else if w > 0.0 {
                                dropped = true;
                            }
                        }
                        dropped
                    }
                    WeightLaw::Split { u } => {
                        let x = u.sample(rng);
                        t.push(x);
                        if cap >= 2 {
                            t.push(1.0 - x);
                            false
                        } else {
                            1.0 - x > 0.0
                        }
                    }
                    WeightLaw::Counted { count, weight } => {
                        let n = count.sample(rng);
                        let kept = n.min(cap);
                        match weight {
                            CountedWeight::Constant { value } => t.resize(kept, *value),
                            CountedWeight::Reciprocal { scale } => t.resize(kept, scale / n as f64),
                            CountedWeight::Iid { law } => {
                                for _ in 0..kept {
                                    t.push(law.sample(rng));
                                }
                            }
                        }
                        n > cap
                    }
                };
                (c, truncated)
            }
            ModelKind::GaltonWatson { offspring } => {
                let z = offspring.sample(rng);
                t.resize(z.min(cap), 1.0);
                (1.0, z > cap)
            }
            ModelKind::Mg1Queue { arrival_rate, service } => {
                let u = service.sample(rng);
                let lambda = arrival_rate * u;
                let n = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
                } else {
                    0
                };
                t.resize(n.min(cap), 1.0);
                (u, n > cap)
            }
            ModelKind::Pagerank { damping, out_degree, teleport } => {
                let d = out_degree.sample(rng);
                let c = teleport.sample(rng);
                if d > 0 {
                    t.resize(d.min(cap), damping / d as f64);
                }
                (c, d > cap)
            }
            ModelKind::Counterexample { c, c_law } => {
                let c0 = c_law.sample(rng);
                t.extend(counterexample_weights(*c, cap));
                (c0, true)
            }
            ModelKind::Custom(rule) => {
                let (c, truncated) = rule.0.draw(rng, cap, t);
                t.truncate(cap);
                (c, truncated)
            }
        }
    }

    // ---- structural queries ----

    /// True when every draw is identical (all laws are point masses).
    pub fn is_deterministic(&self) -> bool {
        match &self.sequence {
            ModelKind::Explicit { c_law, t_law } => {
                c_law.as_point().is_some()
                    && match t_law {
                        WeightLaw::Independent { laws } => laws.iter().all(|l| l.as_point().is_some()),
                        WeightLaw::Split { u } => u.as_point().is_some(),
                        WeightLaw::Counted { count, weight } => {
                            count.as_point().is_some()
                                && match weight {
                                    CountedWeight::Iid { law } => law.as_point().is_some(),
                                    _ => true,
                                }
                        }
                    }
            }
            ModelKind::GaltonWatson { offspring } => offspring.as_point().is_some(),
            ModelKind::Mg1Queue { .. } => false,
            ModelKind::Pagerank { out_degree, teleport, .. } => {
                out_degree.as_point().is_some() && teleport.as_point().is_some()
            }
            ModelKind::Counterexample { c_law, .. } => c_law.as_point().is_some(),
            ModelKind::Custom(_) => false,
        }
    }

    /// Distinct positive weights of a deterministic model.
    pub fn point_weights(&self) -> Option<Vec<f64>> {
        if !self.is_deterministic() {
            return None;
        }
        let mut t = Vec::new();
        let mut rng = RngStream::new(0).rng();
        self.draw_into(&mut rng, &mut t);
        let mut w: Vec<f64> = t.into_iter().filter(|&x| x > 0.0).collect();
        w.sort_by(f64::total_cmp);
        w.dedup();
        Some(w)
    }

    /// `P(C = 0) = 1`, when determinable.
    pub fn c_is_zero(&self) -> Option<bool> {
        self.c_law().map(|l| l.prob_positive() == 0.0)
    }

    /// Law of `C` when it has one independent of `T` (or coupled but explicit).
    pub fn c_law(&self) -> Option<Law> {
        match &self.sequence {
            ModelKind::Explicit { c_law, .. } | ModelKind::Counterexample { c_law, .. } => Some(c_law.clone()),
            ModelKind::GaltonWatson { .. } => Some(Law::point(1.0)),
            ModelKind::Mg1Queue { service, .. } => Some(service.clone()),
            ModelKind::Pagerank { teleport, .. } => Some(teleport.clone()),
            ModelKind::Custom(_) => None,
        }
    }

    /// `E C^β` (β > 0).
    pub fn exact_c_moment(&self, beta: f64) -> Option<f64> {
        self.c_law().map(|l| l.positive_moment(beta))
    }

    /// Whether `T ∈ {0, 1}^ℕ` almost surely, when determinable from structure.
    pub fn zero_one_weights(&self) -> Option<bool> {
        match &self.sequence {
            ModelKind::Explicit { t_law, .. } => Some(match t_law {
                WeightLaw::Independent { laws } => laws.iter().all(Law::zero_one_valued),
                WeightLaw::Split { u } => u.zero_one_valued(),
                WeightLaw::Counted { count, weight } => {
                    count.max_support() == 0
                        || match weight {
                            CountedWeight::Constant { value } => *value == 0.0 || *value == 1.0,
                            CountedWeight::Reciprocal { scale } => count
                                .atoms()
                                .filter(|(k, _)| *k > 0)
                                .all(|(k, _)| *scale == 0.0 || *scale == k as f64),
                            CountedWeight::Iid { law } => law.zero_one_valued(),
                        }
                }
            }),
            ModelKind::GaltonWatson { .. } | ModelKind::Mg1Queue { .. } => Some(true),
            ModelKind::Pagerank { out_degree, .. } => Some(out_degree.max_support() == 0),
            ModelKind::Counterexample { .. } => Some(false),
            ModelKind::Custom(_) => None,
        }
    }

    /// Structural upper bound on `N`; `None` when unbounded or unknown.
    pub fn max_n(&self) -> Option<usize> {
        match &self.sequence {
            ModelKind::Explicit { t_law, .. } => match t_law {
                WeightLaw::Independent { laws } => {
                    Some(laws.iter().filter(|l| l.prob_positive() > 0.0).count())
                }
                WeightLaw::Split { u } => {
                    let other = u.one_minus().expect("validated");
                    Some(usize::from(u.prob_positive() > 0.0) + usize::from(other.prob_positive() > 0.0))
                }
                WeightLaw::Counted { count, weight } => {
                    let positive = match weight {
                        CountedWeight::Constant { value } => *value > 0.0,
                        CountedWeight::Reciprocal { scale } => *scale > 0.0,
                        CountedWeight::Iid { law } => law.prob_positive() > 0.0,
                    };
                    Some(if positive { count.max_support() } else { 0 })
                }
            },
            ModelKind::GaltonWatson { offspring } => Some(offspring.max_support()),
            ModelKind::Pagerank { out_degree, .. } => Some(out_degree.max_support()),
            ModelKind::Mg1Queue { .. } | ModelKind::Counterexample { .. } | ModelKind::Custom(_) => None,
        }
    }

    /// Whether `N < ∞` almost surely (structurally). Truncation is not counted.
    pub fn n_finite(&self) -> Option<bool> {
        match &self.sequence {
            ModelKind::Counterexample { .. } => Some(false),
            ModelKind::Custom(_) => None,
            _ => Some(true),
        }
    }

    fn m_generic(&self, theta: f64, truncated: bool, log: bool) -> Option<f64> {
        let pow = |w: f64| {
            if w <= 0.0 {
                0.0
            } else if log {
                w.powf(theta) * w.ln()
            } else {
                w.powf(theta)
            }
        };
        let moment = |l: &Law| if log { l.positive_log_moment(theta) } else { l.positive_moment(theta) };
        Some(match &self.sequence {
            ModelKind::Explicit { t_law, .. } => match t_law {
                WeightLaw::Independent { laws } => {
                    let take = if truncated { self.n_cap } else { laws.len() };
                    laws.iter().take(take).map(moment).sum()
                }
                WeightLaw::Split { u } => {
                    let other = u.one_minus().expect("validated");
                    moment(u) + if truncated && self.n_cap < 2 { 0.0 } else { moment(&other) }
                }
                WeightLaw::Counted { count, weight } => count
                    .atoms()
                    .map(|(k, p)| {
                        let kept = if truncated { k.min(self.n_cap) } else { k } as f64;
                        p * kept
                            * match weight {
                                CountedWeight::Constant { value } => pow(*value),
                                CountedWeight::Reciprocal { scale } => pow(scale / k.max(1) as f64),
                                CountedWeight::Iid { law } => moment(law),
                            }
                    })
                    .sum(),
            },
            ModelKind::GaltonWatson { offspring } => {
                if log {
                    0.0
                } else {
                    offspring.atoms().map(|(k, p)| p * if truncated { k.min(self.n_cap) } else { k } as f64).sum()
                }
            }
            ModelKind::Mg1Queue { arrival_rate, service } => {
                if log {
                    0.0
                } else {
                    arrival_rate * service.mean()
                }
            }
            ModelKind::Pagerank { damping, out_degree, .. } => out_degree
                .atoms()
                .filter(|(k, _)| *k > 0)
                .map(|(k, p)| {
                    let kept = if truncated { k.min(self.n_cap) } else { k } as f64;
                    p * kept * pow(damping / k as f64)
                })
                .sum(),
            ModelKind::Counterexample { c, .. } => {
                let head: f64 = counterexample_weights(*c, self.n_cap).map(pow).sum();
                if truncated {
                    head
                } else if theta < 1.0 {
                    if log {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    }
                } else if log {
                    // Forward difference: the tail diverges just left of θ = 1.
                    let h = 1e-5;
                    let k = (self.n_cap + 1) as f64;
                    let tail_d = (counterexample_tail(*c, theta + h, k) - counterexample_tail(*c, theta, k)) / h;
                    head + tail_d
                } else {
                    head + counterexample_tail(*c, theta, (self.n_cap + 1) as f64)
                }
            }
            ModelKind::Custom(_) => return None,
        })
    }

    /// Exact `m(θ) = E Σ_{i≤N} T_i^θ`, possibly `+∞`; `None` for custom models.
    pub fn exact_m(&self, theta: f64) -> Option<f64> {
        self.m_generic(theta, false, false)
    }

    /// Exact `m(θ)` of the `n_cap`-truncated sequence actually sampled.
    pub fn exact_m_truncated(&self, theta: f64) -> Option<f64> {
        self.m_generic(theta, true, false)
    }

    /// Exact `m'(θ) = E Σ_{i≤N} T_i^θ log T_i`.
    pub fn exact_dm(&self, theta: f64) -> Option<f64> {
        self.m_generic(theta, false, true)
    }

    /// `Σ_{i > n_cap} E T_i^θ`, the mass dropped by truncation.
    pub fn truncated_tail_mass(&self, theta: f64) -> Option<f64> {
        let full = self.exact_m(theta)?;
        let cut = self.exact_m_truncated(theta)?;
        Some(if full.is_infinite() { f64::INFINITY } else { (full - cut).max(0.0) })
    }

    /// Exact `E N`.
    pub fn exact_mean_n(&self) -> Option<f64> {
        match &self.sequence {
            ModelKind::Counterexample { .. } => Some(f64::INFINITY),
            _ => self.exact_m(0.0),
        }
    }

    /// Whether `E N^p < ∞`, when determinable.
    pub fn n_moment_finite(&self, _p: f64) -> Option<bool> {
        match &self.sequence {
            ModelKind::Mg1Queue { service, .. } => {
                // Poisson mixture: E N^p < ∞ iff E U^p < ∞; every primitive law has all moments.
                Some(service.positive_moment(2.0).is_finite())
            }
            ModelKind::Counterexample { .. } => Some(false),
            ModelKind::Custom(_) => None,
            _ => Some(true),
        }
    }
}

/// Draws one basic sequence from the stream `rng`.
pub fn draw_basic_sequence(model: &BasicSequenceModel, rng: &RngStream) -> RealizedSequence {
    let mut gen = rng.rng();
    let mut t = Vec::new();
    let (c, truncated) = model.draw_into(&mut gen, &mut t);
    RealizedSequence { c, t, truncated }
}

/// Derived stream for substream `label` of `rng`.
pub fn spawn_substream(rng: &RngStream, label: u64) -> RngStream {
    rng.spawn(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gw(probs: Vec<f64>) -> BasicSequenceModel {
        BasicSequenceModel::new(ModelKind::GaltonWatson { offspring: Pmf::new(probs).unwrap() }).unwrap()
    }

    #[test]
    fn deterministic_galton_watson_draw() {
        let m = gw(vec![0.0, 0.0, 1.0]);
        let r = draw_basic_sequence(&m, &RngStream::new(1));
        assert_eq!(r, RealizedSequence { c: 1.0, t: vec![1.0, 1.0], truncated: false });
    }

    #[test]
    fn explicit_point_mass_draw() {
        let m = BasicSequenceModel::deterministic(1.0, &[0.25, 0.25]).unwrap();
        let r = draw_basic_sequence(&m, &RngStream::new(9));
        assert_eq!(r, RealizedSequence { c: 1.0, t: vec![0.25, 0.25], truncated: false });
        assert!(m.is_deterministic());
    }

    #[test]
    fn counterexample_draw_is_truncated() {
        let m = BasicSequenceModel::with_cap(
            ModelKind::Counterexample { c: 0.05, c_law: Law::point(0.0) },
            10_000,
        )
        .unwrap();
        let r = draw_basic_sequence(&m, &RngStream::new(3));
        assert!(r.truncated);
        assert_eq!(r.t.len(), 10_000);
        let expected = 0.05 / (2.0 * 2f64.ln().powi(2));
        assert!((r.t[0] - expected).abs() < 1e-15);
        let last = 0.05 / (10_001.0 * 10_001f64.ln().powi(2));
        assert!((r.t[9_999] - last).abs() < 1e-18);
    }

    #[test]
    fn malformed_parameters_rejected() {
        let bad = ModelKind::Explicit {
            c_law: Law::exponential(-2.0),
            t_law: WeightLaw::Independent { laws: vec![] },
        };
        assert!(matches!(BasicSequenceModel::new(bad), Err(Error::Config(_))));
        let supercritical_queue = ModelKind::Mg1Queue { arrival_rate: 2.0, service: Law::exponential(1.0) };
        assert!(matches!(BasicSequenceModel::new(supercritical_queue), Err(Error::Refused(_))));
    }

    #[test]
    fn json_rejects_unknown_keys_and_bad_schema() {
        let text = r#"{"schema":1,"sequence":{"kind":"galton_watson","offspring":{"probs":[0.5,0.5]},"extra":1}}"#;
        assert!(BasicSequenceModel::from_json(text).is_err());
        let text = r#"{"schema":2,"sequence":{"kind":"galton_watson","offspring":{"probs":[0.5,0.5]}}}"#;
        assert!(BasicSequenceModel::from_json(text).is_err());
        let ok = r#"{"schema":1,"sequence":{"kind":"galton_watson","offspring":{"probs":[0.5,0.5]}}}"#;
        let m = BasicSequenceModel::from_json(ok).unwrap();
        assert_eq!(m.n_cap, DEFAULT_N_CAP);
    }

    #[test]
    fn counterexample_spectral_values() {
        let m = BasicSequenceModel::with_cap(
            ModelKind::Counterexample { c: 0.05, c_law: Law::point(0.0) },
            10_000,
        )
        .unwrap();
        assert!(m.exact_m(0.9).unwrap().is_infinite());
        assert!(m.exact_m(0.999).unwrap().is_infinite());
        // Independent oracle: direct partial sum to 10^7 plus the integral tail
        // 1/ln(K) and Euler-Maclaurin correction.
        let big = 10_000_000usize;
        let mut s = 0.0;
        for k in 2..=big {
            let x = k as f64;
            s += 1.0 / (x * x.ln().powi(2));
        }
        let kk = big as f64;
        s += 1.0 / kk.ln() - 0.5 / (kk * kk.ln().powi(2));
        let m1 = m.exact_m(1.0).unwrap();
        assert!((m1 - 0.05 * s).abs() < 1e-6, "m(1) = {m1}, oracle {}", 0.05 * s);
        assert!(m1 < 1.0);
        assert!(m.truncated_tail_mass(1.0).unwrap() > 0.0);
        assert!(m.truncated_tail_mass(0.5).unwrap().is_infinite());
    }

    #[test]
    fn pagerank_m_at_one_equals_damping() {
        let m = BasicSequenceModel::new(ModelKind::Pagerank {
            damping: 0.5,
            out_degree: Pmf::new(vec![0.0, 0.25, 0.25, 0.25, 0.25]).unwrap(),
            teleport: Law::point(0.5),
        })
        .unwrap();
        assert!((m.exact_m(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.exact_mean_n().unwrap() - 2.5).abs() < 1e-15);
    }
}
