//! Built-in models and the oracles that check them.
//!
//! Oracles simulate the underlying process directly (a Galton-Watson process
//! generation by generation, an M/G/1 queue event by event) and share nothing
//! with the tree engine except the primitive random streams.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::law::{Law, Pmf};
use crate::model::{BasicSequenceModel, ModelKind, WeightLaw};
use crate::rng::RngStream;

/// Galton-Watson total population: `C ≡ 1`, `T_i = 1{Z ≥ i}`.
pub fn gw_model(offspring: Pmf) -> Result<BasicSequenceModel> {
    BasicSequenceModel::new(ModelKind::GaltonWatson { offspring })
}

fn check_gw_oracle(offspring: &Pmf) -> Result<()> {
    offspring.validate()?;
    if offspring.as_point() == Some(1) {
        return Err(Error::Refused("P(Z = 1) = 1: the population never dies out".into()));
    }
    let mean: f64 = offspring.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    if mean > 1.0 + 1e-12 {
        return Err(Error::Refused(format!(
            "offspring mean {mean} > 1: the total population is infinite with positive probability"
        )));
    }
    Ok(())
}

fn offspring_draw<R: Rng>(probs: &[f64], rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u64;
        }
    }
    (probs.len() - 1) as u64
}

/// Total population of one Galton-Watson process started from one ancestor.
pub fn gw_oracle(offspring: &Pmf, rng: RngStream) -> Result<f64> {
    check_gw_oracle(offspring)?;
    let mut gen = rng.rng();
    let mut alive: u64 = 1;
    let mut total: u64 = 1;
    while alive > 0 {
        let mut next = 0u64;
        for _ in 0..alive {
            next += offspring_draw(&offspring.probs, &mut gen);
        }
        alive = next;
        total += next;
        if total > 1 << 40 {
            return Err(Error::Refused("population exceeded 2^40 individuals".into()));
        }
    }
    Ok(total as f64)
}

/// `n` oracle draws, draw `k` on `rng.spawn(k)`.
pub fn gw_oracle_samples(offspring: &Pmf, rng: RngStream, n: usize) -> Result<Vec<f64>> {
    check_gw_oracle(offspring)?;
    (0..n).into_par_iter().map(|k| gw_oracle(offspring, rng.spawn(k as u64))).collect()
}

/// M/G/1 busy period: `C = U₀`, `N ~ Poisson(λU₀)`, `T_i = 1{i ≤ N}`.
pub fn mg1_model(arrival_rate: f64, service: Law) -> Result<BasicSequenceModel> {
    BasicSequenceModel::new(ModelKind::Mg1Queue { arrival_rate, service })
}

/// `E X = μ / (1 − ρ)` with `ρ = λμ`.
pub fn mg1_mean_oracle(arrival_rate: f64, mean_service: f64) -> Result<f64> {
    let rho = arrival_rate * mean_service;
    if !(rho < 1.0) {
        return Err(Error::Refused(format!("traffic intensity rho = {rho} >= 1: the busy period has infinite mean")));
    }
    Ok(mean_service / (1.0 - rho))
}

const MAX_EVENTS: u64 = 1 << 32;

/// One busy period simulated as a queue: arrivals at Poisson times, one
/// server, FIFO service, ends when the system empties.
pub fn mg1_busy_period(arrival_rate: f64, service: &Law, rng: RngStream) -> Result<f64> {
    if !(arrival_rate > 0.0) {
        return config(format!("arrival rate must be positive, got {arrival_rate}"));
    }
    service.validate()?;
    let mut gen = rng.rng();
    let inter = Exp::new(arrival_rate).expect("positive rate");
    let mut clock = 0.0;
    let mut next_arrival = inter.sample(&mut gen);
    let mut in_system: u64 = 1;
    let mut departure = service.sample(&mut gen);
    let mut events = 0u64;
    while in_system > 0 {
        events += 1;
        if events > MAX_EVENTS {
            return Err(Error::Refused("busy period exceeded the event budget".into()));
        }
        if next_arrival < departure {
            in_system += 1;
            next_arrival += inter.sample(&mut gen);
        } else {
            clock = departure;
            in_system -= 1;
            if in_system > 0 {
                departure = clock + service.sample(&mut gen);
            }
        }
    }
    Ok(clock)
}

pub fn mg1_busy_period_samples(arrival_rate: f64, service: &Law, rng: RngStream, n: usize) -> Result<Vec<f64>> {
    (0..n).into_par_iter().map(|k| mg1_busy_period(arrival_rate, service, rng.spawn(k as u64))).collect()
}

/// PageRank-style recursion: draw out-degree `D`, `T_i = c / D` for `i ≤ D`,
/// `C` from `teleport` (constant `1 − c` by default).
///
/// This is one standard way to make the random-surfer narrative concrete.
pub fn pagerank_model(damping: f64, out_degree: Pmf, teleport: Option<Law>) -> Result<BasicSequenceModel> {
    let teleport = teleport.unwrap_or(Law::point(1.0 - damping));
    BasicSequenceModel::new(ModelKind::Pagerank { damping, out_degree, teleport })
}

/// `T_i = c / ((i+1) log²(i+1))` for every `i ≥ 1`, cut at `n_cap`;
/// `C` defaults to 0.
pub fn counterexample_model(c: f64, c_law: Option<Law>) -> Result<BasicSequenceModel> {
    BasicSequenceModel::new(ModelKind::Counterexample { c, c_law: c_law.unwrap_or(Law::point(0.0)) })
}

/// `T = (U, 1 − U)` with `U` uniform on `(0, 1)`, `C ≡ c`.
pub fn uniform_split_model(c: f64) -> Result<BasicSequenceModel> {
    BasicSequenceModel::new(ModelKind::Explicit {
        c_law: Law::point(c),
        t_law: WeightLaw::Split { u: Law::uniform(0.0, 1.0) },
    })
}

/// A direct sampler for a model's `W*`, independent of the tree engine.
pub struct OracleLaw {
    pub description: String,
    pub exact_mean: Option<f64>,
    sampler: Box<dyn Fn(RngStream, usize) -> Result<Vec<f64>> + Send + Sync>,
}

impl OracleLaw {
    pub fn samples(&self, rng: RngStream, n: usize) -> Result<Vec<f64>> {
        (self.sampler)(rng, n)
    }
}

/// Oracle for the built-in kinds that have one.
pub fn oracle_for(model: &BasicSequenceModel) -> Option<OracleLaw> {
    match &model.sequence {
        ModelKind::GaltonWatson { offspring } => {
            let pmf = offspring.clone();
            let mean = pmf.mean();
            Some(OracleLaw {
                description: "Galton-Watson total population, simulated generation by generation".into(),
                exact_mean: (mean < 1.0).then(|| 1.0 / (1.0 - mean)),
                sampler: Box::new(move |rng, n| gw_oracle_samples(&pmf, rng, n)),
            })
        }
        ModelKind::Mg1Queue { arrival_rate, service } => {
            let (lambda, law) = (*arrival_rate, service.clone());
            Some(OracleLaw {
                description: "M/G/1 busy period, discrete-event queue simulation".into(),
                exact_mean: mg1_mean_oracle(lambda, law.mean()).ok(),
                sampler: Box::new(move |rng, n| mg1_busy_period_samples(lambda, &law, rng, n)),
            })
        }
        _ => None,
    }
}

/// A named built-in model with its default solution exponent, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub model: BasicSequenceModel,
}

pub const PRESET_NAMES: [&str; 8] =
    ["gw-binomial", "mg1-exp", "det-quarter", "det-double", "det-half", "pagerank", "counterexample", "uniform-split"];

/// Overridable parameters of each preset with their defaults.
pub fn preset_defaults(name: &str) -> Result<BTreeMap<&'static str, f64>> {
    let pairs: &[(&str, f64)] = match name {
        "gw-binomial" => &[("trials", 2.0), ("p", 0.4)],
        "mg1-exp" => &[("lambda", 0.5), ("mean_service", 1.0)],
        "det-quarter" => &[("c", 1.0), ("weight", 0.25), ("count", 2.0)],
        "det-double" => &[("c", 1.0), ("weight", 2.0), ("count", 2.0)],
        "det-half" => &[("c", 1.0), ("weight", 0.5), ("count", 2.0)],
        "pagerank" => &[("damping", 0.5), ("max_degree", 4.0), ("teleport", f64::NAN)],
        "counterexample" => &[("c", 0.1), ("c_const", 0.0)],
        "uniform-split" => &[("c", 1.0)],
        other => return config(format!("unknown preset {other:?}; known: {}", PRESET_NAMES.join(", "))),
    };
    Ok(pairs.iter().copied().collect())
}

fn description(name: &str) -> &'static str {
    match name {
        "gw-binomial" => "Galton-Watson total population, Z ~ Binomial(trials, p)",
        "mg1-exp" => "M/G/1 busy period with exponential service",
        "det-quarter" => "deterministic T = (1/4, 1/4), C = 1",
        "det-double" => "deterministic T = (2, 2), C = 1",
        "det-half" => "deterministic T = (1/2, 1/2), C = 1",
        "pagerank" => "PageRank recursion, out-degree uniform on 1..=max_degree",
        "counterexample" => "T_i = c/((i+1) log^2(i+1)), homogeneous by default",
        _ => "T = (U, 1-U), U uniform, C = c",
    }
}

fn count(v: f64, key: &str) -> Result<usize> {
    if v.fract() != 0.0 || !(0.0..=1e6).contains(&v) {
        return config(format!("parameter {key} must be a nonnegative integer, got {v}"));
    }
    Ok(v as usize)
}

/// Builds a preset, overriding any of its parameters by name.
pub fn preset(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Preset> {
    let mut p = preset_defaults(name)?;
    for (k, v) in overrides {
        match p.get_mut(k.as_str()) {
            Some(slot) => *slot = *v,
            None => {
                let known: Vec<_> = p.keys().copied().collect();
                return config(format!("preset {name} has no parameter {k:?}; known: {}", known.join(", ")));
            }
        }
    }
    let model = match name {
        "gw-binomial" => gw_model(Pmf::binomial(count(p["trials"], "trials")?, p["p"])?)?,
        "mg1-exp" => {
            let mean = p["mean_service"];
            if !(mean > 0.0) {
                return config(format!("mean_service must be positive, got {mean}"));
            }
            mg1_model(p["lambda"], Law::exponential(1.0 / mean))?
        }
        "det-quarter" | "det-double" | "det-half" => {
            let n = count(p["count"], "count")?;
            BasicSequenceModel::deterministic(p["c"], &vec![p["weight"]; n])?
        }
        "pagerank" => {
            let d = count(p["max_degree"], "max_degree")?;
            if d == 0 {
                return config("max_degree must be at least 1");
            }
            let mut probs = vec![1.0 / d as f64; d + 1];
            probs[0] = 0.0;
            let teleport = p["teleport"];
            pagerank_model(p["damping"], Pmf::new(probs)?, (!teleport.is_nan()).then(|| Law::point(teleport)))?
        }
        "counterexample" => counterexample_model(p["c"], Some(Law::point(p["c_const"])))?,
        _ => uniform_split_model(p["c"])?,
    };
    let name = PRESET_NAMES.iter().find(|n| **n == name).expect("validated name");
    Ok(Preset { name, description: description(name), model })
}

pub fn preset_model(name: &str) -> Result<BasicSequenceModel> {
    Ok(preset(name, &BTreeMap::new())?.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gw_oracle_edge_cases() {
        assert_eq!(gw_oracle(&Pmf::point(0), RngStream::new(1)).unwrap(), 1.0);
        assert!(matches!(gw_oracle(&Pmf::point(1), RngStream::new(1)), Err(Error::Refused(_))));
        let super_critical = Pmf::binomial(2, 0.7).unwrap();
        assert!(matches!(gw_oracle(&super_critical, RngStream::new(1)), Err(Error::Refused(_))));
    }

    #[test]
    fn gw_oracle_mean() {
        let pmf = Pmf::binomial(2, 0.4).unwrap();
        let xs = gw_oracle_samples(&pmf, RngStream::new(5), 100_000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 5.0).abs() < 4.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn mg1_oracles() {
        assert_eq!(mg1_mean_oracle(0.5, 1.0).unwrap(), 2.0);
        assert!(mg1_mean_oracle(1.0, 1.0).is_err());
        assert!(mg1_model(1.0, Law::exponential(1.0)).is_ok());
        let xs = mg1_busy_period_samples(0.5, &Law::exponential(1.0), RngStream::new(3), 100_000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * sd / n.sqrt(), "mean {mean}");
        // Almost no arrivals: the busy period is the first service time.
        let tiny = mg1_busy_period_samples(1e-9, &Law::point(1.0), RngStream::new(3), 100).unwrap();
        assert!(tiny.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn pagerank_substitution() {
        let m = pagerank_model(0.5, Pmf::point(2), None).unwrap();
        assert_eq!(m.point_weights().unwrap(), vec![0.25]);
        assert_eq!(m.c_law().unwrap().as_point(), Some(0.5));
        let m = pagerank_model(0.3, Pmf::new(vec![0.0, 0.2, 0.5, 0.3]).unwrap(), None).unwrap();
        assert!((m.exact_m(1.0).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn presets_build_and_reject_unknown_keys() {
        for name in PRESET_NAMES {
            let p = preset(name, &BTreeMap::new()).unwrap();
            let json = p.model.to_json().unwrap();
            assert_eq!(BasicSequenceModel::from_json(&json).unwrap(), p.model);
        }
        let bad = BTreeMap::from([("nope".to_string(), 1.0)]);
        assert!(preset("gw-binomial", &bad).is_err());
        assert!(preset("unknown", &BTreeMap::new()).is_err());
        let over = BTreeMap::from([("p".to_string(), 0.3)]);
        let m = preset("gw-binomial", &over).unwrap().model;
        assert!((m.exact_m(1.0).unwrap() - 0.6).abs() < 1e-15);
    }
}
