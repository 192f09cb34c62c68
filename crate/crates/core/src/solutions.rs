//! Samplers for the explicit solutions `X = W* + h W^{1/α} Y`.
//!
//! Sample `k` draws its tree from `rng.spawn(k).spawn(0)` and its stable
//! factor from `rng.spawn(k).spawn(1)`, so `h = 0` reproduces
//! [`sample_wstar`] exactly and outputs do not depend on thread count.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::branching::{partial_wstar, PartialSum, Termination, TreeConfig};
use crate::error::{config, Error, Result};
use crate::model::BasicSequenceModel;
use crate::rng::RngStream;
use crate::spectral::{certified_divergence, check_conditions, find_characteristic_exponent, ConditionReport, EvalMode, DEFAULT_N_MC};

/// Stream label reserved for the model analysis that precedes sampling.
pub const ANALYSIS_LABEL: u64 = u64::MAX;
const TREE: u64 = 0;
const STABLE: u64 = 1;
/// Tolerance on α used when validating a spec against the model.
pub const ALPHA_TOL: f64 = 1e-6;

/// Model, solution parameters and truncation policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSpec {
    pub model: BasicSequenceModel,
    /// Index of the stable component; ignored when `h = 0`.
    pub alpha: f64,
    pub h: f64,
    pub trunc: TreeConfig,
    /// Sample even when `W* = ∞` is certified (partial sums are then
    /// finite-depth approximations of a divergent series).
    pub allow_divergent: bool,
}

/// Weight below which random trees that do not die out are pruned by default.
pub const DEFAULT_GROWING_PRUNE: f64 = 1e-6;

/// Truncation suited to the model: long trees when they die out, depth 30
/// otherwise. Deterministic weights are never pruned; random weights on
/// growing trees are pruned at [`DEFAULT_GROWING_PRUNE`], with pruned
/// subtrees replaced by their mean when [`mean_wstar`] is known.
pub fn default_trunc(model: &BasicSequenceModel) -> TreeConfig {
    if model.is_deterministic() {
        TreeConfig::depth(30).with_prune(0.0)
    } else if model.exact_mean_n().is_some_and(|m| m < 1.0) {
        TreeConfig::depth(1000)
    } else {
        TreeConfig::depth(30).with_prune(DEFAULT_GROWING_PRUNE).with_completion(mean_wstar(model))
    }
}

/// `E W* = E C / (1 − m(1))` when `m(1) < 1` and `E C < ∞` in closed form.
pub fn mean_wstar(model: &BasicSequenceModel) -> Option<f64> {
    let m1 = model.exact_m(1.0)?;
    let ec = model.exact_c_moment(1.0)?;
    (m1 < 1.0 && ec.is_finite()).then(|| ec / (1.0 - m1))
}

impl SolutionSpec {
    /// Validated spec; when `h > 0`, `alpha` must match the model's
    /// characteristic exponent.
    pub fn new(model: BasicSequenceModel, alpha: f64, h: f64, trunc: TreeConfig) -> Result<Self> {
        let spec = Self { model, alpha, h, trunc, allow_divergent: false };
        spec.validate(RngStream::new(0).spawn(ANALYSIS_LABEL))?;
        Ok(spec)
    }

    /// `h = 0`: the minimal solution alone, with the default truncation.
    pub fn wstar(model: BasicSequenceModel) -> Self {
        let trunc = default_trunc(&model);
        Self { model, alpha: 1.0, h: 0.0, trunc, allow_divergent: false }
    }

    pub fn with_trunc(mut self, trunc: TreeConfig) -> Self {
        self.trunc = trunc;
        self
    }

    pub fn allowing_divergence(mut self) -> Self {
        self.allow_divergent = true;
        self
    }

    pub fn validate(&self, rng: RngStream) -> Result<()> {
        self.model.validate()?;
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return config(format!("h must be a finite nonnegative number, got {}", self.h));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return config(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.trunc.max_depth == 0 {
            return config("max_depth must be at least 1");
        }
        if self.h > 0.0 {
            let found = find_characteristic_exponent(&self.model, rng, ALPHA_TOL, DEFAULT_N_MC, EvalMode::Auto);
            if !found.admits(self.alpha, ALPHA_TOL) {
                return config(format!(
                    "alpha = {} does not match the model's characteristic exponent ({found:?})",
                    self.alpha
                ));
            }
        }
        Ok(())
    }

    fn tree_config(&self) -> TreeConfig {
        let mut cfg = self.trunc.clone();
        if self.h > 0.0 {
            cfg.theta_grid = vec![self.alpha];
            // Pruned weights w lose w^α from W; keep w^α below the threshold.
            if cfg.prune_eps > 0.0 {
                cfg.prune_eps = cfg.prune_eps.powf(1.0 / self.alpha);
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CertificateKind {
    /// `E[R^β] ≤ E C^β m(β)^n / (1 − m(β))` for the remainder `R` beyond depth `n`.
    Bound { beta: f64, m_beta: f64, c_moment: f64, bound: f64 },
    /// `C ≡ 0`: every partial sum is exactly 0.
    Exact,
    /// No contraction witness: the last generation's contribution is reported.
    Heuristic { mean_last_contribution: f64, max_last_contribution: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationCertificate {
    pub depth: usize,
    pub kind: CertificateKind,
    /// Largest per-realization weight mass dropped by pruning.
    pub max_pruned_mass: f64,
    /// Draws whose support exceeded `n_cap`.
    pub truncated_draws: usize,
    pub extinct: usize,
    pub budget_exceeded: usize,
}

impl TruncationCertificate {
    /// The `β`-moment bound when one was certified.
    pub fn bound(&self) -> Option<(f64, f64)> {
        match self.kind {
            CertificateKind::Bound { beta, bound, .. } => Some((beta, bound)),
            _ => None,
        }
    }

    fn build(report: &ConditionReport, depth: usize, runs: &[PartialSum], weight: usize, homogeneous: bool) -> Self {
        let kind = if homogeneous {
            CertificateKind::Exact
        } else if let Some(w) = report.contractive_witness {
            let bound = w.c_moment * w.m_beta.powi(depth as i32) / (1.0 - w.m_beta);
            CertificateKind::Bound { beta: w.beta, m_beta: w.m_beta, c_moment: w.c_moment, bound }
        } else {
            let last: Vec<f64> = runs.iter().map(|r| r.contributions.last().copied().unwrap_or(0.0)).collect();
            CertificateKind::Heuristic {
                mean_last_contribution: last.iter().sum::<f64>() / last.len().max(1) as f64,
                max_last_contribution: last.iter().copied().fold(0.0, f64::max),
            }
        };
        let count = |f: &dyn Fn(&PartialSum) -> bool| runs.iter().filter(|r| f(r)).count() * weight;
        Self {
            depth,
            kind,
            max_pruned_mass: runs.iter().map(|r| r.pruned_mass).fold(0.0, f64::max),
            truncated_draws: runs.iter().map(|r| r.truncated_draws).sum::<usize>() * weight,
            extinct: count(&|r| r.termination == Termination::Extinct),
            budget_exceeded: count(&|r| r.termination == Termination::BudgetExceeded),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WStarSamples {
    pub samples: Vec<f64>,
    pub certificate: TruncationCertificate,
}

fn analyze(spec: &SolutionSpec, rng: RngStream) -> Result<ConditionReport> {
    let report = check_conditions(&spec.model, rng.spawn(ANALYSIS_LABEL), DEFAULT_N_MC / 5, EvalMode::Auto);
    if !spec.allow_divergent {
        if let Some(why) = certified_divergence(&spec.model, &report) {
            return Err(Error::Refused(format!("divergence probe: infinite_likely (certified): {why}")));
        }
    }
    Ok(report)
}

/// One tree per sample, or a single tree replicated when weights are deterministic.
fn realizations(spec: &SolutionSpec, rng: RngStream, n: usize) -> (Vec<PartialSum>, Option<usize>) {
    let cfg = spec.tree_config();
    if spec.model.is_deterministic() {
        (vec![partial_wstar(&spec.model, rng.spawn(0).spawn(TREE), &cfg)], Some(n))
    } else {
        let runs = (0..n).into_par_iter().map(|k| partial_wstar(&spec.model, rng.spawn(k as u64).spawn(TREE), &cfg)).collect();
        (runs, None)
    }
}

fn homogeneous(model: &BasicSequenceModel) -> bool {
    model.c_is_zero() == Some(true)
}

/// `n` draws of the depth-truncated minimal solution `W*_n`.
pub fn sample_wstar(spec: &SolutionSpec, rng: RngStream, n: usize) -> Result<WStarSamples> {
    let report = analyze(spec, rng)?;
    let depth = spec.trunc.max_depth;
    if homogeneous(&spec.model) {
        let certificate = TruncationCertificate::build(&report, depth, &[], 0, true);
        return Ok(WStarSamples { samples: vec![0.0; n], certificate });
    }
    let wstar_spec = SolutionSpec { h: 0.0, ..spec.clone() };
    let (runs, replicate) = realizations(&wstar_spec, rng, n);
    let samples = match replicate {
        Some(n) => vec![runs[0].value; n],
        None => runs.iter().map(|r| r.value).collect(),
    };
    let certificate = TruncationCertificate::build(&report, depth, &runs, replicate.unwrap_or(1), false);
    Ok(WStarSamples { samples, certificate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndogenousSamples {
    /// `W_n^{(α)}` at `n = depth`.
    pub samples: Vec<f64>,
    /// `(mean, stderr)` of `W_k^{(α)}` for `k = 0..=depth`.
    pub mean_by_depth: Vec<(f64, f64)>,
    /// Mean of `|W_k − W_{k−1}|` for `k = 1..=depth`.
    pub deltas: Vec<f64>,
    pub a4_holds: bool,
}

fn path_to_depth(run: &PartialSum, alpha: f64, depth: usize) -> Vec<f64> {
    let mut p = run.w_path(alpha).expect("α on the recorded grid");
    let fill = if run.termination == Termination::Extinct { 0.0 } else { *p.last().expect("root") };
    p.resize(depth + 1, fill);
    p
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 { xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// `n` draws of the additive martingale `W_depth^{(α)} = Σ_{|v|=depth} L(v)^α`.
pub fn sample_endogenous_w(spec: &SolutionSpec, rng: RngStream, n: usize, depth: usize) -> Result<EndogenousSamples> {
    let found = find_characteristic_exponent(&spec.model, rng.spawn(ANALYSIS_LABEL), ALPHA_TOL, DEFAULT_N_MC, EvalMode::Auto);
    if !found.admits(spec.alpha, ALPHA_TOL) {
        return config(format!("alpha = {} is not a characteristic exponent of the model ({found:?})", spec.alpha));
    }
    let report = check_conditions(&spec.model, rng.spawn(ANALYSIS_LABEL), DEFAULT_N_MC / 5, EvalMode::Auto);
    let a4_holds = report.a4a.value || report.a4b.value;
    if !a4_holds {
        return Err(Error::Refused("neither (A4a) nor (A4b) holds: W may vanish".into()));
    }
    let w_spec = SolutionSpec { h: 1.0, trunc: TreeConfig { max_depth: depth, ..spec.trunc.clone() }, ..spec.clone() };
    let (runs, replicate) = realizations(&w_spec, rng, n);
    let paths: Vec<Vec<f64>> = runs.iter().map(|r| path_to_depth(r, spec.alpha, depth)).collect();
    let paths = match replicate {
        Some(n) => vec![paths[0].clone(); n],
        None => paths,
    };
    let mean_by_depth = (0..=depth).map(|k| mean_se(paths.iter().map(move |p| p[k]))).collect();
    let deltas = (1..=depth).map(|k| paths.iter().map(|p| (p[k] - p[k - 1]).abs()).sum::<f64>() / n as f64).collect();
    Ok(EndogenousSamples { samples: paths.iter().map(|p| p[depth]).collect(), mean_by_depth, deltas, a4_holds })
}

/// One draw of the positive stable law with `E e^{-tY} = e^{-t^α}` (Kanter).
pub fn stable_draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    let u = PI * loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            break v;
        }
    };
    let e: f64 = Exp1.sample(rng);
    let ln_a = (alpha * (alpha * u).sin().ln() + (1.0 - alpha) * ((1.0 - alpha) * u).sin().ln() - u.sin().ln()) / (1.0 - alpha);
    ((1.0 - alpha) / alpha * (ln_a - e.ln())).exp()
}

pub fn sample_positive_stable(alpha: f64, rng: RngStream, n: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return config(format!("stable index must lie in (0, 1], got {alpha}"));
    }
    Ok((0..n).into_par_iter().map(|k| stable_draw(alpha, &mut rng.spawn(k as u64).rng())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSamples {
    pub samples: Vec<f64>,
    /// `W*_n` per sample, from the same tree as `w`.
    pub wstar: Vec<f64>,
    /// `W_n^{(α)}` per sample (empty when `h = 0`).
    pub w: Vec<f64>,
    pub certificate: TruncationCertificate,
}

/// `n` draws of `W* + h W^{1/α} Y` with `W*` and `W` from one tree per sample.
pub fn sample_solution(spec: &SolutionSpec, rng: RngStream, n: usize) -> Result<SolutionSamples> {
    if spec.h == 0.0 {
        let ws = sample_wstar(spec, rng, n)?;
        return Ok(SolutionSamples { wstar: ws.samples.clone(), samples: ws.samples, w: Vec::new(), certificate: ws.certificate });
    }
    spec.validate(rng.spawn(ANALYSIS_LABEL))?;
    let report = analyze(spec, rng)?;
    let depth = spec.trunc.max_depth;
    let (runs, replicate) = realizations(spec, rng, n);
    let pair = |r: &PartialSum| (r.value, path_to_depth(r, spec.alpha, depth)[depth]);
    let (wstar, w): (Vec<f64>, Vec<f64>) = match replicate {
        Some(n) => {
            let (a, b) = pair(&runs[0]);
            (vec![a; n], vec![b; n])
        }
        None => runs.iter().map(pair).unzip(),
    };
    let (alpha, h) = (spec.alpha, spec.h);
    let samples = (0..n)
        .into_par_iter()
        .map(|k| {
            let y = stable_draw(alpha, &mut rng.spawn(k as u64).spawn(STABLE).rng());
            wstar[k] + h * w[k].powf(1.0 / alpha) * y
        })
        .collect();
    let certificate = TruncationCertificate::build(&report, depth, &runs, replicate.unwrap_or(1), homogeneous(&spec.model));
    Ok(SolutionSamples { samples, wstar, w, certificate })
}

/// `n` draws of `C + Σ T_i X_i` with fresh `(C, T)` and `X_i` resampled from `lhs`.
pub fn sample_rhs(model: &BasicSequenceModel, lhs: &[f64], rng: RngStream, n: usize) -> Result<Vec<f64>> {
    if lhs.is_empty() {
        return config("sample_rhs needs a nonempty left-hand pool");
    }
    Ok((0..n)
        .into_par_iter()
        .map_init(Vec::new, |t, k| {
            let mut gen = rng.spawn(k as u64).rng();
            let (c, _) = model.draw_into(&mut gen, t);
            let mut x = c;
            for &w in t.iter() {
                if w > 0.0 {
                    x += w * lhs[gen.random_range(0..lhs.len())];
                }
            }
            x
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::preset_model;

    fn quarter() -> BasicSequenceModel {
        preset_model("det-quarter").unwrap()
    }

    #[test]
    fn deterministic_wstar_and_certificate() {
        let spec = SolutionSpec::wstar(quarter()).with_trunc(TreeConfig::depth(10).with_prune(0.0));
        let out = sample_wstar(&spec, RngStream::new(1), 5).unwrap();
        let expect = 2.0 * (1.0 - 2f64.powi(-10));
        assert!(out.samples.iter().all(|&x| (x - expect).abs() < 1e-15));
        let (beta, bound) = out.certificate.bound().unwrap();
        assert_eq!(beta, 1.0);
        assert!((bound - 0.5f64.powi(10) / 0.5).abs() < 1e-18);
    }

    #[test]
    fn refuses_certified_divergence() {
        let spec = SolutionSpec::wstar(preset_model("det-double").unwrap());
        assert!(matches!(sample_wstar(&spec, RngStream::new(1), 3), Err(Error::Refused(_))));
    }

    #[test]
    fn endogenous_w_is_one_for_deterministic_and_split() {
        let spec = SolutionSpec::new(quarter(), 0.5, 1.0, TreeConfig::depth(8)).unwrap();
        let w = sample_endogenous_w(&spec, RngStream::new(1), 4, 8).unwrap();
        assert!(w.samples.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let split = preset_model("uniform-split").unwrap();
        let spec = SolutionSpec::new(split, 1.0, 1.0, TreeConfig::depth(6)).unwrap();
        let w = sample_endogenous_w(&spec, RngStream::new(1), 50, 6).unwrap();
        assert!(w.samples.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(w.deltas.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn alpha_mismatch_is_rejected() {
        assert!(SolutionSpec::new(quarter(), 0.4, 1.0, TreeConfig::depth(5)).is_err());
        assert!(SolutionSpec::new(quarter(), 0.4, 0.0, TreeConfig::depth(5)).is_ok());
        assert!(SolutionSpec::new(quarter(), 0.5, -1.0, TreeConfig::depth(5)).is_err());
        assert!(sample_positive_stable(1.5, RngStream::new(1), 1).is_err());
    }

    #[test]
    fn stable_alpha_one_is_constant() {
        assert!(sample_positive_stable(1.0, RngStream::new(3), 100).unwrap().iter().all(|&y| y == 1.0));
    }

    #[test]
    fn h_zero_matches_wstar_and_split_shift() {
        let gw = preset_model("gw-binomial").unwrap();
        let spec = SolutionSpec::wstar(gw);
        let a = sample_wstar(&spec, RngStream::new(7), 200).unwrap().samples;
        let b = sample_solution(&spec, RngStream::new(7), 200).unwrap().samples;
        assert_eq!(a, b);

        let split = preset_model("uniform-split").unwrap();
        let spec = SolutionSpec::new(split, 1.0, 2.0, TreeConfig::depth(6)).unwrap().allowing_divergence();
        let s = sample_solution(&spec, RngStream::new(7), 50).unwrap();
        for k in 0..50 {
            assert!((s.samples[k] - s.wstar[k] - 2.0).abs() < 1e-12);
            assert!((s.wstar[k] - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_trivial_cases() {
        let ones = BasicSequenceModel::deterministic(1.0, &[0.25, 0.25]).unwrap();
        assert!(sample_rhs(&ones, &[0.0], RngStream::new(1), 10).unwrap().iter().all(|&x| x == 1.0));
        assert!(sample_rhs(&ones, &[2.0], RngStream::new(1), 10).unwrap().iter().all(|&x| x == 2.0));
        assert!(sample_rhs(&ones, &[], RngStream::new(1), 10).is_err());
    }
}
