//! The spectral function `m(θ) = E Σ_{i≤N} T_i^θ` and what it decides:
//! the characteristic exponent, the existence conditions and the regime.
//!
//! Every quantity is computed from closed forms when the model has them and
//! by Monte Carlo otherwise. Monte Carlo estimates at different θ reuse the
//! same draws (substream `k` of the caller's stream for draw `k`), so the
//! estimated `m̂` is itself a convex function of θ and can be bisected.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{partial_wstar, Termination, TreeConfig};
use crate::model::BasicSequenceModel;
use crate::output::fmt17;
use crate::rng::RngStream;

/// Number of standard errors used for every Monte Carlo decision.
pub const Z_BOUND: f64 = 4.0;
pub const DEFAULT_GRID_POINTS: usize = 41;
pub const DEFAULT_GRID_MAX: f64 = 1.2;
pub const DEFAULT_WINDOW_EPS: f64 = 0.05;
pub const DEFAULT_N_MC: usize = 100_000;
/// δ in the `E N^{1+δ} < ∞` probe.
pub const MOMENT_DELTA: f64 = 0.1;
/// Largest exponent for which the critical sufficient condition applies.
pub const CRITICAL_ALPHA_MAX: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Closed form when available, Monte Carlo otherwise.
    Auto,
    MonteCarlo,
}

/// One evaluation of `m(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MEstimate {
    pub theta: f64,
    pub value: f64,
    pub stderr: f64,
    pub exact: bool,
    pub finite: bool,
    /// θ < 0 (only meaningful for the window probes).
    pub negative_theta: bool,
}

impl MEstimate {
    fn exact(theta: f64, value: f64) -> Self {
        Self { theta, value, stderr: 0.0, exact: true, finite: value.is_finite(), negative_theta: theta < 0.0 }
    }
    pub fn upper(&self) -> f64 {
        self.value + Z_BOUND * self.stderr
    }
    pub fn lower(&self) -> f64 {
        self.value - Z_BOUND * self.stderr
    }
}

/// Mean and standard error with the running-mean divergence heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McMean {
    pub mean: f64,
    pub stderr: f64,
    pub diverging: bool,
}

pub fn mc_mean(values: &[f64]) -> McMean {
    let n = values.len();
    if n == 0 {
        return McMean { mean: f64::NAN, stderr: f64::NAN, diverging: false };
    }
    if values.iter().any(|v| !v.is_finite() || v.abs() > 1e300) {
        return McMean { mean: f64::INFINITY, stderr: f64::INFINITY, diverging: true };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) } else { 0.0 };
    // The running mean doubling over the last decade of samples signals an
    // infinite expectation.
    let diverging = n >= 1000 && {
        let head = &values[..n / 10];
        let head_mean = head.iter().sum::<f64>() / head.len() as f64;
        head_mean > 0.0 && mean > 2.0 * head_mean
    };
    McMean { mean, stderr: (var / n as f64).sqrt(), diverging }
}

/// Common-random-number Monte Carlo view of a model.
pub struct McSampler<'a> {
    model: &'a BasicSequenceModel,
    rng: RngStream,
    n: usize,
}

impl<'a> McSampler<'a> {
    pub fn new(model: &'a BasicSequenceModel, rng: RngStream, n: usize) -> Self {
        assert!(n > 0, "need at least one Monte Carlo draw");
        Self { model, rng, n }
    }

    /// Evaluates `f(C, T)` on every draw, in draw order.
    pub fn map<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(f64, &[f64]) -> f64 + Sync,
    {
        (0..self.n)
            .into_par_iter()
            .map_init(Vec::new, |buf, k| {
                let mut gen = self.rng.spawn(k as u64).rng();
                let (c, _) = self.model.draw_into(&mut gen, buf);
                f(c, buf)
            })
            .collect()
    }

    pub fn m(&self, theta: f64) -> MEstimate {
        let vals = self.map(|_, t| t.iter().filter(|&&w| w > 0.0).map(|&w| w.powf(theta)).sum());
        let s = mc_mean(&vals);
        let mut finite = !s.diverging;
        if let Some(tail) = self.model.truncated_tail_mass(theta) {
            if tail.is_infinite() {
                finite = false;
            }
        }
        MEstimate {
            theta,
            value: if finite { s.mean } else { f64::INFINITY },
            stderr: if finite { s.stderr } else { f64::INFINITY },
            exact: false,
            finite,
            negative_theta: theta < 0.0,
        }
    }

    pub fn dm(&self, theta: f64) -> McMean {
        let vals = self.map(|_, t| t.iter().filter(|&&w| w > 0.0).map(|&w| w.powf(theta) * w.ln()).sum());
        mc_mean(&vals)
    }
}

/// `m(θ)`: exact value when the model has a closed form (and `mode` allows),
/// else the mean of `Σ_i T_i^θ` over `n_mc` draws.
pub fn estimate_m(model: &BasicSequenceModel, theta: f64, n_mc: usize, rng: RngStream, mode: EvalMode) -> MEstimate {
    if mode == EvalMode::Auto {
        if let Some(v) = model.exact_m(theta) {
            return MEstimate::exact(theta, v);
        }
    }
    McSampler::new(model, rng, n_mc).m(theta)
}

/// Source of `m` values used by the searches below.
enum MSource<'a> {
    Exact(&'a BasicSequenceModel),
    Mc(McSampler<'a>),
}

impl MSource<'_> {
    fn new<'a>(model: &'a BasicSequenceModel, rng: RngStream, n_mc: usize, mode: EvalMode) -> MSource<'a> {
        if mode == EvalMode::Auto && model.exact_m(1.0).is_some() {
            MSource::Exact(model)
        } else {
            MSource::Mc(McSampler::new(model, rng, n_mc))
        }
    }

    fn eval(&self, theta: f64) -> MEstimate {
        match self {
            MSource::Exact(m) => MEstimate::exact(theta, m.exact_m(theta).expect("closed form")),
            MSource::Mc(s) => s.m(theta),
        }
    }

    fn is_exact(&self) -> bool {
        matches!(self, MSource::Exact(_))
    }
}

/// Golden-section minimization on `[lo, hi]` of a unimodal function.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let mut best = if fa <= fb { (a, fa) } else { (b, fb) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Largest `x` in `[lo, hi]` with `g(x) > 0`, for `g` positive at `lo` and
/// nonpositive at `hi`; returns the final bracket.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, width: f64) -> (f64, f64) {
    for _ in 0..200 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Outcome of the characteristic-exponent search.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExponentResult {
    Found {
        alpha: f64,
        /// Bisection bracket (exact) or `4σ` confidence interval (Monte Carlo).
        interval: (f64, f64),
        m_at_alpha: f64,
        /// `m(β) > 1` verified at every grid point `β < α`.
        left_verified: bool,
        exact: bool,
    },
    Absent,
    /// Noise too large to resolve α to the requested tolerance.
    Inconclusive { estimate: f64, interval: (f64, f64) },
}

impl ExponentResult {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            ExponentResult::Found { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    /// Whether `alpha` is consistent with this result at tolerance `tol`.
    pub fn admits(&self, alpha: f64, tol: f64) -> bool {
        match self {
            ExponentResult::Found { alpha: a, interval, .. } => {
                (alpha - a).abs() <= tol || (interval.0 - tol..=interval.1 + tol).contains(&alpha)
            }
            ExponentResult::Inconclusive { interval, .. } => (interval.0..=interval.1).contains(&alpha),
            ExponentResult::Absent => false,
        }
    }
}

/// Default θ-grid: 41 points on `[0, 1.2]`.
pub fn default_grid() -> Vec<f64> {
    (0..DEFAULT_GRID_POINTS).map(|k| DEFAULT_GRID_MAX * k as f64 / (DEFAULT_GRID_POINTS - 1) as f64).collect()
}

fn scan_points() -> Vec<f64> {
    let mut pts: Vec<f64> = default_grid().into_iter().filter(|&t| t > 0.0 && t < 1.0).collect();
    pts.push(1.0);
    pts
}

fn exponent_from(src: &MSource<'_>, tol: f64) -> ExponentResult {
    let m0 = src.eval(0.0);
    let resolution = (tol * 1e-3).max(1e-15);
    if src.is_exact() {
        let m = |t: f64| src.eval(t).value;
        if !(m0.value > 1.0) {
            return ExponentResult::Absent;
        }
        let (tmin, mmin) = golden_min(m, 0.0, 1.0, 200);
        let (alpha, interval) = if mmin > 1.0 + tol {
            return ExponentResult::Absent;
        } else if mmin >= 1.0 - tol {
            (tmin, (tmin, tmin))
        } else {
            let (lo, hi) = bisect(|t| m(t) - 1.0, 0.0, tmin, resolution);
            (0.5 * (lo + hi), (lo, hi))
        };
        let m_at = m(alpha);
        if (m_at - 1.0).abs() > tol {
            return ExponentResult::Absent;
        }
        let left_verified = scan_points().into_iter().chain([0.0]).filter(|&b| b < interval.0).all(|b| m(b) > 1.0);
        return ExponentResult::Found { alpha, interval, m_at_alpha: m_at, left_verified, exact: true };
    }

    // Monte Carlo on common draws.
    let est = |t: f64| src.eval(t);
    if m0.upper() <= 1.0 {
        return ExponentResult::Absent;
    }
    let (tmin, _) = golden_min(|t| est(t).value, 0.0, 1.0, 100);
    let at_min = est(tmin);
    if at_min.lower() > 1.0 {
        return ExponentResult::Absent;
    }
    if m0.lower() <= 1.0 {
        return ExponentResult::Inconclusive { estimate: tmin, interval: (0.0, tmin) };
    }
    if at_min.upper() >= 1.0 {
        // Tangent within noise: the minimizer is the estimate.
        let lo = bisect(|t| est(t).lower() - 1.0, 0.0, tmin, resolution).0;
        if tmin - lo > tol {
            return ExponentResult::Inconclusive { estimate: tmin, interval: (lo, tmin) };
        }
        let left_verified = scan_points().into_iter().chain([0.0]).filter(|&b| b < lo).all(|b| est(b).lower() > 1.0);
        return ExponentResult::Found { alpha: tmin, interval: (lo, tmin), m_at_alpha: at_min.value, left_verified, exact: false };
    }
    let (lo, hi) = bisect(|t| est(t).value - 1.0, 0.0, tmin, resolution);
    let alpha = 0.5 * (lo + hi);
    let ci_lo = bisect(|t| est(t).lower() - 1.0, 0.0, alpha, resolution).0.min(lo);
    let ci_hi = bisect(|t| est(t).upper() - 1.0, alpha, tmin, resolution).1.max(hi);
    if ci_hi - ci_lo > tol {
        return ExponentResult::Inconclusive { estimate: alpha, interval: (ci_lo, ci_hi) };
    }
    let left_verified = scan_points().into_iter().chain([0.0]).filter(|&b| b < ci_lo).all(|b| est(b).lower() > 1.0);
    ExponentResult::Found { alpha, interval: (ci_lo, ci_hi), m_at_alpha: est(alpha).value, left_verified, exact: false }
}

/// Smallest α in (0, 1] with `m(α) = 1` and `m > 1` on `[0, α)`.
pub fn find_characteristic_exponent(
    model: &BasicSequenceModel,
    rng: RngStream,
    tol: f64,
    n_mc: usize,
    mode: EvalMode,
) -> ExponentResult {
    assert!(tol > 0.0, "tolerance must be positive");
    exponent_from(&MSource::new(model, rng, n_mc, mode), tol)
}

/// `m` on a θ-grid with derivative estimates and the exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralProfile {
    pub points: Vec<MEstimate>,
    /// `(m'(θ), stderr)` per grid point; exact values have stderr 0.
    pub derivative: Vec<(f64, f64)>,
    /// `Σ_{i>n_cap} E T_i^θ` per grid point when a closed form exists.
    pub tail_mass: Vec<Option<f64>>,
    pub alpha: ExponentResult,
}

impl SpectralProfile {
    /// CSV with columns `theta, m, stderr, finite`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "theta,m,stderr,finite")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{}", fmt17(p.theta), fmt17(p.value), fmt17(p.stderr), p.finite)?;
        }
        Ok(())
    }

    /// Chord check of log-convexity on consecutive grid triples where `m` is finite.
    pub fn log_convex_on_grid(&self) -> bool {
        self.points.windows(3).all(|w| {
            if !(w[0].finite && w[1].finite && w[2].finite) || w[0].value <= 0.0 {
                return true;
            }
            let slack = Z_BOUND * (w[0].stderr + w[1].stderr + w[2].stderr) / w[1].value.max(1e-300);
            let span = w[2].theta - w[0].theta;
            let chord = ((w[2].theta - w[1].theta) * w[0].value.ln() + (w[1].theta - w[0].theta) * w[2].value.ln()) / span;
            // Monte Carlo means of equal terms carry summation rounding of order n ε.
            w[1].value.ln() <= chord + 1e-9 + slack
        })
    }
}

pub fn spectral_profile(
    model: &BasicSequenceModel,
    rng: RngStream,
    n_mc: usize,
    tol: f64,
    mode: EvalMode,
) -> SpectralProfile {
    let src = MSource::new(model, rng, n_mc, mode);
    let alpha = exponent_from(&src, tol);
    let mut grid = default_grid();
    if let Some(a) = alpha.alpha() {
        grid.extend([a - DEFAULT_WINDOW_EPS, a, a + DEFAULT_WINDOW_EPS].into_iter().filter(|t| *t >= 0.0));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
    }
    let points: Vec<MEstimate> = grid.iter().map(|&t| src.eval(t)).collect();
    let derivative = grid
        .iter()
        .map(|&t| match &src {
            MSource::Exact(m) => (m.exact_dm(t).expect("closed form"), 0.0),
            MSource::Mc(s) => {
                let d = s.dm(t);
                (d.mean, d.stderr)
            }
        })
        .collect();
    let tail_mass = grid.iter().map(|&t| model.truncated_tail_mass(t)).collect();
    SpectralProfile { points, derivative, tail_mass, alpha }
}

// ---- conditions and regimes ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Certainty {
    /// From the model's structure or closed forms.
    Exact,
    MonteCarlo { estimate: f64, stderr: f64 },
    /// Could not be evaluated (e.g. a prerequisite is absent).
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flag {
    pub value: bool,
    pub certainty: Certainty,
}

impl Flag {
    fn exact(value: bool) -> Self {
        Self { value, certainty: Certainty::Exact }
    }
    fn mc(value: bool, estimate: f64, stderr: f64) -> Self {
        Self { value, certainty: Certainty::MonteCarlo { estimate, stderr } }
    }
    fn undetermined() -> Self {
        Self { value: false, certainty: Certainty::Undetermined }
    }
    pub fn is_exact(&self) -> bool {
        matches!(self.certainty, Certainty::Exact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// At most one positive weight: a perpetuity.
    Perpetuity,
    /// `E N ≤ 1`: `W*` is finite and the unique solution.
    SubcriticalUnique,
    /// `E N > 1` with `{0,1}`-valued weights.
    IndicatorDegenerate,
    /// `inf_{[0,1]} m > 1`.
    Nonexistence,
    /// `m(β) < 1` and `E C^β < ∞` for some β ∈ (0, 1].
    ExistsContractive,
    /// `m(α) = 1` at `α < 1/5` with the window and moment conditions.
    ExistsCritical,
    BoundaryUnknown,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Perpetuity => "perpetuity",
            Regime::SubcriticalUnique => "subcritical_unique",
            Regime::IndicatorDegenerate => "indicator_degenerate",
            Regime::Nonexistence => "nonexistence",
            Regime::ExistsContractive => "exists_contractive",
            Regime::ExistsCritical => "exists_critical",
            Regime::BoundaryUnknown => "boundary_unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractiveWitness {
    pub beta: f64,
    pub m_beta: f64,
    pub m_beta_stderr: f64,
    pub c_moment: f64,
    pub c_moment_stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfimumM {
    pub theta: f64,
    pub value: f64,
    pub stderr: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A4aDetail {
    pub log_moment: f64,
    pub log_moment_stderr: f64,
    pub log_moment_exact: bool,
    /// `E (Σ T_i^α) log⁺(Σ T_i^α)`, always by Monte Carlo.
    pub xlogx_moment: f64,
    pub xlogx_stderr: f64,
    pub xlogx_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub model_kind: String,
    /// `P(T ∈ {0,1}^ℕ) < 1`.
    pub a1: Flag,
    /// `E N > 1`.
    pub a2: Flag,
    /// `inf_{[0,1]} m ≤ 1`.
    pub a3a: Flag,
    /// A characteristic exponent exists.
    pub a3b: Flag,
    pub a4a: Flag,
    pub a4b: Flag,
    pub mean_n: f64,
    pub mean_n_stderr: f64,
    pub perpetuity_certified: bool,
    pub homogeneous: bool,
    pub inf_m: InfimumM,
    pub alpha: ExponentResult,
    pub a4a_detail: Option<A4aDetail>,
    pub contractive_witness: Option<ContractiveWitness>,
    /// Lattice span `r > 1` for deterministic weights whose logarithms are
    /// commensurable; `None` otherwise (`r = 1` assumed).
    pub lattice_span: Option<f64>,
    pub regime: Regime,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

/// Best rational approximation `p/q` with `q ≤ max_den` to `x`.
fn rational(x: f64, max_den: i64) -> Option<(i64, i64)> {
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let h2 = a as i64 * h1 + h0;
        let k2 = a as i64 * k1 + k0;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - x).abs() < 1e-12 * x.abs().max(1.0) {
            return Some((h1, k1));
        }
        let frac = r - a;
        if frac.abs() < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Span `r` of the multiplicative group generated by deterministic weights.
fn lattice_span(weights: &[f64]) -> Option<f64> {
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).filter(|l| *l != 0.0).collect();
    let &base = logs.first()?;
    // Express each log as (p/q) * base; the group is generated by base / lcm(q) * gcd(p).
    let mut ratios = Vec::new();
    for &l in &logs {
        ratios.push(rational(l / base, 1000)?);
    }
    let lcm = ratios.iter().fold(1i64, |acc, &(_, q)| acc / gcd(acc, q) * q);
    let g = ratios.iter().fold(0i64, |acc, &(p, q)| gcd(acc, p * (lcm / q)));
    let gen = (base.abs() * g as f64 / lcm as f64).exp();
    Some(gen)
}

fn draw_flags(model: &BasicSequenceModel, rng: RngStream, n_mc: usize) -> (bool, bool, McMean) {
    let s = McSampler::new(model, rng, n_mc);
    let zero_one = s.map(|_, t| f64::from(u8::from(t.iter().all(|&w| w == 0.0 || w == 1.0))));
    let c_pos = s.map(|c, _| f64::from(u8::from(c > 0.0)));
    let n = s.map(|_, t| t.iter().filter(|&&w| w > 0.0).count() as f64);
    (zero_one.iter().all(|&v| v == 1.0), c_pos.contains(&1.0), mc_mean(&n))
}

/// Evaluates every existence condition and assigns the regime by priority:
/// perpetuity, subcritical_unique, indicator_degenerate, nonexistence,
/// exists_contractive, exists_critical, boundary_unknown.
pub fn check_conditions(model: &BasicSequenceModel, rng: RngStream, n_mc: usize, mode: EvalMode) -> ConditionReport {
    let src = MSource::new(model, rng.spawn(0), n_mc, mode);
    let exact = src.is_exact();
    let tol = 1e-9;
    let mut notes = Vec::new();

    let (mc_zero_one, mc_c_positive, mc_n) = if exact { (false, false, mc_mean(&[0.0])) } else { draw_flags(model, rng.spawn(1), n_mc) };

    // A1
    let a1 = match model.zero_one_weights() {
        Some(z) if exact || mode == EvalMode::Auto => Flag::exact(!z),
        _ => Flag::mc(!mc_zero_one, f64::from(u8::from(!mc_zero_one)), 0.0),
    };
    // A2
    let (mean_n, mean_n_stderr, a2) = match (exact, model.exact_mean_n()) {
        (true, Some(v)) => (v, 0.0, Flag::exact(v > 1.0)),
        _ => (mc_n.mean, mc_n.stderr, Flag::mc(mc_n.mean - Z_BOUND * mc_n.stderr > 1.0, mc_n.mean, mc_n.stderr)),
    };
    let homogeneous = match model.c_is_zero() {
        Some(z) if exact => z,
        _ => !mc_c_positive,
    };
    let perpetuity_certified = model.max_n().is_some_and(|k| k <= 1);

    // A3a: infimum of m on [0, 1].
    let (tmin, _) = golden_min(|t| src.eval(t).value, 0.0, 1.0, if exact { 200 } else { 100 });
    let mut inf = src.eval(tmin);
    for t in scan_points().into_iter().chain([0.0]) {
        let e = src.eval(t);
        if e.value < inf.value {
            inf = e;
        }
    }
    let inf_m = InfimumM { theta: inf.theta, value: inf.value, stderr: inf.stderr, exact };
    let a3a = if exact {
        Flag::exact(inf.value <= 1.0 + tol)
    } else {
        // Negated only when confidently above 1.
        Flag::mc(inf.lower() <= 1.0, inf.value, inf.stderr)
    };

    // A3b
    let alpha = exponent_from(&src, if exact { 1e-6 } else { 1e-2 });
    let a3b = match (&alpha, exact) {
        (ExponentResult::Found { alpha: a, m_at_alpha, .. }, true) => {
            let _ = a;
            Flag::exact((m_at_alpha - 1.0).abs() <= 1e-6)
        }
        (ExponentResult::Found { m_at_alpha, .. }, false) => Flag::mc(true, *m_at_alpha, 0.0),
        (ExponentResult::Absent, true) => Flag::exact(false),
        (ExponentResult::Absent, false) => Flag::mc(false, f64::NAN, f64::NAN),
        (ExponentResult::Inconclusive { estimate, .. }, _) => Flag::mc(false, *estimate, f64::NAN),
    };

    // A4a / A4b need α.
    let (a4a, a4a_detail, a4b) = match alpha.alpha() {
        Some(a) => {
            let (lm, lm_se, lm_exact) = match (exact, model.exact_dm(a)) {
                (true, Some(v)) => (v, 0.0, true),
                _ => {
                    let d = McSampler::new(model, rng.spawn(2), n_mc).dm(a);
                    (d.mean, d.stderr, false)
                }
            };
            let sampler = McSampler::new(model, rng.spawn(3), n_mc);
            let vals = sampler.map(|_, t| {
                let s: f64 = t.iter().filter(|&&w| w > 0.0).map(|&w| w.powf(a)).sum();
                if s > 1.0 {
                    s * s.ln()
                } else {
                    0.0
                }
            });
            let xl = mc_mean(&vals);
            let first_ok = if lm_exact { lm.is_finite() && lm < 0.0 } else { lm.is_finite() && lm + Z_BOUND * lm_se < 0.0 };
            let a4a_val = first_ok && !xl.diverging && xl.mean.is_finite();
            let detail = A4aDetail {
                log_moment: lm,
                log_moment_stderr: lm_se,
                log_moment_exact: lm_exact,
                xlogx_moment: xl.mean,
                xlogx_stderr: xl.stderr,
                xlogx_finite: !xl.diverging && xl.mean.is_finite(),
            };
            let n_fin = model.n_finite();
            let below = scan_points().into_iter().chain([0.0]).filter(|&t| t < a).any(|t| src.eval(t).finite);
            let a4b = match n_fin {
                Some(nf) => Flag { value: nf && below, certainty: if exact { Certainty::Exact } else { Certainty::MonteCarlo { estimate: f64::NAN, stderr: f64::NAN } } },
                None => Flag::mc(below, f64::NAN, f64::NAN),
            };
            (Flag::mc(a4a_val, xl.mean, xl.stderr), Some(detail), a4b)
        }
        None => (Flag::undetermined(), None, Flag::undetermined()),
    };

    // Contractive witness: some β ≤ 1 with m(β) < 1 and E C^β < ∞.
    let c_moment = |beta: f64| -> (f64, f64) {
        match (exact, model.exact_c_moment(beta)) {
            (true, Some(v)) => (v, 0.0),
            _ => {
                let vals = McSampler::new(model, rng.spawn(4), n_mc).map(|c, _| if c > 0.0 { c.powf(beta) } else { 0.0 });
                let s = mc_mean(&vals);
                (if s.diverging { f64::INFINITY } else { s.mean }, s.stderr)
            }
        }
    };
    let mut witness: Option<ContractiveWitness> = None;
    for beta in scan_points() {
        let e = src.eval(beta);
        let below_one = if exact { e.value < 1.0 } else { e.upper() < 1.0 };
        if !below_one || witness.is_some_and(|w| w.m_beta <= e.value) {
            continue;
        }
        let (cm, cm_se) = c_moment(beta);
        if cm.is_finite() {
            witness = Some(ContractiveWitness { beta, m_beta: e.value, m_beta_stderr: e.stderr, c_moment: cm, c_moment_stderr: cm_se });
        }
    }

    // Critical case: α small with m finite on a window around it.
    let critical = match &alpha {
        ExponentResult::Found { alpha: a, .. } if *a < CRITICAL_ALPHA_MAX => {
            let eps = DEFAULT_WINDOW_EPS;
            let window_ok = (0..=40).map(|k| -eps + (*a + 2.0 * eps) * k as f64 / 40.0).filter(|t| (t - a).abs() > 1e-6).all(|t| {
                let e = src.eval(t);
                e.finite && if exact { e.value > 1.0 } else { e.lower() > 1.0 }
            });
            let ec_ok = c_moment(1.0).0.is_finite();
            let n_ok = model.n_moment_finite(1.0 + MOMENT_DELTA).unwrap_or(mc_n.mean.is_finite());
            window_ok && ec_ok && n_ok
        }
        _ => false,
    };

    let lattice = model.point_weights().and_then(|w| lattice_span(&w));
    if lattice.is_some() {
        notes.push("weights generate a lattice group; only constant h is supported".to_string());
    }

    let regime = if perpetuity_certified {
        Regime::Perpetuity
    } else if !a2.value && (a2.is_exact() || mean_n + Z_BOUND * mean_n_stderr <= 1.0) {
        Regime::SubcriticalUnique
    } else if !a1.value {
        Regime::IndicatorDegenerate
    } else if !a3a.value {
        Regime::Nonexistence
    } else if homogeneous && !(a3b.value && (a4a.value || a4b.value)) {
        notes.push("homogeneous model outside the solution-family hypotheses (A3b with A4)".to_string());
        Regime::BoundaryUnknown
    } else if witness.is_some() {
        Regime::ExistsContractive
    } else if critical {
        Regime::ExistsCritical
    } else {
        Regime::BoundaryUnknown
    };
    if regime == Regime::BoundaryUnknown && alpha.alpha().is_some_and(|a| (a - 1.0).abs() < 1e-6) {
        notes.push("inf m = 1 attained at alpha = 1: see divergence probe".to_string());
    }
    if model.n_finite() == Some(false) {
        notes.push(format!("N = ∞ truncated at n_cap = {}", model.n_cap));
    }

    ConditionReport {
        model_kind: model.sequence.name().to_string(),
        a1,
        a2,
        a3a,
        a3b,
        a4a,
        a4b,
        mean_n,
        mean_n_stderr,
        perpetuity_certified,
        homogeneous,
        inf_m,
        alpha,
        a4a_detail,
        contractive_witness: witness,
        lattice_span: lattice,
        regime,
        notes,
    }
}

// ---- divergence probe ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FiniteLikely,
    InfiniteLikely,
    Inconclusive,
}

/// Growth measurement over independent realizations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    pub reps: usize,
    pub depth: usize,
    /// Mean per-generation contribution `Σ_{|v|=n} L(v) C(v)`.
    pub mean_contributions: Vec<f64>,
    /// OLS slope of log mean contribution against n.
    pub log_slope: f64,
    pub log_slope_stderr: f64,
    /// OLS slope of the mean partial sum against n.
    pub linear_slope: f64,
    pub linear_slope_stderr: f64,
    pub budget_exceeded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub verdict: Verdict,
    /// Backed by a theorem whose hypotheses were verified exactly.
    pub certified: bool,
    pub justification: String,
    pub inf_m: InfimumM,
    pub regime: Regime,
    pub growth: Option<GrowthFit>,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return (f64::NAN, f64::INFINITY);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

/// Measures per-generation growth over `reps` realizations (`rng.spawn(r)`).
pub fn measure_growth(model: &BasicSequenceModel, rng: RngStream, reps: usize, cfg: &TreeConfig) -> GrowthFit {
    let runs: Vec<_> = (0..reps).into_par_iter().map(|r| partial_wstar(model, rng.spawn(r as u64), cfg)).collect();
    let depth = cfg.max_depth;
    let mut mean_c = vec![0.0; depth];
    let mut mean_s = vec![0.0; depth];
    let mut budget = 0;
    for run in &runs {
        budget += usize::from(run.termination == Termination::BudgetExceeded);
        let cum = run.cumulative();
        for k in 0..depth {
            mean_c[k] += run.contributions.get(k).copied().unwrap_or(0.0);
            mean_s[k] += cum.get(k).copied().unwrap_or_else(|| cum.last().copied().unwrap_or(run.value));
        }
    }
    for k in 0..depth {
        mean_c[k] /= reps as f64;
        mean_s[k] /= reps as f64;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        mean_c.iter().enumerate().filter(|(_, c)| **c > 0.0).map(|(k, c)| (k as f64, c.ln())).unzip();
    let (log_slope, log_se) = ols(&xs, &ys);
    let ns: Vec<f64> = (1..=depth).map(|k| k as f64).collect();
    let (lin, lin_se) = ols(&ns, &mean_s);
    GrowthFit {
        reps,
        depth,
        mean_contributions: mean_c,
        log_slope,
        log_slope_stderr: log_se,
        linear_slope: lin,
        linear_slope_stderr: lin_se,
        budget_exceeded: budget,
    }
}

/// Probe configuration: conditions by `n_mc` draws, growth by `reps` trees.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub n_mc: usize,
    pub mode: EvalMode,
    pub tree: TreeConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { n_mc: 20_000, mode: EvalMode::Auto, tree: TreeConfig::depth(20).with_budget(1_000_000) }
    }
}

/// Analytic part of the probe: `Some` when a theorem certifies `W* = ∞`.
pub fn certified_divergence(model: &BasicSequenceModel, report: &ConditionReport) -> Option<String> {
    if report.homogeneous {
        return None;
    }
    match report.regime {
        Regime::Nonexistence if report.a3a.is_exact() => Some(format!(
            "inf over [0,1] of m = {} > 1 (A3a fails): no fixed point exists",
            report.inf_m.value
        )),
        Regime::IndicatorDegenerate if report.a1.is_exact() => {
            Some("E N > 1 with {0,1}-valued weights and C > 0 with positive probability: W* = ∞ on survival".to_string())
        }
        _ if critical_constant_c(model, report) => Some(
            "alpha = 1 attains inf m = 1, (A4a) holds and C is a positive constant: W* = C Σ W_n^(1) = ∞ on survival"
                .to_string(),
        ),
        _ => None,
    }
}

fn critical_constant_c(model: &BasicSequenceModel, report: &ConditionReport) -> bool {
    let alpha_one = matches!(report.alpha, ExponentResult::Found { alpha, exact: true, .. } if (alpha - 1.0).abs() < 1e-6);
    let c_const = model.c_law().and_then(|l| l.as_point()).is_some_and(|c| c > 0.0);
    alpha_one && report.inf_m.exact && (report.inf_m.value - 1.0).abs() < 1e-6 && report.a4a.value && c_const
}

/// Classifies `W* < ∞` as likely, unlikely or undecided.
pub fn divergence_probe(model: &BasicSequenceModel, rng: RngStream, reps: usize, cfg: &ProbeConfig) -> DivergenceReport {
    assert!(reps >= 1, "reps must be at least 1");
    let report = check_conditions(model, rng.spawn(0), cfg.n_mc, cfg.mode);
    let make = |verdict, certified, justification: String, growth| DivergenceReport {
        verdict,
        certified,
        justification,
        inf_m: report.inf_m,
        regime: report.regime,
        growth,
    };
    if report.homogeneous {
        return make(Verdict::FiniteLikely, true, "C = 0 almost surely: W* = 0".to_string(), None);
    }
    if critical_constant_c(model, &report) {
        let growth = measure_growth(model, rng.spawn(1), reps, &cfg.tree);
        let why = certified_divergence(model, &report).expect("critical constant-C rule");
        return make(Verdict::InfiniteLikely, true, why, Some(growth));
    }
    if let Some(why) = certified_divergence(model, &report) {
        return make(Verdict::InfiniteLikely, true, why, None);
    }
    match report.regime {
        Regime::SubcriticalUnique => {
            return make(Verdict::FiniteLikely, report.a2.is_exact(), "E N <= 1: finitely many alive nodes".into(), None)
        }
        Regime::ExistsContractive => {
            let w = report.contractive_witness.expect("witness");
            return make(
                Verdict::FiniteLikely,
                report.a3a.is_exact(),
                format!("m({}) = {} < 1 and E C^beta = {} < ∞", w.beta, w.m_beta, w.c_moment),
                None,
            );
        }
        Regime::ExistsCritical => {
            return make(Verdict::FiniteLikely, report.a3b.is_exact(), "critical sufficient condition with alpha < 1/5".into(), None)
        }
        Regime::Nonexistence | Regime::IndicatorDegenerate => {
            return make(Verdict::InfiniteLikely, false, format!("{} by Monte Carlo", report.regime.as_str()), None)
        }
        _ => {}
    }
    let growth = measure_growth(model, rng.spawn(1), reps, &cfg.tree);
    let verdict = if growth.budget_exceeded * 2 > reps || growth.log_slope - Z_BOUND * growth.log_slope_stderr > 0.0 {
        Verdict::InfiniteLikely
    } else if growth.log_slope + Z_BOUND * growth.log_slope_stderr < 0.0 {
        Verdict::FiniteLikely
    } else {
        Verdict::Inconclusive
    };
    let why = format!(
        "empirical: log-contribution slope {} ± {} over {} generations",
        growth.log_slope, growth.log_slope_stderr, growth.depth
    );
    make(verdict, false, why, Some(growth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::preset_model;

    fn regime(name: &str) -> ConditionReport {
        check_conditions(&preset_model(name).unwrap(), RngStream::new(9), 20_000, EvalMode::Auto)
    }

    #[test]
    fn preset_regimes() {
        assert_eq!(regime("gw-binomial").regime, Regime::SubcriticalUnique);
        assert_eq!(regime("mg1-exp").regime, Regime::SubcriticalUnique);
        assert_eq!(regime("det-double").regime, Regime::Nonexistence);
        assert_eq!(regime("pagerank").regime, Regime::ExistsContractive);
        let q = regime("det-quarter");
        assert_eq!(q.regime, Regime::ExistsContractive);
        assert_eq!(q.contractive_witness.unwrap().beta, 1.0);
        assert!(q.a4a.value);
        let c = regime("counterexample");
        assert!(c.a1.value && c.a2.value && c.a3a.value);
        assert!(!c.a4b.value);
        assert_eq!(c.regime, Regime::BoundaryUnknown);
        assert_eq!(regime("det-half").regime, Regime::BoundaryUnknown);
        assert_eq!(regime("uniform-split").regime, Regime::BoundaryUnknown);
    }

    #[test]
    fn exponent_exact_and_mc() {
        let m = preset_model("det-quarter").unwrap();
        let exact = find_characteristic_exponent(&m, RngStream::new(1), 1e-6, 1000, EvalMode::Auto);
        assert!((exact.alpha().unwrap() - 0.5).abs() < 1e-9, "{exact:?}");
        let mc = find_characteristic_exponent(&m, RngStream::new(1), 1e-6, 1000, EvalMode::MonteCarlo);
        assert!(mc.admits(0.5, 1e-6), "{mc:?}");
        let split = preset_model("uniform-split").unwrap();
        let a = find_characteristic_exponent(&split, RngStream::new(1), 1e-6, 1000, EvalMode::Auto);
        assert!((a.alpha().unwrap() - 1.0).abs() < 1e-6, "{a:?}");
        let gw = preset_model("gw-binomial").unwrap();
        assert_eq!(find_characteristic_exponent(&gw, RngStream::new(1), 1e-6, 1000, EvalMode::Auto), ExponentResult::Absent);
    }

    #[test]
    fn mc_exponent_for_random_weights() {
        // T = (U, 1-U): m(θ) = 2/(1+θ), α = 1 on every draw since ΣT = 1.
        let split = preset_model("uniform-split").unwrap();
        let r = find_characteristic_exponent(&split, RngStream::new(4), 1e-2, 20_000, EvalMode::MonteCarlo);
        assert!(r.admits(1.0, 1e-2), "{r:?}");
    }

    #[test]
    fn profile_is_log_convex_and_matches_closed_form() {
        let m = preset_model("pagerank").unwrap();
        let exact = spectral_profile(&m, RngStream::new(2), 1000, 1e-6, EvalMode::Auto);
        assert!(exact.log_convex_on_grid());
        let mc = spectral_profile(&m, RngStream::new(2), 20_000, 1e-6, EvalMode::MonteCarlo);
        for s in &mc.points {
            let e = m.exact_m(s.theta).unwrap();
            assert!((e - s.value).abs() <= 4.0 * s.stderr + 1e-12, "{e} {s:?}");
        }
        let mut buf = Vec::new();
        exact.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), exact.points.len() + 1);
    }

    #[test]
    fn divergence_verdicts() {
        let cfg = ProbeConfig::default();
        let d = divergence_probe(&preset_model("det-double").unwrap(), RngStream::new(1), 10, &cfg);
        assert_eq!(d.verdict, Verdict::InfiniteLikely);
        assert!(d.certified);
        assert!((d.inf_m.value - 2.0).abs() < 1e-9);
        let h = divergence_probe(&preset_model("det-half").unwrap(), RngStream::new(1), 10, &cfg);
        assert_eq!(h.verdict, Verdict::InfiniteLikely);
        let g = h.growth.unwrap();
        assert!((g.linear_slope - 1.0).abs() < 1e-9);
        let q = divergence_probe(&preset_model("det-quarter").unwrap(), RngStream::new(1), 10, &cfg);
        assert_eq!(q.verdict, Verdict::FiniteLikely);
        let c = divergence_probe(&preset_model("counterexample").unwrap(), RngStream::new(1), 10, &cfg);
        assert_eq!(c.verdict, Verdict::FiniteLikely);
    }

    #[test]
    fn lattice_detection() {
        let r = lattice_span(&[0.25]).unwrap();
        assert!((r - 4.0).abs() < 1e-9);
        let r = lattice_span(&[0.25, 0.5]).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
        assert!(lattice_span(&[0.5, 1.0 / 3.0]).is_none());
    }

    #[test]
    fn golden_section_finds_minimum() {
        let (x, fx) = golden_min(|t| (t - 0.3).powi(2) + 1.0, 0.0, 1.0, 200);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mc_mean_flags_divergence() {
        let vals: Vec<f64> = (1..=10_000).map(|k| if k > 9_000 { 1e6 } else { 1.0 }).collect();
        assert!(mc_mean(&vals).diverging);
        let flat = vec![1.0; 10_000];
        let s = mc_mean(&flat);
        assert!(!s.diverging);
        assert_eq!(s.stderr, 0.0);
    }
}
