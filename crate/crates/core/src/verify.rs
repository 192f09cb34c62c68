//! Statistical checks of the fixed-point identity, the multiplicative
//! martingale, the factorization and the tail asymptotics.
//!
//! Verdicts follow one rule throughout. `pass` needs the KS p-value at or
//! above `level` and every Laplace-transform z-score within `z_bound`.
//! `fail` needs decisive evidence: asymptotic KS p below `level / 100` or
//! some `|z|` above `2 z_bound`. Anything else is `inconclusive`.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::branching::{expand_frontier, GenerationFrontier, TreeConfig};
use crate::error::{config, Error, Result};
use crate::model::BasicSequenceModel;
use crate::output::fmt17;
use crate::rng::RngStream;
use crate::solutions::{sample_rhs, sample_solution, SolutionSpec, TruncationCertificate};
use crate::spectral::Z_BOUND;

pub const DEFAULT_T_GRID: [f64; 7] = [0.01, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0];
pub const DEFAULT_LEVEL: f64 = 0.01;
pub const DEFAULT_PERMUTATIONS: usize = 200;
/// Largest per-sample size for which the permutation p-value is used.
pub const PERMUTATION_MAX_N: usize = 10_000;
/// Probability slack `η` in the shift-tolerant KS statistic for random models.
pub const KS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Process exit status for this verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LtPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `E e^{-tX}` estimated by the sample mean, with its standard error.
pub fn empirical_lt(samples: &[f64], t_grid: &[f64]) -> Vec<LtPoint> {
    assert!(!samples.is_empty(), "empirical_lt needs samples");
    let n = samples.len() as f64;
    t_grid
        .iter()
        .map(|&t| {
            assert!(t >= 0.0, "Laplace transform argument must be nonnegative");
            if t == 0.0 {
                return LtPoint { t, value: 1.0, stderr: 0.0 };
            }
            let vals: Vec<f64> = samples.iter().map(|&x| (-t * x).exp()).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = if n > 1.0 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            LtPoint { t, value: mean, stderr: (var / n).sqrt() }
        })
        .collect()
}

// ---- Kolmogorov-Smirnov ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_asymptotic: f64,
    pub p_permutation: Option<f64>,
    /// Permutation p when computed, asymptotic otherwise.
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    /// Horizontal tolerance δ used in the statistic.
    pub shift: f64,
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `#{x ∈ s : x ≤ y} / |s|` for sorted `s`.
fn ecdf(s: &[f64], y: f64) -> f64 {
    s.partition_point(|&x| x <= y) as f64 / s.len() as f64
}

/// `max(sup_x [F(x) − G(x+δ)], sup_x [G(x) − F(x+δ)], 0)` for sorted samples;
/// `δ = 0` gives the usual two-sample statistic, ties included.
pub fn ks_statistic_sorted(a: &[f64], b: &[f64], shift: f64) -> f64 {
    let one_side = |x: &[f64], y: &[f64]| {
        let mut best = 0.0f64;
        let mut i = 0;
        while i < x.len() {
            // Jump of F at a run of equal values: use the count after the run.
            let v = x[i];
            let j = i + x[i..].partition_point(|&z| z <= v);
            best = best.max(j as f64 / x.len() as f64 - ecdf(y, v + shift));
            i = j;
        }
        best
    };
    one_side(a, b).max(one_side(b, a)).max(0.0)
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}` with the
/// finite-sample correction of the effective size.
pub fn ks_p_asymptotic(d: f64, n1: usize, n2: usize) -> f64 {
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test; the permutation p uses `rng.spawn(i)` for resample `i`.
pub fn ks_two_sample(a: &[f64], b: &[f64], shift: f64, permutations: Option<(usize, RngStream)>) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs two nonempty samples");
    let (sa, sb) = (sorted(a), sorted(b));
    let d = ks_statistic_sorted(&sa, &sb, shift);
    let p_asymptotic = ks_p_asymptotic(d, a.len(), b.len());
    let p_permutation = permutations.map(|(count, rng)| {
        let pool: Vec<f64> = a.iter().chain(b).copied().collect();
        let hits: usize = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut p = pool.clone();
                p.shuffle(&mut rng.spawn(i as u64).rng());
                let (x, y) = p.split_at(a.len());
                usize::from(ks_statistic_sorted(&sorted(x), &sorted(y), shift) >= d)
            })
            .sum();
        (1 + hits) as f64 / (count + 1) as f64
    });
    KsResult {
        statistic: d,
        p_asymptotic,
        p_permutation,
        p_value: p_permutation.unwrap_or(p_asymptotic),
        n1: a.len(),
        n2: b.len(),
        shift,
    }
}

/// One-sample KS against a continuous CDF: `(D, asymptotic p)`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let s = sorted(samples);
    let n = s.len() as f64;
    let d = s.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = cdf(x);
        acc.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    });
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let p = if lambda < 0.2 {
        1.0
    } else {
        let s: f64 = (1..=200).map(|k| (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * (k * k) as f64 * lambda * lambda).exp()).sum();
        (2.0 * s).clamp(0.0, 1.0)
    };
    (d, p)
}

// ---- reports ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LtComparison {
    pub t: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub gap: f64,
    /// Part of the gap explained by the certified truncation bound.
    pub allowance: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub test: &'static str,
    pub t_grid: Vec<f64>,
    pub rows: Vec<LtComparison>,
    pub max_abs_gap: f64,
    pub max_abs_z: f64,
    pub ks: Option<KsResult>,
    pub verdict: Verdict,
    pub level: f64,
    pub z_bound: f64,
    pub n_lhs: usize,
    pub n_rhs: usize,
    pub seed: u64,
    pub certificate: Option<TruncationCertificate>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }

    /// CSV with columns `t, lhs, lhs_stderr, rhs, rhs_stderr, gap, allowance, z`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,lhs,lhs_stderr,rhs,rhs_stderr,gap,allowance,z")?;
        for r in &self.rows {
            let cols = [r.t, r.lhs, r.lhs_stderr, r.rhs, r.rhs_stderr, r.gap, r.allowance, r.z];
            writeln!(out, "{}", cols.map(fmt17).join(","))?;
        }
        Ok(())
    }
}

/// `max(0, |gap| − allowance) / stderr`, with `0/0 = 0` and `x/0 = ∞`.
fn z_score(gap: f64, allowance: f64, stderr: f64) -> f64 {
    let excess = (gap.abs() - allowance).max(0.0);
    if excess == 0.0 {
        0.0
    } else if stderr == 0.0 {
        f64::INFINITY
    } else {
        excess / stderr
    }
}

/// Pass when KS `p ≥ level` and `max |z| ≤ z_bound`; fail when the
/// asymptotic KS `p < level/100` or `max |z| > 2 z_bound`.
pub fn verdict(ks: Option<&KsResult>, max_z: f64, level: f64, z_bound: f64) -> Verdict {
    let ks_pass = ks.is_none_or(|k| k.p_value >= level);
    let ks_fail = ks.is_some_and(|k| k.p_asymptotic < level / 100.0);
    if ks_pass && max_z <= z_bound {
        Verdict::Pass
    } else if ks_fail || max_z > 2.0 * z_bound {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOptions {
    pub t_grid: Vec<f64>,
    pub level: f64,
    pub z_bound: f64,
    pub permutations: usize,
    /// Added to every left-hand sample before comparison (power checks).
    pub lhs_shift: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            t_grid: DEFAULT_T_GRID.to_vec(),
            level: DEFAULT_LEVEL,
            z_bound: Z_BOUND,
            permutations: DEFAULT_PERMUTATIONS,
            lhs_shift: 0.0,
        }
    }
}

fn check_options(opts: &TestOptions) -> Result<()> {
    if opts.t_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return config("t_grid entries must be finite and nonnegative");
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return config(format!("level must lie in (0, 1), got {}", opts.level));
    }
    Ok(())
}

/// Compares `n` draws of the solution with `n` draws of `C + Σ T_i X_i`
/// built from them.
///
/// A certified truncation bound `E R^β ≤ B` allows a Laplace-transform gap
/// of `t^β B` (since `1 − e^{−x} ≤ x^β`) and a KS horizontal tolerance
/// `δ`. For deterministic models `R` itself is at most `B^{1/β}`, so
/// `δ = B^{1/β}`. Otherwise `δ = (B/η)^{1/β}` with `η =` [`KS_SLACK`], so
/// that `P(R > δ) ≤ η` by Markov's inequality.
pub fn fixed_point_test(spec: &SolutionSpec, rng: RngStream, n: usize, opts: &TestOptions) -> Result<VerificationReport> {
    if n < 1000 {
        return config(format!("fixed_point_test needs n >= 1000, got {n}"));
    }
    check_options(opts)?;
    let sol = sample_solution(spec, rng.spawn(0), n)?;
    let lhs: Vec<f64> = sol.samples.iter().map(|x| x + opts.lhs_shift).collect();
    let rhs = sample_rhs(&spec.model, &lhs, rng.spawn(1), n)?;
    let bound = sol.certificate.bound();
    let shift = match bound {
        Some((beta, b)) if spec.model.is_deterministic() => b.powf(1.0 / beta),
        Some((beta, b)) => (b / KS_SLACK).powf(1.0 / beta),
        None => 0.0,
    };
    let perms = (n <= PERMUTATION_MAX_N).then(|| (opts.permutations, rng.spawn(2)));
    let ks = ks_two_sample(&lhs, &rhs, shift, perms);
    let rows = compare(&lhs, &rhs, &opts.t_grid, |t| bound.map_or(0.0, |(beta, b)| t.powf(beta) * b));
    Ok(finish("fixed_point", rows, Some(ks), opts, n, n, rng.seed(), Some(sol.certificate)))
}

fn compare(lhs: &[f64], rhs: &[f64], t_grid: &[f64], allowance: impl Fn(f64) -> f64) -> Vec<LtComparison> {
    let (l, r) = (empirical_lt(lhs, t_grid), empirical_lt(rhs, t_grid));
    l.iter()
        .zip(&r)
        .map(|(a, b)| {
            let gap = a.value - b.value;
            let allow = allowance(a.t);
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            LtComparison {
                t: a.t,
                lhs: a.value,
                lhs_stderr: a.stderr,
                rhs: b.value,
                rhs_stderr: b.stderr,
                gap,
                allowance: allow,
                z: z_score(gap, allow, se),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    test: &'static str,
    rows: Vec<LtComparison>,
    ks: Option<KsResult>,
    opts: &TestOptions,
    n_lhs: usize,
    n_rhs: usize,
    seed: u64,
    certificate: Option<TruncationCertificate>,
) -> VerificationReport {
    let max_abs_gap = rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    let max_abs_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    let verdict = verdict(ks.as_ref(), max_abs_z, opts.level, opts.z_bound);
    VerificationReport {
        test,
        t_grid: opts.t_grid.clone(),
        rows,
        max_abs_gap,
        max_abs_z,
        ks,
        verdict,
        level: opts.level,
        z_bound: opts.z_bound,
        n_lhs,
        n_rhs,
        seed,
        certificate,
    }
}

/// Compares `E e^{−tX}` with `E exp(−tW* − h^α t^α W)` using paired
/// differences on the same draws (the stable factor integrated out).
pub fn factorization_check(spec: &SolutionSpec, rng: RngStream, n: usize, opts: &TestOptions) -> Result<VerificationReport> {
    check_options(opts)?;
    let sol = sample_solution(spec, rng, n)?;
    let (alpha, h) = (spec.alpha, spec.h);
    let rows = opts
        .t_grid
        .iter()
        .map(|&t| {
            let lhs: Vec<f64> = sol.samples.iter().map(|x| (-t * x).exp()).collect();
            let rhs: Vec<f64> = (0..n)
                .map(|k| {
                    let hom = if h > 0.0 { h.powf(alpha) * t.powf(alpha) * sol.w[k] } else { 0.0 };
                    (-t * sol.wstar[k] - hom).exp()
                })
                .collect();
            let (lm, ls) = mean_se(&lhs);
            let (rm, rs) = mean_se(&rhs);
            let diffs: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let (dm, ds) = mean_se(&diffs);
            LtComparison { t, lhs: lm, lhs_stderr: ls, rhs: rm, rhs_stderr: rs, gap: dm, allowance: 0.0, z: z_score(dm, 0.0, ds) }
        })
        .collect();
    Ok(finish("factorization", rows, None, opts, n, n, rng.seed(), Some(sol.certificate)))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if n > 1.0 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

// ---- multiplicative martingale ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub depth: usize,
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub gap: f64,
    pub allowance: f64,
    pub z: f64,
    /// Fraction of realizations with `M_n(t) ≤ exp(−t Σ_{|u|<n} L(u)C(u))`.
    pub pathwise_fraction: f64,
    pub mean_w1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleTable {
    pub rows: Vec<MartingaleRow>,
    pub reps: usize,
    /// Distinct realizations simulated (1 for deterministic models).
    pub realizations: usize,
    pub z_bound: f64,
    pub max_abs_z: f64,
    pub pathwise_all: bool,
    pub verdict: Verdict,
}

impl MartingaleTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "n,t,mean,stderr,target,gap,allowance,z,pathwise_fraction,mean_w1")?;
        for r in &self.rows {
            let cols = [r.t, r.mean, r.stderr, r.target, r.gap, r.allowance, r.z, r.pathwise_fraction, r.mean_w1];
            writeln!(out, "{},{}", r.depth, cols.map(fmt17).join(","))?;
        }
        Ok(())
    }
}

/// Monte Carlo means of `M_n(t) = exp(−t Σ_{|u|<n} L(u)C(u)) Π_{|v|=n} ψ(L(v)t)`.
///
/// `allowance_rate` is a bound `b` on how far `ψ` may be from an exact
/// fixed point in the sense `|log ψ(s) − log ψ*(s)| ≤ s b`; the mean gap
/// at depth `n` then may reach `t b (1 + E W_n^{(1)})`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_diagnostic(
    model: &BasicSequenceModel,
    candidate_lt: &(dyn Fn(f64) -> f64 + Sync),
    depths: &[usize],
    t_grid: &[f64],
    reps: usize,
    rng: RngStream,
    trunc: &TreeConfig,
    allowance_rate: f64,
) -> Result<MartingaleTable> {
    if (candidate_lt(0.0) - 1.0).abs() > 1e-12 {
        return config(format!("candidate Laplace transform must equal 1 at t = 0, got {}", candidate_lt(0.0)));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    for w in grid.windows(2) {
        if candidate_lt(w[1]) > candidate_lt(w[0]) + 1e-15 {
            return config(format!("candidate Laplace transform increases between t = {} and t = {}", w[0], w[1]));
        }
    }
    if reps == 0 || depths.is_empty() {
        return config("martingale_diagnostic needs reps >= 1 and at least one depth");
    }
    let max_depth = *depths.iter().max().expect("nonempty");
    let deterministic = model.is_deterministic();
    let realizations = if deterministic { 1 } else { reps };

    // Per realization: for each depth index and t, (M_n(t), pathwise ok), and W_n^{(1)}.
    type Cells = Vec<(Vec<(f64, bool)>, f64)>;
    let per_run: Vec<Result<Cells>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let stream = rng.spawn(r as u64);
            let mut frontier =
                if deterministic { GenerationFrontier::root_lumped(stream) } else { GenerationFrontier::root(stream) };
            let mut partial = 0.0;
            let mut out = Vec::with_capacity(depths.len());
            for depth in 0..=max_depth {
                if depths.contains(&depth) {
                    let cells = t_grid
                        .iter()
                        .map(|&t| {
                            let log_prod: f64 =
                                frontier.nodes.iter().map(|v| v.count * candidate_lt(v.weight * t).ln()).sum();
                            let bound = (-t * partial).exp();
                            let m = bound * log_prod.exp();
                            (m, m <= bound * (1.0 + 1e-12))
                        })
                        .collect();
                    out.push((depth, cells, frontier.w_theta(1.0)));
                }
                if depth < max_depth {
                    let step = expand_frontier(&frontier, model, trunc.prune_eps, trunc.node_budget)?;
                    partial += step.contribution;
                    frontier = step.next;
                }
            }
            out.sort_by_key(|(d, _, _)| *d);
            Ok(out.into_iter().map(|(_, c, w)| (c, w)).collect())
        })
        .collect();
    let runs: Vec<_> = per_run.into_iter().collect::<Result<_>>()?;

    let mut ordered: Vec<usize> = depths.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut rows = Vec::new();
    for (di, &depth) in ordered.iter().enumerate() {
        let mean_w1 = runs.iter().map(|r| r[di].1).sum::<f64>() / runs.len() as f64;
        for (ti, &t) in t_grid.iter().enumerate() {
            let ms: Vec<f64> = runs.iter().map(|r| r[di].0[ti].0).collect();
            let ok = runs.iter().filter(|r| r[di].0[ti].1).count();
            let (mean, stderr) = mean_se(&ms);
            let target = candidate_lt(t);
            let gap = mean - target;
            let allowance = t * allowance_rate * (1.0 + mean_w1);
            rows.push(MartingaleRow {
                depth,
                t,
                mean,
                stderr,
                target,
                gap,
                allowance,
                z: z_score(gap, allowance, stderr),
                pathwise_fraction: ok as f64 / runs.len() as f64,
                mean_w1,
            });
        }
    }
    let max_abs_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    let pathwise_all = rows.iter().all(|r| r.pathwise_fraction == 1.0);
    let verdict = if !pathwise_all || max_abs_z > 2.0 * Z_BOUND {
        Verdict::Fail
    } else if max_abs_z <= Z_BOUND {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(MartingaleTable { rows, reps, realizations, z_bound: Z_BOUND, max_abs_z, pathwise_all, verdict })
}

// ---- tails ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub threshold: f64,
    pub empirical: f64,
    /// Wilson interval at `Z_BOUND` standard deviations.
    pub ci: (f64, f64),
    pub predicted: f64,
    pub ratio: f64,
    pub ratio_ci: (f64, f64),
    pub expected_count: f64,
    pub low_count: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailTable {
    pub rows: Vec<TailRow>,
    pub n: usize,
    pub alpha: f64,
    pub h: f64,
    /// `φ` evaluated exactly (deterministic `W`) rather than empirically.
    pub exact_phi: bool,
}

impl TailTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,empirical,ci_low,ci_high,predicted,ratio,ratio_low,ratio_high,low_count")?;
        for r in &self.rows {
            let cols = [r.threshold, r.empirical, r.ci.0, r.ci.1, r.predicted, r.ratio, r.ratio_ci.0, r.ratio_ci.1];
            writeln!(out, "{},{}", cols.map(fmt17).join(","), r.low_count)?;
        }
        Ok(())
    }

    /// Pass when every row with enough expected exceedances has its ratio in `[lo, hi]`.
    pub fn verdict(&self, lo: f64, hi: f64) -> Verdict {
        let usable: Vec<_> = self.rows.iter().filter(|r| !r.low_count).collect();
        if usable.is_empty() {
            Verdict::Inconclusive
        } else if usable.iter().all(|r| (lo..=hi).contains(&r.ratio)) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `h^α / Γ(1−α) · (1 − φ(t^{−α}))` with `φ` the Laplace transform of `W`.
pub fn predicted_tail(alpha: f64, h: f64, t: f64, one_minus_phi: impl Fn(f64) -> f64) -> f64 {
    h.powf(alpha) / gamma(1.0 - alpha) * one_minus_phi(t.powf(-alpha))
}

/// `1 − φ(s)` for the empirical law of `w` (exact if all entries agree).
fn one_minus_phi(w: &[f64]) -> (bool, impl Fn(f64) -> f64 + '_) {
    let exact = w.windows(2).all(|p| p[0] == p[1]);
    (exact, move |s: f64| {
        if exact {
            -(-s * w[0]).exp_m1()
        } else {
            w.iter().map(|&x| -(-s * x).exp_m1()).sum::<f64>() / w.len() as f64
        }
    })
}

/// Threshold `t` at which the predicted survival equals `target`.
pub fn threshold_for(alpha: f64, h: f64, w: &[f64], target: f64) -> f64 {
    let (_, f) = one_minus_phi(w);
    let (mut lo, mut hi) = (0.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if predicted_tail(alpha, h, mid.exp(), &f) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub const TAIL_MIN_N: usize = 100_000;
pub const LOW_COUNT: f64 = 20.0;

/// Empirical survival of the solution against the predicted tail.
pub fn tail_ratio(spec: &SolutionSpec, rng: RngStream, n: usize, thresholds: &[f64]) -> Result<TailTable> {
    check_tail(spec, n)?;
    let sol = sample_solution(spec, rng, n)?;
    Ok(tail_table(spec, &sol.samples, &sol.w, thresholds))
}

/// As [`tail_ratio`], at the thresholds where the predicted survival equals each target.
pub fn tail_ratio_at_survival(spec: &SolutionSpec, rng: RngStream, n: usize, targets: &[f64]) -> Result<TailTable> {
    check_tail(spec, n)?;
    if targets.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return config("target survival probabilities must lie in (0, 1)");
    }
    let sol = sample_solution(spec, rng, n)?;
    let thresholds: Vec<f64> = targets.iter().map(|&p| threshold_for(spec.alpha, spec.h, &sol.w, p)).collect();
    Ok(tail_table(spec, &sol.samples, &sol.w, &thresholds))
}

fn check_tail(spec: &SolutionSpec, n: usize) -> Result<()> {
    if spec.h <= 0.0 {
        return Err(Error::Refused("tail_ratio needs h > 0: without the stable component there is no heavy tail".into()));
    }
    if !(spec.alpha < 1.0) {
        return config("tail_ratio needs alpha < 1");
    }
    if n < TAIL_MIN_N {
        return config(format!("tail_ratio needs n >= {TAIL_MIN_N}, got {n}"));
    }
    Ok(())
}

/// The tail table for given solution draws and their `W` values.
pub fn tail_table(spec: &SolutionSpec, samples: &[f64], w: &[f64], thresholds: &[f64]) -> TailTable {
    let n = samples.len();
    let (exact_phi, f) = one_minus_phi(w);
    let s = sorted(samples);
    let rows = thresholds
        .iter()
        .map(|&t| {
            let k = n - s.partition_point(|&x| x <= t);
            let empirical = k as f64 / n as f64;
            let ci = wilson(k, n, Z_BOUND);
            let predicted = predicted_tail(spec.alpha, spec.h, t, &f);
            let expected_count = predicted * n as f64;
            TailRow {
                threshold: t,
                empirical,
                ci,
                predicted,
                ratio: empirical / predicted,
                ratio_ci: (ci.0 / predicted, ci.1 / predicted),
                expected_count,
                low_count: expected_count < LOW_COUNT,
            }
        })
        .collect();
    TailTable { rows, n, alpha: spec.alpha, h: spec.h, exact_phi }
}
