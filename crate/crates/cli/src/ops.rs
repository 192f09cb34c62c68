//! The six operations. Each returns its payload files in memory; the caller
//! writes them next to the manifest.

use std::io::Write;

use serde::Serialize;
use serde_json::json;
use smoothlab::branching::TreeConfig;
use smoothlab::examples::oracle_for;
use smoothlab::output::{fmt17, samples_csv_string};
use smoothlab::solutions::{
    default_trunc, sample_endogenous_w, sample_positive_stable, sample_solution, sample_wstar, SolutionSpec, ALPHA_TOL,
};
use smoothlab::spectral::{
    check_conditions, divergence_probe, find_characteristic_exponent, spectral_profile, EvalMode, ExponentResult,
    ProbeConfig, DEFAULT_N_MC, Z_BOUND,
};
use smoothlab::verify::{
    empirical_lt, factorization_check, fixed_point_test, ks_one_sample, ks_two_sample, martingale_diagnostic,
    tail_ratio, tail_ratio_at_survival, verdict, TestOptions, Verdict, DEFAULT_LEVEL, DEFAULT_PERMUTATIONS,
    DEFAULT_T_GRID, PERMUTATION_MAX_N, TAIL_MIN_N,
};
use smoothlab::{BasicSequenceModel, Error, Result, RngStream};
use statrs::function::erf::erfc;

use crate::config::{Params, SampleKind, TestKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    /// Completed; there was nothing to pass or fail.
    Success,
    Verdict(Verdict),
    Refused(String),
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
    /// Some realization hit the node budget: outputs are incomplete.
    pub partial: bool,
}

impl Outcome {
    fn new(status: Status) -> Self {
        Self { status, files: Vec::new(), summary: Vec::new(), partial: false }
    }

    pub fn refused(reason: String) -> Self {
        let mut o = Self::new(Status::Refused(reason.clone()));
        o.summary.push(format!("refused: {reason}"));
        o
    }

    fn file(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.file(name, text);
    }

    fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    pub fn exit_code(&self) -> i32 {
        let base = match &self.status {
            Status::Success => 0,
            Status::Verdict(v) => v.exit_code(),
            Status::Refused(_) => 2,
        };
        if self.partial && base == 0 {
            2
        } else {
            base
        }
    }

    pub fn status_str(&self) -> &'static str {
        match &self.status {
            Status::Success => "success",
            Status::Verdict(Verdict::Pass) => "pass",
            Status::Verdict(Verdict::Fail) => "fail",
            Status::Verdict(Verdict::Inconclusive) => "inconclusive",
            Status::Refused(_) => "refused",
        }
    }
}

fn csv(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    buf
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, (v / n).sqrt())
}

fn trunc(model: &BasicSequenceModel, p: &Params) -> TreeConfig {
    let mut cfg = default_trunc(model);
    if let Some(d) = p.depth {
        cfg.max_depth = d;
    }
    if let Some(eps) = p.prune {
        cfg.prune_eps = eps;
    }
    if let Some(b) = p.budget {
        cfg.node_budget = b;
    }
    cfg
}

fn test_options(p: &Params) -> TestOptions {
    TestOptions {
        t_grid: p.t_grid.clone().unwrap_or_else(|| DEFAULT_T_GRID.to_vec()),
        level: p.level.unwrap_or(DEFAULT_LEVEL),
        z_bound: p.z_bound.unwrap_or(Z_BOUND),
        permutations: p.permutations.unwrap_or(DEFAULT_PERMUTATIONS),
        lhs_shift: 0.0,
    }
}

/// `alpha` as given, or the model's characteristic exponent when `h > 0`.
fn resolve_alpha(model: &BasicSequenceModel, p: &Params, rng: &RngStream) -> Result<f64> {
    if let Some(a) = p.alpha {
        return Ok(a);
    }
    if p.h.unwrap_or(0.0) == 0.0 {
        return Ok(1.0);
    }
    match find_characteristic_exponent(model, rng.spawn(u64::MAX - 1), ALPHA_TOL, DEFAULT_N_MC, EvalMode::Auto) {
        ExponentResult::Found { alpha, .. } => Ok(alpha),
        other => Err(Error::Refused(format!("h > 0 needs a characteristic exponent, found none: {other:?}"))),
    }
}

fn solution_spec(model: &BasicSequenceModel, p: &Params, rng: &RngStream) -> Result<SolutionSpec> {
    let h = p.h.unwrap_or(0.0);
    let t = trunc(model, p);
    let spec = if h == 0.0 {
        SolutionSpec::wstar(model.clone()).with_trunc(t)
    } else {
        SolutionSpec::new(model.clone(), resolve_alpha(model, p, rng)?, h, t)?
    };
    Ok(if p.allow_divergent.unwrap_or(false) { spec.allowing_divergence() } else { spec })
}

pub fn analyze(model: &BasicSequenceModel, p: &Params, rng: RngStream) -> Result<Outcome> {
    let n_mc = p.n_mc.unwrap_or(DEFAULT_N_MC);
    let mode = p.mode.unwrap_or(EvalMode::Auto);
    let tol = p.tol.unwrap_or(ALPHA_TOL);
    let report = check_conditions(model, rng.spawn(0), n_mc, mode);
    let auto = find_characteristic_exponent(model, rng.spawn(1), tol, n_mc, EvalMode::Auto);
    let mc = (mode == EvalMode::MonteCarlo).then(|| find_characteristic_exponent(model, rng.spawn(2), tol, n_mc, mode));
    let profile = spectral_profile(model, rng.spawn(3), n_mc, tol, mode);
    let mut probe_cfg = ProbeConfig { n_mc, mode, ..ProbeConfig::default() };
    if let Some(d) = p.probe_depth {
        probe_cfg.tree.max_depth = d;
    }
    if let Some(b) = p.budget {
        probe_cfg.tree.node_budget = b;
    }
    let probe = divergence_probe(model, rng.spawn(4), p.reps.unwrap_or(200), &probe_cfg);

    let mut o = Outcome::new(Status::Success);
    o.partial = probe.growth.as_ref().is_some_and(|g| g.budget_exceeded > 0);
    o.line(format!("model: {}", report.model_kind));
    o.line(format!("regime: {}", report.regime.as_str()));
    o.line(format!("characteristic exponent: {}", describe_exponent(&auto)));
    if let Some(mc) = &mc {
        o.line(format!("characteristic exponent (Monte Carlo, {n_mc} draws): {}", describe_exponent(mc)));
    }
    o.line(format!("divergence probe: {:?} (certified: {}) {}", probe.verdict, probe.certified, probe.justification));
    if let Some(g) = &probe.growth {
        o.line(format!(
            "growth over {} realizations: log slope {:.6} ± {:.2e}, linear slope {:.6} ± {:.2e}",
            g.reps, g.log_slope, g.log_slope_stderr, g.linear_slope, g.linear_slope_stderr
        ));
    }
    o.line(format!("m log-convex on grid: {}", profile.log_convex_on_grid()));
    let mut conditions = report.to_json();
    conditions.push('\n');
    o.file("conditions.json", conditions);
    o.json("exponent.json", &json!({ "auto": auto, "monte_carlo": mc }));
    o.file("spectral.csv", csv(|b| profile.write_csv(b)));
    o.json("divergence.json", &probe);
    Ok(o)
}

fn describe_exponent(e: &ExponentResult) -> String {
    match e {
        ExponentResult::Found { alpha, interval, exact, .. } => {
            format!("alpha = {alpha:.10} in [{:.10}, {:.10}] ({})", interval.0, interval.1, if *exact { "exact" } else { "Monte Carlo" })
        }
        ExponentResult::Absent => "absent".into(),
        ExponentResult::Inconclusive { estimate, interval } => {
            format!("inconclusive, estimate {estimate:.6} in [{:.6}, {:.6}]", interval.0, interval.1)
        }
    }
}

pub fn sample(model: &BasicSequenceModel, p: &Params, rng: RngStream, seed: u64) -> Result<Outcome> {
    let n = p.n.unwrap_or(10_000);
    let mut o = Outcome::new(Status::Success);
    match p.kind.unwrap_or(SampleKind::Solution) {
        SampleKind::Solution => {
            let spec = solution_spec(model, p, &rng)?;
            let sol = sample_solution(&spec, rng, n)?;
            o.partial = sol.certificate.budget_exceeded > 0;
            let (m, se) = mean_se(&sol.samples);
            o.line(format!("{n} draws of the solution with h = {}, alpha = {}", spec.h, spec.alpha));
            o.line(format!("sample mean {m:.6} ± {se:.2e}"));
            o.line(format!("truncation depth {}: {:?}", sol.certificate.depth, sol.certificate.kind));
            o.file("samples.csv", samples_csv_string(&sol.samples));
            if spec.h > 0.0 {
                o.file(
                    "components.csv",
                    csv(|b| {
                        writeln!(b, "wstar,w")?;
                        for (a, w) in sol.wstar.iter().zip(&sol.w) {
                            writeln!(b, "{},{}", fmt17(*a), fmt17(*w))?;
                        }
                        Ok(())
                    }),
                );
            }
            o.json(
                "samples.json",
                &json!({
                    "kind": "solution", "model_hash": model.hash(), "seed": seed, "sample_count": n,
                    "alpha": spec.alpha, "h": spec.h, "truncation": spec.trunc, "certificate": sol.certificate,
                }),
            );
        }
        SampleKind::Endogenous => {
            let alpha = match p.alpha {
                Some(a) => a,
                None => resolve_alpha(model, &Params { h: Some(1.0), ..p.clone() }, &rng)?,
            };
            let t = trunc(model, p);
            let depth = t.max_depth;
            let spec = SolutionSpec::new(model.clone(), alpha, 1.0, t)?;
            let w = sample_endogenous_w(&spec, rng, n, depth)?;
            o.line(format!("{n} draws of W_{depth} at alpha = {alpha}"));
            for (k, (m, se)) in w.mean_by_depth.iter().enumerate() {
                o.line(format!("  mean W_{k} = {m:.6} ± {se:.2e}"));
            }
            o.file("samples.csv", samples_csv_string(&w.samples));
            o.json(
                "samples.json",
                &json!({
                    "kind": "endogenous", "model_hash": model.hash(), "seed": seed, "sample_count": n, "alpha": alpha,
                    "depth": depth, "mean_by_depth": w.mean_by_depth, "deltas": w.deltas, "a4_holds": w.a4_holds,
                }),
            );
        }
        SampleKind::Stable => {
            let alpha = p.alpha.ok_or_else(|| Error::Config("kind = stable needs alpha".into()))?;
            let ys = sample_positive_stable(alpha, rng, n)?;
            o.line(format!("{n} positive stable draws with index {alpha}"));
            o.file("samples.csv", samples_csv_string(&ys));
            o.json("samples.json", &json!({ "kind": "stable", "seed": seed, "sample_count": n, "alpha": alpha }));
        }
    }
    Ok(o)
}

pub fn verify(model: &BasicSequenceModel, p: &Params, rng: RngStream) -> Result<Outcome> {
    let spec = solution_spec(model, p, &rng)?;
    let opts = test_options(p);
    let n = p.n.unwrap_or(10_000);
    let test = p.test.unwrap_or(TestKind::FixedPoint);
    let report = match test {
        TestKind::FixedPoint => fixed_point_test(&spec, rng, n, &opts)?,
        TestKind::Factorization => factorization_check(&spec, rng, n, &opts)?,
    };
    let mut o = Outcome::new(Status::Verdict(report.verdict));
    o.partial = report.certificate.as_ref().is_some_and(|c| c.budget_exceeded > 0);
    o.line(format!("{} with h = {}, alpha = {}, n = {n}", report.test, spec.h, spec.alpha));
    if let Some(ks) = &report.ks {
        o.line(format!("KS D = {:.6}, p = {:.4} (shift {:.3e})", ks.statistic, ks.p_value, ks.shift));
    }
    o.line(format!("max |z| = {:.3} (bound {})", report.max_abs_z, report.z_bound));
    o.line(format!("verdict: {:?}", report.verdict));
    let mut text = report.to_json();
    text.push('\n');
    o.file("verify.json", text);
    o.file("verify.csv", csv(|b| report.write_csv(b)));
    Ok(o)
}

/// Needs deterministic weights, where `W*` and `W` are constants and the
/// candidate `ψ(t) = exp(−t W* − (h t)^α W)` is exact up to truncation.
pub fn martingale(model: &BasicSequenceModel, p: &Params, rng: RngStream) -> Result<Outcome> {
    if !model.is_deterministic() {
        return Err(Error::Refused(
            "martingale needs a closed-form candidate Laplace transform, available for deterministic weights only".into(),
        ));
    }
    let spec = solution_spec(model, p, &rng)?;
    let sol = sample_solution(&spec, rng, 1)?;
    let (wstar, w) = (sol.wstar[0], sol.w.first().copied().unwrap_or(0.0));
    let (alpha, h) = (spec.alpha, spec.h);
    let psi = move |t: f64| (-t * wstar - (h * t).powf(alpha) * w).exp();
    let b = sol.certificate.bound().map_or(0.0, |(_, b)| b);
    let depths = p.depths.clone().unwrap_or_else(|| (0..=4).collect());
    let t_grid = p.t_grid.clone().unwrap_or_else(|| vec![0.1, 0.5, 1.0, 2.0]);
    let reps = p.reps.unwrap_or(10_000);
    let tab = martingale_diagnostic(model, &psi, &depths, &t_grid, reps, rng, &spec.trunc, b)?;
    let mut o = Outcome::new(Status::Verdict(tab.verdict));
    o.line(format!("candidate psi(t) = exp(-{wstar} t - ({h} t)^{alpha} * {w})"));
    o.line(format!("{reps} replications, {} distinct realizations", tab.realizations));
    o.line(format!("max |z| = {:.3}, pathwise bound on all realizations: {}", tab.max_abs_z, tab.pathwise_all));
    o.line(format!("verdict: {:?}", tab.verdict));
    o.file("martingale.csv", csv(|b| tab.write_csv(b)));
    o.json("martingale.json", &tab);
    Ok(o)
}

pub fn tail(model: &BasicSequenceModel, p: &Params, rng: RngStream) -> Result<Outcome> {
    let spec = solution_spec(model, p, &rng)?;
    let n = p.n.unwrap_or(TAIL_MIN_N);
    let tab = match (&p.thresholds, &p.target_survival) {
        (Some(_), Some(_)) => return Err(Error::Config("give thresholds or target_survival, not both".into())),
        (Some(t), None) => tail_ratio(&spec, rng, n, t)?,
        (None, t) => tail_ratio_at_survival(&spec, rng, n, t.as_deref().unwrap_or(&[1e-2, 1e-3]))?,
    };
    let (lo, hi) = p.ratio_band.unwrap_or((0.8, 1.2));
    let v = tab.verdict(lo, hi);
    let mut o = Outcome::new(Status::Verdict(v));
    o.line(format!("{n} draws, alpha = {}, h = {}, ratio band [{lo}, {hi}]", tab.alpha, tab.h));
    for r in &tab.rows {
        o.line(format!(
            "  t = {:.6e}: P(X > t) = {:.4e}, predicted {:.4e}, ratio {:.4}{}",
            r.threshold,
            r.empirical,
            r.predicted,
            r.ratio,
            if r.low_count { " (low count)" } else { "" }
        ));
    }
    o.line(format!("verdict: {v:?}"));
    o.file("tail.csv", csv(|b| tab.write_csv(b)));
    o.json("tail.json", &json!({ "table": tab, "ratio_band": [lo, hi], "verdict": v }));
    Ok(o)
}

pub fn oracle_compare(model: &BasicSequenceModel, p: &Params, rng: RngStream) -> Result<Outcome> {
    if p.kind == Some(SampleKind::Stable) {
        return stable_compare(p, rng);
    }
    let oracle = oracle_for(model).ok_or_else(|| Error::Refused(format!("no independent oracle for {} models", model.sequence.name())))?;
    let level = p.level.unwrap_or(DEFAULT_LEVEL);
    let z_bound = p.z_bound.unwrap_or(Z_BOUND);
    let n = p.n.unwrap_or(10_000);
    let oracle_n = p.oracle_n.unwrap_or(n.min(PERMUTATION_MAX_N)).min(n);
    let spec = SolutionSpec::wstar(model.clone()).with_trunc(trunc(model, p));
    let engine = sample_wstar(&spec, rng.spawn(0), n)?;
    let reference = oracle.samples(rng.spawn(1), oracle_n)?;
    let (mean, se) = mean_se(&engine.samples);
    let z = oracle.exact_mean.map(|mu| if se > 0.0 { (mean - mu).abs() / se } else if mean == mu { 0.0 } else { f64::INFINITY });
    let perms = (oracle_n <= PERMUTATION_MAX_N).then(|| (p.permutations.unwrap_or(DEFAULT_PERMUTATIONS), rng.spawn(2)));
    let ks = ks_two_sample(&engine.samples[..oracle_n], &reference, 0.0, perms);
    let v = verdict(Some(&ks), z.unwrap_or(0.0), level, z_bound);

    let mut o = Outcome::new(Status::Verdict(v));
    o.partial = engine.certificate.budget_exceeded > 0;
    o.line(format!("oracle: {}", oracle.description));
    match oracle.exact_mean {
        Some(mu) => o.line(format!("engine mean {mean:.6} ± {se:.2e} over {n} draws, exact {mu:.6}, |z| = {:.3}", z.unwrap_or(0.0))),
        None => o.line(format!("engine mean {mean:.6} ± {se:.2e} over {n} draws (no closed-form mean)")),
    }
    o.line(format!("KS {oracle_n} vs {oracle_n}: D = {:.6}, p = {:.4}", ks.statistic, ks.p_value));
    o.line(format!("verdict: {v:?}"));
    o.file("engine.csv", samples_csv_string(&engine.samples));
    o.file("oracle.csv", samples_csv_string(&reference));
    o.json(
        "oracle.json",
        &json!({
            "oracle": oracle.description, "exact_mean": oracle.exact_mean, "engine_mean": mean, "engine_stderr": se,
            "mean_z": z, "ks": ks, "level": level, "z_bound": z_bound, "verdict": v, "certificate": engine.certificate,
        }),
    );
    Ok(o)
}

/// Stable draws against `E e^{−tY} = e^{−t^α}` and, for `α = 1/2`, the
/// closed-form CDF `erfc(1 / (2√x))`.
fn stable_compare(p: &Params, rng: RngStream) -> Result<Outcome> {
    let alpha = p.alpha.ok_or_else(|| Error::Config("kind = stable needs alpha".into()))?;
    let level = p.level.unwrap_or(DEFAULT_LEVEL);
    let z_bound = p.z_bound.unwrap_or(Z_BOUND);
    let n = p.n.unwrap_or(100_000);
    let t_grid = p.t_grid.clone().unwrap_or_else(|| vec![1.0]);
    let ys = sample_positive_stable(alpha, rng, n)?;
    let rows: Vec<_> = empirical_lt(&ys, &t_grid)
        .into_iter()
        .map(|pt| {
            let target = (-pt.t.powf(alpha)).exp();
            let gap = pt.value - target;
            let z = if pt.stderr > 0.0 { gap.abs() / pt.stderr } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
            json!({ "t": pt.t, "mean": pt.value, "stderr": pt.stderr, "target": target, "z": z })
        })
        .collect();
    let max_z = rows.iter().filter_map(|r| r["z"].as_f64()).fold(0.0, f64::max);
    let ks = (alpha == 0.5).then(|| ks_one_sample(&ys, |x| if x <= 0.0 { 0.0 } else { erfc(1.0 / (2.0 * x.sqrt())) }));
    let ks_pass = ks.is_none_or(|(_, p)| p >= level);
    let ks_fail = ks.is_some_and(|(_, p)| p < level / 100.0);
    let v = if ks_pass && max_z <= z_bound {
        Verdict::Pass
    } else if ks_fail || max_z > 2.0 * z_bound {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    let mut o = Outcome::new(Status::Verdict(v));
    o.line(format!("{n} positive stable draws with index {alpha}"));
    o.line(format!("max |z| of the Laplace transform on {t_grid:?}: {max_z:.3}"));
    if let Some((d, pv)) = ks {
        o.line(format!("KS against erfc(1/(2 sqrt x)): D = {d:.6}, p = {pv:.4}"));
    }
    o.line(format!("verdict: {v:?}"));
    o.file("engine.csv", samples_csv_string(&ys));
    o.json(
        "oracle.json",
        &json!({
            "oracle": "closed-form stable Laplace transform", "alpha": alpha, "rows": rows, "max_abs_z": max_z,
            "ks": ks.map(|(d, p)| json!({ "statistic": d, "p_value": p })), "level": level, "z_bound": z_bound, "verdict": v,
        }),
    );
    Ok(o)
}
