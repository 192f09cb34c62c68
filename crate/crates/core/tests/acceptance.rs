//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary lines are always
//! printed. Reference values are computed here from closed forms and direct
//! simulation, never from the quantities under test.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::ThreadPoolBuilder;
use smoothlab::branching::TreeConfig;
use smoothlab::examples::{gw_oracle_samples, mg1_busy_period_samples, preset_model};
use smoothlab::output::samples_csv_string;
use smoothlab::solutions::{sample_positive_stable, sample_solution, sample_wstar, SolutionSpec};
use smoothlab::spectral::{divergence_probe, find_characteristic_exponent, EvalMode, ExponentResult, ProbeConfig, Verdict};
use smoothlab::verify::{
    factorization_check, fixed_point_test, ks_one_sample, ks_two_sample, martingale_diagnostic, TestOptions,
    Verdict as TestVerdict, DEFAULT_T_GRID,
};
use smoothlab::{Law, Pmf, RngStream};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

const SEED: u64 = 20_240_601;
const Z: f64 = 4.0;
const LEVEL: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn check_mean_and_ks(samples: &[f64], target: f64, engine_small: &[f64], oracle: &[f64]) -> Outcome {
    let (m, se) = mean_se(samples);
    let ks = ks_two_sample(engine_small, oracle, 0.0, Some((200, RngStream::new(SEED).spawn(99))));
    let pass = (m - target).abs() <= Z * se && ks.p_value >= LEVEL;
    outcome(pass, format!("mean {m:.4} (target {target}, 4se {:.4}), KS p {:.3}", Z * se, ks.p_value))
}

fn gw_uniqueness() -> Outcome {
    let pmf = Pmf::binomial(2, 0.4).unwrap();
    let model = preset_model("gw-binomial").unwrap();
    let spec = SolutionSpec::wstar(model);
    let big = sample_wstar(&spec, RngStream::new(SEED), 100_000).unwrap().samples;
    let small = sample_wstar(&spec, RngStream::new(SEED + 1), 10_000).unwrap().samples;
    let oracle = gw_oracle_samples(&pmf, RngStream::new(SEED + 2), 10_000).unwrap();
    check_mean_and_ks(&big, 1.0 / (1.0 - 2.0 * 0.4), &small, &oracle)
}

fn mg1_busy_period() -> Outcome {
    let (lambda, mu) = (0.5, 1.0);
    let spec = SolutionSpec::wstar(preset_model("mg1-exp").unwrap());
    let big = sample_wstar(&spec, RngStream::new(SEED), 100_000).unwrap().samples;
    let small = sample_wstar(&spec, RngStream::new(SEED + 1), 10_000).unwrap().samples;
    let oracle = mg1_busy_period_samples(lambda, &Law::exponential(1.0 / mu), RngStream::new(SEED + 2), 10_000).unwrap();
    check_mean_and_ks(&big, mu / (1.0 - lambda * mu), &small, &oracle)
}

fn spectral_exactness() -> Outcome {
    let model = preset_model("det-quarter").unwrap();
    // 2 · 4^{-α} = 1.
    let alpha = 2f64.ln() / 4f64.ln();
    let exact = find_characteristic_exponent(&model, RngStream::new(SEED), 1e-6, 100_000, EvalMode::Auto);
    let mc = find_characteristic_exponent(&model, RngStream::new(SEED), 1e-6, 100_000, EvalMode::MonteCarlo);
    let exact_ok = exact.alpha().is_some_and(|a| (a - alpha).abs() <= 1e-6);
    let mc_ok = match &mc {
        ExponentResult::Found { interval, .. } | ExponentResult::Inconclusive { interval, .. } => {
            interval.0 <= alpha && alpha <= interval.1
        }
        ExponentResult::Absent => false,
    };
    outcome(exact_ok && mc_ok, format!("exact {:?}, MC {:?}", exact.alpha(), mc))
}

fn stable_sampler() -> Outcome {
    let ys = sample_positive_stable(0.5, RngStream::new(SEED), 100_000).unwrap();
    let (_, p) = ks_one_sample(&ys, |x| erfc(1.0 / (2.0 * x.sqrt())));
    let mut detail = format!("alpha 0.5 KS p {p:.3}");
    let mut pass = p >= LEVEL;
    for (i, a) in [0.3, 0.7].into_iter().enumerate() {
        let ys = sample_positive_stable(a, RngStream::new(SEED + 1 + i as u64), 100_000).unwrap();
        let lt: Vec<f64> = ys.iter().map(|y| (-y).exp()).collect();
        let (m, se) = mean_se(&lt);
        let z = (m - (-1f64).exp()).abs() / se;
        pass &= z <= Z;
        detail += &format!(", alpha {a} |z| {z:.2}");
    }
    outcome(pass, detail)
}

fn quarter_spec(h: f64) -> SolutionSpec {
    SolutionSpec::new(preset_model("det-quarter").unwrap(), 0.5, h, TreeConfig::depth(30).with_prune(0.0)).unwrap()
}

fn family_is_fixed() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, h) in [0.0, 1.0, 3.0].into_iter().enumerate() {
        let r = fixed_point_test(&quarter_spec(h), RngStream::new(SEED + i as u64), 100_000, &TestOptions::default()).unwrap();
        let ks = r.ks.as_ref().unwrap();
        let ok = ks.p_value >= LEVEL && r.max_abs_z <= Z;
        pass &= ok && r.verdict == TestVerdict::Pass;
        parts.push(format!("h={h}: KS p {:.3}, max|z| {:.2}", ks.p_value, r.max_abs_z));
    }
    outcome(pass, parts.join("; "))
}

fn martingale_constancy() -> Outcome {
    let model = preset_model("det-quarter").unwrap();
    let depth = 30;
    let psi = move |t: f64| (-2.0 * (1.0 - 2f64.powi(-depth)) * t - t.sqrt()).exp();
    // Distance of ψ from an exact fixed point, from the depth-30 certificate.
    let spec = quarter_spec(0.0);
    let cert = sample_wstar(&spec, RngStream::new(SEED), 1).unwrap().certificate;
    let (_, b) = cert.bound().unwrap();
    let tab = martingale_diagnostic(
        &model,
        &psi,
        &[0, 1, 2, 3, 4],
        &[0.1, 0.5, 1.0, 2.0],
        100_000,
        RngStream::new(SEED),
        &TreeConfig::default(),
        b,
    )
    .unwrap();
    let pass = tab.max_abs_z <= Z && tab.pathwise_all;
    let max_gap = tab.rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    outcome(pass, format!("max|z| {:.2}, max gap {max_gap:.2e}, pathwise bound on all realizations: {}", tab.max_abs_z, tab.pathwise_all))
}

fn factorization() -> Outcome {
    let spec = quarter_spec(1.0);
    let n = 100_000;
    let sol = sample_solution(&spec, RngStream::new(SEED), n).unwrap();
    let wstar = 2.0 * (1.0 - 2f64.powi(-30));
    let mut worst: f64 = 0.0;
    for t in DEFAULT_T_GRID {
        let lt: Vec<f64> = sol.samples.iter().map(|x| (-t * x).exp()).collect();
        let (m, se) = mean_se(&lt);
        let target = (-wstar * t).exp() * (-t.sqrt()).exp();
        worst = worst.max((m - target).abs() / se);
    }
    let check = factorization_check(&spec, RngStream::new(SEED), n, &TestOptions::default()).unwrap();
    let pass = worst <= Z && check.verdict == TestVerdict::Pass;
    outcome(pass, format!("closed-form max|z| {worst:.2}, paired-check max|z| {:.2}", check.max_abs_z))
}

fn tail_asymptotics() -> Outcome {
    let spec = quarter_spec(1.0);
    let n = 1_000_000;
    let sol = sample_solution(&spec, RngStream::new(SEED), n).unwrap();
    // Predicted survival of the stable(1/2) tail: t^{-1/2} / Γ(1/2) = 1e-3.
    let g = gamma(0.5);
    let t = (1.0 / (1e-3 * g)).powi(2);
    let exceed = sol.samples.iter().filter(|&&x| x > t).count() as f64 / n as f64;
    let ratio = exceed / (t.powf(-0.5) / g);
    outcome((0.8..=1.2).contains(&ratio), format!("t = {t:.4e}, P(X>t) = {exceed:.4e}, ratio {ratio:.4}"))
}

fn nonexistence() -> Outcome {
    let cfg = ProbeConfig::default();
    let double = divergence_probe(&preset_model("det-double").unwrap(), RngStream::new(SEED), 10, &cfg);
    let double_ok = double.verdict == Verdict::InfiniteLikely
        && double.certified
        && double.justification.contains("A3a")
        && (double.inf_m.value - 2.0).abs() < 1e-9;
    let half = divergence_probe(&preset_model("det-half").unwrap(), RngStream::new(SEED), 1000, &cfg);
    let slope = half.growth.as_ref().map_or(f64::NAN, |g| g.linear_slope);
    let half_ok = half.verdict == Verdict::InfiniteLikely && half.certified && (slope - 1.0).abs() <= 0.05;
    outcome(
        double_ok && half_ok,
        format!("T=(2,2): {:?}, min m {:.6}; T=(1/2,1/2): {:?}, slope {slope:.6}", double.verdict, double.inf_m.value, half.verdict),
    )
}

fn on_threads<T: Send>(k: usize, f: impl FnOnce() -> T + Send) -> T {
    ThreadPoolBuilder::new().num_threads(k).build().unwrap().install(f)
}

fn reproducibility() -> Outcome {
    let gw = SolutionSpec::wstar(preset_model("gw-binomial").unwrap());
    let quarter = quarter_spec(1.0);
    let run = |k| {
        on_threads(k, || {
            let a = samples_csv_string(&sample_wstar(&gw, RngStream::new(SEED), 100_000).unwrap().samples);
            let b = samples_csv_string(&sample_solution(&quarter, RngStream::new(SEED), 100_000).unwrap().samples);
            (a, b)
        })
    };
    let (one, eight) = (run(1), run(8));
    let pass = one.0 == eight.0 && one.1 == eight.1;
    outcome(pass, format!("criterion 1 CSV identical: {}, criterion 5 CSV identical: {}", one.0 == eight.0, one.1 == eight.1))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        ("Galton-Watson uniqueness", gw_uniqueness, Duration::from_secs(120)),
        ("M/G/1 busy period", mg1_busy_period, Duration::from_secs(120)),
        ("spectral exactness", spectral_exactness, Duration::from_secs(30)),
        ("stable sampler", stable_sampler, Duration::from_secs(30)),
        ("solution family is fixed", family_is_fixed, Duration::from_secs(300)),
        ("martingale mean constancy", martingale_constancy, Duration::from_secs(180)),
        ("factorization", factorization, Duration::from_secs(120)),
        ("tail asymptotics", tail_asymptotics, Duration::from_secs(300)),
        ("nonexistence", nonexistence, Duration::from_secs(60)),
        ("reproducibility", reproducibility, Duration::from_secs(600)),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= *budget;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {:<28} {}  [{:.1}s / {}s]  {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
