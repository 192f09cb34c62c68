//! `smoothlab`: batch experiments on the smoothing transform.
//!
//! Exit status: 0 pass or success, 1 verification failure, 2 inconclusive,
//! refusal or exceeded budget, 3 configuration error, 4 I/O failure.

mod config;
mod ops;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use smoothlab::spectral::EvalMode;
use smoothlab::{Error, RngStream};

use config::{load_config, load_model, ExperimentConfig, ModelSpec, Operation, Params, SampleKind, SchemaError, TestKind};
use ops::Outcome;

const EXIT_SCHEMA: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "smoothlab", version, about = "Fixed points of the smoothing transform X = C + sum T_i X_i")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Conditions, regime, characteristic exponent and divergence probe.
    Analyze(Flags),
    /// Draw W*, the solution family, W or stable variates.
    Sample(Flags),
    /// Fixed-point or factorization test of the solution family.
    Verify(Flags),
    /// Mean constancy of the multiplicative martingale.
    Martingale(Flags),
    /// Empirical against predicted tail of a solution.
    Tail(Flags),
    /// Tree engine against an independent simulator or closed form.
    OracleCompare(Flags),
    /// Run whatever operation the --config file names.
    Run(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Model JSON file (the `inline` model form).
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    /// Preset parameter override, `key=value`; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not change any output.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    prune: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    z_bound: Option<f64>,
    #[arg(long)]
    permutations: Option<usize>,
    /// `auto` or `monte_carlo`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    target_survival: Option<Vec<f64>>,
    #[arg(long)]
    oracle_n: Option<usize>,
    /// `solution`, `endogenous` or `stable`.
    #[arg(long)]
    kind: Option<String>,
    /// `fixed_point` or `factorization`.
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    allow_divergent: bool,
    #[arg(long)]
    probe_depth: Option<usize>,
}

fn enum_flag<T: serde::de::DeserializeOwned>(flag: &str, value: &Option<String>) -> Result<Option<T>, SchemaError> {
    value
        .as_ref()
        .map(|v| {
            serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| SchemaError::at("command line", 0, 0, format!("--{flag}: unrecognized value `{v}`")))
        })
        .transpose()
}

impl Flags {
    fn params(&self) -> Result<Params, SchemaError> {
        Ok(Params {
            n: self.n,
            alpha: self.alpha,
            h: self.h,
            depth: self.depth,
            prune: self.prune,
            budget: self.budget,
            t_grid: self.t_grid.clone(),
            level: self.level,
            z_bound: self.z_bound,
            permutations: self.permutations,
            mode: enum_flag::<EvalMode>("mode", &self.mode)?,
            n_mc: self.n_mc,
            tol: self.tol,
            reps: self.reps,
            depths: self.depths.clone(),
            thresholds: self.thresholds.clone(),
            target_survival: self.target_survival.clone(),
            ratio_band: None,
            oracle_n: self.oracle_n,
            kind: enum_flag::<SampleKind>("kind", &self.kind)?,
            test: enum_flag::<TestKind>("test", &self.test)?,
            allow_divergent: self.allow_divergent.then_some(true),
            probe_depth: self.probe_depth,
        })
    }

    fn overrides(&self) -> Result<BTreeMap<String, f64>, SchemaError> {
        self.params
            .iter()
            .map(|kv| {
                let bad = || SchemaError::at("command line", 0, 0, format!("--param expects key=number, got `{kv}`"));
                let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                Ok((k.trim().to_string(), v.trim().parse::<f64>().map_err(|_| bad())?))
            })
            .collect()
    }
}

/// The config file (if any) with command-line flags laid over it.
fn resolve(op: Option<Operation>, flags: &Flags) -> Result<ExperimentConfig, SchemaError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let cfg = load_config(path)?;
            if let Some(op) = op.filter(|&op| op != cfg.operation) {
                return Err(SchemaError::at(
                    &path.display().to_string(),
                    1,
                    1,
                    format!("config operation is `{}` but the command is `{}`", cfg.operation.as_str(), op.as_str()),
                ));
            }
            cfg
        }
        None => {
            let Some(operation) = op else {
                return Err(SchemaError::at("command line", 0, 0, "`run` needs --config"));
            };
            ExperimentConfig {
                schema: config::SCHEMA_VERSION,
                operation,
                seed: 1,
                model: ModelSpec { preset: None, overrides: BTreeMap::new(), inline: None },
                params: Params::default(),
                out: None,
            }
        }
    };
    if let Some(name) = &flags.preset {
        cfg.model = ModelSpec::preset(name);
    }
    if let Some(path) = &flags.model {
        cfg.model = ModelSpec { preset: None, overrides: BTreeMap::new(), inline: Some(load_model(path)?) };
    }
    let overrides = flags.overrides()?;
    if !overrides.is_empty() {
        if cfg.model.preset.is_none() {
            return Err(SchemaError::at("command line", 0, 0, "--param applies to presets only"));
        }
        cfg.model.overrides.extend(overrides);
    }
    if cfg.model.preset.is_none() && cfg.model.inline.is_none() {
        return Err(SchemaError::at("command line", 0, 0, "no model: give --preset, --model or --config"));
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.out = Some(out.clone());
    }
    cfg.params.overlay(flags.params()?);
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let model = cfg.model.build()?;
    let rng = RngStream::new(cfg.seed);
    let p = &cfg.params;
    let run = match cfg.operation {
        Operation::Analyze => ops::analyze(&model, p, rng),
        Operation::Sample => ops::sample(&model, p, rng, cfg.seed),
        Operation::Verify => ops::verify(&model, p, rng),
        Operation::Martingale => ops::martingale(&model, p, rng),
        Operation::Tail => ops::tail(&model, p, rng),
        Operation::OracleCompare => ops::oracle_compare(&model, p, rng),
    };
    match run {
        Err(Error::Refused(why)) => Ok(Outcome::refused(why)),
        Err(e @ Error::Budget { .. }) => {
            let mut o = Outcome::refused(e.to_string());
            o.partial = true;
            Ok(o)
        }
        other => other,
    }
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome, threads: usize, wall: f64) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in &outcome.files {
        fs::write(dir.join(name), bytes)?;
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let model = cfg.model.build().ok();
    let model_hash = model.as_ref().map(|m| m.hash()).unwrap_or_default();
    let manifest = json!({
        "schema": config::SCHEMA_VERSION,
        "tool": "smoothlab",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": smoothlab::VERSION,
        "operation": cfg.operation.as_str(),
        "config_hash": cfg.hash(),
        "model_hash": model_hash,
        "model": model,
        "seed": cfg.seed,
        "threads": threads,
        "status": outcome.status_str(),
        "exit_code": outcome.exit_code(),
        "partial": outcome.partial,
        "outputs": outcome.files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "config": cfg,
        "finished_unix": started,
        "wall_time_seconds": wall,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest") + "\n")?;
    let mut summary = format!("smoothlab {} (seed {}, config {})\n", cfg.operation.as_str(), cfg.seed, &cfg.hash()[..12]);
    for line in &outcome.summary {
        summary.push_str(line);
        summary.push('\n');
    }
    if outcome.partial {
        summary.push_str("PARTIAL: node budget exceeded; outputs are incomplete\n");
    }
    summary.push_str(&format!("status: {} (exit {})\n", outcome.status_str(), outcome.exit_code()));
    fs::write(dir.join("summary.txt"), summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_SCHEMA } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (op, flags) = match cli.command {
        Command::Analyze(f) => (Some(Operation::Analyze), f),
        Command::Sample(f) => (Some(Operation::Sample), f),
        Command::Verify(f) => (Some(Operation::Verify), f),
        Command::Martingale(f) => (Some(Operation::Martingale), f),
        Command::Tail(f) => (Some(Operation::Tail), f),
        Command::OracleCompare(f) => (Some(Operation::OracleCompare), f),
        Command::Run(f) => (None, f),
    };
    let cfg = match resolve(op, &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    if let Some(k) = flags.threads.filter(|&k| k > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("cannot start {k} threads: {e}");
            return ExitCode::from(EXIT_IO);
        }
    }
    let threads = rayon::current_num_threads();
    let start = Instant::now();
    let outcome = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("smoothlab-out"));
    if let Err(e) = write_outputs(&dir, &cfg, &outcome, threads, wall) {
        eprintln!("writing {}: {e}", dir.display());
        return ExitCode::from(EXIT_IO);
    }
    if let ops::Status::Refused(why) = &outcome.status {
        eprintln!("refused: {why}");
    } else {
        for line in &outcome.summary {
            println!("{line}");
        }
    }
    ExitCode::from(outcome.exit_code() as u8)
}
