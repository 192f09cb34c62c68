use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn smoothlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoothlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn analyze_classifies_galton_watson_as_subcritical() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlab(&["analyze", "--preset", "gw-binomial", "--seed", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(dir.path().join("conditions.json"))["regime"], "subcritical_unique");
    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_seconds"].is_number());
    assert!(fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("subcritical_unique"));
    assert!(fs::read_to_string(dir.path().join("spectral.csv")).unwrap().starts_with("theta,m,stderr,finite\n"));
}

#[test]
fn verify_passes_on_the_quarter_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlab(&["verify", "--preset", "det-quarter", "--h", "1.0", "--alpha", "0.5", "--n", "100000", "--seed", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(dir.path().join("verify.json"));
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["n_lhs"], 100000);
}

#[test]
fn sampling_a_divergent_model_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlab(&["sample", "--preset", "det-double", "--n", "10", "--seed", "1"], dir.path());
    assert_eq!(code(&o), 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("A3a fails"), "{stderr}");
    assert_eq!(json(dir.path().join("manifest.json"))["status"], "refused");
    assert!(!dir.path().join("samples.csv").exists());
}

#[test]
fn thread_count_does_not_change_samples() {
    for name in ["c10-gw-samples", "c10-quarter-samples"] {
        let cfg = configs_dir().join(format!("{name}.json"));
        let cfg = cfg.to_str().unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(code(&smoothlab(&["run", "--config", cfg, "--threads", "1"], a.path())), 0);
        assert_eq!(code(&smoothlab(&["run", "--config", cfg, "--threads", "8"], b.path())), 0);
        let read = |d: &Path| fs::read(d.join("samples.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name}");
        assert_eq!(json(a.path().join("manifest.json"))["threads"], 1);
    }
}

#[test]
fn repeated_runs_give_identical_payloads() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["oracle-compare", "--preset", "mg1-exp", "--n", "2000", "--seed", "9"];
    assert_eq!(code(&smoothlab(&args, a.path())), code(&smoothlab(&args, b.path())));
    for file in ["engine.csv", "oracle.csv", "oracle.json", "summary.txt"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let (ma, mb) = (json(a.path().join("manifest.json")), json(b.path().join("manifest.json")));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn csv_floats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&smoothlab(&["sample", "--preset", "mg1-exp", "--n", "50"], dir.path())), 0);
    let text = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x"));
    for l in lines {
        let x: f64 = l.parse().unwrap();
        assert_eq!(format!("{x:.16e}"), l);
    }
}

#[test]
fn unknown_config_keys_exit_3_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"schema\": 1,\n  \"operation\": \"sample\",\n  \"model\": {\"preset\": \"gw-binomial\"},\n  \"params\": {\"n\": 10, \"sampels\": 3}\n}\n").unwrap();
    let o = smoothlab(&["run", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&o), 3);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("bad.json:5:"), "{stderr}");
    assert!(stderr.contains("unknown field `sampels`"), "{stderr}");
}

#[test]
fn bad_flag_values_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&smoothlab(&["analyze", "--preset", "gw-binomial", "--mode", "fast"], dir.path())), 3);
    assert_eq!(code(&smoothlab(&["analyze", "--preset", "no-such-model"], dir.path())), 3);
    assert_eq!(code(&smoothlab(&["analyze", "--preset", "gw-binomial", "--param", "zeta=1"], dir.path())), 3);
    assert_eq!(code(&smoothlab(&["analyze", "--nonsense"], dir.path())), 3);
    assert_eq!(code(&smoothlab(&["verify", "--preset", "det-quarter", "--n", "10"], dir.path())), 3);
}

#[test]
fn config_operation_must_match_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("c10-gw-samples.json");
    assert_eq!(code(&smoothlab(&["verify", "--config", cfg.to_str().unwrap()], dir.path())), 3);
}

#[test]
fn preset_overrides_reach_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlab(&["oracle-compare", "--preset", "gw-binomial", "--param", "p=0.3", "--n", "20000"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(dir.path().join("oracle.json"));
    assert!((report["exact_mean"].as_f64().unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn operations_without_an_oracle_or_closed_form_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&smoothlab(&["oracle-compare", "--preset", "pagerank"], dir.path())), 2);
    assert_eq!(code(&smoothlab(&["martingale", "--preset", "pagerank"], dir.path())), 2);
    assert_eq!(code(&smoothlab(&["tail", "--preset", "det-quarter"], dir.path())), 2);
}

#[test]
fn inline_model_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let spec = smoothlab::BasicSequenceModel::deterministic(1.0, &[0.25, 0.25]).unwrap();
    fs::write(&model, spec.to_json().unwrap()).unwrap();
    let o = smoothlab(&["analyze", "--model", model.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let exponent = json(dir.path().join("out/exponent.json"));
    assert!((exponent["auto"]["alpha"].as_f64().unwrap() - 0.5).abs() < 1e-6);
}

#[test]
fn every_checked_in_config_runs_and_passes() {
    let mut names: Vec<PathBuf> = fs::read_dir(configs_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for cfg in names {
        let dir = tempfile::tempdir().unwrap();
        let o = smoothlab(&["run", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(code(&o), 0, "{}: {}", cfg.display(), String::from_utf8_lossy(&o.stdout));
        if cfg.file_name().unwrap().to_str().unwrap().starts_with("c09") {
            let probe = json(dir.path().join("divergence.json"));
            assert_eq!(probe["verdict"], "infinite_likely", "{}", cfg.display());
            assert_eq!(probe["certified"], true);
        }
    }
}
