//! Experiment configuration, schema v1.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smoothlab::examples::preset;
use smoothlab::spectral::EvalMode;
use smoothlab::BasicSequenceModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operation {
    Analyze,
    Sample,
    Verify,
    Martingale,
    Tail,
    OracleCompare,
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Analyze => "analyze",
            Operation::Sample => "sample",
            Operation::Verify => "verify",
            Operation::Martingale => "martingale",
            Operation::Tail => "tail",
            Operation::OracleCompare => "oracle-compare",
        }
    }
}

/// What `sample` and `oracle-compare` draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// `W* + h W^{1/α} Y` (just `W*` when `h = 0`).
    Solution,
    /// The additive martingale `W_n^{(α)}`.
    Endogenous,
    /// Positive `α`-stable draws.
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    FixedPoint,
    Factorization,
}

/// Either a preset with parameter overrides or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<BasicSequenceModel>,
}

/// Operation parameters. Absent entries take the operation's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_survival: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_band: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SampleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_divergent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_depth: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Params {
    /// Entries set in `other` replace those in `self`.
    pub fn overlay(&mut self, other: Params) {
        overlay!(self, other; n, alpha, h, depth, prune, budget, t_grid, level, z_bound, permutations, mode, n_mc,
            tol, reps, depths, thresholds, target_survival, ratio_band, oracle_n, kind, test, allow_divergent,
            probe_depth);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub operation: Operation,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

/// A configuration problem, anchored to a line of its source when known.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub source: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.source, self.line, self.column, self.message)
    }
}

impl SchemaError {
    pub fn at(source: &str, line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { source: source.to_string(), line, column, message: message.into() }
    }

    fn from_json(source: &str, e: &serde_json::Error) -> Self {
        let text = e.to_string();
        let message = match text.rsplit_once(" at line ") {
            Some((head, _)) => head.to_string(),
            None => text,
        };
        Self::at(source, e.line(), e.column(), message)
    }
}

/// Position of the first occurrence of `"key"` in `text`, else `1:1`.
fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    text.lines()
        .enumerate()
        .find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
        .unwrap_or((1, 1))
}

pub fn parse_config(text: &str, source: &str) -> Result<ExperimentConfig, SchemaError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| SchemaError::from_json(source, &e))?;
    if cfg.schema != SCHEMA_VERSION {
        let (l, c) = locate(text, "schema");
        return Err(SchemaError::at(source, l, c, format!("unsupported schema version {}, expected {SCHEMA_VERSION}", cfg.schema)));
    }
    if let Err(msg) = cfg.model.check() {
        let (l, c) = locate(text, "model");
        return Err(SchemaError::at(source, l, c, msg));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, SchemaError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError::at(&source, 0, 0, format!("cannot read: {e}")))?;
    parse_config(&text, &source)
}

/// A model JSON file as accepted by `inline`.
pub fn load_model(path: &Path) -> Result<BasicSequenceModel, SchemaError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError::at(&source, 0, 0, format!("cannot read: {e}")))?;
    let model: BasicSequenceModel = serde_json::from_str(&text).map_err(|e| SchemaError::from_json(&source, &e))?;
    model.validate().map_err(|e| SchemaError::at(&source, 1, 1, e.to_string()))?;
    Ok(model)
}

impl ModelSpec {
    pub fn preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), overrides: BTreeMap::new(), inline: None }
    }

    fn check(&self) -> Result<(), String> {
        match (&self.preset, &self.inline) {
            (Some(_), Some(_)) => Err("model: give either `preset` or `inline`, not both".into()),
            (None, None) => Err("model: one of `preset` or `inline` is required".into()),
            (None, Some(_)) if !self.overrides.is_empty() => Err("model: `overrides` apply to presets only".into()),
            (None, Some(m)) => m.validate().map_err(|e| format!("model.inline: {e}")),
            (Some(_), None) => self.build().map(|_| ()).map_err(|e| format!("model: {e}")),
        }
    }

    pub fn build(&self) -> smoothlab::Result<BasicSequenceModel> {
        match (&self.preset, &self.inline) {
            (_, Some(m)) => Ok(m.clone()),
            (Some(name), None) => Ok(preset(name, &self.overrides)?.model),
            (None, None) => Err(smoothlab::Error::Config("no model given".into())),
        }
    }
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { out: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("serializable config");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
