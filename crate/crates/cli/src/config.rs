//! Experiment configuration: a TOML file, overridable key by key through
//! `DUALHASH_<SECTION>__<KEY>` environment variables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualhash_core::data::{ClassLayout, ClusterSpec, PairMode};
use dualhash_core::optimizer::lyapunov::{tau_l_limit, DEFAULT_DELTA, DEFAULT_NU};
use dualhash_core::optimizer::BInit;

pub const ENV_PREFIX: &str = "DUALHASH_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("environment override {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DualhashStom,
    DualhashStorm,
    Sgdm,
    SpgdWcr,
    Dhn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DualhashStom => "dualhash-stom",
            Method::DualhashStorm => "dualhash-storm",
            Method::Sgdm => "sgdm",
            Method::SpgdWcr => "spgd-wcr",
            Method::Dhn => "dhn",
        }
    }

    pub fn is_dualhash(self) -> bool {
        matches!(self, Method::DualhashStom | Method::DualhashStorm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub radius: f64,
    pub layout: ClassLayout,
    pub multi_label: bool,
    pub query_fraction: f64,
    pub normalize: bool,
    /// Partners per training sample; 0 takes every pair.
    pub pairs_per_anchor: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let c = ClusterSpec::default();
        Self {
            classes: c.classes,
            per_class: c.per_class,
            dim: c.dim,
            spread: c.spread,
            radius: c.radius,
            layout: c.layout,
            multi_label: c.multi_label,
            query_fraction: c.query_fraction,
            normalize: c.normalize,
            pairs_per_anchor: 20,
        }
    }
}

impl DataConfig {
    pub fn cluster_spec(&self) -> ClusterSpec {
        ClusterSpec {
            classes: self.classes,
            per_class: self.per_class,
            dim: self.dim,
            spread: self.spread,
            radius: self.radius,
            layout: self.layout,
            multi_label: self.multi_label,
            query_fraction: self.query_fraction,
            normalize: self.normalize,
        }
    }

    pub fn pair_mode(&self) -> PairMode {
        match self.pairs_per_anchor {
            0 => PairMode::All,
            k => PairMode::Sampled { per_anchor: k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub bits: usize,
    /// Sharpness of the pairwise likelihood, in (0, 1].
    pub alpha_loss: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            bits: 8,
            alpha_loss: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub iterations: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Base step: `η/L_F` for momentum methods, `η/(L̃_F T^{1/3})` for StoRM.
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub c_b: f64,
    /// Mini-batch size; 0 means the full training set.
    pub batch: usize,
    pub b_init: BInit,
    /// Fixed `L_F`; estimated at the initial point when absent.
    pub lipschitz: Option<f64>,
    pub lipschitz_iters: usize,
    pub delta: f64,
    pub nu: f64,
    /// `τ L_F ≤ √δ̃` is reported when violated.
    pub delta_tilde: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::DualhashStom,
            iterations: 2000,
            gamma: 3.0,
            lambda: 0.05,
            tau: 0.01,
            eta: 0.1,
            alpha: 0.905,
            beta: 0.905,
            rho: 1.0,
            c_b: 1.0,
            batch: 32,
            b_init: BInit::Outputs,
            lipschitz: None,
            lipschitz_iters: 30,
            delta: DEFAULT_DELTA,
            nu: DEFAULT_NU,
            delta_tilde: tau_l_limit().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Row cadence; 0 picks 1 up to 10⁴ iterations and `⌈T/10⁴⌉` beyond.
    pub log_every: usize,
    /// Quantization error and σ̂² on every this many logged rows.
    pub heavy_every: usize,
    pub variance_probe: usize,
    pub stationarity: bool,
    pub lyapunov: bool,
    pub dual_increment: bool,
    pub estimator_error: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            log_every: 0,
            heavy_every: 10,
            variance_probe: 64,
            stationarity: true,
            lyapunov: true,
            dual_increment: true,
            estimator_error: false,
        }
    }
}

impl DiagnosticsConfig {
    pub fn cadence(&self, iterations: usize) -> usize {
        match self.log_every {
            0 if iterations <= 10_000 => 1,
            0 => iterations.div_ceil(10_000),
            k => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPoint {
    /// The final iterate.
    Last,
    /// The uniformly sampled `x_R`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub top_n: Option<usize>,
    pub topk: Vec<usize>,
    pub pr_points: usize,
    pub point: EvalPoint,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = dualhash_core::metrics::EvalOptions::default();
        Self {
            top_n: o.top_n,
            topk: o.topk,
            pr_points: o.pr_points,
            point: EvalPoint::Last,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub write_params: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            write_params: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3, 4, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub diagnostics: DiagnosticsConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
    pub compare: CompareConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            solver: SolverConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `DUALHASH_SECTION__KEY=value` overrides to a raw TOML tree.
/// Values are read as TOML literals and fall back to plain strings.
pub fn apply_env<I>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (var, raw) in vars {
        let path: Vec<String> = var[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(ConfigError::Env {
                var,
                reason: "empty key segment".into(),
            });
        }
        let (last, parents) = path.split_last().expect("split yields at least one segment");
        let mut node = &mut *table;
        for seg in parents {
            let entry = node.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = match entry {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(ConfigError::Env {
                        var: var.clone(),
                        reason: format!("`{seg}` is not a section"),
                    })
                }
            };
        }
        node.insert(last.clone(), parse_env_value(&raw));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (or starts from the defaults), applies the environment
    /// overrides and validates the result.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let cfg = Self::load_unchecked(path, env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// As [`ExperimentConfig::load`] without the range checks.
    pub fn load_unchecked<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_env(&mut table, env)?;
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.data
            .cluster_spec()
            .validate()
            .map_err(|e| core_field("data", e))?;
        if self.model.bits == 0 {
            return Err(bad("model.bits", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "layer widths must be positive"));
        }
        if !(self.model.alpha_loss > 0.0 && self.model.alpha_loss <= 1.0) {
            return Err(bad("model.alpha_loss", "must lie in (0, 1]"));
        }
        let s = &self.solver;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(field, format!("must be positive and finite, got {v}")))
            }
        };
        if s.iterations == 0 {
            return Err(bad("solver.iterations", "must be at least 1"));
        }
        positive("solver.gamma", s.gamma)?;
        if s.method.is_dualhash() {
            positive("solver.lambda", s.lambda)?;
        } else if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
            return Err(bad("solver.lambda", "must be nonnegative"));
        }
        positive("solver.tau", s.tau)?;
        positive("solver.eta", s.eta)?;
        positive("solver.rho", s.rho)?;
        positive("solver.c_b", s.c_b)?;
        positive("solver.delta", s.delta)?;
        positive("solver.delta_tilde", s.delta_tilde)?;
        if !(s.nu > 0.0 && s.nu < 1.0) {
            return Err(bad("solver.nu", "must lie in (0, 1)"));
        }
        for (field, v) in [("solver.alpha", s.alpha), ("solver.beta", s.beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(field, format!("must lie in [0, 1), got {v}")));
            }
        }
        if let Some(l) = s.lipschitz {
            positive("solver.lipschitz", l)?;
        }
        if s.lipschitz.is_none() && s.lipschitz_iters == 0 {
            return Err(bad("solver.lipschitz_iters", "must be positive when lipschitz is estimated"));
        }
        if self.eval.pr_points < 2 {
            return Err(bad("eval.pr_points", "need at least two points"));
        }
        if self.eval.topk.contains(&0) {
            return Err(bad("eval.topk", "cutoffs must be positive"));
        }
        if self.compare.seeds.is_empty() {
            return Err(bad("compare.seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// `[dim, hidden…, bits]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.data.dim];
        w.extend(&self.model.hidden);
        w.push(self.model.bits);
        w
    }
}

pub(crate) fn core_field(section: &str, e: dualhash_core::Error) -> ConfigError {
    match e {
        dualhash_core::Error::InvalidParameter { name, reason } => ConfigError::Invalid {
            field: format!("{section}.{name}"),
            reason,
        },
        other => ConfigError::Invalid {
            field: section.to_string(),
            reason: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn default_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.solver.gamma, c.solver.lambda, c.solver.tau), (3.0, 0.05, 0.01));
        assert_eq!((c.solver.alpha, c.solver.beta), (0.905, 0.905));
        assert_eq!(c.widths(), vec![16, 32, 8]);
        c.validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::default();
        c.solver.lipschitz = Some(2.5);
        c.eval.top_n = Some(100);
        let text = c.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn environment_overrides_every_level() {
        let c = ExperimentConfig::load(
            None,
            env(&[
                ("DUALHASH_SEED", "9"),
                ("DUALHASH_SOLVER__TAU", "0.02"),
                ("DUALHASH_SOLVER__METHOD", "sgdm"),
                ("DUALHASH_OUTPUT__DIR", "/tmp/x"),
                ("DUALHASH_EVAL__TOPK", "[1, 5]"),
                ("OTHER_VAR", "ignored"),
            ]),
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.solver.tau, 0.02);
        assert_eq!(c.solver.method, Method::Sgdm);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.eval.topk, vec![1, 5]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::load(None, env(&[("DUALHASH_SOLVER__TAUU", "1")])),
            Err(ConfigError::Parse(_))
        ));
        match ExperimentConfig::load(None, env(&[("DUALHASH_SOLVER__LAMBDA", "-1")])) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "solver.lambda"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::load(None, env(&[("DUALHASH_DATA__CLASSES", "1")])) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "data.classes"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::load(None, env(&[("DUALHASH_SEED__X", "1")])).is_err());
    }

    #[test]
    fn cadence() {
        let d = DiagnosticsConfig::default();
        assert_eq!(d.cadence(2000), 1);
        assert_eq!(d.cadence(10_000), 1);
        assert_eq!(d.cadence(25_000), 3);
    }
}
