//! Experiment configuration: one TOML file describing topology, schedule,
//! step size, loss, data source, run parameters, and flags.
//!
//! Parsing is strict (unknown keys are rejected), defaults are filled in
//! during deserialization, and command-line overrides are applied before
//! validation, so the effective config is a single normalized value. Its
//! TOML serialization is what gets hashed for the run-directory name and
//! what `--print-config` echoes; re-parsing that echo reproduces the
//! config exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

use crate::error::CliError;
use dfl_core::topology::ServerGraph;
use dfl_core::{ExecMode, LossKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub step_size: StepSize,
    pub topology: TopologyCfg,
    pub schedule: ScheduleCfg,
    #[serde(default)]
    pub loss: LossCfg,
    pub data: DataCfg,
    pub run: RunCfg,
    #[serde(default)]
    pub flags: FlagsCfg,
}

/// Either an explicit step size or the word `auto`, which resolves to
/// 0.9 times the convergence gate once the curvature constants are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    Named(StepSizeWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSizeWord {
    Auto,
}

pub const AUTO_STEP_FRACTION: f64 = 0.9;

impl StepSize {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text == "auto" {
            return Ok(StepSize::Named(StepSizeWord::Auto));
        }
        text.parse::<f64>()
            .map(StepSize::Fixed)
            .map_err(|_| CliError::Config(format!("step_size must be `auto` or a number, got `{text}`")))
    }

    /// Concrete gamma given the gate `min(1/(L t_c), 1/(mu t_c))`.
    pub fn resolve(&self, gate: f64) -> f64 {
        match self {
            StepSize::Fixed(g) => *g,
            StepSize::Named(StepSizeWord::Auto) => AUTO_STEP_FRACTION * gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    /// complete | cycle | path | star | erdos-renyi | edge-list
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl TopologyCfg {
    fn require_servers(&self) -> Result<usize, CliError> {
        self.servers.ok_or_else(|| {
            CliError::Config(format!("topology kind `{}` needs a `servers` count", self.kind))
        })
    }

    fn reject(&self, field: &str, set: bool) -> Result<(), CliError> {
        if set {
            return Err(CliError::Config(format!(
                "topology key `{field}` does not apply to kind `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.kind.as_str() {
            "complete" | "cycle" | "path" | "star" => {
                self.require_servers()?;
                self.reject("edge_prob", self.edge_prob.is_some())?;
                self.reject("seed", self.seed.is_some())?;
                self.reject("path", self.path.is_some())
            }
            "erdos-renyi" => {
                self.require_servers()?;
                let p = self.edge_prob.ok_or_else(|| {
                    CliError::Config("topology kind `erdos-renyi` needs `edge_prob`".into())
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(CliError::Config(format!(
                        "edge_prob must lie in [0, 1], got {p}"
                    )));
                }
                self.reject("path", self.path.is_some())
            }
            "edge-list" => {
                self.require_servers()?;
                if self.path.is_none() {
                    return Err(CliError::Config(
                        "topology kind `edge-list` needs a `path` to the edge file".into(),
                    ));
                }
                self.reject("edge_prob", self.edge_prob.is_some())?;
                self.reject("seed", self.seed.is_some())
            }
            other => Err(CliError::Config(format!(
                "unknown topology kind `{other}` (use complete, cycle, path, star, erdos-renyi, or edge-list)"
            ))),
        }
    }

    pub fn build(&self) -> Result<ServerGraph, CliError> {
        self.validate()?;
        let m = self.require_servers()?;
        let graph = match self.kind.as_str() {
            "complete" => ServerGraph::complete(m)?,
            "cycle" => ServerGraph::cycle(m)?,
            "path" => ServerGraph::path(m)?,
            "star" => ServerGraph::star(m)?,
            "erdos-renyi" => {
                ServerGraph::erdos_renyi(m, self.edge_prob.unwrap(), self.seed.unwrap_or(0))?
            }
            "edge-list" => {
                let path = PathBuf::from(self.path.as_ref().unwrap());
                let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
                ServerGraph::from_edge_list_text(m, &text)?
            }
            _ => unreachable!("validated above"),
        };
        Ok(graph)
    }

    /// Rewrites the kind for a topology sweep, dropping keys the new kind
    /// does not use so the patched config still validates.
    pub fn repoint(&mut self, kind: &str) {
        self.kind = kind.to_string();
        if kind != "erdos-renyi" {
            self.edge_prob = None;
            self.seed = None;
        }
        if kind != "edge-list" {
            self.path = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCfg {
    pub t_c: usize,
    pub t_s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCfg {
    #[serde(default = "default_loss_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<f64>,
}

fn default_loss_kind() -> String {
    "least-squares".into()
}

impl Default for LossCfg {
    fn default() -> Self {
        Self {
            kind: default_loss_kind(),
            reg: None,
        }
    }
}

impl LossCfg {
    pub fn to_kind(&self) -> Result<LossKind, CliError> {
        match (self.kind.as_str(), self.reg) {
            ("least-squares", None) => Ok(LossKind::LeastSquares),
            ("least-squares", Some(_)) => Err(CliError::Config(
                "loss key `reg` only applies to kind `ridge`".into(),
            )),
            ("ridge", Some(reg)) if reg.is_finite() && reg >= 0.0 => Ok(LossKind::Ridge { reg }),
            ("ridge", Some(reg)) => Err(CliError::Config(format!(
                "ridge regularizer must be finite and non-negative, got {reg}"
            ))),
            ("ridge", None) => Err(CliError::Config("loss kind `ridge` needs `reg`".into())),
            (other, _) => Err(CliError::Config(format!(
                "unknown loss kind `{other}` (use least-squares or ridge)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCfg {
    pub clients_per_server: usize,
    pub points_per_client: usize,
    pub dim: usize,
    pub w_true: Vec<f64>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "one")]
    pub feature_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvCfg {
    pub path: String,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCfg {
    pub num_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tolerance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// sequential | parallel
    #[serde(default = "default_mode")]
    pub mode: String,
    /// zeros | random-shared | random-per-server
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "one")]
    pub init_scale: f64,
    /// Radius of the certification ball; derived from the data and the
    /// initial models when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_radius: Option<f64>,
}

fn default_output_dir() -> String {
    "runs".into()
}

fn default_mode() -> String {
    "parallel".into()
}

fn default_init() -> String {
    "zeros".into()
}

impl RunCfg {
    pub fn exec_mode(&self) -> Result<ExecMode, CliError> {
        match self.mode.as_str() {
            "sequential" => Ok(ExecMode::Sequential),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(CliError::Config(format!(
                "unknown run mode `{other}` (use sequential or parallel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsCfg {
    #[serde(default)]
    pub record_iterates: bool,
    #[serde(default)]
    pub override_step_gate: bool,
}

/// Command-line values that shadow config keys; flags win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub step_size: Option<StepSize>,
    pub seed: Option<u64>,
    pub num_epochs: Option<usize>,
    pub output_dir: Option<String>,
    pub mode: Option<String>,
    pub record_iterates: bool,
    pub override_step_gate: bool,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.step_size {
            self.step_size = s;
        }
        if let Some(seed) = ov.seed {
            self.run.seed = seed;
        }
        if let Some(n) = ov.num_epochs {
            self.run.num_epochs = n;
        }
        if let Some(dir) = &ov.output_dir {
            self.run.output_dir = dir.clone();
        }
        if let Some(mode) = &ov.mode {
            self.run.mode = mode.clone();
        }
        if ov.record_iterates {
            self.flags.record_iterates = true;
        }
        if ov.override_step_gate {
            self.flags.override_step_gate = true;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.topology.validate()?;
        if self.schedule.t_c < 1 || self.schedule.t_s < 1 {
            return Err(CliError::Config(format!(
                "schedule needs t_c >= 1 and t_s >= 1, got t_c={} t_s={}",
                self.schedule.t_c, self.schedule.t_s
            )));
        }
        if let StepSize::Fixed(g) = self.step_size {
            if !g.is_finite() || g < 0.0 {
                return Err(CliError::Config(format!(
                    "step_size must be finite and non-negative, got {g}"
                )));
            }
        }
        self.loss.to_kind()?;
        match (&self.data.synthetic, &self.data.csv) {
            (Some(s), None) => {
                if s.clients_per_server < 1 || s.points_per_client < 1 || s.dim < 1 {
                    return Err(CliError::Config(
                        "synthetic data needs clients_per_server, points_per_client, and dim all >= 1"
                            .into(),
                    ));
                }
                if s.w_true.len() != s.dim {
                    return Err(CliError::Config(format!(
                        "w_true has {} entries but dim is {}",
                        s.w_true.len(),
                        s.dim
                    )));
                }
                if !s.noise_std.is_finite() || s.noise_std < 0.0 {
                    return Err(CliError::Config(format!(
                        "noise_std must be finite and non-negative, got {}",
                        s.noise_std
                    )));
                }
                if !s.feature_std.is_finite() || s.feature_std <= 0.0 {
                    return Err(CliError::Config(format!(
                        "feature_std must be finite and positive, got {}",
                        s.feature_std
                    )));
                }
            }
            (None, Some(_)) => {}
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "data must be either [data.synthetic] or [data.csv], not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "data needs a [data.synthetic] or [data.csv] table".into(),
                ))
            }
        }
        self.run.exec_mode()?;
        match self.run.init.as_str() {
            "zeros" | "random-shared" | "random-per-server" => {}
            other => {
                return Err(CliError::Config(format!(
                    "unknown init `{other}` (use zeros, random-shared, or random-per-server)"
                )))
            }
        }
        if !self.run.init_scale.is_finite() || self.run.init_scale <= 0.0 {
            return Err(CliError::Config(format!(
                "init_scale must be finite and positive, got {}",
                self.run.init_scale
            )));
        }
        if let Some(r) = self.run.region_radius {
            if !r.is_finite() || r <= 0.0 {
                return Err(CliError::Config(format!(
                    "region_radius must be finite and positive, got {r}"
                )));
            }
        }
        if let Some(tol) = self.run.stop_tolerance {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(CliError::Config(format!(
                    "stop_tolerance must be finite and positive, got {tol}"
                )));
            }
        }
        Ok(())
    }

    /// Normalized TOML text: what `--print-config` echoes and what the
    /// run-directory hash covers.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Per-run output directory, named by config hash and seed so distinct
    /// experiments never overwrite each other.
    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.output_dir)
            .join(format!("{}-s{}", self.config_hash(), self.run.seed))
    }
}
