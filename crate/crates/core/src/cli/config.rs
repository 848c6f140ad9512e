use crate::pomdp::{RecomputeTrigger, SolveOptions};
use crate::rl::{ActionMode, TrainConfig};
use crate::sim::EnvConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Inline environment; the benchmark environment when both this and
    /// `env_path` are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_path: Option<PathBuf>,
    #[serde(default)]
    pub threshold: ThresholdSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pomdp: PomdpSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    /// Labeled JSONL corpus with one weak and one strong trace per query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

fn default_episodes() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub ladder: Vec<f64>,
    pub takeover: bool,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            ladder: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            takeover: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PomdpSection {
    /// Fitted observation model; fitted on the fly when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub solve: SolveOptions,
    pub trigger: RecomputeTrigger,
    /// Writes a belief-lattice table per lambda at this resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lookup_resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Simulated episodes when no corpus is given.
    pub episodes: u64,
    /// Regeneration probability of the data-collection policy.
    pub behavior_regen_prob: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { episodes: 2000, behavior_regen_prob: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    AlwaysContinue,
    AlwaysRegenerate,
    Threshold {
        k: f64,
        #[serde(default)]
        takeover: bool,
    },
    Agg {
        checkpoint: PathBuf,
        #[serde(default)]
        mode: ActionMode,
        #[serde(default)]
        control: f64,
    },
    Pomdp {
        model: PathBuf,
        lambda: f64,
        #[serde(default)]
        trigger: RecomputeTrigger,
    },
    Automix {
        lambda: f64,
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default = "default_calibration")]
        calibration_episodes: u64,
    },
}

fn default_bins() -> usize {
    10
}

fn default_calibration() -> u64 {
    2000
}

/// A configuration problem, located by its field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

/// Parses a config document, reporting the path of the first bad field.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        err(path, e.into_inner().to_string())
    })
}

/// Reads a config file and resolves relative paths against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.out, &mut self.env_path, &mut self.pomdp.model, &mut self.corpus]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        for spec in &mut self.policies {
            match spec {
                PolicySpec::Agg { checkpoint, .. } => resolve(base, checkpoint),
                PolicySpec::Pomdp { model, .. } => resolve(base, model),
                _ => {}
            }
        }
    }

    pub fn environment(&self) -> Result<EnvConfig, ConfigError> {
        match (&self.env, &self.env_path) {
            (Some(_), Some(_)) => Err(err("env_path", "give either `env` or `env_path`, not both")),
            (Some(env), None) => {
                env.validate().map_err(|e| err("env", e.to_string()))?;
                Ok(env.clone())
            }
            (None, Some(p)) => EnvConfig::from_json_file(p).map_err(|e| err("env_path", e.to_string())),
            (None, None) => Ok(EnvConfig::canonical()),
        }
    }

    /// The lambda ladder, falling back to the single training lambda.
    pub fn lambda_ladder(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| vec![self.train.lambda])
    }

    /// Mode-independent checks plus the requirements of `mode`.
    pub fn validate_for(&self, mode: super::Mode) -> Result<(), ConfigError> {
        use super::Mode;
        if self.episodes == 0 {
            return Err(err("episodes", "must be at least 1"));
        }
        if self.out.is_none() {
            return Err(err("out", "no output directory (set `out` or pass --out)"));
        }
        if let Some(ls) = &self.lambdas {
            if ls.is_empty() {
                return Err(err("lambdas", "must not be empty"));
            }
            if let Some(i) = ls.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(err(format!("lambdas[{i}]"), "must be finite and >= 0"));
            }
        }
        match mode {
            Mode::SweepThr | Mode::Replay => {
                if self.threshold.ladder.is_empty() {
                    return Err(err("threshold.ladder", "must not be empty"));
                }
                if let Some(i) = self.threshold.ladder.iter().position(|k| !(0.0..=1.0).contains(k)) {
                    return Err(err(format!("threshold.ladder[{i}]"), "must lie in [0, 1]"));
                }
            }
            Mode::TrainAgg => {
                self.train.validate().map_err(|e| err("train", e.to_string()))?;
            }
            Mode::SolvePomdp => {
                if self.lambdas.is_none() {
                    return Err(err("lambdas", "required by solve-pomdp"));
                }
            }
            Mode::FitObs => {
                if self.corpus.is_none() && self.fit.episodes == 0 {
                    return Err(err("fit.episodes", "must be at least 1"));
                }
            }
            Mode::Eval => {
                if self.policies.is_empty() {
                    return Err(err("policies", "eval needs at least one policy"));
                }
            }
        }
        if mode == Mode::Replay && self.corpus.is_none() {
            return Err(err("corpus", "required by replay"));
        }
        if !(0.0..=1.0).contains(&self.fit.behavior_regen_prob) {
            return Err(err("fit.behavior_regen_prob", "must lie in [0, 1]"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            let bad = |field: &str, m: &str| Err(err(format!("policies[{i}].{field}"), m));
            match *p {
                PolicySpec::Threshold { k, .. } if !(0.0..=1.0).contains(&k) => return bad("k", "must lie in [0, 1]"),
                PolicySpec::Pomdp { lambda, .. } | PolicySpec::Automix { lambda, .. }
                    if !(lambda.is_finite() && lambda >= 0.0) =>
                {
                    return bad("lambda", "must be finite and >= 0")
                }
                PolicySpec::Automix { bins: 0, .. } => return bad("bins", "must be positive"),
                _ => {}
            }
        }
        Ok(())
    }
}
