use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BlockerParams, HttpBackendConfig, RandomEnvParams};
use crate::config::{ConfigError, FinalRule, Method, RhoMode, ScheduleConfig, SearchConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Search(#[from] ConfigError),
    #[error("no metrics found at {0}")]
    MissingMetrics(PathBuf),
    #[error("problem source: {0}")]
    Problems(String),
}

/// Where problems come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    /// Random trees; problem `i` uses a seed derived from `params.seed` and `i`.
    Synthetic {
        count: usize,
        #[serde(default)]
        params: RandomEnvParams,
    },
    /// Blocker trees; seeds whose construction fails are skipped.
    Blocker {
        count: usize,
        #[serde(default)]
        params: BlockerParams,
    },
    /// JSON lines with `id`, `problem` and optional `answer`, served over HTTP.
    Http {
        problems_file: PathBuf,
        #[serde(default)]
        backend: HttpBackendConfig,
    },
}

/// One method of the sweep. `M` is resolved per budget: from
/// `children_per_parent` when set, else `parent_budget`, else `N / 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: Method,
    /// Name in the outputs; defaults to the method name.
    pub label: Option<String>,
    pub parent_budget: Option<usize>,
    pub children_per_parent: Option<usize>,
    pub temperature: Option<f64>,
    pub rho: Option<f64>,
    pub final_rule: Option<FinalRule>,
    #[serde(default)]
    pub cumulative_mean_scores: bool,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub early_stop: Option<bool>,
}

impl MethodEntry {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.name().to_string())
    }

    /// Search config for budget `n` and horizon `horizon`; the seed is set
    /// by the runner.
    pub fn search_config(&self, n: usize, horizon: usize) -> Result<SearchConfig, ConfigError> {
        let m = match (self.children_per_parent, self.parent_budget) {
            (Some(b), _) if b > 0 => n / b,
            (_, Some(m)) => m.min(n),
            _ => (n / 4).max(1),
        };
        let mut c = SearchConfig::new(self.method, n, m, horizon);
        if let Some(t) = self.temperature {
            c.temperature = t;
        }
        if let Some(r) = self.rho {
            c.rho = RhoMode::Fixed(r);
        }
        if let Some(f) = self.final_rule {
            c.final_rule = f;
        }
        if let Some(e) = self.early_stop {
            c.early_stop = e;
        }
        c.cumulative_mean_scores = self.cumulative_mean_scores;
        c.schedule = self.schedule;
        c.record_trace = false;
        c.validate()?;
        Ok(c)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn default_horizon() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub problems: ProblemSource,
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    /// Child budgets `N` to sweep.
    pub budgets: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Write wall-clock times into the records.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

fn default_true() -> bool {
    true
}

/// Only `problems.backend.auth` may hold `${VAR}`; it becomes `auth_env`.
const AUTH_PATH: &str = "problems.backend.auth";

fn check_interpolation(value: &mut toml::Value, path: &str) -> Result<(), ExperimentError> {
    match value {
        toml::Value::String(s) if s.contains("${") && path != AUTH_PATH => {
            Err(ExperimentError::Invalid(format!(
                "`{path}`: environment interpolation is only allowed in `{AUTH_PATH}`"
            )))
        }
        toml::Value::Table(t) => {
            if path == "problems.backend" {
                if let Some(auth) = t.remove("auth") {
                    let var = auth
                        .as_str()
                        .and_then(|s| s.strip_prefix("${"))
                        .and_then(|s| s.strip_suffix('}'))
                        .filter(|v| !v.is_empty() && !v.contains(['$', '{', '}']))
                        .ok_or_else(|| {
                            ExperimentError::Invalid(format!(
                                "`{AUTH_PATH}` must have the form \"${{VAR}}\""
                            ))
                        })?;
                    t.insert("auth_env".into(), toml::Value::String(var.to_string()));
                }
            }
            for (k, v) in t.iter_mut() {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                check_interpolation(v, &sub)?;
            }
            Ok(())
        }
        toml::Value::Array(a) => {
            for v in a {
                check_interpolation(v, path)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        check_interpolation(&mut value, "")?;
        let config: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config; a relative problems file resolves against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let ProblemSource::Http { problems_file, .. } = &mut config.problems {
            if problems_file.is_relative() {
                if let Some(dir) = path.parent() {
                    *problems_file = dir.join(&*problems_file);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.budgets.is_empty() {
            return bad("budget list is empty".into());
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        let mut labels = std::collections::HashSet::new();
        for m in &self.methods {
            if !labels.insert(m.label()) {
                return bad(format!("duplicate method label `{}`", m.label()));
            }
            for &n in &self.budgets {
                m.search_config(n, self.horizon).map_err(|e| {
                    ExperimentError::Invalid(format!("method `{}` at N={n}: {e}", m.label()))
                })?;
            }
        }
        Ok(())
    }

    /// Keep only the listed method labels and budgets (empty keeps all).
    pub fn filter(&mut self, methods: &[String], budgets: &[usize]) -> Result<(), ExperimentError> {
        if !methods.is_empty() {
            self.methods.retain(|m| {
                methods
                    .iter()
                    .any(|f| *f == m.label() || f.parse::<Method>().ok() == Some(m.method))
            });
        }
        if !budgets.is_empty() {
            self.budgets.retain(|n| budgets.contains(n));
        }
        self.validate()
    }
}
