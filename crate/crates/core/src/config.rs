use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every search method the engine can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "String")]
pub enum Method {
    Beam,
    StandardSmc,
    GreedySelection,
    Sps,
    PowerSmc,
    BacktrackSmc,
    PowerBacktrackSmc,
    BestOfN,
    SelfConsistency,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Beam,
        Method::StandardSmc,
        Method::GreedySelection,
        Method::Sps,
        Method::PowerSmc,
        Method::BacktrackSmc,
        Method::PowerBacktrackSmc,
        Method::BestOfN,
        Method::SelfConsistency,
    ];

    /// Methods whose next pool is exactly the new children.
    pub fn is_frontier_only(self) -> bool {
        matches!(
            self,
            Method::Beam
                | Method::StandardSmc
                | Method::PowerSmc
                | Method::BestOfN
                | Method::SelfConsistency
        )
    }

    /// Methods that resample parents with replacement and use one child per
    /// parent (`M = N`).
    pub fn is_smc_family(self) -> bool {
        matches!(
            self,
            Method::StandardSmc | Method::PowerSmc | Method::BacktrackSmc | Method::PowerBacktrackSmc
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Beam => "beam",
            Method::StandardSmc => "standard_smc",
            Method::GreedySelection => "greedy_selection",
            Method::Sps => "sps",
            Method::PowerSmc => "power_smc",
            Method::BacktrackSmc => "backtrack_smc",
            Method::PowerBacktrackSmc => "power_backtrack_smc",
            Method::BestOfN => "best_of_n",
            Method::SelfConsistency => "self_consistency",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let m = match norm.as_str() {
            "beam" | "beam_search" => Method::Beam,
            "smc" | "standard_smc" => Method::StandardSmc,
            "greedy" | "greedy_selection" => Method::GreedySelection,
            "sps" | "subpool_selection" => Method::Sps,
            "power_smc" => Method::PowerSmc,
            "backtrack_smc" => Method::BacktrackSmc,
            "pbsmc" | "pb_smc" | "power_backtrack_smc" => Method::PowerBacktrackSmc,
            "best_of_n" | "bon" => Method::BestOfN,
            "self_consistency" | "sc" => Method::SelfConsistency,
            _ => return Err(ConfigError::UnknownMethod(s.to_string())),
        };
        Ok(m)
    }
}

impl TryFrom<String> for Method {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Subpool ratio rule for SPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Mean clamped PRM score of the pool.
    Adaptive,
    Fixed(f64),
}

/// How the final answer is picked from a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalRule {
    /// Highest-PRM terminal prefix created anywhere in the run.
    BestOverHistory,
    /// Highest-PRM terminal prefix in the final pool.
    BestInFinalPool,
    /// One terminal entry of the final pool drawn with normalized weights.
    SampleFinalPool,
}

/// Power and mixture schedule parameters for the SMC family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub gamma: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub beta0: f64,
    /// Pin `beta_t` to a constant instead of following the method default.
    pub beta_override: Option<f64>,
    /// Pin `alpha_t` to a constant instead of following the method default.
    pub alpha_override: Option<f64>,
    /// Force the retained-history multiset on or off.
    pub retain_history_override: Option<bool>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            gamma: 9.0,
            g_min: 0.4,
            g_max: 1.0,
            beta0: 1.0,
            beta_override: None,
            alpha_override: None,
            retain_history_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid search config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Children generated per round, `N`.
    pub child_budget: usize,
    /// Parents selected per round, `M`. Ignored by the SMC family and the
    /// independent-rollout baselines, which use `M = N`.
    pub parent_budget: usize,
    /// Number of rounds, `T`.
    pub horizon: usize,
    pub rng_seed: u64,
    pub method: Method,
    pub schedule: ScheduleConfig,
    pub temperature: f64,
    pub rho: RhoMode,
    pub final_rule: FinalRule,
    /// Weight Beam-family pools by the mean PRM score along the lineage.
    pub cumulative_mean_scores: bool,
    /// Stop once every positively weighted pool entry is terminal.
    pub early_stop: bool,
    /// Keep the per-round parent/child lists in the trace.
    pub record_trace: bool,
}

impl SearchConfig {
    pub fn new(method: Method, child_budget: usize, parent_budget: usize, horizon: usize) -> Self {
        Self {
            child_budget,
            parent_budget,
            horizon,
            rng_seed: 0,
            method,
            schedule: ScheduleConfig::default(),
            temperature: 0.7,
            rho: RhoMode::Adaptive,
            final_rule: FinalRule::BestOverHistory,
            cumulative_mean_scores: false,
            early_stop: true,
            record_trace: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// `M` actually used by the engine.
    pub fn effective_parent_budget(&self) -> usize {
        if self.method.is_smc_family()
            || matches!(self.method, Method::BestOfN | Method::SelfConsistency)
        {
            self.child_budget
        } else {
            self.parent_budget
        }
    }

    /// Children per parent, `B = N / M`.
    pub fn children_per_parent(&self) -> usize {
        self.child_budget / self.effective_parent_budget()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.child_budget == 0 {
            return bad("child budget N must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon T must be positive".into());
        }
        let m = self.effective_parent_budget();
        if m == 0 || self.child_budget % m != 0 {
            return bad(format!(
                "parent budget M={m} must be positive and divide N={}",
                self.child_budget
            ));
        }
        let s = &self.schedule;
        if !(s.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", s.gamma));
        }
        if !(s.g_min > 0.0 && s.g_min <= s.g_max) {
            return bad(format!(
                "need 0 < g_min <= g_max, got g_min={} g_max={}",
                s.g_min, s.g_max
            ));
        }
        if !(s.beta0 >= 0.0) {
            return bad(format!("beta0 must be nonnegative, got {}", s.beta0));
        }
        if let Some(a) = s.alpha_override {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("alpha override must lie in (0, 1], got {a}"));
            }
        }
        if let Some(b) = s.beta_override {
            if !(b >= 0.0) {
                return bad(format!("beta override must be nonnegative, got {b}"));
            }
        }
        if let RhoMode::Fixed(r) = self.rho {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("subpool ratio must lie in (0, 1], got {r}"));
            }
        }
        Ok(())
    }
}
