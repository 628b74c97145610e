//! Power Backtrack SMC weighting: powered targets over every prefix length
//! seen so far, a mixture of fresh one-step expansions and redrawn history,
//! and the adaptive power/mixture schedules.
//!
//! At round `t` the pool targets
//!
//! ```text
//! pi_t(z) ∝ p(z) · r(z)^beta_t · 1{len(z) <= t + 1}
//! ```
//!
//! and each entry `z` gets the correction factor
//!
//! ```text
//!          (r(z) / r(pa z))^beta_{t-1} · r(z)^(beta_t - beta_{t-1})
//! F_t(z) = ---------------------------------------------------------------
//!          alpha_t·1{len >= 2} + (1 - alpha_t)·(r(z)/r(pa z))^beta_{t-1}·1{len <= t}
//! ```
//!
//! New children are weighted `alpha_t·F_t(z)` and retained history entries
//! `(1 - alpha_t)·F_t(z) / t`. Everything is evaluated in log space; the
//! final weights are shifted by their maximum before exponentiation, which
//! leaves every self-normalized quantity unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{multinomial_sample, Arena, Pool, PoolError, PrefixId, R_MIN};
use crate::SearchRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("prefix length {len} outside [1, {max}] at round {round}")]
    InvalidLength { len: usize, round: usize, max: usize },
    #[error("expected {expected} {what}, got {actual}")]
    BudgetMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("round must be at least 1")]
    InvalidRound,
}

/// Power and mixture schedule hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub gamma: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub horizon: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            gamma: 9.0,
            g_min: 0.4,
            g_max: 1.0,
            horizon: 30,
        }
    }
}

/// Powers `beta_0, beta_1, ...` produced so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub params: ScheduleParams,
    pub betas: Vec<f64>,
}

impl ScheduleState {
    pub fn new(params: ScheduleParams, beta0: f64) -> Self {
        Self {
            params,
            betas: vec![beta0],
        }
    }

    /// Latest power.
    pub fn beta_current(&self) -> f64 {
        *self.betas.last().unwrap()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    /// Append `beta_{t+1} = beta_t + Delta_t` from the pool just formed.
    pub fn advance(&mut self, scores: &[f64]) -> f64 {
        let sigma = concentration_statistic(scores);
        let delta = beta_step(self.params.gamma, sigma, scores.len());
        let next = self.beta_current() + delta;
        self.betas.push(next);
        next
    }

    /// Append a fixed power.
    pub fn hold(&mut self, beta: f64) {
        self.betas.push(beta);
    }
}

/// `sigma = sum a_z^2` with `a_z = r(z) / sum r`, over the multiset.
pub fn concentration_statistic(scores: &[f64]) -> f64 {
    let c = scores.len() as f64;
    // identical scores are exactly uniform; the ratio below can miss 1/C by an ulp
    if scores.iter().all(|&r| r == scores[0]) {
        return 1.0 / c;
    }
    let total: f64 = scores.iter().sum();
    let sigma = scores.iter().map(|r| r * r).sum::<f64>() / (total * total);
    sigma.clamp(1.0 / c, 1.0)
}

/// `Delta_t = gamma · (1 - (sigma_t - 1/C_t))`, clamped to its exact range
/// `[gamma / C_t, gamma]` against rounding.
pub fn beta_step(gamma: f64, sigma: f64, pool_size: usize) -> f64 {
    let inv_c = 1.0 / pool_size as f64;
    if sigma <= inv_c {
        gamma
    } else if sigma >= 1.0 {
        gamma / pool_size as f64
    } else {
        (gamma * (1.0 - (sigma - inv_c))).clamp(gamma / pool_size as f64, gamma)
    }
}

/// Mixture probability on new children at round `t` (1-based).
pub fn alpha_at(params: &ScheduleParams, t: usize) -> f64 {
    let g = if params.horizon <= 1 {
        params.g_min
    } else {
        let t = t.clamp(1, params.horizon);
        let frac = (t - 1) as f64 / (params.horizon - 1) as f64;
        params.g_max - frac * (params.g_max - params.g_min)
    };
    1.0 / (1.0 + g)
}

/// Inputs of one correction factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureWeightInputs {
    pub prm_score: f64,
    /// 1 for depth-1 prefixes.
    pub parent_prm: f64,
    pub len: usize,
    pub round: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta_prev: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_score(r: f64) -> f64 {
    r.max(R_MIN).ln()
}

/// `ln F_t(z)`.
pub fn log_correction_factor(inp: &MixtureWeightInputs) -> Result<f64, WeightError> {
    let t = inp.round;
    if t == 0 {
        return Err(WeightError::InvalidRound);
    }
    if inp.len == 0 || inp.len > t + 1 {
        return Err(WeightError::InvalidLength {
            len: inp.len,
            round: t,
            max: t + 1,
        });
    }
    let log_r = log_score(inp.prm_score);
    let log_ratio = log_r - log_score(inp.parent_prm);
    let powered_ratio = if inp.beta_prev == 0.0 {
        0.0
    } else {
        inp.beta_prev * log_ratio
    };
    let increment = inp.beta - inp.beta_prev;
    let numerator = powered_ratio + if increment == 0.0 { 0.0 } else { increment * log_r };
    let new_term = if inp.len >= 2 {
        inp.alpha.ln()
    } else {
        f64::NEG_INFINITY
    };
    let hist_term = if inp.len <= t {
        (1.0 - inp.alpha).ln() + powered_ratio
    } else {
        f64::NEG_INFINITY
    };
    Ok(numerator - log_add_exp(new_term, hist_term))
}

pub fn correction_factor(inp: &MixtureWeightInputs) -> Result<f64, WeightError> {
    log_correction_factor(inp).map(f64::exp)
}

/// Per-round constants shared by every entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundWeights {
    pub round: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta_prev: f64,
}

impl RoundWeights {
    fn inputs(&self, arena: &Arena, id: PrefixId) -> MixtureWeightInputs {
        let p = arena.get(id);
        MixtureWeightInputs {
            prm_score: p.prm_score,
            parent_prm: arena.parent_score(id),
            len: p.depth as usize,
            round: self.round,
            alpha: self.alpha,
            beta: self.beta,
            beta_prev: self.beta_prev,
        }
    }
}

/// Build `P_t = S_t ⊎ B_t` with mixture-corrected weights.
///
/// `retained` must hold `N·t` entries unless `history` is false, in which
/// case it must be empty. Weights are rescaled so the largest equals 1.
pub fn assign_pbsmc_weights(
    arena: &Arena,
    retained: &[PrefixId],
    children: &[PrefixId],
    n: usize,
    history: bool,
    round: &RoundWeights,
) -> Result<Pool, WeightError> {
    let t = round.round;
    if t == 0 {
        return Err(WeightError::InvalidRound);
    }
    if children.len() != n {
        return Err(WeightError::BudgetMismatch {
            what: "new children",
            expected: n,
            actual: children.len(),
        });
    }
    let expected_hist = if history { n * t } else { 0 };
    if retained.len() != expected_hist {
        return Err(WeightError::BudgetMismatch {
            what: "retained history entries",
            expected: expected_hist,
            actual: retained.len(),
        });
    }
    let log_hist_share = (1.0 - round.alpha).ln() - (t as f64).ln();
    let log_new_share = round.alpha.ln();
    let mut logs = Vec::with_capacity(retained.len() + children.len());
    for &id in retained {
        logs.push((id, log_hist_share + log_correction_factor(&round.inputs(arena, id))?));
    }
    for &id in children {
        logs.push((id, log_new_share + log_correction_factor(&round.inputs(arena, id))?));
    }
    let max = logs
        .iter()
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Pool::from_entries(
        logs.into_iter().map(|(id, l)| (id, (l - max).exp())),
        t,
    ))
}

/// Retained multiset `S_t`: `N·t` draws with replacement from the previous
/// pool by weight.
pub fn sample_retained(
    pool: &Pool,
    t: usize,
    n: usize,
    rng: &mut SearchRng,
) -> Result<Vec<PrefixId>, PoolError> {
    multinomial_sample(pool, n * t, rng)
}
