//! Exhaustive ground truth for synthetic trees: exact prefix probabilities,
//! marginal correctness, powered targets and the PB-SMC proposal densities.
//!
//! Prefixes are tree nodes (the prompt excluded) and a prefix's length is its
//! depth. For round `t` with powers `beta' = beta_{t-1}` and `beta = beta_t`:
//!
//! ```text
//! target(z)  = p(z) · r(z)^beta      · 1{len <= t + 1}
//! q_new(z)   = p(z) · r(pa z)^beta'  · 1{2 <= len <= t + 1}
//! q_hist(z)  = p(z) · r(z)^beta'     · 1{len <= t}
//! Z_{t-1}    = sum over len <= t of p(u) · r(u)^beta'
//! ```
//!
//! The proposal formulas assume every prefix of length `<= t` has children,
//! so the identities below are meant for rounds `t <= D - 1`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::SyntheticTreeEnv;
use crate::config::{Method, SearchConfig};
use crate::engine::{run_search, SearchError};
use crate::model::{Step, R_MIN};

/// Default enumeration cap, prompt included.
pub const DEFAULT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("environment has {nodes} nodes, above the enumeration cap of {cap}")]
    EnvTooLarge { nodes: usize, cap: usize },
}

/// Sum in descending magnitude order with Neumaier compensation.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in v {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln sum exp(l)`, with `-inf` for an empty or all-zero input.
pub fn log_sum_exp(logs: impl IntoIterator<Item = f64>) -> f64 {
    let logs: Vec<f64> = logs.into_iter().collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + stable_sum(logs.iter().map(|l| (l - m).exp())).ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    log_sum_exp([a, b])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNode {
    pub id: u32,
    pub parent: Option<u32>,
    pub depth: usize,
    /// `ln p(z)`, the joint generation probability of the prefix.
    pub log_p: f64,
    /// Clamped PRM score.
    pub score: f64,
    /// Probability of generating the prefix and then a correct completion.
    pub sigma: f64,
    pub terminal: bool,
    pub correct: Option<bool>,
}

/// Exported table, see [`OracleTable::to_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableExport {
    pub branching: usize,
    pub depth: usize,
    pub nodes: Vec<OracleNode>,
}

#[derive(Debug, Clone)]
pub struct OracleTable {
    branching: usize,
    depth: usize,
    /// Indexed by node id; entry 0 is the prompt.
    nodes: Vec<OracleNode>,
}

impl OracleTable {
    pub fn enumerate(env: &SyntheticTreeEnv) -> Result<Self, OracleError> {
        Self::enumerate_with_cap(env, DEFAULT_CAP)
    }

    pub fn enumerate_with_cap(env: &SyntheticTreeEnv, cap: usize) -> Result<Self, OracleError> {
        let count = env.node_count();
        if count > cap {
            return Err(OracleError::EnvTooLarge { nodes: count, cap });
        }
        let mut nodes = Vec::with_capacity(count);
        for id in 0..count as u32 {
            let parent = env.parent_of(id);
            let log_p = match parent {
                None => 0.0,
                Some(pa) => {
                    let lp: f64 = nodes
                        .get(pa as usize)
                        .map(|n: &OracleNode| n.log_p)
                        .unwrap_or(0.0);
                    lp + env.step_prob(id).ln()
                }
            };
            let leaf = env.is_leaf(id);
            nodes.push(OracleNode {
                id,
                parent,
                depth: env.depth_of(id),
                log_p,
                score: env.score(id),
                sigma: 0.0,
                terminal: leaf,
                correct: leaf.then(|| env.is_correct_leaf(id)),
            });
        }
        // sigma bottom-up: correct leaves carry p(z), internal nodes sum their children
        for id in (0..count).rev() {
            let n = &nodes[id];
            nodes[id].sigma = if n.terminal {
                if n.correct == Some(true) {
                    n.log_p.exp()
                } else {
                    0.0
                }
            } else {
                stable_sum(env.children(id as u32).map(|c| nodes[c as usize].sigma))
            };
        }
        Ok(Self {
            branching: env.branching(),
            depth: env.depth(),
            nodes,
        })
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node(&self, id: u32) -> &OracleNode {
        &self.nodes[id as usize]
    }

    /// Every prefix (prompt excluded) in heap order.
    pub fn prefixes(&self) -> impl Iterator<Item = &OracleNode> + '_ {
        self.nodes.iter().skip(1)
    }

    /// Prefixes of length at most `max_len`.
    pub fn prefixes_up_to(&self, max_len: usize) -> impl Iterator<Item = &OracleNode> + '_ {
        self.prefixes().filter(move |n| n.depth <= max_len)
    }

    /// `p(z)`.
    pub fn p(&self, id: u32) -> f64 {
        self.node(id).log_p.exp()
    }

    fn log_score(&self, id: u32) -> f64 {
        self.node(id).score.max(R_MIN).ln()
    }

    fn log_parent_score(&self, id: u32) -> f64 {
        match self.node(id).parent {
            Some(pa) if pa != 0 => self.log_score(pa),
            _ => 0.0,
        }
    }

    fn powered(log_r: f64, beta: f64) -> f64 {
        if beta == 0.0 {
            0.0
        } else {
            beta * log_r
        }
    }

    /// `ln target_t(z)` at power `beta`.
    pub fn log_target(&self, id: u32, t: usize, beta: f64) -> f64 {
        let n = self.node(id);
        if id == 0 || n.depth > t + 1 {
            return f64::NEG_INFINITY;
        }
        n.log_p + Self::powered(self.log_score(id), beta)
    }

    pub fn log_q_new(&self, id: u32, t: usize, beta_prev: f64) -> f64 {
        let n = self.node(id);
        if id == 0 || n.depth < 2 || n.depth > t + 1 {
            return f64::NEG_INFINITY;
        }
        n.log_p + Self::powered(self.log_parent_score(id), beta_prev)
    }

    pub fn log_q_hist(&self, id: u32, t: usize, beta_prev: f64) -> f64 {
        let n = self.node(id);
        if id == 0 || n.depth > t {
            return f64::NEG_INFINITY;
        }
        n.log_p + Self::powered(self.log_score(id), beta_prev)
    }

    pub fn log_q_mix(&self, id: u32, t: usize, alpha: f64, beta_prev: f64) -> f64 {
        let new = alpha.ln() + self.log_q_new(id, t, beta_prev);
        let hist = (1.0 - alpha).ln() + self.log_q_hist(id, t, beta_prev);
        log_add_exp(new, hist)
    }

    /// Enumerated `target / q_mix`.
    pub fn correction_factor(&self, id: u32, t: usize, alpha: f64, beta: f64, beta_prev: f64) -> f64 {
        (self.log_target(id, t, beta) - self.log_q_mix(id, t, alpha, beta_prev)).exp()
    }

    /// `ln Z_{t-1}`, the normalizer of the round `t - 1` target.
    pub fn log_z_prev(&self, t: usize, beta_prev: f64) -> f64 {
        log_sum_exp(
            self.prefixes_up_to(t)
                .map(|n| n.log_p + Self::powered(self.log_score(n.id), beta_prev)),
        )
    }

    pub fn log_target_normalizer(&self, t: usize, beta: f64) -> f64 {
        log_sum_exp(self.prefixes().map(|n| self.log_target(n.id, t, beta)))
    }

    pub fn log_q_new_total(&self, t: usize, beta_prev: f64) -> f64 {
        log_sum_exp(self.prefixes().map(|n| self.log_q_new(n.id, t, beta_prev)))
    }

    pub fn log_q_hist_total(&self, t: usize, beta_prev: f64) -> f64 {
        log_sum_exp(self.prefixes().map(|n| self.log_q_hist(n.id, t, beta_prev)))
    }

    /// Normalized target probability of every prefix with positive mass.
    pub fn target_distribution(&self, t: usize, beta: f64) -> BTreeMap<u32, f64> {
        let lz = self.log_target_normalizer(t, beta);
        self.prefixes_up_to(t + 1)
            .map(|n| (n.id, (self.log_target(n.id, t, beta) - lz).exp()))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    /// `E[f]` under the normalized round-`t` target.
    pub fn expectation(&self, t: usize, beta: f64, f: &dyn Fn(u32) -> f64) -> f64 {
        self.expectation_over(t, beta, |_| true, f)
    }

    /// `E[f]` under the round-`t` target restricted to length exactly
    /// `t + 1`, the target of a frontier-only particle filter.
    pub fn frontier_expectation(&self, t: usize, beta: f64, f: &dyn Fn(u32) -> f64) -> f64 {
        self.expectation_over(t, beta, |n| n.depth == t + 1, f)
    }

    fn expectation_over(
        &self,
        t: usize,
        beta: f64,
        keep: impl Fn(&OracleNode) -> bool,
        f: &dyn Fn(u32) -> f64,
    ) -> f64 {
        let logs: Vec<(u32, f64)> = self
            .prefixes_up_to(t + 1)
            .filter(|n| keep(n))
            .map(|n| (n.id, self.log_target(n.id, t, beta)))
            .collect();
        let m = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
        let num = stable_sum(logs.iter().map(|(id, l)| f(*id) * (l - m).exp()));
        let den = stable_sum(logs.iter().map(|(_, l)| (l - m).exp()));
        num / den
    }

    /// The `m` highest-scoring prefixes of length `<= round + 1`, the
    /// prefixes a persistent greedy pool could hold after `round` rounds.
    /// Ties go to the smaller node id.
    pub fn top_m(&self, round: usize, m: usize) -> Vec<u32> {
        let mut ids: Vec<&OracleNode> = self.prefixes_up_to(round + 1).collect();
        ids.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        ids.into_iter().take(m).map(|n| n.id).collect()
    }

    /// Node with the largest `sigma` among prefixes of length `<= max_len`.
    pub fn argmax_sigma(&self, max_len: usize) -> Option<u32> {
        self.prefixes_up_to(max_len)
            .max_by(|a, b| a.sigma.total_cmp(&b.sigma).then(b.id.cmp(&a.id)))
            .map(|n| n.id)
    }

    pub fn export(&self) -> TableExport {
        TableExport {
            branching: self.branching,
            depth: self.depth,
            nodes: self.nodes.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.export()).expect("oracle table serializes")
    }
}

/// Whether the global top-`m` prefixes at `round` all have zero correct
/// continuations while some other prefix still has one.
pub fn blocker_predicate(table: &OracleTable, round: usize, m: usize) -> bool {
    let top = table.top_m(round, m);
    if top.iter().any(|&id| table.node(id).sigma > 0.0) {
        return false;
    }
    table
        .prefixes_up_to(round + 1)
        .any(|n| n.sigma > 0.0 && !top.contains(&n.id))
}

/// Residual of the mixture importance-sampling identity on the table at
/// round `t`, in both the normalized and the self-normalized form.
pub fn mis_identity_check(
    table: &OracleTable,
    f: &dyn Fn(u32) -> f64,
    alpha: f64,
    beta: f64,
    beta_prev: f64,
    t: usize,
) -> f64 {
    let ids: Vec<u32> = table.prefixes_up_to(t + 1).map(|n| n.id).collect();
    let problem = MisProblem {
        target: ids.iter().map(|&z| table.log_target(z, t, beta)).collect(),
        proposals: vec![
            ids.iter().map(|&z| table.log_q_new(z, t, beta_prev)).collect(),
            ids.iter().map(|&z| table.log_q_hist(z, t, beta_prev)).collect(),
        ],
        alphas: vec![alpha, 1.0 - alpha],
        f: ids.iter().map(|&z| f(z)).collect(),
    };
    problem.residual()
}

/// A finite mixture importance-sampling problem in log space. Proposals must
/// share one normalizer; the target may have its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisProblem {
    pub target: Vec<f64>,
    pub proposals: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub f: Vec<f64>,
}

impl MisProblem {
    /// Random problem over `states` states with `k` proposals.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, k: usize, alphas: Vec<f64>) -> Self {
        assert_eq!(alphas.len(), k);
        let scale: f64 = rng.random_range(-3.0..3.0);
        let target = (0..states).map(|_| scale + rng.random_range(-4.0..0.0)).collect();
        let q_scale: f64 = rng.random_range(-3.0..3.0);
        let proposals: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..states).map(|_| rng.random_range(-4.0..0.0)).collect();
                let z = log_sum_exp(raw.iter().copied());
                raw.iter().map(|l| l - z + q_scale).collect()
            })
            .collect();
        let f = (0..states).map(|_| rng.random_range(-2.0..2.0)).collect();
        Self {
            target,
            proposals,
            alphas,
            f,
        }
    }

    fn log_mix(&self, i: usize) -> f64 {
        log_sum_exp(
            self.alphas
                .iter()
                .zip(&self.proposals)
                .map(|(a, q)| a.ln() + q[i]),
        )
    }

    /// Direct expectation under the normalized target.
    pub fn direct(&self) -> f64 {
        let lz = log_sum_exp(self.target.iter().copied());
        stable_sum(self.f.iter().zip(&self.target).map(|(f, l)| f * (l - lz).exp()))
    }

    /// `sum_i E_{q_i}[f · alpha_i · P / q_mix]` with normalized densities.
    pub fn normalized_form(&self) -> f64 {
        let lzp = log_sum_exp(self.target.iter().copied());
        let lzq = log_sum_exp(self.proposals[0].iter().copied());
        let mut terms = Vec::new();
        for (a, q) in self.alphas.iter().zip(&self.proposals) {
            for s in 0..self.f.len() {
                if q[s] == f64::NEG_INFINITY || self.target[s] == f64::NEG_INFINITY {
                    continue;
                }
                let lq = q[s] - lzq;
                let ratio = (self.target[s] - lzp) - (self.log_mix(s) - lzq);
                terms.push(self.f[s] * a * (lq + ratio).exp());
            }
        }
        stable_sum(terms)
    }

    /// Ratio form with unnormalized target and mixture.
    pub fn self_normalized_form(&self) -> f64 {
        let lzq = log_sum_exp(self.proposals[0].iter().copied());
        let mut num = Vec::new();
        let mut den = Vec::new();
        for (a, q) in self.alphas.iter().zip(&self.proposals) {
            for s in 0..self.f.len() {
                if q[s] == f64::NEG_INFINITY || self.target[s] == f64::NEG_INFINITY {
                    continue;
                }
                let w = a * ((q[s] - lzq) + self.target[s] - self.log_mix(s)).exp();
                num.push(self.f[s] * w);
                den.push(w);
            }
        }
        stable_sum(num) / stable_sum(den)
    }

    /// Largest absolute gap between the direct expectation and either form.
    pub fn residual(&self) -> f64 {
        let d = self.direct();
        (self.normalized_form() - d)
            .abs()
            .max((self.self_normalized_form() - d).abs())
    }
}

/// Which target a probe compares the particle estimate against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeTarget {
    /// Powered target over every length `<= t + 1`.
    AllLengths,
    /// Powered target restricted to length `t + 1`.
    Frontier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub method: Method,
    pub ns: Vec<usize>,
    pub round: usize,
    pub trials: usize,
    pub seed: u64,
    pub target: ProbeTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub n: usize,
    pub mean_abs_error: f64,
    /// Sample standard deviation of the per-trial estimates.
    pub estimate_sd: f64,
    pub mean_estimate: f64,
    pub mean_truth: f64,
}

/// Self-normalized estimate of `E[f]` from the pool after round `t`,
/// compared against the exact target at the run's realized power.
pub fn convergence_probe(
    env: &SyntheticTreeEnv,
    table: &OracleTable,
    cfg: &ProbeConfig,
    f: &(dyn Fn(u32) -> f64 + Sync),
) -> Result<Vec<ProbePoint>, SearchError> {
    use rayon::prelude::*;
    let mut out = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let trials: Result<Vec<(f64, f64)>, SearchError> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = crate::harness::derive_seed(cfg.seed, &[n as u64, trial as u64]);
                let mut sc = SearchConfig::new(cfg.method, n, n, cfg.round).with_seed(seed);
                sc.early_stop = false;
                sc.record_trace = false;
                let run = run_search(&sc, env)?;
                let pool = &run.pool;
                let total = stable_sum(pool.weights());
                let est = stable_sum(pool.entries.iter().map(|e| {
                    let node = match run.arena.get(e.id).step {
                        Step::Node(z) => z,
                        Step::Text(_) => unreachable!("synthetic runs store node steps"),
                    };
                    e.weight * f(node)
                })) / total;
                let beta = run.betas.get(cfg.round).copied().unwrap_or(1.0);
                let truth = match cfg.target {
                    ProbeTarget::AllLengths => table.expectation(cfg.round, beta, f),
                    ProbeTarget::Frontier => table.frontier_expectation(cfg.round, beta, f),
                };
                Ok((est, truth))
            })
            .collect();
        let trials = trials?;
        let k = trials.len() as f64;
        let mean_est = trials.iter().map(|t| t.0).sum::<f64>() / k;
        let var = trials.iter().map(|t| (t.0 - mean_est).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        out.push(ProbePoint {
            n,
            mean_abs_error: trials.iter().map(|(e, t)| (e - t).abs()).sum::<f64>() / k,
            estimate_sd: var.sqrt(),
            mean_estimate: mean_est,
            mean_truth: trials.iter().map(|t| t.1).sum::<f64>() / k,
        });
    }
    Ok(out)
}
