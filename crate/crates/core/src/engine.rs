//! The search loop: initialize a pool of one-step prefixes, then per round
//! select parents, expand them, score the children and update the pool.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ExpandRequest, Expansion};
use crate::config::{ConfigError, FinalRule, Method, RhoMode, SearchConfig};
use crate::model::{multinomial_positions, Arena, NewPrefix, Pool, PoolError, PrefixId, R_MIN};
use crate::pbsmc::{
    alpha_at, assign_pbsmc_weights, sample_retained, RoundWeights, ScheduleParams, ScheduleState,
    WeightError,
};
use crate::selectors::{
    adaptive_rho, memory_update, select_beam, select_smc_parents, select_sps, WeightRule,
};
use crate::SearchRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// Empty unless the config records traces.
    pub parents: Vec<PrefixId>,
    /// Empty unless the config records traces.
    pub children: Vec<PrefixId>,
    pub children_count: usize,
    pub pool_size: usize,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub subpool_size: Option<usize>,
    pub retained: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeLedger {
    /// Steps generated by the backend, one per new child.
    pub new_generation_units: u64,
    /// Context steps re-materialized when expanding a parent that was not
    /// among the previous round's children.
    pub backtrack_recompute_units: u64,
    pub scorer_calls: u64,
    /// Terminal parents passed through unchanged.
    pub frozen_passthroughs: u64,
    /// Tokens reported by the backend, summed over generated steps.
    pub generated_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Valid,
    /// Nothing completed; the answer comes from the deepest partial prefix.
    NoTerminalTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub prefix: Option<PrefixId>,
    pub answer: Option<String>,
    pub status: AnswerStatus,
    /// Ground-truth correctness when the backend knows it.
    pub correct: Option<bool>,
}

impl FinalAnswer {
    pub fn is_valid(&self) -> bool {
        self.status == AnswerStatus::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BetaMode {
    Fixed(f64),
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AlphaMode {
    Fixed(f64),
    Schedule,
}

/// Resolved weighting plan of an SMC-family method.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SmcPlan {
    beta: BetaMode,
    alpha: AlphaMode,
    history: bool,
}

impl SmcPlan {
    fn for_config(config: &SearchConfig) -> Option<Self> {
        let (adaptive, scheduled, history) = match config.method {
            Method::PowerSmc => (true, false, false),
            Method::BacktrackSmc => (false, true, true),
            Method::PowerBacktrackSmc => (true, true, true),
            _ => return None,
        };
        let s = &config.schedule;
        let beta = match s.beta_override {
            Some(b) => BetaMode::Fixed(b),
            None if adaptive => BetaMode::Adaptive,
            None => BetaMode::Fixed(1.0),
        };
        let alpha = match s.alpha_override {
            Some(a) => AlphaMode::Fixed(a),
            None if scheduled => AlphaMode::Schedule,
            None => AlphaMode::Fixed(1.0),
        };
        Some(Self {
            beta,
            alpha,
            history: s.retain_history_override.unwrap_or(history),
        })
    }

    fn beta0(&self, config: &SearchConfig) -> f64 {
        match self.beta {
            BetaMode::Fixed(b) => b,
            BetaMode::Adaptive => config.schedule.beta0,
        }
    }
}

/// State of one search, from initialization to the final answer.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub config: SearchConfig,
    pub arena: Arena,
    pub pool: Pool,
    pub trace: Vec<RoundTrace>,
    pub ledger: ComputeLedger,
    /// `beta_0, beta_1, ...` for SMC-family methods with a power; empty
    /// otherwise.
    pub betas: Vec<f64>,
    /// Rounds actually run; below the horizon after an early stop.
    pub rounds_run: usize,
    /// Pool size after initialization and after every round.
    pub pool_sizes: Vec<usize>,
    /// Cumulative ledger after initialization and after every round.
    pub ledger_history: Vec<ComputeLedger>,
    pub final_answer: Option<FinalAnswer>,
    last_children: Vec<PrefixId>,
    schedule: Option<ScheduleState>,
    plan: Option<SmcPlan>,
    rng: SearchRng,
}

fn powered_weight(score: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        score
    } else {
        (beta * score.max(R_MIN).ln()).exp()
    }
}

impl SearchRun {
    /// Every positively weighted pool entry is terminal.
    pub fn all_live_terminal(&self) -> bool {
        self.pool
            .entries
            .iter()
            .filter(|e| e.weight > 0.0)
            .all(|e| self.arena.get(e.id).terminal)
    }

    fn weight_rule(&self) -> WeightRule {
        WeightRule::for_method(self.config.method, self.config.cumulative_mean_scores)
    }

    /// Push scored expansions; the caller supplies the parent of each.
    fn commit(
        &mut self,
        backend: &dyn Backend,
        items: Vec<(Option<PrefixId>, Expansion)>,
    ) -> Result<Vec<PrefixId>, SearchError> {
        let refs: Vec<(Option<PrefixId>, &Expansion)> = items.iter().map(|(p, e)| (*p, e)).collect();
        let scores = backend.score_batch(&self.arena, &refs)?;
        if scores.len() != items.len() {
            return Err(BackendError::MalformedResponse(format!(
                "scorer returned {} scores for {} children",
                scores.len(),
                items.len()
            ))
            .into());
        }
        self.ledger.scorer_calls += items.len() as u64;
        self.ledger.new_generation_units += items.len() as u64;
        let mut ids = Vec::with_capacity(items.len());
        for ((parent, exp), score) in items.into_iter().zip(scores) {
            self.ledger.generated_tokens += exp.tokens.unwrap_or(0);
            ids.push(self.arena.push(NewPrefix {
                parent,
                step: exp.step,
                step_logprob: exp.step_logprob,
                prm_score: score,
                terminal: exp.terminal,
                answer: exp.answer,
            }));
        }
        Ok(ids)
    }

    /// Append `beta_{t+1}` from the pool just formed.
    fn advance_schedule(&mut self) {
        let (Some(plan), Some(schedule)) = (self.plan, self.schedule.as_mut()) else {
            return;
        };
        match plan.beta {
            BetaMode::Adaptive => {
                let scores: Vec<f64> = self
                    .pool
                    .ids()
                    .map(|id| self.arena.get(id).prm_score)
                    .collect();
                schedule.advance(&scores);
            }
            BetaMode::Fixed(b) => schedule.hold(b),
        }
        self.betas = schedule.betas.clone();
    }
}

/// Sample `N` one-step prefixes from the prompt and weight them by score.
pub fn initialize(config: &SearchConfig, backend: &dyn Backend) -> Result<SearchRun, SearchError> {
    config.validate()?;
    let n = config.child_budget;
    let plan = SmcPlan::for_config(config);
    let schedule = plan.map(|p| {
        ScheduleState::new(
            ScheduleParams {
                gamma: config.schedule.gamma,
                g_min: config.schedule.g_min,
                g_max: config.schedule.g_max,
                horizon: config.horizon,
            },
            p.beta0(config),
        )
    });
    let mut run = SearchRun {
        config: config.clone(),
        arena: Arena::new(),
        pool: Pool::new(0),
        trace: Vec::new(),
        ledger: ComputeLedger::default(),
        betas: schedule.as_ref().map(|s| s.betas.clone()).unwrap_or_default(),
        rounds_run: 0,
        pool_sizes: Vec::new(),
        ledger_history: Vec::new(),
        final_answer: None,
        last_children: Vec::new(),
        schedule,
        plan,
        rng: SearchRng::seed_from_u64(config.rng_seed),
    };
    let expansions = backend.expand(&run.arena, None, n, config.temperature, &mut run.rng)?;
    if expansions.len() != n {
        return Err(BackendError::MalformedResponse(format!(
            "expected {n} children of the prompt, got {}",
            expansions.len()
        ))
        .into());
    }
    let ids = run.commit(backend, expansions.into_iter().map(|e| (None, e)).collect())?;
    let beta0 = run.betas.first().copied().unwrap_or(1.0);
    run.pool = Pool::from_entries(
        ids.iter()
            .map(|&id| (id, powered_weight(run.arena.get(id).prm_score, beta0))),
        0,
    );
    run.last_children = ids;
    run.advance_schedule();
    run.pool_sizes.push(run.pool.len());
    run.ledger_history.push(run.ledger);
    Ok(run)
}

/// Split `n` children over `k` parents: `ceil(n / k)` each until the
/// budget runs out.
fn child_counts(n: usize, k: usize) -> Vec<usize> {
    let per = n.div_ceil(k);
    let mut left = n;
    (0..k)
        .map(|_| {
            let c = per.min(left);
            left -= c;
            c
        })
        .collect()
}

/// One select, expand, score, update cycle.
pub fn run_round(run: &mut SearchRun, backend: &dyn Backend, t: usize) -> Result<(), SearchError> {
    let config = run.config.clone();
    let n = config.child_budget;
    let m = config.effective_parent_budget();
    let mut rho = None;
    let mut subpool = None;

    let parents: Vec<PrefixId> = match config.method {
        Method::Beam | Method::GreedySelection => select_beam(&run.pool, m),
        Method::Sps => {
            let r = match config.rho {
                RhoMode::Adaptive => adaptive_rho(&run.pool, &run.arena),
                RhoMode::Fixed(r) => r,
            };
            let sel = select_sps(&run.pool, m, r, &mut run.rng)?;
            rho = Some(r);
            subpool = Some(sel.subpool_size);
            sel.parents
        }
        Method::StandardSmc | Method::PowerSmc | Method::BacktrackSmc | Method::PowerBacktrackSmc => {
            select_smc_parents(&run.pool, n, &mut run.rng)?
        }
        Method::BestOfN | Method::SelfConsistency => run.pool.ids().collect(),
    };
    if parents.is_empty() {
        return Err(PoolError::AllWeightsZero.into());
    }
    let counts = child_counts(n, parents.len());

    // expand live parents, pass terminal ones through
    let previous: HashSet<PrefixId> = run.last_children.iter().copied().collect();
    let mut recomputed = HashSet::new();
    let mut requests = Vec::new();
    for (&p, &c) in parents.iter().zip(&counts) {
        if c == 0 || run.arena.get(p).terminal {
            continue;
        }
        requests.push(ExpandRequest {
            parent: Some(p),
            count: c,
        });
        if !previous.contains(&p) && recomputed.insert(p) {
            run.ledger.backtrack_recompute_units += u64::from(run.arena.get(p).depth);
        }
    }
    let batches = backend.expand_batch(&run.arena, &requests, config.temperature, &mut run.rng)?;
    let mut items = Vec::with_capacity(n);
    for (req, batch) in requests.iter().zip(batches) {
        if batch.len() != req.count {
            return Err(BackendError::MalformedResponse(format!(
                "expected {} children, got {}",
                req.count,
                batch.len()
            ))
            .into());
        }
        items.extend(batch.into_iter().map(|e| (req.parent, e)));
    }
    let mut fresh = run.commit(backend, items)?.into_iter();
    let mut children = Vec::with_capacity(n);
    for (&p, &c) in parents.iter().zip(&counts) {
        if run.arena.get(p).terminal {
            children.extend(std::iter::repeat_n(p, c));
            run.ledger.frozen_passthroughs += c as u64;
        } else {
            children.extend(fresh.by_ref().take(c));
        }
    }

    // memory update
    let mut beta = None;
    let mut alpha = None;
    let mut retained_count = 0;
    let old_pool = std::mem::take(&mut run.pool);
    run.pool = match run.plan {
        Some(plan) => {
            let retained = if plan.history {
                sample_retained(&old_pool, t, n, &mut run.rng)?
            } else {
                Vec::new()
            };
            retained_count = retained.len();
            let schedule = run.schedule.as_ref().expect("smc plan has a schedule");
            let a = match plan.alpha {
                AlphaMode::Fixed(a) => a,
                AlphaMode::Schedule => alpha_at(&schedule.params, t),
            };
            let weights = RoundWeights {
                round: t,
                alpha: a,
                beta: schedule.beta(t),
                beta_prev: schedule.beta(t - 1),
            };
            beta = Some(weights.beta);
            alpha = Some(a);
            assign_pbsmc_weights(&run.arena, &retained, &children, n, plan.history, &weights)?
        }
        None => memory_update(config.method, &run.arena, old_pool, &children, run.weight_rule(), t),
    };
    run.pool.round = t;
    run.advance_schedule();

    run.rounds_run = t;
    run.pool_sizes.push(run.pool.len());
    run.ledger_history.push(run.ledger);
    run.trace.push(RoundTrace {
        round: t,
        parents: if config.record_trace { parents } else { Vec::new() },
        children: if config.record_trace { children.clone() } else { Vec::new() },
        children_count: children.len(),
        pool_size: run.pool.len(),
        beta,
        alpha,
        rho,
        subpool_size: subpool,
        retained: retained_count,
    });
    run.last_children = children;
    Ok(())
}

fn best_terminal<'a>(arena: &Arena, ids: impl Iterator<Item = &'a PrefixId>) -> Option<PrefixId> {
    ids.filter(|id| arena.get(**id).terminal)
        .max_by(|a, b| {
            arena
                .get(**a)
                .prm_score
                .total_cmp(&arena.get(**b).prm_score)
                .then(b.cmp(a))
        })
        .copied()
}

fn majority_answer(arena: &Arena, pool: &Pool) -> Option<PrefixId> {
    // answer -> (votes, first entry carrying it)
    let mut votes: BTreeMap<&str, (usize, usize, PrefixId)> = BTreeMap::new();
    for (pos, id) in pool.ids().enumerate() {
        let p = arena.get(id);
        if let (true, Some(a)) = (p.terminal, p.answer.as_deref()) {
            let e = votes.entry(a).or_insert((0, pos, id));
            e.0 += 1;
        }
    }
    votes
        .values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|v| v.2)
}

/// Pick the final answer from a finished run.
pub fn finalize(run: &mut SearchRun, backend: &dyn Backend) -> FinalAnswer {
    let arena = &run.arena;
    let pick = match run.config.method {
        Method::SelfConsistency => majority_answer(arena, &run.pool),
        Method::BestOfN => best_terminal(arena, run.pool.entries.iter().map(|e| &e.id)),
        _ => match run.config.final_rule {
            FinalRule::BestOverHistory => {
                let all: Vec<PrefixId> = arena.iter().map(|p| p.id).collect();
                best_terminal(arena, all.iter())
            }
            FinalRule::BestInFinalPool => best_terminal(arena, run.pool.entries.iter().map(|e| &e.id)),
            FinalRule::SampleFinalPool => {
                let done = Pool::from_entries(
                    run.pool
                        .entries
                        .iter()
                        .filter(|e| arena.get(e.id).terminal)
                        .map(|e| (e.id, e.weight)),
                    run.pool.round,
                );
                multinomial_positions(&done, 1, &mut run.rng)
                    .ok()
                    .map(|pos| done.entries[pos[0]].id)
            }
        },
    };
    let answer = match pick {
        Some(id) => {
            let answer = arena.get(id).answer.clone();
            FinalAnswer {
                prefix: Some(id),
                correct: answer.as_deref().and_then(|a| backend.is_correct(a)),
                answer,
                status: AnswerStatus::Valid,
            }
        }
        None => {
            let deepest = arena
                .iter()
                .max_by(|a, b| {
                    a.depth
                        .cmp(&b.depth)
                        .then(a.prm_score.total_cmp(&b.prm_score))
                        .then(b.id.cmp(&a.id))
                })
                .map(|p| p.id);
            FinalAnswer {
                prefix: deepest,
                answer: None,
                status: AnswerStatus::NoTerminalTrace,
                correct: backend.is_correct("").map(|_| false),
            }
        }
    };
    run.final_answer = Some(answer.clone());
    answer
}

/// Run a full search: initialization, up to `T` rounds, final answer.
pub fn run_search(config: &SearchConfig, backend: &dyn Backend) -> Result<SearchRun, SearchError> {
    let mut run = initialize(config, backend)?;
    for t in 1..=config.horizon {
        if config.early_stop && run.all_live_terminal() {
            break;
        }
        run_round(&mut run, backend, t)?;
    }
    finalize(&mut run, backend);
    Ok(run)
}

/// `N` independent rollouts ranked by final PRM score.
pub fn run_best_of_n(config: &SearchConfig, backend: &dyn Backend) -> Result<SearchRun, SearchError> {
    let mut c = config.clone();
    c.method = Method::BestOfN;
    run_search(&c, backend)
}
