//! Oracle property suite behind the `oracle-check` command.

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::backend::{RandomEnvParams, SyntheticTreeEnv};
use crate::config::{Method, RhoMode, SearchConfig};
use crate::engine::{run_search, SearchRun};
use crate::model::R_MIN;
use crate::oracle::{mis_identity_check, stable_sum, MisProblem, OracleTable};
use crate::pbsmc::{beta_step, concentration_statistic, log_correction_factor, MixtureWeightInputs};
use crate::SearchRng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst < tol,
        detail: format!("worst {worst:.3e}, tolerance {tol:.0e}"),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b.abs().max(f64::MIN_POSITIVE)).abs()
    }
}

fn random_env(rng: &mut SearchRng, max_b: usize, max_d: usize) -> SyntheticTreeEnv {
    SyntheticTreeEnv::random(&RandomEnvParams {
        branching: rng.random_range(2..=max_b),
        depth: rng.random_range(2..=max_d),
        skew: rng.random_range(0.0..1.0),
        noise_weight: rng.random_range(0.0..1.0),
        bias_scale: rng.random_range(0.0..0.3),
        seed: rng.random(),
        ..Default::default()
    })
    .expect("bounded random envs construct")
}

/// Mixture importance-sampling identity on random toy problems.
pub fn mis_toys(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let a = 0.1 * (1 + i % 9) as f64;
        let states = rng.random_range(2..40);
        worst = worst.max(MisProblem::random(&mut rng, states, 2, vec![a, 1.0 - a]).residual());
    }
    check("mis identity (toy problems)", worst, 1e-12)
}

/// Mixture identity on enumerated trees.
pub fn mis_tables(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let env = random_env(&mut rng, 3, 4);
        let table = OracleTable::enumerate(&env).expect("small env");
        let target = rng.random_range(1..env.node_count() as u32);
        for t in 1..env.depth() {
            let alpha = rng.random_range(0.1..0.9);
            let bp = rng.random_range(0.0..5.0);
            let b = bp + rng.random_range(0.0..5.0);
            worst = worst.max(mis_identity_check(&table, &|z| (z == target) as u8 as f64, alpha, b, bp, t));
            worst = worst.max(mis_identity_check(&table, &|_| 1.0, alpha, b, bp, t));
        }
    }
    check("mis identity (enumerated trees)", worst, 1e-12)
}

/// `sum q_new = sum q_hist = Z_{t-1}` at every round below the depth.
pub fn shared_normalizer(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let env = random_env(&mut rng, 4, 6);
        let table = OracleTable::enumerate(&env).expect("small env");
        for t in 1..env.depth() {
            let bp = rng.random_range(0.0..30.0);
            let z = table.log_z_prev(t, bp).exp();
            worst = worst
                .max(rel(table.log_q_new_total(t, bp).exp(), z))
                .max(rel(table.log_q_hist_total(t, bp).exp(), z));
        }
    }
    check("shared proposal normalizer", worst, 1e-10)
}

/// Closed-form correction factor against the enumerated density ratio.
pub fn correction_factors(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let env = random_env(&mut rng, 4, 5);
        let table = OracleTable::enumerate(&env).expect("small env");
        for _ in 0..3 {
            let t = rng.random_range(1..env.depth());
            let alpha = rng.random_range(0.05..0.95);
            let bp = rng.random_range(0.0..20.0);
            let b = bp + rng.random_range(0.0..9.0);
            for n in table.prefixes_up_to(t + 1) {
                let parent_prm = match n.parent {
                    Some(p) if p != 0 => table.node(p).score,
                    _ => 1.0,
                };
                let lf = log_correction_factor(&MixtureWeightInputs {
                    prm_score: n.score,
                    parent_prm,
                    len: n.depth,
                    round: t,
                    alpha,
                    beta: b,
                    beta_prev: bp,
                })
                .expect("lengths are in range");
                let exact = table.log_target(n.id, t, b) - table.log_q_mix(n.id, t, alpha, bp);
                // relative error of F equals |exp(d) - 1| for log difference d
                worst = worst.max((lf - exact).exp_m1().abs());
            }
        }
    }
    check("correction factor vs enumeration", worst, 1e-10)
}

/// Normalized targets sum to one and sigma is additive.
pub fn normalization(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let env = random_env(&mut rng, 4, 5);
        let table = OracleTable::enumerate(&env).expect("small env");
        for t in 0..env.depth() {
            let total = stable_sum(table.target_distribution(t, rng.random_range(0.0..20.0)).into_values());
            worst = worst.max((total - 1.0).abs());
        }
        for n in table.prefixes().filter(|n| !n.terminal) {
            let kids = stable_sum(env.children(n.id).map(|c| table.node(c).sigma));
            worst = worst.max((kids - n.sigma).abs());
        }
    }
    check("target normalization and sigma additivity", worst, 1e-12)
}

/// `gamma / C <= Delta <= gamma` on random pools, with equality on uniform
/// and fully concentrated pools.
pub fn schedule_bounds(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut violations = 0usize;
    for c in 1..=64usize {
        let gamma = rng.random_range(0.5..20.0);
        let uniform = vec![rng.random_range(R_MIN..=1.0); c];
        let mut peaked = vec![0.0; c];
        peaked[0] = 1.0;
        if beta_step(gamma, concentration_statistic(&uniform), c) != gamma
            || beta_step(gamma, concentration_statistic(&peaked), c) != gamma / c as f64
        {
            violations += 1;
        }
    }
    for _ in 0..count {
        let c = rng.random_range(1..300);
        let gamma = rng.random_range(0.5..20.0);
        let scores: Vec<f64> = (0..c).map(|_| rng.random_range(R_MIN..=1.0)).collect();
        let d = beta_step(gamma, concentration_statistic(&scores), c);
        if !(d >= gamma / c as f64 && d <= gamma) {
            violations += 1;
        }
    }
    CheckResult {
        name: "power schedule bounds",
        passed: violations == 0,
        detail: format!("{violations} violations over {count} random and 128 extreme draws"),
    }
}

fn same_trace(a: &SearchRun, b: &SearchRun) -> bool {
    a.trace.len() == b.trace.len()
        && a.trace
            .iter()
            .zip(&b.trace)
            .all(|(x, y)| x.parents == y.parents && x.children == y.children && x.pool_size == y.pool_size)
        && a.pool == b.pool
        && a.final_answer == b.final_answer
}

/// SPS at full ratio against Greedy Selection, and reduced PB-SMC against
/// Standard SMC.
pub fn reductions(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..count {
        let env = random_env(&mut rng, 3, 6);
        let s: u64 = rng.random();
        let mut sps = SearchConfig::new(Method::Sps, 8, 2, 8).with_seed(s);
        sps.rho = RhoMode::Fixed(1.0);
        let greedy = SearchConfig::new(Method::GreedySelection, 8, 2, 8).with_seed(s);
        let mut pb = SearchConfig::new(Method::PowerBacktrackSmc, 8, 8, 8).with_seed(s);
        pb.schedule.alpha_override = Some(1.0);
        pb.schedule.beta_override = Some(1.0);
        pb.schedule.retain_history_override = Some(false);
        let smc = SearchConfig::new(Method::StandardSmc, 8, 8, 8).with_seed(s);
        let run = |c: &SearchConfig| run_search(c, &env).expect("synthetic runs succeed");
        if !same_trace(&run(&sps), &run(&greedy)) {
            mismatches += 1;
        }
        if !same_trace(&run(&pb), &run(&smc)) {
            mismatches += 1;
        }
    }
    CheckResult {
        name: "reduction equalities",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatching trace pairs of {}", 2 * count),
    }
}

/// Seeded reruns agree and every round creates exactly N children.
pub fn determinism(seed: u64, count: usize) -> CheckResult {
    let mut rng = SearchRng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for i in 0..count {
        let env = random_env(&mut rng, 3, 6);
        let method = Method::ALL[i % Method::ALL.len()];
        let c = SearchConfig::new(method, 8, 2, 6).with_seed(rng.random());
        let a = run_search(&c, &env).expect("synthetic runs succeed");
        let b = run_search(&c, &env).expect("synthetic runs succeed");
        let units = a.ledger.new_generation_units + a.ledger.frozen_passthroughs;
        if !same_trace(&a, &b) || a.ledger != b.ledger {
            failures.push(format!("{method}: rerun differs"));
        }
        if a.trace.iter().any(|r| r.children_count != 8) || units != 8 * (a.rounds_run as u64 + 1) {
            failures.push(format!("{method}: budget broken"));
        }
        if method.is_frontier_only() && a.ledger.backtrack_recompute_units != 0 {
            failures.push(format!("{method}: frontier method backtracked"));
        }
    }
    CheckResult {
        name: "determinism and budget invariants",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{count} runs")
        } else {
            failures.join("; ")
        },
    }
}

/// The whole suite with fixed seeds.
pub fn oracle_suite() -> Vec<CheckResult> {
    vec![
        mis_toys(1, 50),
        mis_tables(2, 10),
        shared_normalizer(3, 20),
        correction_factors(4, 10),
        normalization(5, 10),
        schedule_bounds(6, 10_000),
        reductions(7, 20),
        determinism(8, 27),
    ]
}
