//! Parent selection rules and memory updates for every method except the
//! PB-SMC weighting, which lives in [`crate::pbsmc`].

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::model::{
    multinomial_sample, pool_union, subsample_positions, top_m_select, Arena, Pool, PoolError,
    PrefixId, R_MIN,
};
use crate::SearchRng;

/// Top `m` entries by weight (all of them when the pool is smaller).
pub fn select_beam(pool: &Pool, m: usize) -> Vec<PrefixId> {
    top_m_select(pool, m)
}

/// `n` parents drawn with replacement by weight.
pub fn select_smc_parents(
    pool: &Pool,
    n: usize,
    rng: &mut SearchRng,
) -> Result<Vec<PrefixId>, PoolError> {
    multinomial_sample(pool, n, rng)
}

/// `r(z) / r(pa z)`.
pub fn smc_incremental_weight(prm_score: f64, parent_prm: f64) -> f64 {
    if prm_score < 1e-6 || parent_prm < 1e-6 {
        (prm_score.max(f64::MIN_POSITIVE).ln() - parent_prm.max(f64::MIN_POSITIVE).ln()).exp()
    } else {
        prm_score / parent_prm
    }
}

/// Mean clamped PRM score over the pool, duplicates counted.
pub fn adaptive_rho(pool: &Pool, arena: &Arena) -> f64 {
    if pool.is_empty() {
        return 1.0;
    }
    let total: f64 = pool
        .ids()
        .map(|id| arena.get(id).prm_score.max(R_MIN))
        .sum();
    (total / pool.len() as f64).clamp(R_MIN, 1.0)
}

/// `K = max(M, floor(rho · |P|))`, never above `|P|`.
pub fn subpool_size(pool_len: usize, m: usize, rho: f64) -> usize {
    let scaled = (rho * pool_len as f64).floor() as usize;
    m.max(scaled).min(pool_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsSelection {
    pub parents: Vec<PrefixId>,
    pub subpool_size: usize,
}

/// Top `m` inside a uniformly drawn subpool of size [`subpool_size`].
pub fn select_sps(
    pool: &Pool,
    m: usize,
    rho: f64,
    rng: &mut SearchRng,
) -> Result<SpsSelection, PoolError> {
    let k = subpool_size(pool.len(), m, rho);
    let positions = subsample_positions(pool, k, rng)?;
    let sub = Pool {
        entries: positions.iter().map(|&i| pool.entries[i]).collect(),
        round: pool.round,
    };
    Ok(SpsSelection {
        parents: top_m_select(&sub, m),
        subpool_size: k,
    })
}

/// How a memory update weights its entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightRule {
    /// Last-step PRM score.
    Prm,
    /// Mean PRM score along the lineage.
    CumulativeMean,
    /// `r(z) / r(pa z)`, rescaled so the largest weight is 1.
    IncrementalRatio,
}

impl WeightRule {
    pub fn for_method(method: Method, cumulative_mean: bool) -> Self {
        match method {
            Method::StandardSmc => WeightRule::IncrementalRatio,
            _ if cumulative_mean => WeightRule::CumulativeMean,
            _ => WeightRule::Prm,
        }
    }

    fn weight(self, arena: &Arena, id: PrefixId) -> f64 {
        match self {
            WeightRule::Prm | WeightRule::IncrementalRatio => arena.get(id).prm_score,
            WeightRule::CumulativeMean => arena.cumulative_mean_score(id),
        }
    }
}

/// Weight a set of freshly scored children.
pub fn weigh_children(arena: &Arena, children: &[PrefixId], rule: WeightRule, round: usize) -> Pool {
    match rule {
        WeightRule::IncrementalRatio => {
            // log space with a max shift, matching the PB-SMC weight path
            let logs: Vec<f64> = children
                .iter()
                .map(|&id| arena.get(id).prm_score.max(R_MIN).ln() - arena.parent_score(id).max(R_MIN).ln())
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Pool::from_entries(
                children.iter().zip(&logs).map(|(&id, l)| (id, (l - max).exp())),
                round,
            )
        }
        _ => Pool::from_entries(children.iter().map(|&id| (id, rule.weight(arena, id))), round),
    }
}

/// Next pool for every method outside the SMC family's mixture weighting.
/// Frontier-only methods keep just the children; Greedy Selection and SPS
/// append them to the old pool.
pub fn memory_update(
    method: Method,
    arena: &Arena,
    old_pool: Pool,
    children: &[PrefixId],
    rule: WeightRule,
    round: usize,
) -> Pool {
    let fresh = weigh_children(arena, children, rule, round);
    if method.is_frontier_only() {
        fresh
    } else {
        pool_union(old_pool, fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NewPrefix, Step};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn arena_of(scores: &[f64]) -> (Arena, Vec<PrefixId>) {
        let mut arena = Arena::new();
        let ids = scores
            .iter()
            .map(|&s| {
                arena.push(NewPrefix {
                    parent: None,
                    step: Step::Node(1),
                    step_logprob: None,
                    prm_score: s,
                    terminal: false,
                    answer: None,
                })
            })
            .collect();
        (arena, ids)
    }

    fn prm_pool(arena: &Arena, ids: &[PrefixId]) -> Pool {
        weigh_children(arena, ids, WeightRule::Prm, 0)
    }

    #[test]
    fn beam_takes_the_top() {
        let scores: Vec<f64> = (0..32).map(|i| (i as f64 + 1.0) / 40.0).collect();
        let (arena, ids) = arena_of(&scores);
        let pool = prm_pool(&arena, &ids);
        let top = select_beam(&pool, 8);
        assert_eq!(top, ids[24..].iter().rev().copied().collect::<Vec<_>>());
        let flat = Pool::from_entries(ids.iter().map(|&i| (i, 1.0)), 0);
        assert_eq!(select_beam(&flat, 3), ids[..3].to_vec());
        let small = Pool::from_entries(ids[..3].iter().map(|&i| (i, 1.0)), 0);
        assert_eq!(select_beam(&small, 8).len(), 3);
    }

    #[test]
    fn smc_parent_counts() {
        let (_, ids) = arena_of(&[0.5, 0.5]);
        let pool = Pool::from_entries([(ids[0], 0.99), (ids[1], 0.01)], 0);
        let mut rng = SearchRng::seed_from_u64(7);
        let trials = 10_000;
        let mut total = 0usize;
        for _ in 0..trials {
            total += select_smc_parents(&pool, 8, &mut rng)
                .unwrap()
                .iter()
                .filter(|&&p| p == ids[0])
                .count();
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - 7.92).abs() < 0.05, "{mean}");
        let single = Pool::from_entries([(ids[0], 0.0), (ids[1], 1.0)], 0);
        assert_eq!(select_smc_parents(&single, 5, &mut rng).unwrap(), vec![ids[1]; 5]);
    }

    #[test]
    fn incremental_weight_examples() {
        assert!((smc_incremental_weight(0.8, 0.5) - 1.6).abs() < 1e-15);
        assert_eq!(smc_incremental_weight(0.3, 0.3), 1.0);
        assert!((smc_incremental_weight(0.7, 1.0) - 0.7).abs() < 1e-15);
        assert!((smc_incremental_weight(1e-8, 1e-7) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rho_counts_duplicates() {
        let (arena, ids) = arena_of(&[0.2, 0.4, 0.6]);
        assert!((adaptive_rho(&prm_pool(&arena, &ids), &arena) - 0.4).abs() < 1e-15);
        let (arena, ids) = arena_of(&[0.5, 1.0]);
        let dup = Pool::from_entries([(ids[0], 1.0), (ids[0], 1.0), (ids[1], 1.0)], 0);
        assert!((adaptive_rho(&dup, &arena) - 2.0 / 3.0).abs() < 1e-15);
        let (arena, ids) = arena_of(&[1.0; 4]);
        assert_eq!(adaptive_rho(&prm_pool(&arena, &ids), &arena), 1.0);
    }

    #[test]
    fn subpool_sizes() {
        assert_eq!(subpool_size(40, 8, 0.5), 20);
        assert_eq!(subpool_size(40, 8, 0.1), 8);
        assert_eq!(subpool_size(40, 8, 1.0), 40);
        assert_eq!(subpool_size(5, 8, 0.5), 5);
    }

    #[test]
    fn sps_picks_the_top_of_its_subpool() {
        let scores: Vec<f64> = (0..40).map(|i| (i as f64 + 1.0) / 41.0).collect();
        let (arena, ids) = arena_of(&scores);
        let pool = prm_pool(&arena, &ids);
        for seed in 0..50 {
            let mut rng = SearchRng::seed_from_u64(seed);
            let sel = select_sps(&pool, 8, 0.5, &mut rng).unwrap();
            assert_eq!(sel.subpool_size, 20);
            assert_eq!(sel.parents.len(), 8);
            // reproduce the subpool and check the selection is its top 8
            let mut rng = SearchRng::seed_from_u64(seed);
            let pos = subsample_positions(&pool, 20, &mut rng).unwrap();
            let mut sub: Vec<PrefixId> = pos.iter().map(|&i| ids[i]).collect();
            sub.sort_by(|a, b| arena.get(*b).prm_score.total_cmp(&arena.get(*a).prm_score));
            assert_eq!(sel.parents, sub[..8].to_vec());
        }
    }

    #[test]
    fn memory_updates() {
        let scores: Vec<f64> = (0..56).map(|i| 0.1 + i as f64 / 100.0).collect();
        let (arena, ids) = arena_of(&scores);
        let beam = memory_update(Method::Beam, &arena, Pool::new(0), &ids[..32], WeightRule::Prm, 1);
        assert_eq!(beam.len(), 32);
        assert!(beam.entries.iter().all(|e| e.weight == arena.get(e.id).prm_score));
        let old = prm_pool(&arena, &ids[32..48]);
        let greedy = memory_update(
            Method::GreedySelection,
            &arena,
            old,
            &ids[48..],
            WeightRule::Prm,
            2,
        );
        assert_eq!(greedy.len(), 24);
        assert!(greedy.entries.iter().all(|e| e.weight == arena.get(e.id).prm_score));
        let init = memory_update(Method::Sps, &arena, Pool::new(0), &ids[..8], WeightRule::Prm, 0);
        assert_eq!(init.len(), 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn sps_with_full_ratio_is_greedy(
            scores in prop::collection::vec(R_MIN..=1.0f64, 1..80),
            m in 1usize..10,
            seed in any::<u64>(),
        ) {
            let (arena, ids) = arena_of(&scores);
            let pool = prm_pool(&arena, &ids);
            let mut rng = SearchRng::seed_from_u64(seed);
            let sps = select_sps(&pool, m, 1.0, &mut rng).unwrap();
            prop_assert_eq!(sps.parents, select_beam(&pool, m));
            // no randomness consumed
            let mut fresh = SearchRng::seed_from_u64(seed);
            prop_assert_eq!(rand::Rng::random::<u64>(&mut rng), rand::Rng::random::<u64>(&mut fresh));
        }
    }
}
