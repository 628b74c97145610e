use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::arena::PrefixId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("all pool weights are zero")]
    AllWeightsZero,
    #[error("subsample of {requested} entries requested from a pool of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("pool weight {0} is negative or not finite")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: PrefixId,
    pub weight: f64,
}

/// Weighted multiset of prefix references. The same id may appear several
/// times; entry order is the insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub entries: Vec<PoolEntry>,
    pub round: usize,
}

impl Pool {
    pub fn new(round: usize) -> Self {
        Self {
            entries: Vec::new(),
            round,
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (PrefixId, f64)>, round: usize) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(id, weight)| PoolEntry { id, weight })
                .collect(),
            round,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: PrefixId, weight: f64) {
        self.entries.push(PoolEntry { id, weight });
    }

    pub fn ids(&self) -> impl Iterator<Item = PrefixId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.weight)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights().sum()
    }

    fn check_weights(&self) -> Result<f64, PoolError> {
        let mut total = 0.0;
        for w in self.weights() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(PoolError::InvalidWeight(w));
            }
            total += w;
        }
        if total > 0.0 {
            Ok(total)
        } else {
            Err(PoolError::AllWeightsZero)
        }
    }
}

/// Persistent union: entries of `b` appended after those of `a`.
pub fn pool_union(a: Pool, b: Pool) -> Pool {
    let round = a.round.max(b.round);
    let mut entries = a.entries;
    entries.extend(b.entries);
    Pool { entries, round }
}

pub fn normalize_weights(pool: &Pool) -> Result<Pool, PoolError> {
    let total = pool.check_weights()?;
    Ok(Pool {
        entries: pool
            .entries
            .iter()
            .map(|e| PoolEntry {
                id: e.id,
                weight: e.weight / total,
            })
            .collect(),
        round: pool.round,
    })
}

/// Ordering used by every top-M rule: descending weight, then ascending
/// position, then ascending id.
fn rank(pool: &Pool, a: usize, b: usize) -> Ordering {
    let (ea, eb) = (&pool.entries[a], &pool.entries[b]);
    eb.weight
        .total_cmp(&ea.weight)
        .then(a.cmp(&b))
        .then(ea.id.cmp(&eb.id))
}

/// Positions of the `m` highest-weight entries, best first.
pub fn top_m_positions(pool: &Pool, m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| rank(pool, a, b));
    order.truncate(m);
    order
}

pub fn top_m_select(pool: &Pool, m: usize) -> Vec<PrefixId> {
    top_m_positions(pool, m)
        .into_iter()
        .map(|i| pool.entries[i].id)
        .collect()
}

/// `k` positions drawn with replacement, proportionally to weight.
pub fn multinomial_positions<R: Rng + ?Sized>(
    pool: &Pool,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, PoolError> {
    pool.check_weights()?;
    let dist = WeightedIndex::new(pool.weights()).map_err(|_| PoolError::AllWeightsZero)?;
    Ok((0..k).map(|_| dist.sample(rng)).collect())
}

pub fn multinomial_sample<R: Rng + ?Sized>(
    pool: &Pool,
    k: usize,
    rng: &mut R,
) -> Result<Vec<PrefixId>, PoolError> {
    Ok(multinomial_positions(pool, k, rng)?
        .into_iter()
        .map(|i| pool.entries[i].id)
        .collect())
}

/// `k` distinct positions chosen uniformly without replacement, returned in
/// ascending order. Consumes no randomness when `k == pool.len()`.
pub fn subsample_positions<R: Rng + ?Sized>(
    pool: &Pool,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, PoolError> {
    let n = pool.len();
    if k > n {
        return Err(PoolError::SubsampleTooLarge {
            requested: k,
            available: n,
        });
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform sub-multiset of `k` positions. Weights carry over, relative order
/// is preserved.
pub fn uniform_subsample<R: Rng + ?Sized>(
    pool: &Pool,
    k: usize,
    rng: &mut R,
) -> Result<Pool, PoolError> {
    let picked = subsample_positions(pool, k, rng)?;
    Ok(Pool {
        entries: picked.into_iter().map(|i| pool.entries[i]).collect(),
        round: pool.round,
    })
}
