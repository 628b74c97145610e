//! Prefix arena, weighted pools and the selection primitives shared by every
//! search method.

mod arena;
mod pool;

pub use arena::{clamp_score, Arena, Lineage, NewPrefix, Prefix, PrefixId, Step, R_MIN};
pub use pool::{
    multinomial_positions, multinomial_sample, normalize_weights, pool_union, subsample_positions,
    top_m_positions, top_m_select, uniform_subsample, Pool, PoolEntry, PoolError,
};
