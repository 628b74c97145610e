//! Persistent-pool search over PRM-scored reasoning prefixes.
//!
//! A search keeps a weighted pool of prefixes, selects parents from it each
//! round, expands them with a generator backend and scores the children with
//! a process reward model. Methods differ in how they select parents and
//! what they keep: beam search and SMC keep only the newest children, while
//! greedy selection, subpool selection and Power Backtrack SMC keep every
//! prefix seen so far as a candidate parent.
//!
//! ```
//! use ppbt::backend::{RandomEnvParams, SyntheticTreeEnv};
//! use ppbt::config::{Method, SearchConfig};
//! use ppbt::engine::run_search;
//!
//! let env = SyntheticTreeEnv::random(&RandomEnvParams { seed: 7, ..Default::default() }).unwrap();
//! let config = SearchConfig::new(Method::PowerBacktrackSmc, 8, 8, 4).with_seed(1);
//! let run = run_search(&config, &env).unwrap();
//! assert_eq!(run.pool.len(), 8 * (run.rounds_run + 1));
//! ```

pub mod backend;
pub mod config;
pub mod engine;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod pbsmc;
pub mod selectors;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/weighting.md")]
    mod weighting {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/http.md")]
    mod http {}
}

/// RNG driving every random choice of a search.
pub type SearchRng = rand_chacha::ChaCha8Rng;
