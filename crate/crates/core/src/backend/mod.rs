//! Generator/scorer backends: an exactly enumerable synthetic tree and an
//! HTTP adapter for served models.

pub mod http;
pub mod synthetic;

use thiserror::Error;

use crate::model::{Arena, PrefixId, Step};
use crate::SearchRng;

pub use http::{HttpBackend, HttpBackendConfig, HttpStats};
pub use synthetic::{make_blocker_env, BlockerParams, RandomEnvParams, SyntheticTreeEnv, TreeSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("service returned status {0}")]
    ServiceError(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("prefix {0} does not belong to this backend")]
    ForeignPrefix(PrefixId),
    #[error("terminal prefix {0} cannot be expanded")]
    TerminalParent(PrefixId),
    #[error("environment construction failed: {0}")]
    ConstructionFailed(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// One generated step, before it is scored and stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub step: Step,
    pub step_logprob: Option<f64>,
    pub terminal: bool,
    pub answer: Option<String>,
    /// Tokens the service reported for this step, when it reports usage.
    pub tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandRequest {
    /// `None` expands the root prompt.
    pub parent: Option<PrefixId>,
    pub count: usize,
}

/// A paired generator and scorer.
///
/// `expand` is only called on non-terminal parents; the engine handles
/// terminal freezing itself. Scores are clamped by the arena, so
/// implementations may return raw values.
pub trait Backend: Sync {
    fn expand(
        &self,
        arena: &Arena,
        parent: Option<PrefixId>,
        count: usize,
        temperature: f64,
        rng: &mut SearchRng,
    ) -> Result<Vec<Expansion>, BackendError>;

    fn score(
        &self,
        arena: &Arena,
        parent: Option<PrefixId>,
        child: &Expansion,
    ) -> Result<f64, BackendError>;

    /// Expand several parents. Results come back in request order.
    fn expand_batch(
        &self,
        arena: &Arena,
        requests: &[ExpandRequest],
        temperature: f64,
        rng: &mut SearchRng,
    ) -> Result<Vec<Vec<Expansion>>, BackendError> {
        requests
            .iter()
            .map(|r| self.expand(arena, r.parent, r.count, temperature, rng))
            .collect()
    }

    /// Score several new children. Results come back in input order.
    fn score_batch(
        &self,
        arena: &Arena,
        items: &[(Option<PrefixId>, &Expansion)],
    ) -> Result<Vec<f64>, BackendError> {
        items
            .iter()
            .map(|(parent, child)| self.score(arena, *parent, child))
            .collect()
    }

    /// Ground-truth check of a final answer, when one is known.
    fn is_correct(&self, _answer: &str) -> Option<bool> {
        None
    }
}
