use std::io::BufRead;

use serde::Deserialize;

use super::config::{ExperimentError, ProblemSource};
use super::seeds::derive_seed;
use crate::backend::{
    make_blocker_env, Backend, BlockerParams, HttpBackend, RandomEnvParams, SyntheticTreeEnv,
};

/// Attempts per requested blocker problem before giving up.
const BLOCKER_ATTEMPTS: usize = 50;

pub enum ProblemBackend {
    Synthetic(SyntheticTreeEnv),
    Http(Box<HttpBackend>),
}

pub struct Problem {
    pub id: String,
    pub backend: ProblemBackend,
}

impl Problem {
    pub fn backend(&self) -> &dyn Backend {
        match &self.backend {
            ProblemBackend::Synthetic(env) => env,
            ProblemBackend::Http(b) => b.as_ref(),
        }
    }

    pub fn synthetic(&self) -> Option<&SyntheticTreeEnv> {
        match &self.backend {
            ProblemBackend::Synthetic(env) => Some(env),
            ProblemBackend::Http(_) => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ProblemLine {
    id: Option<String>,
    problem: String,
    answer: Option<String>,
}

/// `count` random trees, problem `i` seeded from `(params.seed, i)`.
pub fn synthetic_problems(params: &RandomEnvParams, count: usize) -> Result<Vec<Problem>, ExperimentError> {
    (0..count)
        .map(|i| {
            let p = RandomEnvParams {
                seed: derive_seed(params.seed, &[i as u64]),
                ..params.clone()
            };
            let env = SyntheticTreeEnv::random(&p).map_err(|e| ExperimentError::Problems(e.to_string()))?;
            Ok(Problem {
                id: format!("synthetic-{i}"),
                backend: ProblemBackend::Synthetic(env),
            })
        })
        .collect()
}

/// The first `count` blocker trees that construct, trying seeds
/// derived from `(params.seed, attempt)` in order.
pub fn blocker_problems(params: &BlockerParams, count: usize) -> Result<Vec<Problem>, ExperimentError> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while out.len() < count {
        if attempt as usize >= count.max(1) * BLOCKER_ATTEMPTS {
            return Err(ExperimentError::Problems(format!(
                "only {} of {count} blocker problems constructed after {attempt} attempts",
                out.len()
            )));
        }
        let p = BlockerParams {
            seed: derive_seed(params.seed, &[attempt]),
            ..params.clone()
        };
        if let Ok(env) = make_blocker_env(&p) {
            out.push(Problem {
                id: format!("blocker-{}", out.len()),
                backend: ProblemBackend::Synthetic(env),
            });
        }
        attempt += 1;
    }
    Ok(out)
}

pub fn load_problems(source: &ProblemSource) -> Result<Vec<Problem>, ExperimentError> {
    match source {
        ProblemSource::Synthetic { count, params } => synthetic_problems(params, *count),
        ProblemSource::Blocker { count, params } => blocker_problems(params, *count),
        ProblemSource::Http {
            problems_file,
            backend,
        } => {
            let file = std::fs::File::open(problems_file).map_err(|source| ExperimentError::Io {
                path: problems_file.clone(),
                source,
            })?;
            let mut out = Vec::new();
            for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| ExperimentError::Io {
                    path: problems_file.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let p: ProblemLine = serde_json::from_str(&line)
                    .map_err(|e| ExperimentError::Problems(format!("line {}: {e}", i + 1)))?;
                let b = HttpBackend::new(backend.clone(), p.problem, p.answer)
                    .map_err(|e| ExperimentError::Problems(e.to_string()))?;
                out.push(Problem {
                    id: p.id.unwrap_or_else(|| format!("problem-{i}")),
                    backend: ProblemBackend::Http(Box::new(b)),
                });
            }
            Ok(out)
        }
    }
}
