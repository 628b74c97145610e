use std::fmt;

use serde::{Deserialize, Serialize};

/// Lower bound applied to every PRM score before it enters the search.
///
/// Scores are clamped into `[R_MIN, 1]` so that ratios and logarithms of
/// scores stay finite.
pub const R_MIN: f64 = 1e-4;

/// Clamp a raw scorer output into `[R_MIN, 1]`. NaN maps to the floor.
pub fn clamp_score(raw: f64) -> f64 {
    if raw.is_nan() {
        R_MIN
    } else {
        raw.clamp(R_MIN, 1.0)
    }
}

/// Index of a prefix inside one search arena. Never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixId(pub u32);

impl PrefixId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PrefixId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Payload of one reasoning step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// A node of a synthetic tree environment.
    Node(u32),
    /// Free text produced by a served model.
    Text(String),
}

impl Step {
    pub fn node(&self) -> Option<u32> {
        match self {
            Step::Node(n) => Some(*n),
            Step::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Step::Node(_) => None,
            Step::Text(s) => Some(s),
        }
    }
}

/// An immutable node of the reasoning tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prefix {
    pub id: PrefixId,
    /// `None` when the parent is the root prompt.
    pub parent: Option<PrefixId>,
    pub step: Step,
    /// Number of reasoning steps; 1 for children of the prompt.
    pub depth: u32,
    /// Log-probability of the last step under the generator, when known.
    pub step_logprob: Option<f64>,
    /// Clamped PRM score of the whole prefix.
    pub prm_score: f64,
    pub terminal: bool,
    pub answer: Option<String>,
}

/// The data needed to append a prefix; the arena assigns id and depth.
#[derive(Debug, Clone, PartialEq)]
pub struct NewPrefix {
    pub parent: Option<PrefixId>,
    pub step: Step,
    pub step_logprob: Option<f64>,
    pub prm_score: f64,
    pub terminal: bool,
    pub answer: Option<String>,
}

/// Append-only storage for every prefix created by one search.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Arena {
    prefixes: Vec<Prefix>,
}

impl Arena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// Append a prefix. The score is clamped and the answer is dropped for
    /// non-terminal prefixes.
    ///
    /// # Panics
    ///
    /// Panics if `parent` does not belong to this arena or is terminal.
    pub fn push(&mut self, new: NewPrefix) -> PrefixId {
        let depth = match new.parent {
            None => 1,
            Some(p) => {
                let parent = &self.prefixes[p.index()];
                assert!(!parent.terminal, "terminal prefix {p} cannot be extended");
                parent.depth + 1
            }
        };
        let id = PrefixId(u32::try_from(self.prefixes.len()).expect("arena exceeds u32 ids"));
        let answer = if new.terminal { new.answer } else { None };
        self.prefixes.push(Prefix {
            id,
            parent: new.parent,
            step: new.step,
            depth,
            step_logprob: new.step_logprob,
            prm_score: clamp_score(new.prm_score),
            terminal: new.terminal,
            answer,
        });
        id
    }

    pub fn get(&self, id: PrefixId) -> &Prefix {
        &self.prefixes[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prefix> {
        self.prefixes.iter()
    }

    /// Score of the structural parent, 1 for depth-1 prefixes.
    pub fn parent_score(&self, id: PrefixId) -> f64 {
        match self.get(id).parent {
            None => 1.0,
            Some(p) => self.get(p).prm_score,
        }
    }

    /// Ancestors from `id` up to the first step, starting with `id` itself.
    pub fn lineage(&self, id: PrefixId) -> Lineage<'_> {
        Lineage {
            arena: self,
            next: Some(id),
        }
    }

    /// Step payloads from the first step to `id`.
    pub fn steps(&self, id: Option<PrefixId>) -> Vec<&Step> {
        let mut steps: Vec<&Step> = match id {
            None => Vec::new(),
            Some(id) => self.lineage(id).map(|p| &p.step).collect(),
        };
        steps.reverse();
        steps
    }

    /// Mean PRM score along the lineage of `id`.
    pub fn cumulative_mean_score(&self, id: PrefixId) -> f64 {
        let (sum, n) = self
            .lineage(id)
            .fold((0.0, 0usize), |(s, n), p| (s + p.prm_score, n + 1));
        sum / n as f64
    }
}

pub struct Lineage<'a> {
    arena: &'a Arena,
    next: Option<PrefixId>,
}

impl<'a> Iterator for Lineage<'a> {
    type Item = &'a Prefix;

    fn next(&mut self) -> Option<Self::Item> {
        let id = self.next?;
        let p = self.arena.get(id);
        self.next = p.parent;
        Some(p)
    }
}
