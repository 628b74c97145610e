//! A complete `b`-ary tree of depth `D` with an exact step kernel, per-leaf
//! correctness and a configurable PRM noise model.
//!
//! Nodes are stored in heap order: the root prompt is node 0 and the children
//! of node `i` are `b*i + 1 ..= b*i + b`. Leaves sit at depth `D` and are the
//! only terminal nodes.
//!
//! The scorer is `clamp(w * v(z) + (1 - w) * u(z) + bias(z))`, where `v(z)` is
//! the probability that a continuation of `z` drawn from the step kernel ends
//! in a correct leaf, `u(z)` is a uniform value seeded by the node index and
//! `bias(z)` is a per-node offset used to build over- and under-scored
//! branches.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Expansion};
use crate::model::{clamp_score, Arena, PrefixId, Step};
use crate::oracle::{blocker_predicate, OracleTable};
use crate::SearchRng;

/// Largest tree (prompt included) the environment accepts.
pub const MAX_NODES: usize = 1_000_000;

const KERNEL_TOLERANCE: f64 = 1e-12;

/// Explicit description of a tree environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub branching: usize,
    pub depth: usize,
    /// `p(node | parent)` for every node in heap order; entry 0 is ignored.
    pub step_probs: Vec<f64>,
    /// Answer label of every leaf, leaves in heap order.
    pub leaf_answers: Vec<u16>,
    pub correct_answer: u16,
    /// Additive score offset per node; empty means all zero.
    pub biases: Vec<f64>,
    /// Weight `w` of the true value in the score; 1 disables noise.
    pub noise_weight: f64,
    pub seed: u64,
}

/// Child produced by [`SyntheticTreeEnv::expand_node`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvChild {
    pub node: u32,
    pub logprob: f64,
    pub terminal: bool,
    /// The parent was terminal and is passed through unchanged.
    pub frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTreeEnv {
    branching: usize,
    depth: usize,
    level_starts: Vec<usize>,
    step_probs: Vec<f64>,
    leaf_answers: Vec<u16>,
    correct_answer: u16,
    biases: Vec<f64>,
    values: Vec<f64>,
    scores: Vec<f64>,
    noise_weight: f64,
    seed: u64,
    flagged: Option<u32>,
    blocking_round: Option<usize>,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

fn level_starts(branching: usize, depth: usize) -> Result<Vec<usize>, BackendError> {
    if branching == 0 || depth == 0 {
        return Err(BackendError::ConstructionFailed(
            "branching and depth must be positive".into(),
        ));
    }
    let mut starts = vec![0usize];
    let mut width = 1usize;
    let mut total = 0usize;
    for _ in 0..=depth {
        total = total
            .checked_add(width)
            .filter(|&t| t <= MAX_NODES)
            .ok_or_else(|| {
                BackendError::ConstructionFailed(format!(
                    "tree with b={branching}, D={depth} exceeds {MAX_NODES} nodes"
                ))
            })?;
        starts.push(total);
        width = width.saturating_mul(branching);
    }
    Ok(starts)
}

impl SyntheticTreeEnv {
    pub fn new(spec: TreeSpec) -> Result<Self, BackendError> {
        let starts = level_starts(spec.branching, spec.depth)?;
        let count = *starts.last().unwrap();
        let leaves = starts[spec.depth + 1] - starts[spec.depth];
        let fail = |m: String| Err(BackendError::ConstructionFailed(m));
        if spec.step_probs.len() != count {
            return fail(format!(
                "expected {count} step probabilities, got {}",
                spec.step_probs.len()
            ));
        }
        if spec.leaf_answers.len() != leaves {
            return fail(format!(
                "expected {leaves} leaf answers, got {}",
                spec.leaf_answers.len()
            ));
        }
        if !spec.biases.is_empty() && spec.biases.len() != count {
            return fail(format!("expected {count} biases, got {}", spec.biases.len()));
        }
        if !(0.0..=1.0).contains(&spec.noise_weight) {
            return fail(format!("noise weight {} outside [0, 1]", spec.noise_weight));
        }
        let biases = if spec.biases.is_empty() {
            vec![0.0; count]
        } else {
            spec.biases
        };
        let mut env = Self {
            branching: spec.branching,
            depth: spec.depth,
            level_starts: starts,
            step_probs: spec.step_probs,
            leaf_answers: spec.leaf_answers,
            correct_answer: spec.correct_answer,
            biases,
            values: vec![0.0; count],
            scores: vec![0.0; count],
            noise_weight: spec.noise_weight,
            seed: spec.seed,
            flagged: None,
            blocking_round: None,
        };
        env.step_probs[0] = 1.0;
        for node in 0..env.first_leaf() {
            let kids = env.children(node as u32);
            let sum: f64 = env.step_probs[kids.start as usize..kids.end as usize].iter().sum();
            if (sum - 1.0).abs() > KERNEL_TOLERANCE
                || env.step_probs[kids.start as usize..kids.end as usize]
                    .iter()
                    .any(|&p| !(p >= 0.0))
            {
                return fail(format!("step kernel at node {node} sums to {sum}"));
            }
        }
        env.compute_values();
        env.compute_scores();
        Ok(env)
    }

    /// Random kernel and random leaf labels.
    pub fn random(params: &RandomEnvParams) -> Result<Self, BackendError> {
        let starts = level_starts(params.branching, params.depth)?;
        let count = *starts.last().unwrap();
        let leaves = starts[params.depth + 1] - starts[params.depth];
        let mut rng = <SearchRng as rand::SeedableRng>::seed_from_u64(params.seed);
        let step_probs = random_kernel(params.branching, starts[params.depth], count, params.skew, &mut rng);
        let leaf_answers = (0..leaves)
            .map(|_| {
                if rng.random::<f64>() < params.correct_leaf_prob {
                    0
                } else {
                    rng.random_range(1..=params.wrong_answers.max(1))
                }
            })
            .collect();
        let biases = if params.bias_scale > 0.0 {
            (0..count)
                .map(|_| rng.random_range(-params.bias_scale..=params.bias_scale))
                .collect()
        } else {
            Vec::new()
        };
        Self::new(TreeSpec {
            branching: params.branching,
            depth: params.depth,
            step_probs,
            leaf_answers,
            correct_answer: 0,
            biases,
            noise_weight: params.noise_weight,
            seed: params.seed,
        })
    }

    fn compute_values(&mut self) {
        let first_leaf = self.first_leaf();
        for node in (0..self.node_count()).rev() {
            self.values[node] = if node >= first_leaf {
                if self.leaf_answers[node - first_leaf] == self.correct_answer {
                    1.0
                } else {
                    0.0
                }
            } else {
                let kids = self.children(node as u32);
                (kids.start..kids.end)
                    .map(|c| self.step_probs[c as usize] * self.values[c as usize])
                    .sum::<f64>()
                    .min(1.0)
            };
        }
    }

    fn compute_scores(&mut self) {
        let w = self.noise_weight;
        for node in 0..self.node_count() {
            let u = self.noise(node as u32);
            let raw = w * self.values[node] + (1.0 - w) * u + self.biases[node];
            self.scores[node] = clamp_score(raw);
        }
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    /// Maximum prefix length `D`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of nodes including the root prompt.
    pub fn node_count(&self) -> usize {
        *self.level_starts.last().unwrap()
    }

    pub fn first_leaf(&self) -> usize {
        self.level_starts[self.depth]
    }

    pub fn noise_weight(&self) -> f64 {
        self.noise_weight
    }

    pub fn depth_of(&self, node: u32) -> usize {
        self.level_starts.partition_point(|&s| s <= node as usize) - 1
    }

    pub fn parent_of(&self, node: u32) -> Option<u32> {
        (node > 0).then(|| (node - 1) / self.branching as u32)
    }

    /// Children of `node`; empty for leaves.
    pub fn children(&self, node: u32) -> Range<u32> {
        if node as usize >= self.first_leaf() {
            return 0..0;
        }
        let b = self.branching as u32;
        b * node + 1..b * node + b + 1
    }

    pub fn nodes_at_depth(&self, depth: usize) -> Range<u32> {
        self.level_starts[depth] as u32..self.level_starts[depth + 1] as u32
    }

    pub fn is_leaf(&self, node: u32) -> bool {
        node as usize >= self.first_leaf()
    }

    /// `p(node | parent)`.
    pub fn step_prob(&self, node: u32) -> f64 {
        self.step_probs[node as usize]
    }

    pub fn leaf_answer(&self, node: u32) -> Option<u16> {
        self.is_leaf(node)
            .then(|| self.leaf_answers[node as usize - self.first_leaf()])
    }

    pub fn answer_label(&self, node: u32) -> Option<String> {
        self.leaf_answer(node).map(|a| a.to_string())
    }

    pub fn correct_answer(&self) -> String {
        self.correct_answer.to_string()
    }

    /// The correctness label of a leaf.
    pub fn is_correct_leaf(&self, node: u32) -> bool {
        self.leaf_answer(node) == Some(self.correct_answer)
    }

    /// Probability of reaching a correct leaf from `node` under the kernel.
    pub fn true_value(&self, node: u32) -> f64 {
        self.values[node as usize]
    }

    pub fn bias(&self, node: u32) -> f64 {
        self.biases[node as usize]
    }

    /// Node-seeded uniform noise in `[0, 1)`.
    pub fn noise(&self, node: u32) -> f64 {
        unit_from_bits(splitmix64(splitmix64(self.seed) ^ u64::from(node)))
    }

    /// Clamped PRM score of a node.
    pub fn score(&self, node: u32) -> f64 {
        self.scores[node as usize]
    }

    /// Under-scored correct prefix recorded by [`make_blocker_env`].
    pub fn flagged(&self) -> Option<u32> {
        self.flagged
    }

    /// First round at which the blocker predicate holds.
    pub fn blocking_round(&self) -> Option<usize> {
        self.blocking_round
    }

    /// Draw `count` children of `node` i.i.d. from the step kernel. A leaf is
    /// returned `count` times unchanged.
    pub fn expand_node<R: Rng + ?Sized>(&self, node: u32, count: usize, rng: &mut R) -> Vec<EnvChild> {
        if self.is_leaf(node) {
            return vec![
                EnvChild {
                    node,
                    logprob: 0.0,
                    terminal: true,
                    frozen: true,
                };
                count
            ];
        }
        let kids = self.children(node);
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = kids.end - 1;
                for c in kids.clone() {
                    let p = self.step_probs[c as usize];
                    acc += p;
                    if u < acc && p > 0.0 {
                        pick = c;
                        break;
                    }
                }
                // guard against rounding leaving u above the final partial sum
                while self.step_probs[pick as usize] == 0.0 && pick > kids.start {
                    pick -= 1;
                }
                EnvChild {
                    node: pick,
                    logprob: self.step_probs[pick as usize].ln(),
                    terminal: self.is_leaf(pick),
                    frozen: false,
                }
            })
            .collect()
    }

    fn node_of(&self, arena: &Arena, id: PrefixId) -> Result<u32, BackendError> {
        if id.index() >= arena.len() {
            return Err(BackendError::ForeignPrefix(id));
        }
        match arena.get(id).step {
            Step::Node(n) if (n as usize) < self.node_count() && n > 0 => Ok(n),
            _ => Err(BackendError::ForeignPrefix(id)),
        }
    }
}

fn random_kernel(
    branching: usize,
    internal: usize,
    count: usize,
    skew: f64,
    rng: &mut SearchRng,
) -> Vec<f64> {
    let mut probs = vec![0.0; count];
    probs[0] = 1.0;
    let uniform = 1.0 / branching as f64;
    let mut raw = vec![0.0; branching];
    for node in 0..internal {
        let first = branching * node + 1;
        for r in raw.iter_mut() {
            // exponential draws give a flat Dirichlet after normalization
            *r = -(1.0 - rng.random::<f64>()).ln();
        }
        let total: f64 = raw.iter().sum();
        let mixed: Vec<f64> = raw
            .iter()
            .map(|r| (1.0 - skew) * uniform + skew * r / total)
            .collect();
        let norm: f64 = mixed.iter().sum();
        for (k, p) in mixed.iter().enumerate() {
            probs[first + k] = p / norm;
        }
    }
    probs
}

/// Parameters of [`SyntheticTreeEnv::random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomEnvParams {
    pub branching: usize,
    pub depth: usize,
    /// 0 gives a uniform kernel, 1 a flat-Dirichlet kernel.
    pub skew: f64,
    pub correct_leaf_prob: f64,
    pub wrong_answers: u16,
    pub noise_weight: f64,
    /// Biases drawn uniformly from `[-bias_scale, bias_scale]`.
    pub bias_scale: f64,
    pub seed: u64,
}

impl Default for RandomEnvParams {
    fn default() -> Self {
        Self {
            branching: 3,
            depth: 4,
            skew: 0.5,
            correct_leaf_prob: 0.3,
            wrong_answers: 3,
            noise_weight: 0.6,
            bias_scale: 0.0,
            seed: 0,
        }
    }
}

/// Parameters of [`make_blocker_env`].
///
/// One lineage from the prompt down to the flagged prefix at
/// `blocker_depth` is correct; every sibling of that lineage is incorrect.
/// Below the flagged prefix each child of a correct node stays correct with
/// probability `on_track_prob` (at least one always does).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockerParams {
    pub branching: usize,
    pub depth: usize,
    pub blocker_depth: usize,
    pub on_track_prob: f64,
    /// Fraction of the flagged prefix's incorrect siblings whose whole
    /// subtree is over-scored.
    pub over_fraction: f64,
    pub over_score: f64,
    /// Offset subtracted from the flagged prefix's score.
    pub under_score: f64,
    /// Probability that any other correct node below the flagged prefix is
    /// under-scored by `under_score`.
    pub dip_fraction: f64,
    pub noise_weight: f64,
    pub skew: f64,
    /// Lower bound on the flagged prefix's step probability.
    pub min_flagged_prob: f64,
    pub wrong_answers: u16,
    /// Number of top-ranked prefixes the blocker predicate inspects.
    pub verify_m: usize,
    pub seed: u64,
}

impl Default for BlockerParams {
    fn default() -> Self {
        Self {
            branching: 3,
            depth: 6,
            blocker_depth: 1,
            on_track_prob: 0.5,
            over_fraction: 1.0,
            over_score: 0.5,
            under_score: 0.4,
            dip_fraction: 0.0,
            noise_weight: 0.7,
            skew: 0.5,
            min_flagged_prob: 0.0,
            wrong_answers: 4,
            verify_m: 1,
            seed: 0,
        }
    }
}

impl BlockerParams {
    fn is_degenerate(&self) -> bool {
        (self.over_fraction == 0.0 || self.over_score == 0.0)
            && self.under_score == 0.0
            && self.dip_fraction == 0.0
    }
}

/// Build an environment with an over-scored incorrect branch that outranks
/// an under-scored correct prefix.
///
/// The blocker predicate is checked on the exact enumeration: unless the
/// parameters are degenerate (no offsets at all), some round must have an
/// all-incorrect global top set while the flagged prefix is still correct;
/// degenerate parameters must produce no such round.
pub fn make_blocker_env(params: &BlockerParams) -> Result<SyntheticTreeEnv, BackendError> {
    let fail = |m: String| Err(BackendError::ConstructionFailed(m));
    if params.blocker_depth == 0 || params.blocker_depth >= params.depth {
        return fail(format!(
            "blocker depth {} must lie in [1, {})",
            params.blocker_depth, params.depth
        ));
    }
    if params.branching < 2 {
        return fail("a blocker needs at least two siblings".into());
    }
    let b = params.branching;
    let starts = level_starts(b, params.depth)?;
    let count = *starts.last().unwrap();
    let first_leaf = starts[params.depth];
    let mut rng = <SearchRng as rand::SeedableRng>::seed_from_u64(splitmix64(params.seed ^ 0xB10C));
    let mut step_probs = random_kernel(b, first_leaf, count, params.skew, &mut rng);

    // correct lineage down to the flagged prefix
    let mut on_track = vec![false; count];
    let mut node = 0usize;
    for _ in 0..params.blocker_depth {
        node = b * node + 1 + rng.random_range(0..b);
        on_track[node] = true;
    }
    let flagged = node;
    if params.min_flagged_prob > 0.0 {
        let first = b * ((flagged - 1) / b) + 1;
        let target = params.min_flagged_prob.min(1.0 - 1e-9);
        let current = step_probs[flagged];
        if current < target {
            let rest = 1.0 - current;
            for sib in first..first + b {
                step_probs[sib] = if sib == flagged {
                    target
                } else {
                    step_probs[sib] / rest * (1.0 - target)
                };
            }
        }
    }
    let flagged_depth = params.blocker_depth;
    for n in starts[flagged_depth + 1]..count {
        let parent = (n - 1) / b;
        if !on_track[parent] {
            continue;
        }
        on_track[n] = rng.random::<f64>() < params.on_track_prob;
        // ensure every correct node keeps one correct child
        if (n - 1) % b == b - 1 {
            let first = b * parent + 1;
            if !(first..first + b).any(|c| on_track[c]) {
                on_track[first + rng.random_range(0..b)] = true;
            }
        }
    }

    let leaf_answers: Vec<u16> = (first_leaf..count)
        .map(|n| {
            if on_track[n] {
                0
            } else {
                rng.random_range(1..=params.wrong_answers.max(1))
            }
        })
        .collect();

    let mut biases = vec![0.0; count];
    // over-scored incorrect siblings of the flagged prefix, whole subtrees
    let parent = (flagged - 1) / b;
    let mut siblings: Vec<usize> = (b * parent + 1..b * parent + 1 + b)
        .filter(|&s| s != flagged)
        .collect();
    for i in (1..siblings.len()).rev() {
        siblings.swap(i, rng.random_range(0..=i));
    }
    let n_over = (params.over_fraction * siblings.len() as f64).round() as usize;
    let mut over_root = vec![false; count];
    for &s in siblings.iter().take(n_over) {
        over_root[s] = true;
    }
    let mut over = vec![false; count];
    for n in 1..count {
        over[n] = over_root[n] || over[(n - 1) / b];
        if over[n] {
            biases[n] += params.over_score;
        }
    }
    biases[flagged] -= params.under_score.abs();
    if params.dip_fraction > 0.0 {
        for n in starts[flagged_depth + 1]..count {
            if on_track[n] && rng.random::<f64>() < params.dip_fraction {
                biases[n] -= params.under_score.abs();
            }
        }
    }

    let mut env = SyntheticTreeEnv::new(TreeSpec {
        branching: b,
        depth: params.depth,
        step_probs,
        leaf_answers,
        correct_answer: 0,
        biases,
        noise_weight: params.noise_weight,
        seed: params.seed,
    })?;

    let table = OracleTable::enumerate(&env)
        .map_err(|e| BackendError::ConstructionFailed(e.to_string()))?;
    let m = params.verify_m.max(1);
    let rounds = 0..params.depth;
    if params.is_degenerate() {
        if let Some(r) = rounds.clone().find(|&r| blocker_predicate(&table, r, m)) {
            return fail(format!("unexpected blocker at round {r} without score offsets"));
        }
        return Ok(env);
    }
    let flagged_id = flagged as u32;
    if table.node(flagged_id).sigma <= 0.0 {
        return fail("flagged prefix has no correct continuation".into());
    }
    let blocking = rounds.into_iter().find(|&r| {
        r + 1 >= flagged_depth
            && blocker_predicate(&table, r, m)
            && !table.top_m(r, m).contains(&flagged_id)
    });
    match blocking {
        Some(r) => {
            env.flagged = Some(flagged_id);
            env.blocking_round = Some(r);
            Ok(env)
        }
        None => fail(format!(
            "blocker predicate never holds for seed {} with M={m}",
            params.seed
        )),
    }
}

impl Backend for SyntheticTreeEnv {
    fn expand(
        &self,
        arena: &Arena,
        parent: Option<PrefixId>,
        count: usize,
        _temperature: f64,
        rng: &mut SearchRng,
    ) -> Result<Vec<Expansion>, BackendError> {
        let node = match parent {
            None => 0,
            Some(id) => {
                if arena.get(id).terminal {
                    return Err(BackendError::TerminalParent(id));
                }
                self.node_of(arena, id)?
            }
        };
        Ok(self
            .expand_node(node, count, rng)
            .into_iter()
            .map(|c| Expansion {
                step: Step::Node(c.node),
                step_logprob: Some(c.logprob),
                terminal: c.terminal,
                answer: self.answer_label(c.node),
                tokens: None,
            })
            .collect())
    }

    fn score(
        &self,
        _arena: &Arena,
        _parent: Option<PrefixId>,
        child: &Expansion,
    ) -> Result<f64, BackendError> {
        match child.step {
            Step::Node(n) if (n as usize) < self.node_count() => Ok(self.score(n)),
            _ => Err(BackendError::MalformedResponse(
                "synthetic scorer received a non-node step".into(),
            )),
        }
    }

    fn is_correct(&self, answer: &str) -> Option<bool> {
        Some(answer == self.correct_answer())
    }
}
