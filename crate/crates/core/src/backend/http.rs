//! Generator and scorer served over HTTP.
//!
//! The generator speaks a chat-completions protocol:
//!
//! ```text
//! POST generator_url
//! {"model": .., "messages": [{"role": "user", "content": problem},
//!                            {"role": "assistant", "content": prefix}],
//!  "temperature": .., "max_tokens": .., "logprobs": true, "n": count}
//! -> {"choices": [{"message": {"content": ..}, "finish_reason": ..,
//!                  "logprobs": {"content": [{"token": .., "logprob": ..}]}}]}
//! ```
//!
//! The assistant message is omitted at the root. Each completion is cut at
//! the first step delimiter. The scorer receives the step-split prefix:
//!
//! ```text
//! POST scorer_url
//! {"model": .., "problem": .., "steps": ["step 1", "step 2"]}
//! -> {"step_scores": [0.9, 0.7]}
//! ```
//!
//! and the last step's score becomes the prefix score.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, ExpandRequest, Expansion};
use crate::model::{clamp_score, Arena, PrefixId, Step};
use crate::SearchRng;

pub const DEFAULT_ANSWER_PATTERN: &str = r"\\boxed\{((?:[^{}]|\{[^{}]*\})*)\}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub generator_url: String,
    pub generator_model: String,
    pub scorer_url: String,
    pub scorer_model: String,
    /// Name of the environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub system_prompt: Option<String>,
    pub step_delimiter: String,
    /// First capture group (or the whole match) is the answer.
    pub answer_pattern: String,
    pub max_tokens: u32,
    pub request_logprobs: bool,
    /// Forward a per-request seed drawn from the search RNG.
    pub send_seed: bool,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_concurrent_requests: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            generator_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            generator_model: String::new(),
            scorer_url: "http://127.0.0.1:8001/score".into(),
            scorer_model: String::new(),
            auth_env: None,
            system_prompt: None,
            step_delimiter: "\n\n".into(),
            answer_pattern: DEFAULT_ANSWER_PATTERN.into(),
            max_tokens: 512,
            request_logprobs: true,
            send_seed: false,
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 200,
            max_concurrent_requests: 8,
        }
    }
}

/// Counters shared by every request of one backend.
#[derive(Debug, Default)]
pub struct HttpStats {
    pub requests: AtomicU64,
    pub retries: AtomicU64,
}

impl HttpStats {
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    problem: String,
    correct_answer: Option<String>,
    answer_re: Regex,
    token: Option<String>,
    agent: ureq::Agent,
    stats: HttpStats,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    step_scores: Vec<f64>,
}

impl HttpBackend {
    /// Backend for one problem. `correct_answer` enables ground-truth checks.
    pub fn new(
        config: HttpBackendConfig,
        problem: impl Into<String>,
        correct_answer: Option<String>,
    ) -> Result<Self, BackendError> {
        let answer_re = Regex::new(&config.answer_pattern)
            .map_err(|e| BackendError::InvalidConfig(format!("answer pattern: {e}")))?;
        if config.step_delimiter.is_empty() {
            return Err(BackendError::InvalidConfig("step delimiter is empty".into()));
        }
        if config.max_concurrent_requests == 0 {
            return Err(BackendError::InvalidConfig(
                "max_concurrent_requests must be positive".into(),
            ));
        }
        let token = match &config.auth_env {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::InvalidConfig(format!("auth variable `{var}` is not set"))
            })?),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            problem: problem.into(),
            correct_answer,
            answer_re,
            token,
            agent,
            stats: HttpStats::default(),
        })
    }

    pub fn stats(&self) -> &HttpStats {
        &self.stats
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    /// Answer captured by the configured pattern.
    pub fn extract_answer(&self, text: &str) -> Option<String> {
        let caps = self.answer_re.captures(text)?;
        let m = caps.get(1).or_else(|| caps.get(0))?;
        Some(m.as_str().trim().to_string())
    }

    fn step_texts<'a>(&self, arena: &'a Arena, parent: Option<PrefixId>) -> Result<Vec<&'a str>, BackendError> {
        if let Some(id) = parent {
            if id.index() >= arena.len() {
                return Err(BackendError::ForeignPrefix(id));
            }
        }
        arena
            .steps(parent)
            .into_iter()
            .map(|s| s.text().ok_or(BackendError::ForeignPrefix(parent.unwrap_or(PrefixId(0)))))
            .collect()
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        self.stats.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::ServiceError(status));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| match map_ureq_error(e) {
                BackendError::Transport(m) => BackendError::MalformedResponse(m),
                other => other,
            })
    }

    /// POST with retries on timeouts, 5xx/429 and malformed bodies.
    fn post_retrying<T>(
        &self,
        url: &str,
        body: &Value,
        parse: impl Fn(Value) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            let result = self.post(url, body).and_then(&parse);
            match result {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.config.max_retries && retryable(&e) => {
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(10));
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn generation_body(&self, prefix: &[&str], count: usize, temperature: f64, seed: u64) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &self.config.system_prompt {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.push(json!({"role": "user", "content": self.problem}));
        if !prefix.is_empty() {
            let mut text = prefix.join(&self.config.step_delimiter);
            text.push_str(&self.config.step_delimiter);
            messages.push(json!({"role": "assistant", "content": text}));
        }
        let mut body = json!({
            "model": self.config.generator_model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
            "logprobs": self.config.request_logprobs,
            "n": count,
        });
        if self.config.send_seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_choice(&self, choice: Choice) -> Expansion {
        let content = choice.message.content.unwrap_or_default();
        let delim = self.config.step_delimiter.as_str();
        // a completion may open with the delimiter it was prompted with
        let mut start = 0;
        while content[start..].starts_with(delim) {
            start += delim.len();
        }
        let body = &content[start..];
        let (step, cut) = match body.find(delim) {
            Some(i) => (&body[..i], true),
            None => (body, false),
        };
        let answer = self.extract_answer(step);
        let truncated = choice.finish_reason.as_deref() == Some("length");
        let terminal = answer.is_some() || (!cut && !truncated);
        let (step_logprob, tokens) = match choice.logprobs.and_then(|l| l.content) {
            Some(toks) => {
                let (lp, n) = step_logprob(&toks, start, start + step.len());
                (Some(lp), Some(n))
            }
            None => (None, None),
        };
        Expansion {
            step: Step::Text(step.to_string()),
            step_logprob,
            terminal,
            answer: if terminal { answer } else { None },
            tokens,
        }
    }

    fn expand_one(
        &self,
        prefix: &[&str],
        count: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<Expansion>, BackendError> {
        let body = self.generation_body(prefix, count, temperature, seed);
        self.post_retrying(&self.config.generator_url, &body, |v| {
            let resp: ChatResponse = serde_json::from_value(v)
                .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            if resp.choices.len() != count {
                return Err(BackendError::MalformedResponse(format!(
                    "asked for {count} choices, got {}",
                    resp.choices.len()
                )));
            }
            Ok(resp.choices.into_iter().map(|c| self.parse_choice(c)).collect())
        })
    }

    fn score_steps(&self, steps: Vec<&str>) -> Result<f64, BackendError> {
        let body = json!({
            "model": self.config.scorer_model,
            "problem": self.problem,
            "steps": steps,
        });
        self.post_retrying(&self.config.scorer_url, &body, |v| {
            let resp: ScoreResponse = serde_json::from_value(v)
                .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            match resp.step_scores.last() {
                Some(s) if s.is_finite() => Ok(clamp_score(*s)),
                Some(s) => Err(BackendError::MalformedResponse(format!("step score {s}"))),
                None => Err(BackendError::MalformedResponse("no step scores".into())),
            }
        })
    }

    /// Run `jobs` on up to `max_concurrent_requests` threads, results in
    /// job order.
    fn parallel<T: Send>(
        &self,
        jobs: usize,
        work: impl Fn(usize) -> Result<T, BackendError> + Sync,
    ) -> Result<Vec<T>, BackendError> {
        let workers = self.config.max_concurrent_requests.min(jobs);
        if workers <= 1 {
            return (0..jobs).map(work).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<T, BackendError>>>> =
            Mutex::new((0..jobs).map(|_| None).collect());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let r = work(i);
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every job ran"))
            .collect()
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Timeout | BackendError::MalformedResponse(_) | BackendError::Transport(_) => true,
        BackendError::ServiceError(s) => *s >= 500 || *s == 429,
        _ => false,
    }
}

fn map_ureq_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(s) => BackendError::ServiceError(s),
        ureq::Error::Io(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) =>
        {
            BackendError::Timeout
        }
        ureq::Error::Json(j) => BackendError::MalformedResponse(j.to_string()),
        other => BackendError::Transport(other.to_string()),
    }
}

/// Sum of token log-probabilities for tokens overlapping bytes
/// `[start, end)` of the completion, and their count.
fn step_logprob(tokens: &[TokenLogprob], start: usize, end: usize) -> (f64, u64) {
    let mut offset = 0;
    let mut sum = 0.0;
    let mut n = 0;
    for t in tokens {
        let t_end = offset + t.token.len();
        if t_end > start && offset < end {
            sum += t.logprob;
            n += 1;
        }
        offset = t_end;
        if offset >= end {
            break;
        }
    }
    (sum, n)
}

impl Backend for HttpBackend {
    fn expand(
        &self,
        arena: &Arena,
        parent: Option<PrefixId>,
        count: usize,
        temperature: f64,
        rng: &mut SearchRng,
    ) -> Result<Vec<Expansion>, BackendError> {
        if let Some(id) = parent {
            if id.index() < arena.len() && arena.get(id).terminal {
                return Err(BackendError::TerminalParent(id));
            }
        }
        let prefix = self.step_texts(arena, parent)?;
        let seed = rng.random();
        self.expand_one(&prefix, count, temperature, seed)
    }

    fn score(
        &self,
        arena: &Arena,
        parent: Option<PrefixId>,
        child: &Expansion,
    ) -> Result<f64, BackendError> {
        let mut steps = self.step_texts(arena, parent)?;
        steps.push(child.step.text().unwrap_or_default());
        self.score_steps(steps)
    }

    fn expand_batch(
        &self,
        arena: &Arena,
        requests: &[ExpandRequest],
        temperature: f64,
        rng: &mut SearchRng,
    ) -> Result<Vec<Vec<Expansion>>, BackendError> {
        let mut prepared = Vec::with_capacity(requests.len());
        for r in requests {
            if let Some(id) = r.parent {
                if id.index() < arena.len() && arena.get(id).terminal {
                    return Err(BackendError::TerminalParent(id));
                }
            }
            // seeds are drawn in request order before any request is sent
            prepared.push((self.step_texts(arena, r.parent)?, r.count, rng.random::<u64>()));
        }
        self.parallel(prepared.len(), |i| {
            let (prefix, count, seed) = &prepared[i];
            self.expand_one(prefix, *count, temperature, *seed)
        })
    }

    fn score_batch(
        &self,
        arena: &Arena,
        items: &[(Option<PrefixId>, &Expansion)],
    ) -> Result<Vec<f64>, BackendError> {
        let mut prepared = Vec::with_capacity(items.len());
        for (parent, child) in items {
            let mut steps = self.step_texts(arena, *parent)?;
            steps.push(child.step.text().unwrap_or_default());
            prepared.push(steps);
        }
        self.parallel(prepared.len(), |i| self.score_steps(prepared[i].clone()))
    }

    fn is_correct(&self, answer: &str) -> Option<bool> {
        self.correct_answer
            .as_deref()
            .map(|c| normalize_answer(c) == normalize_answer(answer))
    }
}

fn normalize_answer(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}
