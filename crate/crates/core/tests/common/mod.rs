#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value;

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay_ms: u64,
}

impl Reply {
    pub fn json(v: Value) -> Self {
        Reply { status: 200, body: v.to_string(), delay_ms: 0 }
    }

    pub fn status(status: u16) -> Self {
        Reply { status, body: "{}".into(), delay_ms: 0 }
    }

    pub fn delayed(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Seen {
    pub path: String,
    pub body: Value,
    pub auth: Option<String>,
}

type Handler = dyn Fn(usize, &str, Value) -> Reply + Send + Sync;

/// Local HTTP service answering from a closure of (hit index, path, body).
pub struct Mock {
    pub base: String,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Seen>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl Mock {
    pub fn start(handler: impl Fn(usize, &str, Value) -> Reply + Send + Sync + 'static) -> Mock {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock"));
        let base = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let handle = {
            let (server, hits, seen) = (server.clone(), hits.clone(), seen.clone());
            thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let mut text = String::new();
                    let _ = req.as_reader().read_to_string(&mut text);
                    let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
                    let path = req.url().to_string();
                    let auth = req
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Authorization"))
                        .map(|h| h.value.to_string());
                    seen.lock().unwrap().push(Seen { path: path.clone(), body: body.clone(), auth });
                    let i = hits.fetch_add(1, Ordering::SeqCst);
                    let handler = handler.clone();
                    // answer on a separate thread so a slow reply does not block the next request
                    thread::spawn(move || {
                        let reply = handler(i, &path, body);
                        if reply.delay_ms > 0 {
                            thread::sleep(Duration::from_millis(reply.delay_ms));
                        }
                        let resp = tiny_http::Response::from_string(reply.body)
                            .with_status_code(reply.status)
                            .with_header(
                                "Content-Type: application/json".parse::<tiny_http::Header>().unwrap(),
                            );
                        let _ = req.respond(resp);
                    });
                }
            })
        };
        Mock { base, hits, seen, server, handle: Some(handle) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// A chat-completions choice with per-character token logprobs.
pub fn choice(content: &str, finish: &str) -> Value {
    let tokens: Vec<Value> = content
        .chars()
        .map(|c| serde_json::json!({"token": c.to_string(), "logprob": -0.5}))
        .collect();
    serde_json::json!({
        "message": {"role": "assistant", "content": content},
        "finish_reason": finish,
        "logprobs": {"content": tokens},
    })
}
