//! Scoring and generation backends.
//!
//! Two endpoints over HTTP/1.1 with JSON bodies:
//!
//! * `POST /score` takes `{"sequences": [..]}` and answers
//!   `{"probs": [[p0, p1], ..]}`, one pair per sequence.
//! * `POST /generate` takes `{"prompt", "max_new_words", "seed"}` and answers
//!   `{"text": ..}`.
//!
//! [`StubModel`] is a deterministic in-process implementation of both, and
//! [`StubServer`] serves it over HTTP for tests and CI.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{content_words, derive_seed, read_to_string, StopWords};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const GENERATE_RETRIES: usize = 2;
pub const STUB_W: f64 = 4.0;
pub const STUB_B: f64 = -1.0;
const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub sequences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub probs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_new_words: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// Binary classifier over plain-text sequences: `[P(0), P(1)]` per sequence.
pub trait Scorer: Send + Sync {
    fn score(&self, sequences: &[String]) -> Result<Vec<[f64; 2]>>;
}

/// Text continuation.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> Result<String>;
}

pub trait Backend: Scorer + Generator {}

impl<T: Scorer + Generator> Backend for T {}

impl<T: Scorer + ?Sized> Scorer for Arc<T> {
    fn score(&self, sequences: &[String]) -> Result<Vec<[f64; 2]>> {
        (**self).score(sequences)
    }
}

impl<T: Generator + ?Sized> Generator for Arc<T> {
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> Result<String> {
        (**self).generate(prompt, max_new_words, seed)
    }
}

impl<T: Scorer + ?Sized> Scorer for Box<T> {
    fn score(&self, sequences: &[String]) -> Result<Vec<[f64; 2]>> {
        (**self).score(sequences)
    }
}

impl<T: Generator + ?Sized> Generator for Box<T> {
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> Result<String> {
        (**self).generate(prompt, max_new_words, seed)
    }
}

/// Check a score response against the request size and normalization.
pub fn check_probs(expected: usize, probs: &[[f64; 2]]) -> Result<()> {
    if probs.len() != expected {
        return Err(Error::Protocol(format!(
            "{} probability pairs for {expected} sequences",
            probs.len()
        )));
    }
    for (i, [p0, p1]) in probs.iter().enumerate() {
        let in_range = |p: f64| (0.0..=1.0).contains(&p);
        if !in_range(*p0) || !in_range(*p1) || ((p0 + p1) - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::Protocol(format!(
                "sequence {i}: probabilities [{p0}, {p1}] are not a distribution"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, route: &str, body: &Req) -> Result<Resp> {
        let endpoint = format!("{}{route}", self.base);
        let transport = |message: String| Error::Transport {
            endpoint: endpoint.clone(),
            message,
        };
        let mut resp = self
            .agent
            .post(&endpoint)
            .send_json(body)
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(transport(format!("status {} {}", status.as_u16(), body.trim())));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| transport(format!("status 200, malformed body: {e}")))
    }
}

impl Scorer for HttpBackend {
    fn score(&self, sequences: &[String]) -> Result<Vec<[f64; 2]>> {
        if sequences.is_empty() {
            return Ok(Vec::new());
        }
        let resp: ScoreResponse = self.post(
            "/score",
            &ScoreRequest {
                sequences: sequences.to_vec(),
            },
        )?;
        check_probs(sequences.len(), &resp.probs)?;
        Ok(resp.probs)
    }
}

impl Generator for HttpBackend {
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> Result<String> {
        let req = GenerateRequest {
            prompt: prompt.to_string(),
            max_new_words,
            seed,
        };
        let mut attempt = 0;
        loop {
            match self.post::<_, GenerateResponse>("/generate", &req) {
                Ok(r) => return Ok(r.text),
                Err(e @ Error::Transport { .. }) if attempt < GENERATE_RETRIES => {
                    attempt += 1;
                    warn!("generate attempt {attempt} failed: {e}");
                }
                Err(e) => return Err(e),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic stub
// ---------------------------------------------------------------------------

/// Lookup key for canned continuations: first 16 hex digits of SHA-256(prompt).
pub fn prompt_key(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Canned continuations, keyed by [`prompt_key`]. File format:
/// `key<TAB>continuation` per line, `#` comments allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CannedTable(HashMap<String, String>);

impl CannedTable {
    pub fn parse(content: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "expected key<TAB>continuation".into(),
            })?;
            map.insert(key.trim().to_string(), text.to_string());
        }
        Ok(CannedTable(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn insert(&mut self, prompt: &str, continuation: impl Into<String>) {
        self.0.insert(prompt_key(prompt), continuation.into());
    }

    pub fn get(&self, prompt: &str) -> Option<&str> {
        self.0.get(&prompt_key(prompt)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

const TEMPLATE_SUBJECTS: &[&str] = &["they", "we", "she", "he", "everyone"];
const TEMPLATE_PREDICATES: &[&str] = &[
    "did it again",
    "went home early",
    "talked about it later",
    "waited for a while",
    "laughed about it",
];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Content-word Jaccard similarity; 0 when both sides are empty.
pub fn jaccard(a: &str, b: &str, stopwords: &StopWords) -> f64 {
    let a = content_words(a, stopwords);
    let b = content_words(b, stopwords);
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Deterministic scorer and generator.
///
/// Scoring: `p1 = sigmoid(w * J + b)` where `J` is the content-word Jaccard
/// similarity of the text before and after the first `" because "`.
/// Generation: canned continuation when the prompt is known, otherwise a
/// seeded "subject predicate." template.
#[derive(Debug, Clone)]
pub struct StubModel {
    pub w: f64,
    pub b: f64,
    pub stopwords: StopWords,
    pub canned: CannedTable,
}

impl Default for StubModel {
    fn default() -> Self {
        StubModel {
            w: STUB_W,
            b: STUB_B,
            stopwords: StopWords::default(),
            canned: CannedTable::default(),
        }
    }
}

impl StubModel {
    pub fn with_params(w: f64, b: f64) -> Self {
        StubModel {
            w,
            b,
            ..StubModel::default()
        }
    }

    pub fn score_one(&self, sequence: &str) -> [f64; 2] {
        let (left, right) = sequence.split_once(" because ").unwrap_or((sequence, ""));
        let j = jaccard(left, right, &self.stopwords);
        let p1 = sigmoid(self.w * j + self.b);
        [1.0 - p1, p1]
    }

    pub fn template(&self, prompt: &str, seed: u64) -> String {
        let h = derive_seed(seed, prompt);
        let subject = TEMPLATE_SUBJECTS[(h % TEMPLATE_SUBJECTS.len() as u64) as usize];
        let predicate =
            TEMPLATE_PREDICATES[((h >> 32) % TEMPLATE_PREDICATES.len() as u64) as usize];
        format!(" {subject} {predicate}.")
    }
}

impl Scorer for StubModel {
    fn score(&self, sequences: &[String]) -> Result<Vec<[f64; 2]>> {
        Ok(sequences.iter().map(|s| self.score_one(s)).collect())
    }
}

impl Generator for StubModel {
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> Result<String> {
        if max_new_words == 0 {
            return Ok(String::new());
        }
        let text = match self.canned.get(prompt) {
            Some(t) => t.to_string(),
            None => self.template(prompt, seed),
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() <= max_new_words {
            Ok(text)
        } else {
            Ok(format!(" {}", words[..max_new_words].join(" ")))
        }
    }
}

/// Resolve a backend address: `stub` (optionally `stub:w=4,b=-1`) for the
/// in-process stub, anything else is an HTTP base URL.
pub fn connect(address: &str) -> Result<Box<dyn Backend>> {
    if let Some(rest) = address.strip_prefix("stub") {
        let mut model = StubModel::default();
        let params = rest.trim_start_matches([':', '/']);
        for kv in params.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("bad stub parameter {kv:?}")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Argument(format!("bad stub value {v:?}")))?;
            match k {
                "w" => model.w = v,
                "b" => model.b = v,
                other => return Err(Error::Argument(format!("unknown stub parameter {other:?}"))),
            }
        }
        return Ok(Box::new(model));
    }
    if !(address.starts_with("http://") || address.starts_with("https://")) {
        return Err(Error::Argument(format!(
            "backend {address:?} must be `stub` or an http(s) URL"
        )));
    }
    Ok(Box::new(HttpBackend::new(address)))
}

// ---------------------------------------------------------------------------
// Stub HTTP server
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StubConfig {
    /// 0 picks a free port.
    pub port: u16,
    pub host: String,
    pub model: StubModel,
    pub workers: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            port: 0,
            host: "127.0.0.1".into(),
            model: StubModel::default(),
            workers: 4,
        }
    }
}

pub struct StubServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Block until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn stub_serve(config: StubConfig) -> Result<StubServer> {
    let addr = format!("{}:{}", config.host, config.port);
    let server = tiny_http::Server::http(&addr).map_err(|e| Error::Transport {
        endpoint: addr.clone(),
        message: format!("cannot bind: {e}"),
    })?;
    let port = server
        .server_addr()
        .to_ip()
        .map(|a| a.port())
        .unwrap_or(config.port);
    let server = Arc::new(server);
    let model = Arc::new(config.model);
    let workers = (0..config.workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let model = Arc::clone(&model);
            std::thread::spawn(move || {
                while let Ok(mut req) = server.recv() {
                    let (status, body) = handle(&model, &mut req);
                    let header = tiny_http::Header::from_bytes(
                        &b"Content-Type"[..],
                        &b"application/json"[..],
                    )
                    .expect("static header");
                    let resp = tiny_http::Response::from_string(body)
                        .with_status_code(status)
                        .with_header(header);
                    if let Err(e) = req.respond(resp) {
                        debug!("stub: failed to respond: {e}");
                    }
                }
            })
        })
        .collect();
    Ok(StubServer {
        server,
        port,
        workers,
    })
}

fn handle(model: &StubModel, req: &mut tiny_http::Request) -> (u16, String) {
    let route = req.url().split('?').next().unwrap_or("").to_string();
    let known = matches!(route.as_str(), "/score" | "/generate");
    if !known {
        return (404, error_body("not found"));
    }
    if *req.method() != tiny_http::Method::Post {
        return (405, error_body("method not allowed"));
    }
    let mut body = String::new();
    if let Err(e) = req.as_reader().read_to_string(&mut body) {
        return (400, error_body(&e.to_string()));
    }
    let result = match route.as_str() {
        "/score" => serde_json::from_str::<ScoreRequest>(&body)
            .map_err(|e| e.to_string())
            .map(|r| ScoreResponse {
                probs: r.sequences.iter().map(|s| model.score_one(s)).collect(),
            })
            .and_then(|r| serde_json::to_string(&r).map_err(|e| e.to_string())),
        _ => serde_json::from_str::<GenerateRequest>(&body)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                model
                    .generate(&r.prompt, r.max_new_words, r.seed)
                    .map_err(|e| e.to_string())
            })
            .and_then(|text| {
                serde_json::to_string(&GenerateResponse { text }).map_err(|e| e.to_string())
            }),
    };
    match result {
        Ok(json) => (200, json),
        Err(e) => (400, error_body(&e)),
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_constants() {
        let stub = StubModel::default();
        // no shared content words: J = 0 -> sigmoid(-1)
        let [p0, p1] = stub.score_one("The bananas ripened because we sang loudly.");
        assert_abs_diff_eq!(p1, 0.2689414213699951, epsilon = 1e-12);
        assert_abs_diff_eq!(p0 + p1, 1.0, epsilon = 1e-12);
        // {dog, barked} vs {dog, slept}: J = 1/3
        let [_, p1] = stub.score_one("The dog barked because the dog slept.");
        assert_abs_diff_eq!(p1, sigmoid(4.0 / 3.0 - 1.0), epsilon = 1e-12);
        // J = 0.5 -> sigmoid(1)
        let [_, p1] = stub.score_one("Dogs barked because of dogs.");
        assert_abs_diff_eq!(p1, 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn score_empty_and_identical() {
        let stub = StubModel::default();
        assert!(stub.score(&[]).unwrap().is_empty());
        let s = "A dog barked because a cat hissed.".to_string();
        let out = stub.score(&[s.clone(), s]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn canned_and_template_generation() {
        let mut stub = StubModel::default();
        stub.canned.insert("The bananas ripened. And", " we put them in the basket.");
        assert_eq!(
            stub.generate("The bananas ripened. And", 20, 0).unwrap(),
            " we put them in the basket."
        );
        let a = stub.generate("Unknown prompt. And", 20, 3).unwrap();
        let b = stub.generate("Unknown prompt. And", 20, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.ends_with('.'));
        let words = a.split_whitespace().count();
        assert!((3..=5).contains(&words), "{a}");
        assert_eq!(stub.generate("Unknown prompt. And", 0, 3).unwrap(), "");
        assert_eq!(
            stub.generate("The bananas ripened. And", 2, 0).unwrap(),
            " we put"
        );
    }

    #[test]
    fn canned_file_format() {
        let key = prompt_key("It rained. And");
        assert_eq!(key.len(), 16);
        let table = CannedTable::parse(&format!("# comment\n{key}\t it stopped.\n")).unwrap();
        assert_eq!(table.get("It rained. And"), Some(" it stopped."));
        assert!(CannedTable::parse("no tab here\n").is_err());
    }

    #[test]
    fn probability_checks() {
        assert!(check_probs(1, &[[0.25, 0.75]]).is_ok());
        assert!(matches!(check_probs(2, &[[0.25, 0.75]]), Err(Error::Protocol(_))));
        assert!(matches!(check_probs(1, &[[0.5, 0.6]]), Err(Error::Protocol(_))));
        assert!(matches!(check_probs(1, &[[-0.1, 1.1]]), Err(Error::Protocol(_))));
    }

    #[test]
    fn connect_addresses() {
        let stub = connect("stub").unwrap();
        assert_eq!(stub.score(&["a because b".into()]).unwrap().len(), 1);
        let tuned = connect("stub:w=0,b=0").unwrap();
        let [_, p1] = tuned.score(&["x".into()]).unwrap()[0];
        assert_abs_diff_eq!(p1, 0.5);
        assert!(connect("stub:q=1").is_err());
        assert!(connect("ftp://x").is_err());
    }
}
