//! Text-completion gateway: a provider-neutral HTTP client for synthetic
//! data generation, plus a deterministic offline stub used by tests, CI,
//! and the bundled demo pipeline.
//!
//! Every attempt (request and raw response) can be appended to a JSONL
//! generation log keyed by the request's content hash, so any generation
//! pass can be audited or replayed later.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Env var naming the completion endpoint URL.
pub const ENDPOINT_ENV: &str = "GENRET_LLM_ENDPOINT";
/// Env var holding the bearer token, if the endpoint needs one.
pub const KEY_ENV: &str = "GENRET_LLM_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: usize },
    #[error("endpoint returned HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: usize },
    #[error("provider refused the request (empty completion)")]
    ProviderRefusal,
    #[error("no endpoint configured: set {ENDPOINT_ENV} or use the stub")]
    NotConfigured,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("generation log error: {0}")]
    Log(#[from] std::io::Error),
}

/// One completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    /// Sampling temperature in `[0, 1]`.
    pub temperature: f64,
    pub max_tokens: usize,
    /// Consumed only by the stub, where it makes the output a pure
    /// function of `(prompt, seed)`. Remote providers ignore it.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GenResponse {
    pub text: String,
    pub model_name: String,
    pub latency_ms: u64,
}

/// A text-completion backend.
pub trait LlmGateway: Send + Sync {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, GatewayError>;
}

// ---------------------------------------------------------------------------
// Generation log
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LogEntry<'a> {
    ts_ms: u128,
    request_hash: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    outcome: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_name: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Append-only JSONL log of every gateway attempt.
pub struct GenerationLog {
    file: Mutex<std::fs::File>,
}

impl GenerationLog {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(GenerationLog { file: Mutex::new(file) })
    }

    fn append(&self, req: &GenRequest, result: &Result<GenResponse, GatewayError>) {
        let hash = request_hash(req);
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let entry = match result {
            Ok(resp) => LogEntry {
                ts_ms: now,
                request_hash: &hash,
                prompt: &req.prompt,
                temperature: req.temperature,
                max_tokens: req.max_tokens,
                outcome: "ok",
                text: Some(&resp.text),
                model_name: Some(&resp.model_name),
                error: None,
            },
            Err(e) => LogEntry {
                ts_ms: now,
                request_hash: &hash,
                prompt: &req.prompt,
                temperature: req.temperature,
                max_tokens: req.max_tokens,
                outcome: "error",
                text: None,
                model_name: None,
                error: Some(e.to_string()),
            },
        };
        if let Ok(line) = serde_json::to_string(&entry) {
            let mut f = self.file.lock().unwrap();
            let _ = writeln!(f, "{line}");
        }
    }
}

/// SHA-256 over the request content, hex-encoded.
pub fn request_hash(req: &GenRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.prompt.as_bytes());
    h.update(req.temperature.to_le_bytes());
    h.update(req.max_tokens.to_le_bytes());
    h.update(req.seed.to_le_bytes());
    hex::encode(h.finalize())
}

// ---------------------------------------------------------------------------
// In-flight bound
// ---------------------------------------------------------------------------

/// Counting semaphore capping concurrent requests.
struct Inflight {
    state: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Inflight {
    fn new(cap: usize) -> Self {
        Inflight {
            state: Mutex::new(0),
            cv: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> InflightGuard<'_> {
        let mut n = self.state.lock().unwrap();
        while *n >= self.cap {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        InflightGuard { sem: self }
    }

    #[cfg(test)]
    fn current(&self) -> usize {
        *self.state.lock().unwrap()
    }
}

struct InflightGuard<'a> {
    sem: &'a Inflight,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.state.lock().unwrap();
        *n -= 1;
        self.sem.cv.notify_one();
    }
}

// ---------------------------------------------------------------------------
// HTTP gateway
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    model_name: Option<String>,
}

/// Client speaking a minimal JSON-over-POST protocol: the request body is
/// `{prompt, temperature, max_tokens}` and the response `{text, model_name?}`.
/// Retries use exponential backoff with jitter; refusals are not retried.
pub struct HttpGateway {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    /// Total attempts per request (first try included).
    attempts: usize,
    backoff: Duration,
    jitter: Mutex<ChaCha20Rng>,
    inflight: Inflight,
    log: Option<GenerationLog>,
}

impl HttpGateway {
    pub fn new(endpoint: String, api_key: Option<String>) -> Result<Self, GatewayError> {
        Self::with_options(endpoint, api_key, 3, Duration::from_millis(500), Duration::from_secs(60), 4)
    }

    /// Read endpoint and key from `GENRET_LLM_ENDPOINT` / `GENRET_LLM_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| GatewayError::NotConfigured)?;
        let key = std::env::var(KEY_ENV).ok();
        Self::new(endpoint, key)
    }

    pub fn with_options(
        endpoint: String,
        api_key: Option<String>,
        attempts: usize,
        backoff: Duration,
        timeout: Duration,
        max_inflight: usize,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpGateway {
            endpoint,
            api_key,
            client,
            attempts: attempts.max(1),
            backoff,
            jitter: Mutex::new(ChaCha20Rng::seed_from_u64(0)),
            inflight: Inflight::new(max_inflight),
            log: None,
        })
    }

    pub fn with_log(mut self, log: GenerationLog) -> Self {
        self.log = Some(log);
        self
    }

    fn sleep_before_retry(&self, attempt: usize) {
        let base = self.backoff.as_millis() as u64 * (1u64 << attempt.min(16));
        let jitter = self.jitter.lock().unwrap().random_range(0..=base / 2 + 1);
        std::thread::sleep(Duration::from_millis(base + jitter));
    }

    fn try_once(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        let started = Instant::now();
        let mut builder = self.client.post(&self.endpoint).json(&WireRequest {
            prompt: &req.prompt,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        });
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout { attempts: 1 }
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited { attempts: 1 });
        }
        if !status.is_success() {
            return Err(GatewayError::HttpStatus { status: status.as_u16() });
        }
        let body: WireResponse = resp
            .json()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if body.text.trim().is_empty() {
            return Err(GatewayError::ProviderRefusal);
        }
        Ok(GenResponse {
            text: body.text,
            model_name: body.model_name.unwrap_or_else(|| "unknown".to_string()),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    #[cfg(test)]
    fn current_inflight(&self) -> usize {
        self.inflight.current()
    }
}

fn retryable(err: &GatewayError) -> bool {
    match err {
        GatewayError::Timeout { .. } | GatewayError::RateLimited { .. } | GatewayError::Transport(_) => true,
        GatewayError::HttpStatus { status } => *status >= 500,
        _ => false,
    }
}

impl LlmGateway for HttpGateway {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        let _guard = self.inflight.acquire();
        let mut last = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                self.sleep_before_retry(attempt - 1);
            }
            let result = self.try_once(req);
            if let Some(log) = &self.log {
                log.append(req, &result);
            }
            match result {
                Ok(resp) => return Ok(resp),
                Err(e) if retryable(&e) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(match last {
            Some(GatewayError::Timeout { .. }) => GatewayError::Timeout { attempts: self.attempts },
            Some(GatewayError::RateLimited { .. }) => GatewayError::RateLimited { attempts: self.attempts },
            Some(e) => e,
            None => GatewayError::Transport("no attempts made".to_string()),
        })
    }
}

// ---------------------------------------------------------------------------
// Deterministic stub
// ---------------------------------------------------------------------------

/// Offline gateway whose output is a pure function of `(prompt, seed)`.
/// It recognizes the prompt families used by this pipeline and answers each
/// with a well-formed Markdown dash list built from words of the embedded
/// context.
pub struct StubGateway {
    log: Option<GenerationLog>,
}

impl Default for StubGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl StubGateway {
    pub fn new() -> Self {
        StubGateway { log: None }
    }

    pub fn with_log(mut self, log: GenerationLog) -> Self {
        self.log = Some(log);
        self
    }
}

impl LlmGateway for StubGateway {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        let result = Ok(GenResponse {
            text: stub_generate(&req.prompt, req.seed),
            model_name: "stub".to_string(),
            latency_ms: 0,
        });
        if let Some(log) = &self.log {
            log.append(req, &result);
        }
        result
    }
}

const STOPWORDS: [&str; 32] = [
    "the", "a", "an", "and", "or", "but", "of", "in", "on", "at", "to", "for", "with", "by",
    "from", "as", "is", "are", "was", "were", "be", "been", "it", "its", "this", "that", "these",
    "those", "near", "into", "about", "over",
];

fn rng_for(prompt: &str, seed: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    ChaCha20Rng::from_seed(digest.into())
}

/// Extract the block following a `# {header}` line, up to the next `#` line.
fn section<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let marker = format!("# {header}");
    let start = prompt
        .lines()
        .scan(0usize, |off, line| {
            let at = *off;
            *off += line.len() + 1;
            Some((at, line))
        })
        .find(|(_, line)| line.trim_end_matches(':') == marker)?;
    let body_start = start.0 + start.1.len() + 1;
    if body_start >= prompt.len() {
        return Some("");
    }
    let body = &prompt[body_start..];
    let end = body
        .lines()
        .scan(0usize, |off, line| {
            let at = *off;
            *off += line.len() + 1;
            Some((at, line))
        })
        .find(|(_, line)| line.starts_with('#'))
        .map(|(at, _)| at)
        .unwrap_or(body.len());
    Some(&body[..end])
}

fn content_words(context: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::new();
    for tok in crate::corpus::tokenize(context) {
        if tok.len() >= 3
            && tok.chars().all(|c| c.is_alphabetic())
            && !STOPWORDS.contains(&tok.as_str())
            && seen.insert(tok.clone())
        {
            words.push(tok);
        }
    }
    if words.is_empty() {
        words.push("content".to_string());
    }
    words
}

fn requested_count(prompt: &str) -> usize {
    let re = regex::Regex::new(r"(?:set of|less than)\s+(\d+)").unwrap();
    re.captures(prompt)
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(5)
}

fn pick<'a>(rng: &mut ChaCha20Rng, words: &'a [String]) -> &'a str {
    &words[rng.random_range(0..words.len())]
}

/// The most salient context words: longest first, ties by first
/// occurrence. Questions lead with one of these, the way a real query
/// names the subject it is after.
fn salient_words(words: &[String]) -> Vec<String> {
    let mut ranked = words.to_vec();
    ranked.sort_by(|a, b| b.len().cmp(&a.len()));
    ranked.truncate(3);
    ranked
}

/// Deterministic template completion for the pipeline's prompt families.
pub fn stub_generate(prompt: &str, seed: u64) -> String {
    let mut rng = rng_for(prompt, seed);
    let context = section(prompt, "Context").unwrap_or("").trim().to_string();
    let words = content_words(&context);
    let n = requested_count(prompt);

    if prompt.contains("keywords") {
        // Prefer longer words: they are the most identifier-like.
        let mut ranked = words.clone();
        ranked.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        ranked.truncate(5);
        let count = 3.min(ranked.len());
        let mut chosen = Vec::new();
        while chosen.len() < count {
            let w = pick(&mut rng, &ranked).to_string();
            if !chosen.contains(&w) {
                chosen.push(w);
            }
        }
        return chosen.iter().map(|w| format!("- {w}")).collect::<Vec<_>>().join("\n");
    }

    if prompt.contains("Query:") && prompt.contains("Answer:") {
        let salient = salient_words(&words);
        let mut lines = Vec::new();
        for _ in 0..n {
            let a = pick(&mut rng, &salient);
            let b = pick(&mut rng, &words);
            let ans = pick(&mut rng, &words);
            lines.push(format!(
                "- Query: which account links {a} with {b} and names the outcome? Answer: {ans}"
            ));
        }
        return lines.join("\n");
    }

    if prompt.contains("metadata") {
        let metadata = section(prompt, "Metadata").unwrap_or("").trim().to_string();
        let values: Vec<String> = metadata
            .lines()
            .filter_map(|l| l.split_once(':'))
            .map(|(_, v)| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return String::new();
        }
        let mut lines = Vec::new();
        for i in 0..n {
            let value = &values[i % values.len()];
            let a = pick(&mut rng, &words);
            let b = pick(&mut rng, &words);
            lines.push(format!("- According to {value}, what connects {a} and {b}?"));
        }
        return lines.join("\n");
    }

    // Plain question generation.
    let templates: [fn(&str, &str) -> String; 5] = [
        |a, _| format!("What did the {a} do?"),
        |a, b| format!("How does {a} relate to {b}?"),
        |a, b| format!("What does the passage say about {a} and {b}?"),
        |a, b| format!("Which details tie the {a} to the {b}?"),
        |a, b| format!("Why was {a} mentioned alongside {b}?"),
    ];
    let salient = salient_words(&words);
    let mut lines = Vec::new();
    for i in 0..n {
        let a = pick(&mut rng, &salient).to_string();
        let b = pick(&mut rng, &words).to_string();
        lines.push(format!("- {}", templates[i % templates.len()](&a, &b)));
    }
    lines.join("\n")
}

// ---------------------------------------------------------------------------
// Scripted gateway (test helper)
// ---------------------------------------------------------------------------

/// Gateway returning canned responses in order; repeats the last one when
/// exhausted. Lets tests exercise parser salvage paths the stub never
/// produces.
pub struct ScriptedGateway {
    responses: Mutex<std::collections::VecDeque<String>>,
    last: Mutex<String>,
    pub calls: Mutex<Vec<String>>,
}

impl ScriptedGateway {
    pub fn new(responses: Vec<&str>) -> Self {
        let q: std::collections::VecDeque<String> =
            responses.into_iter().map(|s| s.to_string()).collect();
        let last = q.back().cloned().unwrap_or_default();
        ScriptedGateway {
            responses: Mutex::new(q),
            last: Mutex::new(last),
            calls: Mutex::new(Vec::new()),
        }
    }
}

impl LlmGateway for ScriptedGateway {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, GatewayError> {
        self.calls.lock().unwrap().push(req.prompt.clone());
        let text = {
            let mut q = self.responses.lock().unwrap();
            match q.pop_front() {
                Some(t) => {
                    *self.last.lock().unwrap() = t.clone();
                    t
                }
                None => self.last.lock().unwrap().clone(),
            }
        };
        Ok(GenResponse {
            text,
            model_name: "scripted".to_string(),
            latency_ms: 0,
        })
    }
}

/// Maps a `BTreeMap` of metadata to the `key: value` lines embedded in
/// constraint prompts.
pub fn metadata_lines(metadata: &BTreeMap<String, String>) -> String {
    metadata
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write as IoWrite};
    use std::net::TcpListener;

    #[test]
    fn stub_is_deterministic() {
        let prompt = "generate a relevant and diverse set of 3 questions\n\n# Context:\nThe cat sat on the mat near the harbor market.\n\n# Output:";
        let a = stub_generate(prompt, 7);
        let b = stub_generate(prompt, 7);
        assert_eq!(a, b);
        let c = stub_generate(prompt, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn stub_emits_requested_count_of_dash_lines() {
        let prompt = "set of 4 questions\n\n# Context:\nThe cat sat on the mat.\n\n# Output:";
        let text = stub_generate(prompt, 1);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.starts_with("- ")));
        assert!(lines[0].starts_with("- What did the"));
    }

    #[test]
    fn stub_emits_query_answer_pairs() {
        let prompt = "less than 3 search engine query and answer pairs.\nEach item starts with \"-\", then \"Query:\" and then \"Answer:\".\n\n# Context:\nThe bridge survey measured the river current.\n\n# Output:";
        let text = stub_generate(prompt, 1);
        for line in text.lines() {
            assert!(line.contains("Query:") && line.contains("Answer:"));
        }
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn stub_constraint_lines_quote_metadata_values() {
        let prompt = "questions with at least one metadata filtering requirement; set of 2 questions\n\n# Metadata:\nsource: Yardbarker\npolarity: left\n\n# Context:\nThe running game led the league.\n\n# Output:";
        let text = stub_generate(prompt, 3);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().any(|l| l.contains("Yardbarker") || l.contains("left")));
    }

    fn serve_once(listener: &TcpListener, response: &str) {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let l = line.trim_end().to_lowercase();
            if let Some(v) = l.strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap();
            }
            if line == "\r\n" || line == "\n" {
                break;
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body).unwrap();
        stream.write_all(response.as_bytes()).unwrap();
    }

    #[test]
    fn http_429_then_200_retries_once_and_logs_both_attempts() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            serve_once(&listener, "HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\n\r\n");
            let body = r#"{"text":"- ok","model_name":"fake"}"#;
            serve_once(
                &listener,
                &format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                    body.len(),
                    body
                ),
            );
        });

        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("genlog.jsonl");
        let gw = HttpGateway::with_options(
            format!("http://{addr}"),
            None,
            3,
            Duration::from_millis(1),
            Duration::from_secs(5),
            2,
        )
        .unwrap()
        .with_log(GenerationLog::open(&log_path).unwrap());

        let resp = gw
            .complete(&GenRequest {
                prompt: "hello".into(),
                temperature: 0.0,
                max_tokens: 16,
                seed: 0,
            })
            .unwrap();
        assert_eq!(resp.text, "- ok");
        assert_eq!(resp.model_name, "fake");
        server.join().unwrap();

        let log = std::fs::read_to_string(&log_path).unwrap();
        let entries: Vec<serde_json::Value> = log
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0]["outcome"], "error");
        assert_eq!(entries[1]["outcome"], "ok");
        assert_eq!(entries[0]["request_hash"], entries[1]["request_hash"]);
    }

    #[test]
    fn timeout_surfaces_after_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        // Accept connections but never answer.
        let server = std::thread::spawn(move || {
            let mut held = Vec::new();
            for _ in 0..2 {
                if let Ok((s, _)) = listener.accept() {
                    held.push(s);
                }
            }
            std::thread::sleep(Duration::from_millis(300));
        });
        let gw = HttpGateway::with_options(
            format!("http://{addr}"),
            None,
            2,
            Duration::from_millis(1),
            Duration::from_millis(50),
            2,
        )
        .unwrap();
        let err = gw
            .complete(&GenRequest {
                prompt: "hi".into(),
                temperature: 0.0,
                max_tokens: 4,
                seed: 0,
            })
            .unwrap_err();
        assert!(matches!(err, GatewayError::Timeout { attempts: 2 }), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn refusal_is_not_retried() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let body = r#"{"text":"  "}"#;
            serve_once(
                &listener,
                &format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                    body.len(),
                    body
                ),
            );
        });
        let gw = HttpGateway::with_options(
            format!("http://{addr}"),
            None,
            3,
            Duration::from_millis(1),
            Duration::from_secs(5),
            2,
        )
        .unwrap();
        let err = gw
            .complete(&GenRequest {
                prompt: "hi".into(),
                temperature: 0.0,
                max_tokens: 4,
                seed: 0,
            })
            .unwrap_err();
        assert!(matches!(err, GatewayError::ProviderRefusal));
        server.join().unwrap();
    }

    #[test]
    fn inflight_guard_bounds_concurrency() {
        let sem = Inflight::new(2);
        let g1 = sem.acquire();
        let g2 = sem.acquire();
        assert_eq!(sem.current(), 2);
        drop(g1);
        assert_eq!(sem.current(), 1);
        drop(g2);
        assert_eq!(sem.current(), 0);
        let _ = HttpGateway::with_options(
            "http://127.0.0.1:1".into(),
            None,
            1,
            Duration::from_millis(1),
            Duration::from_millis(10),
            2,
        )
        .map(|g| assert_eq!(g.current_inflight(), 0));
    }

    #[test]
    fn scripted_gateway_replays_in_order() {
        let gw = ScriptedGateway::new(vec!["first", "second"]);
        let req = GenRequest {
            prompt: "p".into(),
            temperature: 0.0,
            max_tokens: 4,
            seed: 0,
        };
        assert_eq!(gw.complete(&req).unwrap().text, "first");
        assert_eq!(gw.complete(&req).unwrap().text, "second");
        assert_eq!(gw.complete(&req).unwrap().text, "second");
        assert_eq!(gw.calls.lock().unwrap().len(), 3);
    }
}
