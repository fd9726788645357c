//! Chat-completion gateway: one interface over the live HTTP provider, the
//! record/replay cassette provider, and a canned scripted provider, with
//! token and cost metering on every exchange.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::iter::Sum;
use std::ops::Add;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Exact money amount in units of 1e-12 currency. Any per-million-token
/// price with six fractional digits times any token count lands exactly on
/// this grid, so metering never touches binary floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Money(i128);

const PICO: i128 = 1_000_000_000_000;

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_picounits(pico: i128) -> Money {
        Money(pico)
    }

    pub fn picounits(self) -> i128 {
        self.0
    }

    /// Parse a plain decimal like "0.001250" (at most 12 fractional digits).
    pub fn parse(s: &str) -> Result<Money> {
        let s = s.trim();
        let (sign, digits) = match s.strip_prefix('-') {
            Some(rest) => (-1i128, rest),
            None => (1i128, s),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(Error::Config(format!("invalid money literal `{s}`")));
        }
        if frac_part.len() > 12 {
            return Err(Error::Config(format!("money literal `{s}` exceeds 12 fractional digits")));
        }
        let whole: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| Error::Config(format!("invalid money literal `{s}`")))?
        };
        let mut frac: i128 = 0;
        for c in frac_part.chars() {
            let d = c.to_digit(10).ok_or_else(|| {
                Error::Config(format!("invalid money literal `{s}`"))
            })?;
            frac = frac * 10 + i128::from(d);
        }
        frac *= 10i128.pow(12 - frac_part.len() as u32);
        Ok(Money(sign * (whole * PICO + frac)))
    }
}

impl fmt::Display for Money {
    /// Canonical decimal: at least six fractional digits, more only when
    /// needed for exactness.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / PICO as u128;
        let mut frac = format!("{:012}", abs % PICO as u128);
        while frac.len() > 6 && frac.ends_with('0') {
            frac.pop();
        }
        write!(f, "{sign}{whole}.{frac}")
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl Serialize for Money {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Money::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-1M-token prices, held in exact micro-currency units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_micro_per_mtok: i64,
    pub output_micro_per_mtok: i64,
}

impl PriceTable {
    pub const FREE: PriceTable = PriceTable { input_micro_per_mtok: 0, output_micro_per_mtok: 0 };

    /// Build from per-1M-token prices in currency units (e.g. 0.5 and 1.5).
    pub fn per_million(input: f64, output: f64) -> Result<PriceTable> {
        let to_micro = |v: f64, name: &str| -> Result<i64> {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("price `{name}` must be a finite non-negative number")));
            }
            Ok((v * 1e6).round() as i64)
        };
        Ok(PriceTable {
            input_micro_per_mtok: to_micro(input, "input_per_million")?,
            output_micro_per_mtok: to_micro(output, "output_per_million")?,
        })
    }

    /// tokens × (micro-currency per 1M tokens) lands directly in picounits.
    pub fn cost(&self, usage: Usage) -> Money {
        Money(
            i128::from(usage.prompt_tokens) * i128::from(self.input_micro_per_mtok)
                + i128::from(usage.completion_tokens) * i128::from(self.output_micro_per_mtok),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Whitespace-token estimate for providers that do not report usage.
pub fn estimate_usage(prompt: &str, response: &str) -> Usage {
    Usage {
        prompt_tokens: prompt.split_whitespace().count() as u64,
        completion_tokens: response.split_whitespace().count() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u64>,
}

impl LlmParams {
    pub fn new(model: &str, temperature: f64) -> LlmParams {
        LlmParams { model: model.to_string(), temperature, max_tokens: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Which agent role issued an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeRole {
    Rerank,
    Planner,
    Programmer,
    Debugger,
    Logger,
    Adapter,
    Extractor,
}

impl fmt::Display for ExchangeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExchangeRole::Rerank => "rerank",
            ExchangeRole::Planner => "planner",
            ExchangeRole::Programmer => "programmer",
            ExchangeRole::Debugger => "debugger",
            ExchangeRole::Logger => "logger",
            ExchangeRole::Adapter => "adapter",
            ExchangeRole::Extractor => "extractor",
        };
        write!(f, "{s}")
    }
}

/// One prompt/response with its usage and cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmExchange {
    pub role: ExchangeRole,
    pub prompt: String,
    pub params: LlmParams,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: Money,
    pub timestamp: DateTime<Utc>,
    pub retries: u32,
    pub truncated: bool,
}

impl LlmExchange {
    pub fn usage(&self) -> Usage {
        Usage { prompt_tokens: self.prompt_tokens, completion_tokens: self.completion_tokens }
    }
}

/// Sum of per-exchange costs; exact, additive, permutation-invariant.
pub fn total_cost(exchanges: &[LlmExchange]) -> Money {
    exchanges.iter().map(|e| e.cost).sum()
}

/// Content hash identifying a request: model, temperature, prompt bytes.
/// `max_tokens` stays out so cassettes survive budget tweaks.
pub fn fingerprint(model: &str, temperature: f64, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0x1f]);
    hasher.update(format!("{temperature}").as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug)]
pub struct RawCompletion {
    pub response: String,
    pub usage: Usage,
    pub retries: u32,
    pub truncated: bool,
}

pub trait ChatProvider: Sync {
    fn complete_raw(&self, prompt: &str, params: &LlmParams) -> Result<RawCompletion>;
}

/// Issue one completion: validates inputs, meters usage, prices the
/// exchange.
pub fn complete(
    provider: &dyn ChatProvider,
    role: ExchangeRole,
    prompt: &str,
    params: &LlmParams,
    prices: &PriceTable,
) -> Result<LlmExchange> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    params.validate()?;
    let raw = provider.complete_raw(prompt, params)?;
    Ok(LlmExchange {
        role,
        prompt: prompt.to_string(),
        params: params.clone(),
        response: raw.response,
        prompt_tokens: raw.usage.prompt_tokens,
        completion_tokens: raw.usage.completion_tokens,
        cost: prices.cost(raw.usage),
        timestamp: Utc::now(),
        retries: raw.retries,
        truncated: raw.truncated,
    })
}

// ---------------------------------------------------------------------------
// Cassette
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Recorded responses keyed by request fingerprint; one JSON object per
/// line. Duplicate fingerprints keep the first recording, matching replay
/// semantics.
#[derive(Debug, Default, Clone)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    index: HashMap<String, usize>,
}

impl Cassette {
    pub fn new() -> Cassette {
        Cassette::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: CassetteEntry) -> bool {
        if self.index.contains_key(&entry.fingerprint) {
            return false;
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    pub fn load(path: &Path) -> Result<Cassette> {
        let reader = BufReader::new(File::open(path).map_err(|e| Error::CassetteParse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?);
        let mut cassette = Cassette::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::CassetteParse {
                path: path.to_path_buf(),
                line: lineno,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| Error::CassetteParse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: e.to_string(),
                })?;
            if !cassette.insert(entry) {
                return Err(Error::CassetteParse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "duplicate fingerprint".into(),
                });
            }
        }
        Ok(cassette)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        for entry in &self.entries {
            serde_json::to_writer(&mut f, entry).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, initial_backoff: Duration::from_secs(1) }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Live provider speaking the de-facto chat-completions shape. Retries
/// transport failures and 429/5xx with exponential backoff; other error
/// payloads surface verbatim.
pub struct HttpChatProvider {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpChatProvider {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        HttpChatProvider {
            agent: config.new_agent(),
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, prompt: &str, params: &LlmParams) -> std::result::Result<RawCompletion, AttemptError> {
        let body = ChatRequest {
            model: &params.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Retryable { status, body });
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Fatal(Error::ProviderStatus { status, body }));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Fatal(Error::ProviderResponse(e.to_string())))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Fatal(Error::ProviderResponse("no choices".into())))?;
        let truncated = choice.finish_reason.as_deref() == Some("length");
        let response = choice.message.content;
        let usage = match parsed.usage {
            Some(u) => Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens },
            None => estimate_usage(prompt, &response),
        };
        Ok(RawCompletion { response, usage, retries: 0, truncated })
    }
}

enum AttemptError {
    Transport(String),
    Retryable { status: u16, body: String },
    Fatal(Error),
}

impl ChatProvider for HttpChatProvider {
    fn complete_raw(&self, prompt: &str, params: &LlmParams) -> Result<RawCompletion> {
        let mut backoff = self.retry.initial_backoff;
        let mut last: Option<AttemptError> = None;
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(prompt, params) {
                Ok(mut raw) => {
                    raw.retries = attempt - 1;
                    return Ok(raw);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(e) => last = Some(e),
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(match last {
            Some(AttemptError::Transport(msg)) => {
                Error::Transport { attempts: self.retry.max_attempts, msg }
            }
            Some(AttemptError::Retryable { status, body }) => Error::ProviderStatus { status, body },
            _ => Error::Transport { attempts: self.retry.max_attempts, msg: "unknown".into() },
        })
    }
}

/// Deterministic provider serving recorded responses by fingerprint.
/// Without a fallback it is strict: unrecorded fingerprints are an error.
pub struct ReplayProvider {
    cassette: Cassette,
    fallback: Option<Box<dyn ChatProvider + Send>>,
}

impl ReplayProvider {
    pub fn strict(cassette: Cassette) -> Self {
        ReplayProvider { cassette, fallback: None }
    }

    pub fn with_fallback(cassette: Cassette, fallback: Box<dyn ChatProvider + Send>) -> Self {
        ReplayProvider { cassette, fallback: Some(fallback) }
    }
}

impl ChatProvider for ReplayProvider {
    fn complete_raw(&self, prompt: &str, params: &LlmParams) -> Result<RawCompletion> {
        let fp = fingerprint(&params.model, params.temperature, prompt);
        match self.cassette.lookup(&fp) {
            Some(entry) => Ok(RawCompletion {
                response: entry.response.clone(),
                usage: Usage {
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                },
                retries: 0,
                truncated: false,
            }),
            None => match &self.fallback {
                Some(inner) => inner.complete_raw(prompt, params),
                None => Err(Error::ReplayMiss { fingerprint: fp }),
            },
        }
    }
}

/// Wraps any provider and appends every (new) exchange to a cassette file as
/// it happens.
pub struct RecordingProvider<P: ChatProvider> {
    inner: P,
    path: PathBuf,
    state: Mutex<RecordingState>,
}

struct RecordingState {
    file: File,
    seen: HashSet<String>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn create(inner: P, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(RecordingProvider {
            inner,
            path: path.to_path_buf(),
            state: Mutex::new(RecordingState { file, seen: HashSet::new() }),
        })
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete_raw(&self, prompt: &str, params: &LlmParams) -> Result<RawCompletion> {
        let raw = self.inner.complete_raw(prompt, params)?;
        let fp = fingerprint(&params.model, params.temperature, prompt);
        let mut state = self.state.lock().unwrap();
        if state.seen.insert(fp.clone()) {
            let entry = CassetteEntry {
                fingerprint: fp,
                response: raw.response.clone(),
                prompt_tokens: raw.usage.prompt_tokens,
                completion_tokens: raw.usage.completion_tokens,
            };
            serde_json::to_writer(&mut state.file, &entry)
                .map_err(|e| Error::CassetteParse {
                    path: self.path.clone(),
                    line: 0,
                    msg: e.to_string(),
                })?;
            state.file.write_all(b"\n")?;
            state.file.flush()?;
        }
        Ok(raw)
    }
}

/// Canned provider that serves a fixed queue of responses in order,
/// whatever the prompt. Used by tests and offline dry runs.
pub struct ScriptedProvider {
    responses: Mutex<VecDeque<String>>,
    total: usize,
}

impl ScriptedProvider {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queue: VecDeque<String> = responses.into_iter().map(Into::into).collect();
        let total = queue.len();
        ScriptedProvider { responses: Mutex::new(queue), total }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete_raw(&self, prompt: &str, _params: &LlmParams) -> Result<RawCompletion> {
        let mut queue = self.responses.lock().unwrap();
        let response = queue.pop_front().ok_or(Error::ScriptExhausted(self.total))?;
        let usage = estimate_usage(prompt, &response);
        Ok(RawCompletion { response, usage, retries: 0, truncated: false })
    }
}
