//! JSON-over-HTTP clients for the model roles.
//!
//! Each role talks to one endpoint; requests go to `{url}/score`,
//! `{url}/generate`, `{url}/entail` and `{url}/segment`. Transport errors
//! and 5xx replies are retried with exponential backoff; 4xx replies are
//! protocol errors (a server rejecting our tokenizer lands here).

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::segment::{parse_segmentation_reply, ClauseCitation};
use super::{
    BackendError, FinishReason, FreeText, GenerationBackend, NliBackend, ScoredCandidate, SegmenterBackend,
    DEFAULT_NLI_THRESHOLD,
};
use crate::passage::PassageSet;
use crate::tokenizer::TokenId;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendEndpoint {
    pub url: String,
    pub model_name: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub headers: BTreeMap<String, String>,
    pub max_in_flight: usize,
    #[serde(with = "secs")]
    pub backoff: Duration,
}

impl Default for BackendEndpoint {
    fn default() -> Self {
        Self {
            url: String::new(),
            model_name: String::new(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            headers: BTreeMap::new(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            backoff: Duration::from_millis(250),
        }
    }
}

impl BackendEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            ..Self::default()
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shared transport: one agent, one limiter, retry policy.
#[derive(Debug)]
pub struct HttpClient {
    endpoint: BackendEndpoint,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpClient {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        if endpoint.url.trim().is_empty() {
            return Err(BackendError::Usage("endpoint url is empty".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            limiter: Limiter::new(endpoint.max_in_flight),
            endpoint,
            agent,
        })
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.limiter.acquire();
        let url = self.url(path);
        let attempts = self.endpoint.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.endpoint.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let mut req = self.agent.post(&url);
            for (k, v) in &self.endpoint.headers {
                req = req.header(k, v);
            }
            let mut resp = match req.send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status >= 500 {
                log::warn!("{url}: attempt {} got status {status}", attempt + 1);
                last = format!("status {status}");
                continue;
            }
            if status >= 400 {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(BackendError::Protocol(format!("{url} rejected request ({status}): {text}")));
            }
            return resp
                .body_mut()
                .read_json::<R>()
                .map_err(|e| BackendError::Protocol(format!("{url}: bad reply body: {e}")));
        }
        Err(BackendError::Unavailable { attempts, last })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model_name: &'a str,
    tokenizer_name: &'a str,
    context_text: &'a str,
    candidate_ids: &'a [TokenId],
}

#[derive(Deserialize)]
struct ScoreEntry {
    id: TokenId,
    logprob: f64,
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<ScoreEntry>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model_name: &'a str,
    context_text: &'a str,
    stop_strings: &'a [&'a str],
    max_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
    #[serde(default)]
    finish_reason: Option<FinishReason>,
    #[serde(default)]
    tokens: Option<usize>,
}

/// Generation role over HTTP. Token ids are sent with the tokenizer name.
#[derive(Debug)]
pub struct HttpGenerator {
    client: HttpClient,
    tokenizer_name: String,
    temperature: f64,
}

impl HttpGenerator {
    pub fn new(endpoint: BackendEndpoint, tokenizer_name: impl Into<String>) -> Result<Self, BackendError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            tokenizer_name: tokenizer_name.into(),
            temperature: 0.0,
        })
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

impl GenerationBackend for HttpGenerator {
    fn score(&self, context: &str, candidates: &[TokenId]) -> Result<Vec<ScoredCandidate>, BackendError> {
        let reply: ScoreReply = self.client.post(
            "score",
            &ScoreRequest {
                model_name: &self.client.endpoint.model_name,
                tokenizer_name: &self.tokenizer_name,
                context_text: context,
                candidate_ids: candidates,
            },
        )?;
        Ok(reply
            .scores
            .into_iter()
            .map(|s| ScoredCandidate {
                token_id: s.id,
                logprob: s.logprob,
            })
            .collect())
    }

    fn generate(&self, context: &str, stop: &[&str], max_tokens: usize) -> Result<FreeText, BackendError> {
        let reply: GenerateReply = self.client.post(
            "generate",
            &GenerateRequest {
                model_name: &self.client.endpoint.model_name,
                context_text: context,
                stop_strings: stop,
                max_tokens,
                temperature: self.temperature,
            },
        )?;
        match reply.finish_reason {
            Some(finish) => Ok(FreeText {
                tokens: reply.tokens.unwrap_or_else(|| reply.text.split_whitespace().count()),
                text: reply.text,
                finish,
            }),
            None => Ok(FreeText::from_reply(&reply.text, stop, max_tokens)),
        }
    }
}

#[derive(Serialize)]
struct EntailRequest<'a> {
    model_name: &'a str,
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailReply {
    score: f64,
}

#[derive(Debug)]
pub struct HttpNli {
    client: HttpClient,
    threshold: f64,
}

impl HttpNli {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            threshold: DEFAULT_NLI_THRESHOLD,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

impl NliBackend for HttpNli {
    fn entailment_score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let reply: EntailReply = self.client.post(
            "entail",
            &EntailRequest {
                model_name: &self.client.endpoint.model_name,
                premise,
                hypothesis,
            },
        )?;
        Ok(reply.score)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Serialize)]
struct SegmentRequest<'a> {
    model_name: &'a str,
    prompt_template_name: &'a str,
    prompt: String,
    question: &'a str,
    passages: Vec<&'a str>,
    answer: &'a str,
}

/// Segmentation role. The reply may be `{pairs: [...]}` directly or
/// `{text: "..."}` holding the model's raw output, which is then parsed.
#[derive(Debug)]
pub struct HttpSegmenter {
    client: HttpClient,
    prompt: super::SegmentationPrompt,
}

impl HttpSegmenter {
    pub fn new(endpoint: BackendEndpoint, prompt: super::SegmentationPrompt) -> Result<Self, BackendError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            prompt,
        })
    }
}

impl SegmenterBackend for HttpSegmenter {
    fn segment_answer(&self, question: &str, passages: &PassageSet, answer: &str) -> Result<Vec<ClauseCitation>, BackendError> {
        let reply: serde_json::Value = self.client.post(
            "segment",
            &SegmentRequest {
                model_name: &self.client.endpoint.model_name,
                prompt_template_name: &self.prompt.name,
                prompt: self.prompt.render(question, passages, answer),
                question,
                passages: passages.passages().iter().map(|p| p.text.as_str()).collect(),
                answer,
            },
        )?;
        match reply.get("text").and_then(|t| t.as_str()) {
            Some(text) => parse_segmentation_reply(text),
            None => parse_segmentation_reply(&reply.to_string()),
        }
    }
}
