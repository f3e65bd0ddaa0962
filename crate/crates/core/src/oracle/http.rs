use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{parse_decision, CallCategory, Decision, Oracle, OracleError, PromptTemplate, QueryRequest, DEFAULT_SYSTEM_PROMPT};
use crate::{Error, Result};

/// Settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOracleConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_s: u64,
    /// Total attempts per request (transport or parse failures both consume one).
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub system_prompt: String,
    /// Optional JSONL transcript of prompts and responses.
    pub transcript: Option<PathBuf>,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_id: "model".into(),
            api_key_env: "APS_API_KEY".into(),
            max_in_flight: 16,
            timeout_s: 120,
            retries: 3,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 30_000,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 500,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            transcript: None,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

#[derive(Serialize)]
struct TranscriptEntry<'a> {
    agent: usize,
    round: usize,
    category: CallCategory,
    prompt: &'a str,
    responses: &'a [String],
    decision: Option<u16>,
}

struct Outcome {
    result: std::result::Result<Decision, OracleError>,
    prompt: String,
    responses: Vec<String>,
}

/// Chat-completions oracle. Requests in a batch run concurrently (bounded by
/// `max_in_flight`) and are committed in request order, so stored decisions do
/// not depend on completion order.
pub struct HttpOracle {
    config: HttpOracleConfig,
    template: PromptTemplate,
    api_key: Option<String>,
    client: reqwest::Client,
    runtime: tokio::runtime::Runtime,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig, template: PromptTemplate) -> Result<Self> {
        if config.max_in_flight == 0 || config.retries == 0 {
            return Err(Error::config("max_in_flight and retries must be at least 1"));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| Error::config(format!("http client: {e}")))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?;
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(Self { config, template, api_key, client, runtime })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let capped = base.min(self.config.backoff_cap_ms as f64);
        let jitter = 0.5 + 0.5 * rand::rng().random::<f64>();
        Duration::from_millis((capped * jitter) as u64)
    }

    async fn ask(
        client: reqwest::Client,
        url: String,
        api_key: Option<String>,
        body: serde_json::Value,
    ) -> std::result::Result<String, String> {
        let mut req = client.post(&url).json(&body);
        if let Some(key) = &api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| "response has no message content".to_string())
    }

    fn write_transcript(&self, requests: &[QueryRequest<'_>], outcomes: &[Outcome]) -> std::io::Result<()> {
        let Some(path) = &self.config.transcript else {
            return Ok(());
        };
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        for (req, out) in requests.iter().zip(outcomes) {
            let entry = TranscriptEntry {
                agent: req.context.agent,
                round: req.context.round,
                category: req.category,
                prompt: &out.prompt,
                responses: &out.responses,
                decision: out.result.as_ref().ok().map(|d| d.option),
            };
            serde_json::to_writer(&mut f, &entry)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl Oracle for HttpOracle {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> std::result::Result<Vec<Decision>, OracleError> {
        let semaphore = Arc::new(Semaphore::new(self.config.max_in_flight));
        let url = self.endpoint();
        let attempts = self.config.retries;
        let outcomes: Vec<Outcome> = self.runtime.block_on(async {
            let mut set = tokio::task::JoinSet::new();
            for (idx, req) in requests.iter().enumerate() {
                let ctx = &req.context;
                let prompt = self.template.render(ctx);
                let body = serde_json::to_value(ChatRequest {
                    model: &self.config.model_id,
                    messages: [
                        ChatMessage { role: "system", content: &self.config.system_prompt },
                        ChatMessage { role: "user", content: &prompt },
                    ],
                    temperature: self.config.temperature,
                    top_p: self.config.top_p,
                    max_tokens: self.config.max_tokens,
                })
                .expect("serializable request");
                let (agent, round, category) = (ctx.agent, ctx.round, req.category);
                let n_options = ctx.options.len();
                let delays: Vec<Duration> = (1..attempts).map(|a| self.backoff(a)).collect();
                let client = self.client.clone();
                let url = url.clone();
                let api_key = self.api_key.clone();
                let semaphore = semaphore.clone();
                set.spawn(async move {
                    let _permit = semaphore.acquire_owned().await.expect("semaphore open");
                    let mut responses = Vec::new();
                    let mut parse_failures = 0;
                    let mut last: Option<std::result::Result<(), String>> = None;
                    for attempt in 1..=attempts {
                        match Self::ask(client.clone(), url.clone(), api_key.clone(), body.clone()).await {
                            Ok(text) => match parse_decision(&text, n_options) {
                                Ok(option) => {
                                    let decision = Decision {
                                        agent,
                                        round,
                                        option,
                                        raw: text.clone(),
                                        attempts: attempt,
                                        parse_failures,
                                        category,
                                    };
                                    responses.push(text);
                                    return (idx, Outcome { result: Ok(decision), prompt, responses });
                                }
                                Err(e) => {
                                    parse_failures += 1;
                                    responses.push(text);
                                    last = Some(Ok(()));
                                    tracing::debug!(agent, round, attempt, error = %e, "unparseable response");
                                }
                            },
                            Err(e) => {
                                tracing::debug!(agent, round, attempt, error = %e, "request failed");
                                last = Some(Err(e));
                            }
                        }
                        if let Some(d) = delays.get(attempt as usize - 1) {
                            tokio::time::sleep(*d).await;
                        }
                    }
                    let err = match last {
                        Some(Err(message)) => OracleError::Transport { agent, round, category, message },
                        _ => OracleError::Unresolved {
                            agent,
                            round,
                            category,
                            attempts,
                            reason: format!("{parse_failures} unparseable responses"),
                        },
                    };
                    (idx, Outcome { result: Err(err), prompt, responses })
                });
            }
            let mut slots: Vec<Option<Outcome>> = (0..requests.len()).map(|_| None).collect();
            while let Some(joined) = set.join_next().await {
                let (idx, outcome) = joined.expect("query task panicked");
                slots[idx] = Some(outcome);
            }
            slots.into_iter().map(|o| o.expect("every request answered")).collect()
        });
        if let Err(e) = self.write_transcript(requests, &outcomes) {
            tracing::warn!(error = %e, "failed to append transcript");
        }
        outcomes.into_iter().map(|o| o.result).collect()
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "http",
            "base_url": self.config.base_url,
            "model_id": self.config.model_id,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_tokens,
            "timeout_s": self.config.timeout_s,
            "retries": self.config.retries,
        })
    }
}
