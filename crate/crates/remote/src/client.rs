use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use offload_core::model::{CostParams, SystemState};
use offload_core::policy::{Policy, PolicyError};
use offload_core::serializer::{serialize, PromptStyle};
use offload_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::transport::{ChatMessage, ChatRequest, HttpTransport, Transport};
use crate::{parse_decision, RemoteError};

pub const ENV_ENDPOINT: &str = "OFFLOAD_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "OFFLOAD_LLM_API_KEY";
pub const ENV_MODEL: &str = "OFFLOAD_LLM_MODEL";

pub const SYSTEM_PROMPT: &str = "You schedule computing tasks in a mobile edge network. \
Read the task and server descriptions and answer with exactly one line: either \
\"Execute Locally\" or \"Offload to Server <k>\" where <k> is a listed server number. \
Do not add any other text.";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub max_retries: usize,
    /// Delay before the first retry; doubles on every further retry.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: "default".into(),
            temperature: 0.0,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    /// Reads the endpoint, key and model from the process environment.
    pub fn from_env() -> Result<Self, RemoteError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, RemoteError> {
        let url = lookup(ENV_ENDPOINT)
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| RemoteError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let mut config = Self::new(url);
        config.api_key = lookup(ENV_API_KEY).filter(|k| !k.is_empty());
        if let Some(model) = lookup(ENV_MODEL).filter(|m| !m.is_empty()) {
            config.model = model;
        }
        Ok(config)
    }
}

/// One audited exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub prompt: String,
    pub reply: Option<String>,
    pub latency_ms: f64,
    pub attempts: usize,
    pub action: Option<usize>,
    pub error: Option<String>,
}

/// Counting gate limiting concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GatePass<'_> {
        let mut n = self.in_flight.lock().expect("gate lock poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock poisoned");
        }
        *n += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Policy that asks a chat model for each decision.
pub struct RemotePolicy<T: Scalar> {
    transport: Box<dyn Transport>,
    config: EndpointConfig,
    style: PromptStyle,
    cost_params: CostParams<T>,
    audit: Option<Mutex<BufWriter<File>>>,
    gate: Gate,
}

impl<T: Scalar> RemotePolicy<T> {
    pub fn new(
        transport: Box<dyn Transport>,
        config: EndpointConfig,
        style: PromptStyle,
        cost_params: CostParams<T>,
    ) -> Self {
        let limit = config.max_in_flight.max(1);
        Self {
            transport,
            config,
            style,
            cost_params,
            audit: None,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        }
    }

    /// Policy talking HTTP to `config.url`.
    pub fn http(config: EndpointConfig, style: PromptStyle, cost_params: CostParams<T>) -> Result<Self, RemoteError> {
        let transport = HttpTransport::new(config.url.clone(), config.api_key.clone(), config.timeout)
            .map_err(|e| RemoteError::Config(e.message))?;
        Ok(Self::new(Box::new(transport), config, style, cost_params))
    }

    /// Appends every exchange to `path` as a JSON line.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, RemoteError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn request(&self, prompt: &str) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: SYSTEM_PROMPT.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.into(),
                },
            ],
            temperature: self.config.temperature,
        }
    }

    fn send_with_retries(&self, request: &ChatRequest) -> (Result<String, RemoteError>, usize) {
        let mut delay = self.config.backoff_base;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.complete(request) {
                Ok(reply) => return (Ok(reply), attempts),
                Err(e) if e.retryable && attempts <= self.config.max_retries => {
                    log::warn!("attempt {attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => {
                    return (
                        Err(RemoteError::Transport {
                            attempts,
                            message: e.message,
                        }),
                        attempts,
                    )
                }
            }
        }
    }

    /// Asks the model for a decision on `state`. Only reads the state.
    pub fn query(&self, state: &SystemState<T>) -> Result<usize, RemoteError> {
        let _pass = self.gate.enter();
        let prompt = serialize(state, &self.style, &self.cost_params);
        let started = Instant::now();
        let (reply, attempts) = self.send_with_retries(&self.request(&prompt));
        let outcome = reply
            .as_ref()
            .map_err(|e| e.to_string())
            .and_then(|text| parse_decision(text, state.num_servers()).map_err(|e| e.to_string()));
        if let Some(audit) = &self.audit {
            let record = AuditRecord {
                prompt,
                reply: reply.as_ref().ok().cloned(),
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
                attempts,
                action: outcome.as_ref().ok().copied(),
                error: outcome.as_ref().err().cloned(),
            };
            let mut w = audit.lock().expect("audit lock poisoned");
            serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        parse_decision(&reply?, state.num_servers())
    }

    /// Queries several states concurrently, never exceeding the in-flight
    /// limit. Results keep the input order.
    pub fn query_many(&self, states: &[SystemState<T>]) -> Vec<Result<usize, RemoteError>> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = states.iter().map(|s| scope.spawn(move || self.query(s))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("query thread panicked"))
                .collect()
        })
    }
}

impl<T: Scalar> Policy<T> for RemotePolicy<T> {
    fn name(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn decide(&mut self, state: &SystemState<T>) -> Result<usize, PolicyError> {
        self.query(state).map_err(|e| PolicyError::Backend(e.to_string()))
    }
}
