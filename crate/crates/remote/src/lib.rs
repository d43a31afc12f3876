//! An offloading policy backed by a hosted chat model.
//!
//! Each decision state is rendered with the core serializer, sent to a
//! chat-completions endpoint together with a system instruction fixing the
//! answer format, and the reply is parsed back into an action index. Failed
//! requests are retried with exponential backoff; a final failure is an
//! error, never a silent fallback decision.

mod client;
mod parse;
mod transport;

pub use client::{EndpointConfig, RemotePolicy, AuditRecord, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, SYSTEM_PROMPT};
pub use parse::parse_decision;
pub use transport::{ChatMessage, ChatRequest, HttpTransport, Transport, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("remote policy is not configured: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("could not find a decision in reply {raw:?}")]
    Parse { raw: String },
    #[error("reply named server {action}, but only servers 1..={num_servers} exist")]
    Range { action: u64, num_servers: usize },
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}
