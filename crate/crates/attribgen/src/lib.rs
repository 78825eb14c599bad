//! Attribute description construction.
//!
//! Three steps turn (image, category) pairs into attribute descriptions:
//! an LLM lists attributes that distinguish categories of a super-category,
//! a VQA model answers one question per attribute for each image, and an
//! LLM condenses the answers into a short description. Every call goes
//! through a [`Transport`], so the whole pipeline runs against canned or
//! recorded responses in tests.

mod cache;
mod embed;
mod endpoint;
mod pipeline;
mod prompt;
mod retry;
mod transport;

pub use cache::ResponseCache;
pub use embed::{embed_toy, embed_toy_with, TOY_DIM, TOY_SEED};
pub use endpoint::{Endpoint, EndpointConfig};
pub use pipeline::{
    discover, extract, parse_attribute_list, read_triples, run_pipeline, scrub_class_names, summarize,
    write_triples, AttributeSet, AttributeValue, PipelineOptions, PipelineOutput, SampleAttributes, SampleRef,
    GENERAL_ATTRIBUTE,
};
pub use prompt::{PromptKind, PromptTemplate, Prompts};
pub use retry::{with_retry, NoSleep, RecordingSleeper, RetryPolicy, Sleeper, ThreadSleeper};
pub use transport::{
    ChatMessage, ChatRequest, HttpTransport, MockTransport, RecordingTransport, ReplayTransport, Transcript,
    Transport, TransportError,
};

#[derive(Debug, thiserror::Error)]
pub enum AttribError {
    #[error("template placeholder {{{0}}} is not bound")]
    UnboundPlaceholder(String),
    #[error("transport failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("could not parse response ({message}); raw response: {raw:?}")]
    Parse { message: String, raw: String },
    #[error("missing attribute values: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("text is empty")]
    EmptyText,
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
