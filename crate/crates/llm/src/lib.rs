//! OpenAI-compatible chat client for model-backed extraction, judging and
//! MCQ generation.

pub mod backends;
pub mod cache;
pub mod client;
pub mod config;
pub mod parse;
pub mod prompt;
pub mod transport;

pub use backends::{LlmExtractor, LlmMatcher, LlmMcqGenerator, LLM_BACKEND};
pub use cache::ResponseCache;
pub use client::{LlmClient, LlmError};
pub use config::ModelConfig;
pub use parse::{parse_json_response, ParseError, Schema};
pub use prompt::{render_prompt, Template};
pub use transport::{HttpTransport, StubTransport, Transport, TransportError};
