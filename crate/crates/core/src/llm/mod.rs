//! Chat-with-images client, prompt templates, delimiter extraction and
//! transcript record/replay.

mod client;
mod extract;
mod http;
mod message;
mod template;

pub use client::{Advisor, ChatBackend, ChatClient, Transcript, TranscriptEntry};
pub use extract::extract_delimited;
pub use http::{HttpBackend, HttpConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use message::{ChatImage, ChatMessage, Prompt, Role};
pub use template::{render_prompt, Templates, TEMPLATE_IDS};
