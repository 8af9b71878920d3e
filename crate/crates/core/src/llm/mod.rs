//! Completion-provider abstraction.
//!
//! Every prompt the pipeline issues carries one of the [`Role`] tags. The
//! [`LlmGateway`] wraps a provider (live HTTP, cassette replay, or
//! recording) and owns token accounting and provenance.

mod cassette;
mod gateway;
mod live;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{Cassette, CassetteRecord, RecordingProvider, ReplayProvider};
pub use gateway::{CostLedger, LlmGateway, LlmReply, Prices};
pub use live::{
    FailClosedTransport, HttpResponse, LiveConfig, LiveProvider, ReqwestTransport, Transport,
    TransportError,
};

/// The fixed prompt catalog. Order and spelling are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    SummarizePr,
    SelectLink,
    PickTestFiles,
    PickTestFunction,
    SummarizeUncovered,
    GenerateTest,
    FixError,
    FixPreserveCoverage,
    IncreaseCoverage,
    IntegrationMode,
    SelectBest,
}

impl Role {
    pub const ALL: [Role; 11] = [
        Role::SummarizePr,
        Role::SelectLink,
        Role::PickTestFiles,
        Role::PickTestFunction,
        Role::SummarizeUncovered,
        Role::GenerateTest,
        Role::FixError,
        Role::FixPreserveCoverage,
        Role::IncreaseCoverage,
        Role::IntegrationMode,
        Role::SelectBest,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Role::SummarizePr => "SUMMARIZE_PR",
            Role::SelectLink => "SELECT_LINK",
            Role::PickTestFiles => "PICK_TEST_FILES",
            Role::PickTestFunction => "PICK_TEST_FUNCTION",
            Role::SummarizeUncovered => "SUMMARIZE_UNCOVERED",
            Role::GenerateTest => "GENERATE_TEST",
            Role::FixError => "FIX_ERROR",
            Role::FixPreserveCoverage => "FIX_PRESERVE_COVERAGE",
            Role::IncreaseCoverage => "INCREASE_COVERAGE",
            Role::IntegrationMode => "INTEGRATION_MODE",
            Role::SelectBest => "SELECT_BEST",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

pub fn role_catalog() -> Vec<Role> {
    Role::ALL.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { speaker: Speaker::System, text: text.into() }
    }
    pub fn user(text: impl Into<String>) -> Self {
        Message { speaker: Speaker::User, text: text.into() }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        Message { speaker: Speaker::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: Role,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub model: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }

    /// Hash over role and messages; model and temperature are excluded so
    /// cassettes survive configuration changes.
    pub fn prompt_hash(&self) -> String {
        let canon = serde_json::to_string(&(self.role, &self.messages)).expect("serializable");
        crate::provenance::sha256_hex(canon)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("API key variable {0} is not set")]
    MissingApiKey(String),
    #[error("cassette has no record #{ordinal} for role {role}")]
    ReplayMiss { role: Role, ordinal: usize },
    #[error("cassette record #{ordinal} for role {role} was recorded for a different prompt")]
    PromptMismatch { role: Role, ordinal: usize },
    #[error("cassette I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("cassette format: {0}")]
    Format(String),
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError>;
}

/// Rough token estimate used when a provider reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Body of the first fenced code block in `text`, if any.
pub fn first_code_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        if let Some(fence_rest) = trimmed.strip_prefix("```") {
            let _lang = fence_rest.trim();
            let mut body = String::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with("```") {
                    return Some(body);
                }
                body.push_str(inner);
                body.push('\n');
            }
            return None;
        }
    }
    None
}
