use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    estimate_tokens, Completion, CompletionProvider, CompletionRequest, LlmError, Role, TokenUsage,
};

pub const CASSETTE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub role: Role,
    /// Only consulted in strict mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub schema_version: u32,
    pub records: Vec<CassetteRecord>,
}

impl Default for Cassette {
    fn default() -> Self {
        Cassette {
            schema_version: CASSETTE_VERSION,
            records: Vec::new(),
        }
    }
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style append of a canned response.
    pub fn with(mut self, role: Role, response: impl Into<String>) -> Self {
        self.push(role, response);
        self
    }

    pub fn push(&mut self, role: Role, response: impl Into<String>) {
        self.records.push(CassetteRecord {
            role,
            prompt_hash: None,
            response: response.into(),
            prompt_tokens: None,
            completion_tokens: None,
        });
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let c: Cassette =
            serde_json::from_str(text).map_err(|e| LlmError::Format(e.to_string()))?;
        if c.schema_version != CASSETTE_VERSION {
            return Err(LlmError::Format(format!(
                "unsupported cassette schema_version {}",
                c.schema_version
            )));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| LlmError::Format(e.to_string()))?;
        crate::util::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn count(&self, role: Role) -> usize {
        self.records.iter().filter(|r| r.role == role).count()
    }
}

/// Serves cassette records by role and per-role ordinal. Never touches the
/// network; running out of records is a [`LlmError::ReplayMiss`].
pub struct ReplayProvider {
    cassette: Cassette,
    strict: bool,
    cursors: Mutex<HashMap<Role, usize>>,
}

impl ReplayProvider {
    pub fn new(cassette: Cassette) -> Self {
        ReplayProvider {
            cassette,
            strict: false,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    /// Also require recorded prompt hashes to match.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Records of each role not yet consumed.
    pub fn remaining(&self) -> HashMap<Role, usize> {
        let cursors = self.cursors.lock().unwrap();
        Role::ALL
            .iter()
            .map(|&r| (r, self.cassette.count(r) - cursors.get(&r).copied().unwrap_or(0)))
            .filter(|(_, n)| *n > 0)
            .collect()
    }
}

impl CompletionProvider for ReplayProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let mut cursors = self.cursors.lock().unwrap();
        let ordinal = cursors.get(&req.role).copied().unwrap_or(0);
        let record = self
            .cassette
            .records
            .iter()
            .filter(|r| r.role == req.role)
            .nth(ordinal)
            .ok_or(LlmError::ReplayMiss {
                role: req.role,
                ordinal,
            })?;
        if self.strict {
            if let Some(h) = &record.prompt_hash {
                if *h != req.prompt_hash() {
                    return Err(LlmError::PromptMismatch {
                        role: req.role,
                        ordinal,
                    });
                }
            }
        }
        cursors.insert(req.role, ordinal + 1);
        let prompt_chars: String = req.messages.iter().map(|m| m.text.as_str()).collect();
        Ok(Completion {
            text: record.response.clone(),
            usage: TokenUsage {
                prompt_tokens: record
                    .prompt_tokens
                    .unwrap_or_else(|| estimate_tokens(&prompt_chars)),
                completion_tokens: record
                    .completion_tokens
                    .unwrap_or_else(|| estimate_tokens(&record.response)),
            },
        })
    }
}

/// Forwards to an inner provider and appends every exchange to a cassette
/// file, rewriting it after each call.
pub struct RecordingProvider<P> {
    inner: P,
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl<P: CompletionProvider> RecordingProvider<P> {
    pub fn new(inner: P, path: impl Into<PathBuf>) -> Self {
        RecordingProvider {
            inner,
            path: path.into(),
            cassette: Mutex::new(Cassette::new()),
        }
    }

    /// Keep the records of `existing` and append after them.
    pub fn appending_to(self, existing: Cassette) -> Self {
        *self.cassette.lock().unwrap() = existing;
        self
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().unwrap().clone()
    }
}

impl<P: CompletionProvider> CompletionProvider for RecordingProvider<P> {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let out = self.inner.complete(req)?;
        let mut cassette = self.cassette.lock().unwrap();
        cassette.records.push(CassetteRecord {
            role: req.role,
            prompt_hash: Some(req.prompt_hash()),
            response: out.text.clone(),
            prompt_tokens: Some(out.usage.prompt_tokens),
            completion_tokens: Some(out.usage.completion_tokens),
        });
        cassette.save(&self.path)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Message;

    fn req(role: Role, text: &str) -> CompletionRequest {
        CompletionRequest {
            role,
            messages: vec![Message::user(text)],
            temperature: 0.7,
            model: "m".into(),
        }
    }

    #[test]
    fn replay_by_role_and_ordinal() {
        let c = Cassette::new()
            .with(Role::GenerateTest, "gen-1")
            .with(Role::SummarizePr, "sum-1")
            .with(Role::GenerateTest, "gen-2");
        let p = ReplayProvider::new(c);
        assert_eq!(p.complete(&req(Role::SummarizePr, "a")).unwrap().text, "sum-1");
        assert_eq!(p.complete(&req(Role::GenerateTest, "a")).unwrap().text, "gen-1");
        assert_eq!(p.complete(&req(Role::GenerateTest, "b")).unwrap().text, "gen-2");
        assert!(matches!(
            p.complete(&req(Role::GenerateTest, "c")),
            Err(LlmError::ReplayMiss { role: Role::GenerateTest, ordinal: 2 })
        ));
        assert!(p.remaining().is_empty());
    }

    #[test]
    fn single_record_then_miss() {
        let p = ReplayProvider::new(Cassette::new().with(Role::GenerateTest, "only"));
        assert_eq!(p.complete(&req(Role::GenerateTest, "x")).unwrap().text, "only");
        assert!(matches!(
            p.complete(&req(Role::GenerateTest, "x")),
            Err(LlmError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn strict_mode_checks_prompt_hash() {
        let r = req(Role::SelectLink, "prompt");
        let mut c = Cassette::new();
        c.records.push(CassetteRecord {
            role: Role::SelectLink,
            prompt_hash: Some(r.prompt_hash()),
            response: "NONE".into(),
            prompt_tokens: Some(3),
            completion_tokens: Some(1),
        });
        let lax = ReplayProvider::new(c.clone());
        assert!(lax.complete(&req(Role::SelectLink, "other")).is_ok());
        let strict = ReplayProvider::new(c.clone()).strict(true);
        assert!(matches!(
            strict.complete(&req(Role::SelectLink, "other")),
            Err(LlmError::PromptMismatch { .. })
        ));
        let strict = ReplayProvider::new(c).strict(true);
        let out = strict.complete(&r).unwrap();
        assert_eq!(out.usage, TokenUsage { prompt_tokens: 3, completion_tokens: 1 });
    }

    #[test]
    fn record_then_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let source = ReplayProvider::new(
            Cassette::new()
                .with(Role::SummarizePr, "summary")
                .with(Role::GenerateTest, "```python\ndef test_x():\n    pass\n```"),
        );
        let rec = RecordingProvider::new(source, &path);
        let a = rec.complete(&req(Role::SummarizePr, "p1")).unwrap();
        let b = rec.complete(&req(Role::GenerateTest, "p2")).unwrap();
        let replay = ReplayProvider::new(Cassette::load(&path).unwrap()).strict(true);
        assert_eq!(replay.complete(&req(Role::SummarizePr, "p1")).unwrap(), a);
        assert_eq!(replay.complete(&req(Role::GenerateTest, "p2")).unwrap(), b);
    }

    #[test]
    fn rejects_unknown_version() {
        assert!(Cassette::from_json(r#"{"schema_version": 9, "records": []}"#).is_err());
        assert!(Cassette::from_json(r#"{"schema_version": 1, "records": [{"role": "NOPE", "response": ""}]}"#).is_err());
    }
}
