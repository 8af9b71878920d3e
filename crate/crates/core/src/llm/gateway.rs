use std::sync::{Arc, Mutex};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionRequest, LlmError, Message, Role, TokenUsage};
use crate::provenance::{sha256_hex, ProvenanceLog, ProvenanceRecord};

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prices {
    #[serde(with = "rust_decimal::serde::str")]
    pub prompt_per_mtok: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub completion_per_mtok: Decimal,
}

impl Default for Prices {
    fn default() -> Self {
        Prices {
            prompt_per_mtok: Decimal::new(15, 2),
            completion_per_mtok: Decimal::new(60, 2),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(with = "rust_decimal::serde::str")]
    pub usd: Decimal,
}

impl CostLedger {
    pub fn add(&mut self, usage: TokenUsage, prices: &Prices) {
        self.calls += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.usd = Self::price(self.prompt_tokens, self.completion_tokens, prices);
    }

    pub fn price(prompt: u64, completion: u64, prices: &Prices) -> Decimal {
        let m = Decimal::from(1_000_000u64);
        (Decimal::from(prompt) * prices.prompt_per_mtok
            + Decimal::from(completion) * prices.completion_per_mtok)
            / m
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmReply {
    pub call_id: String,
    pub text: String,
    pub usage: TokenUsage,
}

pub struct LlmGateway {
    provider: Box<dyn CompletionProvider>,
    model: String,
    temperature: f64,
    prices: Prices,
    provenance: Arc<ProvenanceLog>,
    ledger: Mutex<CostLedger>,
}

impl LlmGateway {
    pub fn new(
        provider: Box<dyn CompletionProvider>,
        model: impl Into<String>,
        temperature: f64,
        provenance: Arc<ProvenanceLog>,
    ) -> Self {
        LlmGateway {
            provider,
            model: model.into(),
            temperature,
            prices: Prices::default(),
            provenance,
            ledger: Mutex::new(CostLedger::default()),
        }
    }

    pub fn with_prices(mut self, prices: Prices) -> Self {
        self.prices = prices;
        self
    }

    /// Start from an existing ledger, e.g. one written by an earlier stage.
    pub fn with_ledger(self, ledger: CostLedger) -> Self {
        *self.ledger.lock().unwrap() = ledger;
        self
    }

    pub fn provenance(&self) -> &Arc<ProvenanceLog> {
        &self.provenance
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn complete(&self, role: Role, messages: Vec<Message>) -> Result<LlmReply, LlmError> {
        let req = CompletionRequest {
            role,
            messages,
            temperature: self.temperature,
            model: self.model.clone(),
        };
        req.validate()?;
        let prompt_hash = req.prompt_hash();
        let call_id = format!("call-{:04}", self.provenance.peek_seq());
        let mut rec = ProvenanceRecord::llm(role.tag(), prompt_hash);
        rec.call_id = Some(call_id.clone());
        log::debug!("{call_id} {role}");
        match self.provider.complete(&req) {
            Ok(out) => {
                rec.content_hash = Some(sha256_hex(&out.text));
                rec.prompt_tokens = out.usage.prompt_tokens;
                rec.completion_tokens = out.usage.completion_tokens;
                self.provenance.append(rec)?;
                self.ledger.lock().unwrap().add(out.usage, &self.prices);
                Ok(LlmReply {
                    call_id,
                    text: out.text,
                    usage: out.usage,
                })
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                self.provenance.append(rec)?;
                Err(e)
            }
        }
    }
}
