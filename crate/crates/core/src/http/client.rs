use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use url::Url;

use super::{Request, Response, Transport, TransportError, PAYMENT_PROOF_HEADER};
use crate::distill::SkillPackage;
use crate::econ::{LedgerEntry, Micros};
use crate::index::ScoredResult;
use crate::pay402::{sign_with_wallet, PaymentEnvelope, PaymentTerms, Wallet};
use crate::trust::Outcome;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("registry answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("refusing to pay {amount} (budget {budget})")]
    PaymentRefused { amount: Micros, budget: Micros },
    #[error("undecodable response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    #[serde(flatten)]
    pub result: ScoredResult,
    pub install_price: Micros,
    pub endpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_fee: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPage {
    pub hits: Vec<SearchHit>,
    #[serde(default)]
    pub receipt: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstallResponse {
    pub record_id: String,
    pub price: Micros,
    pub package: SkillPackage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_fee: Option<Micros>,
    #[serde(default)]
    pub receipt: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishResponse {
    pub record_id: String,
    pub merged: bool,
    pub delta_score: f64,
    pub changed_lines: usize,
    #[serde(default)]
    pub caveats: Vec<String>,
}

/// What an agent needs from a registry. Paying calls refuse any charge
/// above `budget`.
pub trait RegistryApi: Send + Sync {
    fn search(&self, query: &str, k: usize, domain: Option<&str>, budget: Micros) -> Result<SearchPage, ClientError>;
    fn install(&self, record_id: &str, budget: Micros) -> Result<InstallResponse, ClientError>;
    fn publish(&self, pkg: &SkillPackage) -> Result<PublishResponse, ClientError>;
    fn feedback(&self, record_id: &str, endpoint: &str, outcome: Outcome) -> Result<(), ClientError>;
}

/// Registry client over any [`Transport`], answering 402 challenges with
/// the wallet.
pub struct HttpRegistryClient {
    transport: Arc<dyn Transport>,
    base: Url,
    wallet: Wallet,
    spent: Mutex<Micros>,
}

impl std::fmt::Debug for HttpRegistryClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpRegistryClient").field("base", &self.base.as_str()).field("payer", &self.wallet.payer).finish()
    }
}

fn decode<T: for<'de> Deserialize<'de>>(r: &Response) -> Result<T, ClientError> {
    serde_json::from_slice(&r.body).map_err(|e| ClientError::Decode(e.to_string()))
}

fn status_error(r: &Response) -> ClientError {
    ClientError::Status { status: r.status, body: String::from_utf8_lossy(&r.body).into_owned() }
}

impl HttpRegistryClient {
    pub fn new(transport: Arc<dyn Transport>, base: Url, wallet: Wallet) -> Self {
        HttpRegistryClient { transport, base, wallet, spent: Mutex::new(Micros::ZERO) }
    }

    pub fn payer(&self) -> &str {
        &self.wallet.payer
    }

    /// Total this client has paid.
    pub fn spent(&self) -> Micros {
        *self.spent.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn url(&self, path_and_query: &str) -> Result<Url, ClientError> {
        self.base.join(path_and_query).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Sends `req`; on 402 signs the terms (if within budget) and retries
    /// once with the proof.
    fn paid(&self, req: Request, budget: Micros) -> Result<Response, ClientError> {
        let first = self.transport.send(&req)?;
        if first.status != 402 {
            return Ok(first);
        }
        let terms: PaymentTerms = decode(&first)?;
        if terms.amount > budget {
            return Err(ClientError::PaymentRefused { amount: terms.amount, budget });
        }
        let env = PaymentEnvelope { proof: sign_with_wallet(&terms, &self.wallet), terms };
        let second = self.transport.send(&req.with_header(PAYMENT_PROOF_HEADER, env.to_header()))?;
        if second.is_success() {
            *self.spent.lock().unwrap_or_else(|e| e.into_inner()) += env.terms.amount;
        }
        Ok(second)
    }
}

impl RegistryApi for HttpRegistryClient {
    fn search(&self, query: &str, k: usize, domain: Option<&str>, budget: Micros) -> Result<SearchPage, ClientError> {
        let mut url = self.url("/v1/skills/search")?;
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("q", query).append_pair("k", &k.to_string());
            if let Some(d) = domain {
                q.append_pair("domain", d);
            }
        }
        let r = self.paid(Request::get(url), budget)?;
        if !r.is_success() {
            return Err(status_error(&r));
        }
        decode(&r)
    }

    fn install(&self, record_id: &str, budget: Micros) -> Result<InstallResponse, ClientError> {
        let url = self.url(&format!("/v1/skills/{record_id}/install"))?;
        let r = self.paid(Request::get(url), budget)?;
        if !r.is_success() {
            return Err(status_error(&r));
        }
        decode(&r)
    }

    fn publish(&self, pkg: &SkillPackage) -> Result<PublishResponse, ClientError> {
        let req = Request::new("POST", self.url("/v1/skills")?).with_json(&pkg.publishable());
        let r = self.transport.send(&req)?;
        if !r.is_success() {
            return Err(status_error(&r));
        }
        decode(&r)
    }

    fn feedback(&self, record_id: &str, endpoint: &str, outcome: Outcome) -> Result<(), ClientError> {
        let req = Request::new("POST", self.url(&format!("/v1/skills/{record_id}/feedback"))?)
            .with_json(&json!({"endpoint": endpoint, "outcome": outcome}));
        let r = self.transport.send(&req)?;
        if !r.is_success() {
            return Err(status_error(&r));
        }
        Ok(())
    }
}
