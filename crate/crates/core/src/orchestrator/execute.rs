use std::collections::BTreeMap;
use std::sync::Mutex;

use serde_json::Value;
use thiserror::Error;
use url::Url;

use super::web::Web;
use crate::distill::{infer_value, AuthDescriptor, AuthKind, EndpointTemplate, ResponseShape, SkillPackage, Vault};
use crate::econ::{LedgerEntry, Micros};
use crate::http::{Request, Response, TransportError, PAYMENT_PROOF_HEADER, PAYMENT_RECEIPT_HEADER};
use crate::pay402::{decode_receipt, sign_with_wallet, PaymentEnvelope, PaymentTerms, Wallet};
use crate::trust::{detect_drift, DriftReport};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no credential in the vault for {0}")]
    AuthMissing(String),
    #[error("authentication rejected after refresh")]
    AuthFailed,
    #[error("endpoint failed: {0}")]
    EndpointFailed(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("response no longer matches the documented schema: {}", drift.summary())]
    SchemaMismatch { data: Value, drift: Box<DriftReport>, fees: Vec<LedgerEntry> },
    #[error("per-call fee {amount} exceeds the limit {limit}")]
    FeeRefused { amount: Micros, limit: Micros },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Successful execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Executed {
    pub data: Value,
    /// Tier2 charges settled by the site, if any.
    pub fees: Vec<LedgerEntry>,
}

/// What an execution needs besides the endpoint itself.
pub struct ExecContext<'a> {
    pub web: &'a dyn Web,
    pub vault: &'a Mutex<Vault>,
    pub wallet: &'a Wallet,
    pub max_tier2: Micros,
}

fn credential_header(desc: &AuthDescriptor, secret: &str) -> Option<(String, String)> {
    match desc.kind {
        AuthKind::None => None,
        AuthKind::Bearer => Some(("authorization".into(), format!("Bearer {secret}"))),
        AuthKind::ApiKeyHeader => Some((desc.location.clone()?.to_ascii_lowercase(), secret.to_owned())),
        AuthKind::Cookie => Some(("cookie".into(), format!("{}={secret}", desc.location.clone()?))),
    }
}

pub fn build_request(
    domain: &str,
    ep: &EndpointTemplate,
    params: &BTreeMap<String, String>,
) -> Result<Request, ExecError> {
    let mut path = ep.path_template.clone();
    for p in &ep.path_params {
        let v = params.get(&p.name).ok_or_else(|| ExecError::MissingParam(p.name.clone()))?;
        let enc: String = url::form_urlencoded::byte_serialize(v.as_bytes()).collect();
        path = path.replace(&format!("{{{}}}", p.name), &enc);
    }
    let mut url = Url::parse(&format!("https://{domain}{path}")).map_err(|e| ExecError::EndpointFailed(e.to_string()))?;
    let mut used: Vec<&str> = ep.path_params.iter().map(|p| p.name.as_str()).collect();
    {
        let mut q = url.query_pairs_mut();
        for (name, qp) in &ep.query_schema {
            match params.get(name) {
                Some(v) => {
                    q.append_pair(name, v);
                    used.push(name);
                }
                None if qp.required => return Err(ExecError::MissingParam(name.clone())),
                None => {}
            }
        }
    }
    if url.query() == Some("") {
        url.set_query(None);
    }
    let mut req = Request::new(&ep.method, url);
    if ep.method != "GET" && ep.body_schema.is_some() {
        let rest: BTreeMap<&String, &String> = params.iter().filter(|(k, _)| !used.contains(&k.as_str())).collect();
        req = req.with_json(&rest);
    }
    Ok(req)
}

fn pay_tier2(ctx: &ExecContext<'_>, req: &Request, resp: &Response) -> Result<Response, ExecError> {
    let terms: PaymentTerms =
        serde_json::from_slice(&resp.body).map_err(|_| ExecError::EndpointFailed("402 without terms".into()))?;
    if terms.amount > ctx.max_tier2 {
        return Err(ExecError::FeeRefused { amount: terms.amount, limit: ctx.max_tier2 });
    }
    let env = PaymentEnvelope { proof: sign_with_wallet(&terms, ctx.wallet), terms };
    Ok(ctx.web.send(&req.clone().with_header(PAYMENT_PROOF_HEADER, env.to_header()))?)
}

/// One call to the endpoint with auth from the vault, logging in first if the
/// vault has no credential. On 401/403 asks the web for a fresh credential
/// and retries once; answers a per-call 402 when the fee is within
/// `max_tier2`.
pub fn execute_skill(
    ctx: &ExecContext<'_>,
    pkg: &SkillPackage,
    endpoint: &str,
    params: &BTreeMap<String, String>,
) -> Result<Executed, ExecError> {
    let ep = pkg
        .endpoints
        .iter()
        .find(|e| e.key().0 == endpoint)
        .ok_or_else(|| ExecError::EndpointFailed(format!("no endpoint {endpoint}")))?;
    let desc = pkg.auth_local.get(&ep.key()).cloned().unwrap_or_else(|| ep.auth.clone());
    let base = build_request(&pkg.domain, ep, params)?;
    let vault_key = desc.vault_key(&pkg.domain);

    let with_auth = |req: &Request| -> Result<Request, ExecError> {
        let Some(key) = &vault_key else {
            return Ok(req.clone());
        };
        let vault = ctx.vault.lock().unwrap_or_else(|e| e.into_inner());
        let secret = vault.get(key).ok_or_else(|| ExecError::AuthMissing(key.clone()))?;
        Ok(match credential_header(&desc, secret) {
            Some((h, v)) => req.clone().with_header(&h, v),
            None => req.clone(),
        })
    };

    // an agent installing someone else's skill logs in with its own account
    if let Some(key) = &vault_key {
        let missing = ctx.vault.lock().unwrap_or_else(|e| e.into_inner()).get(key).is_none();
        if missing {
            if let Some(fresh) = ctx.web.refresh_credential(&pkg.domain, &desc) {
                ctx.vault
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .put(key.clone(), fresh)
                    .map_err(|e| ExecError::EndpointFailed(e.to_string()))?;
            }
        }
    }
    let mut resp = ctx.web.send(&with_auth(&base)?)?;
    if matches!(resp.status, 401 | 403) && desc.kind != AuthKind::None {
        let key = vault_key.clone().expect("authenticated endpoints have a vault key");
        let fresh = ctx.web.refresh_credential(&pkg.domain, &desc).ok_or(ExecError::AuthFailed)?;
        ctx.vault.lock().unwrap_or_else(|e| e.into_inner()).put(key, fresh).map_err(|e| ExecError::EndpointFailed(e.to_string()))?;
        resp = ctx.web.send(&with_auth(&base)?)?;
        if matches!(resp.status, 401 | 403) {
            return Err(ExecError::AuthFailed);
        }
    }
    if resp.status == 402 {
        resp = pay_tier2(ctx, &with_auth(&base)?, &resp)?;
    }
    if !resp.is_success() {
        return Err(ExecError::EndpointFailed(format!("status {}", resp.status)));
    }
    let fees = resp.header(PAYMENT_RECEIPT_HEADER).and_then(|h| decode_receipt(h).ok()).unwrap_or_default();
    let data = match serde_json::from_slice::<Value>(&resp.body) {
        Ok(v) => v,
        Err(_) if resp.body.is_empty() => Value::Null,
        Err(_) => Value::String(String::from_utf8_lossy(&resp.body).into_owned()),
    };
    let live = if resp.body.is_empty() { ResponseShape::Null } else { infer_value(&data) };
    let drift = detect_drift(&ep.response_schema, &live);
    if drift.critical {
        return Err(ExecError::SchemaMismatch { data, drift: Box::new(drift), fees });
    }
    Ok(Executed { data, fees })
}
