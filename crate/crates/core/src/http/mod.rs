//! Transport-neutral HTTP types, the registry and agent services, and the
//! paying registry client.
//!
//! Services take a [`Request`] and return a [`Response`]; the CLI binds them
//! to a real socket, tests and the simulator call them in-process.

mod client;
mod service;
mod wrappers;

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use url::Url;

pub use client::{ClientError, HttpRegistryClient, InstallResponse, PublishResponse, RegistryApi, SearchHit, SearchPage};
pub use service::{AgentService, RegistryService, ServiceConfig};
pub use wrappers::{LatencyTransport, TraceEntry, TracingTransport};

pub const PAYMENT_PROOF_HEADER: &str = "x-payment-proof";
pub const PAYMENT_RECEIPT_HEADER: &str = "x-payment-receipt";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub url: Url,
    /// Lower-cased names.
    pub headers: BTreeMap<String, String>,
    pub body: Option<Vec<u8>>,
}

impl Request {
    pub fn new(method: &str, url: Url) -> Self {
        Request { method: method.to_ascii_uppercase(), url, headers: BTreeMap::new(), body: None }
    }

    pub fn get(url: Url) -> Self {
        Self::new("GET", url)
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn with_json<T: Serialize + ?Sized>(mut self, body: &T) -> Self {
        self.body = Some(serde_json::to_vec(body).expect("body serializes"));
        self.headers.insert("content-type".into(), "application/json".into());
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn query(&self, name: &str) -> Option<String> {
        self.url.query_pairs().find(|(k, _)| k == name).map(|(_, v)| v.into_owned())
    }

    pub fn json_body(&self) -> Option<Value> {
        self.body.as_deref().and_then(|b| serde_json::from_slice(b).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn new(status: u16) -> Self {
        Response { status, headers: BTreeMap::new(), body: Vec::new() }
    }

    pub fn json<T: Serialize + ?Sized>(status: u16, body: &T) -> Self {
        let mut r = Response::new(status);
        r.body = serde_json::to_vec(body).expect("body serializes");
        r.headers.insert("content-type".into(), "application/json".into());
        r
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self::json(status, &serde_json::json!({ "error": code, "message": message.into() }))
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn json_body(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn media_type(&self) -> String {
        crate::capture::media_essence(self.header("content-type").unwrap_or(""))
    }
}

/// Anything that can carry a request to a server and bring back its answer.
pub trait Transport: Send + Sync {
    fn send(&self, req: &Request) -> Result<Response, TransportError>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        (**self).send(req)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        (**self).send(req)
    }
}
