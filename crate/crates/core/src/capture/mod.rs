//! Browser-capture archives (HAR 1.2) and API-traffic filtering.

mod filter;
mod har;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::Timestamp;

pub use filter::{classify_entry, filter_archive, filter_entries, FilterPolicy, FilterVerdict, Reason};
pub use har::{parse_archive, parse_archive_with, to_har_json, ParseOptions, ParsedArchive};

/// Default cap on retained response bodies (1 MiB).
pub const DEFAULT_MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("archive has no entries")]
    EmptyArchive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Body {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl Body {
    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.bytes).ok()
    }
}

/// One request/response pair observed by the browser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEntry {
    pub method: String,
    pub url: Url,
    /// Header names are lowercased; repeated headers are joined.
    pub request_headers: BTreeMap<String, String>,
    pub request_body: Option<Body>,
    pub response_status: u16,
    /// Essence only (`application/json`), parameters stripped.
    pub response_media_type: String,
    pub response_body: Option<Body>,
    /// Set when the body exceeded the size cap and was cut.
    pub response_truncated: bool,
    pub started_at: Timestamp,
    pub duration_ms: f64,
    /// Ground-truth label carried by hand-labelled fixtures (`_api`).
    pub label: Option<bool>,
}

impl CaptureEntry {
    pub fn host(&self) -> &str {
        self.url.host_str().unwrap_or_default()
    }

    pub fn path(&self) -> &str {
        self.url.path()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.request_headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn response_text(&self) -> Option<&str> {
        self.response_body.as_ref().and_then(Body::text)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaptureArchive {
    pub entries: Vec<CaptureEntry>,
    pub source_label: String,
}

impl CaptureArchive {
    pub fn new(source_label: impl Into<String>, mut entries: Vec<CaptureEntry>) -> Self {
        // stable sort keeps original order on ties
        entries.sort_by_key(|e| e.started_at);
        Self { entries, source_label: source_label.into() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Skipped,
    Truncated,
}

/// Sidecar record for an entry that was dropped or altered while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub index: usize,
    pub kind: DiagnosticKind,
    pub reason: String,
}

pub fn diagnostics_jsonl(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| serde_json::to_string(d).expect("diagnostic serializes") + "\n")
        .collect()
}

/// RFC 7230 `token`.
pub fn is_method_token(m: &str) -> bool {
    !m.is_empty()
        && m.bytes().all(|b| {
            b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
        })
}

/// Lowercased media-type essence without parameters.
pub fn media_essence(raw: &str) -> String {
    raw.split(';').next().unwrap_or_default().trim().to_ascii_lowercase()
}
