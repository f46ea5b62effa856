use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaptureArchive, CaptureEntry};
use crate::par::{self, Execution};

const DEFAULT_NOISE_HOSTS: &str = include_str!("../../config/noise_hosts.txt");

/// Rule identifiers attached to a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    ContentType,
    UrlPattern,
    Method,
    ResponseStructure,
    NoiseDomain,
    StaticAsset,
    /// Nothing marks the entry as an API call.
    NoApiSignal,
}

impl Reason {
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            Reason::ContentType | Reason::UrlPattern | Reason::Method | Reason::ResponseStructure
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub noise_hosts: Vec<String>,
    /// Media types (or `type/` prefixes) that mark static assets.
    pub static_media_types: Vec<String>,
    pub api_path_markers: Vec<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            noise_hosts: parse_blocklist(DEFAULT_NOISE_HOSTS),
            static_media_types: [
                "image/",
                "font/",
                "video/",
                "audio/",
                "text/css",
                "text/javascript",
                "application/javascript",
                "application/x-javascript",
                "application/ecmascript",
                "application/wasm",
                "application/font-woff",
                "application/font-woff2",
                "application/vnd.ms-fontobject",
                "application/x-font-ttf",
            ]
            .map(String::from)
            .to_vec(),
            api_path_markers: ["/api/", "/api", "/graphql", "/rest/", "/ajax/", "/_next/data/"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// One pattern per line, `#` comments and blank lines ignored.
pub fn parse_blocklist(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.trim_start_matches("*.").to_ascii_lowercase())
        .collect()
}

impl FilterPolicy {
    pub fn with_blocklist_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self { noise_hosts: parse_blocklist(&text), ..Self::default() })
    }

    pub fn is_noise_host(&self, host: &str) -> bool {
        let host = host.to_ascii_lowercase();
        self.noise_hosts.iter().any(|p| {
            host == *p || (host.len() > p.len() && host.ends_with(p.as_str()) && {
                host.as_bytes()[host.len() - p.len() - 1] == b'.'
            })
        })
    }

    pub fn is_static_asset(&self, media_type: &str) -> bool {
        self.static_media_types.iter().any(|t| {
            if t.ends_with('/') {
                media_type.starts_with(t.as_str())
            } else {
                media_type == t
            }
        })
    }

    fn url_looks_like_api(&self, path: &str) -> bool {
        let lower = path.to_ascii_lowercase();
        if self.api_path_markers.iter().any(|m| {
            if m.ends_with('/') {
                lower.contains(m.as_str())
            } else {
                lower == *m || lower.starts_with(&format!("{m}/")) || lower.starts_with(&format!("{m}?"))
            }
        }) {
            return true;
        }
        if lower.ends_with(".json") {
            return true;
        }
        // versioned prefix such as /v1/ or /v2/
        lower.split('/').any(|seg| {
            seg.len() >= 2 && seg.starts_with('v') && seg[1..].bytes().all(|b| b.is_ascii_digit())
        })
    }
}

pub fn is_structured_media_type(media_type: &str) -> bool {
    matches!(
        media_type,
        "application/json" | "text/json" | "application/xml" | "text/xml" | "application/x-ndjson"
    ) || media_type.ends_with("+json")
        || media_type.ends_with("+xml")
}

fn body_is_structured(entry: &CaptureEntry) -> bool {
    let Some(text) = entry.response_text() else {
        return false;
    };
    let t = text.trim_start();
    if t.starts_with('{') || t.starts_with('[') {
        return matches!(
            serde_json::from_str::<serde_json::Value>(t),
            Ok(serde_json::Value::Object(_) | serde_json::Value::Array(_))
        );
    }
    if t.starts_with('<') {
        let head: String = t.chars().take(64).collect::<String>().to_ascii_lowercase();
        return !head.starts_with("<!doctype html")
            && !head.starts_with("<html")
            && t.trim_end().ends_with('>');
    }
    false
}

/// Classifies one entry.
///
/// Rules run in a fixed order: noise-domain blocklist, static-asset media
/// types, JSON/XML content type, write-method boost, URL pattern, response
/// structure. The first two are terminal drops. An entry is kept when it has a
/// structured content type or body, or when a write method hits an API-shaped
/// URL (covers bodiless `204` writes).
pub fn classify_entry(entry: &CaptureEntry, policy: &FilterPolicy) -> FilterVerdict {
    if policy.is_noise_host(entry.host()) {
        return FilterVerdict { keep: false, reasons: vec![Reason::NoiseDomain] };
    }
    if policy.is_static_asset(&entry.response_media_type) {
        return FilterVerdict { keep: false, reasons: vec![Reason::StaticAsset] };
    }
    let mut reasons = Vec::new();
    let content_type = is_structured_media_type(&entry.response_media_type);
    if content_type {
        reasons.push(Reason::ContentType);
    }
    let write = matches!(entry.method.as_str(), "POST" | "PUT" | "PATCH" | "DELETE");
    if write {
        reasons.push(Reason::Method);
    }
    let url = policy.url_looks_like_api(entry.path());
    if url {
        reasons.push(Reason::UrlPattern);
    }
    let structured = body_is_structured(entry);
    if structured {
        reasons.push(Reason::ResponseStructure);
    }
    let keep = content_type || structured || (write && url);
    if !keep {
        reasons.push(Reason::NoApiSignal);
    }
    FilterVerdict { keep, reasons }
}

pub fn filter_archive(archive: &CaptureArchive, policy: &FilterPolicy) -> Vec<CaptureEntry> {
    filter_entries(&archive.entries, policy, Execution::default())
}

pub fn filter_entries(
    entries: &[CaptureEntry],
    policy: &FilterPolicy,
    exec: Execution,
) -> Vec<CaptureEntry> {
    par::filter_map(exec, entries, |e| classify_entry(e, policy).keep.then(|| e.clone()))
}
