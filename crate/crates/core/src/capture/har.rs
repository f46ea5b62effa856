use std::collections::BTreeMap;

use base64::Engine as _;
use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use super::{
    is_method_token, media_essence, Body, CaptureArchive, CaptureEntry, CaptureError, Diagnostic,
    DiagnosticKind, DEFAULT_MAX_BODY_BYTES,
};

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub max_body_bytes: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { max_body_bytes: DEFAULT_MAX_BODY_BYTES }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedArchive {
    pub archive: CaptureArchive,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Har {
    log: HarLog,
}

#[derive(Debug, Serialize, Deserialize)]
struct HarLog {
    #[serde(default = "har_version")]
    version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    creator: Option<HarCreator>,
    entries: Vec<serde_json::Value>,
}

fn har_version() -> String {
    "1.2".into()
}

#[derive(Debug, Serialize, Deserialize)]
struct HarCreator {
    #[serde(default)]
    name: String,
    #[serde(default)]
    version: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarEntry {
    started_date_time: String,
    #[serde(default)]
    time: f64,
    request: HarRequest,
    response: HarResponse,
    #[serde(rename = "_api", default, skip_serializing_if = "Option::is_none")]
    api: Option<bool>,
    #[serde(rename = "_truncated", default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarRequest {
    method: String,
    url: String,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    post_data: Option<HarPostData>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HarHeader {
    name: String,
    value: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarPostData {
    #[serde(default)]
    mime_type: String,
    #[serde(default)]
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct HarResponse {
    status: i64,
    #[serde(default)]
    headers: Vec<HarHeader>,
    #[serde(default)]
    content: HarContent,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarContent {
    #[serde(default)]
    mime_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<String>,
}

pub fn parse_archive(raw: &[u8]) -> Result<ParsedArchive, CaptureError> {
    parse_archive_with(raw, &ParseOptions::default())
}

pub fn parse_archive_with(raw: &[u8], opts: &ParseOptions) -> Result<ParsedArchive, CaptureError> {
    let har: Har =
        serde_json::from_slice(raw).map_err(|e| CaptureError::MalformedArchive(e.to_string()))?;
    if har.log.entries.is_empty() {
        return Err(CaptureError::EmptyArchive);
    }
    let mut diagnostics = Vec::new();
    let mut entries = Vec::with_capacity(har.log.entries.len());
    for (index, value) in har.log.entries.into_iter().enumerate() {
        let skip = |reason: String| Diagnostic { index, kind: DiagnosticKind::Skipped, reason };
        let he: HarEntry = match serde_json::from_value(value) {
            Ok(he) => he,
            Err(e) => {
                diagnostics.push(skip(format!("invalid entry: {e}")));
                continue;
            }
        };
        match convert(he, opts) {
            Ok((entry, truncated_now)) => {
                if truncated_now {
                    diagnostics.push(Diagnostic {
                        index,
                        kind: DiagnosticKind::Truncated,
                        reason: format!("response body exceeds {} bytes", opts.max_body_bytes),
                    });
                }
                entries.push(entry);
            }
            Err(reason) => diagnostics.push(skip(reason)),
        }
    }
    let label = har.log.creator.map(|c| c.name).unwrap_or_default();
    Ok(ParsedArchive { archive: CaptureArchive::new(label, entries), diagnostics })
}

fn header_map(headers: Vec<HarHeader>) -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for h in headers {
        let name = h.name.to_ascii_lowercase();
        if name.starts_with(':') {
            continue; // HTTP/2 pseudo headers
        }
        map.entry(name.clone())
            .and_modify(|v| {
                let sep = if name == "cookie" { "; " } else { ", " };
                v.push_str(sep);
                v.push_str(&h.value);
            })
            .or_insert(h.value);
    }
    map
}

fn convert(he: HarEntry, opts: &ParseOptions) -> Result<(CaptureEntry, bool), String> {
    let method = he.request.method.trim().to_ascii_uppercase();
    if !is_method_token(&method) {
        return Err(format!("invalid method {:?}", he.request.method));
    }
    let url = Url::parse(&he.request.url).map_err(|e| format!("unparseable url: {e}"))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(format!("unsupported url {}", he.request.url));
    }
    if !(100..=599).contains(&he.response.status) {
        return Err(format!("status {} out of range", he.response.status));
    }
    let started_at = DateTime::parse_from_rfc3339(&he.started_date_time)
        .map_err(|e| format!("bad startedDateTime: {e}"))?
        .timestamp_millis();

    let request_body = he.request.post_data.map(|p| Body {
        media_type: media_essence(&p.mime_type),
        bytes: p.text.into_bytes(),
    });

    let response_headers = header_map(he.response.headers);
    let mut mime = he.response.content.mime_type.clone();
    if mime.trim().is_empty() {
        mime = response_headers.get("content-type").cloned().unwrap_or_default();
    }
    let response_media_type = media_essence(&mime);
    let mut bytes = match (he.response.content.text, he.response.content.encoding.as_deref()) {
        (None, _) => None,
        (Some(text), Some("base64")) => Some(
            base64::engine::general_purpose::STANDARD
                .decode(text.as_bytes())
                .map_err(|e| format!("bad base64 body: {e}"))?,
        ),
        (Some(text), _) => Some(text.into_bytes()),
    };
    let mut truncated = he.truncated;
    let mut truncated_now = false;
    if let Some(b) = bytes.as_mut() {
        if b.len() > opts.max_body_bytes {
            b.truncate(opts.max_body_bytes);
            truncated = true;
            truncated_now = true;
        }
    }
    let response_body = bytes
        .filter(|b| !b.is_empty())
        .map(|b| Body { media_type: response_media_type.clone(), bytes: b });

    Ok((
        CaptureEntry {
            method,
            url,
            request_headers: header_map(he.request.headers),
            request_body,
            response_status: he.response.status as u16,
            response_media_type,
            response_body,
            response_truncated: truncated,
            started_at,
            duration_ms: he.time.max(0.0),
            label: he.api,
        },
        truncated_now,
    ))
}

/// Serializes an archive back into HAR 1.2 JSON.
pub fn to_har_json(archive: &CaptureArchive) -> String {
    let entries = archive
        .entries
        .iter()
        .map(|e| {
            let he = HarEntry {
                started_date_time: Utc
                    .timestamp_millis_opt(e.started_at)
                    .single()
                    .unwrap_or_default()
                    .to_rfc3339_opts(SecondsFormat::Millis, true),
                time: e.duration_ms,
                request: HarRequest {
                    method: e.method.clone(),
                    url: e.url.to_string(),
                    headers: e
                        .request_headers
                        .iter()
                        .map(|(k, v)| HarHeader { name: k.clone(), value: v.clone() })
                        .collect(),
                    post_data: e.request_body.as_ref().map(|b| HarPostData {
                        mime_type: b.media_type.clone(),
                        text: String::from_utf8_lossy(&b.bytes).into_owned(),
                    }),
                },
                response: HarResponse {
                    status: e.response_status as i64,
                    headers: Vec::new(),
                    content: match &e.response_body {
                        None => HarContent {
                            mime_type: e.response_media_type.clone(),
                            text: None,
                            encoding: None,
                        },
                        Some(b) => match std::str::from_utf8(&b.bytes) {
                            Ok(t) => HarContent {
                                mime_type: e.response_media_type.clone(),
                                text: Some(t.to_owned()),
                                encoding: None,
                            },
                            Err(_) => HarContent {
                                mime_type: e.response_media_type.clone(),
                                text: Some(
                                    base64::engine::general_purpose::STANDARD.encode(&b.bytes),
                                ),
                                encoding: Some("base64".into()),
                            },
                        },
                    },
                },
                api: e.label,
                truncated: e.response_truncated,
            };
            serde_json::to_value(he).expect("HAR entry serializes")
        })
        .collect();
    let har = Har {
        log: HarLog {
            version: har_version(),
            creator: Some(HarCreator { name: archive.source_label.clone(), version: String::new() }),
            entries,
        },
    };
    serde_json::to_string_pretty(&har).expect("HAR serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(entries: &str) -> String {
        format!(r#"{{"log":{{"version":"1.2","entries":[{entries}]}}}}"#)
    }

    const GET: &str = r#"{"startedDateTime":"2026-03-01T10:00:00.000Z","time":12.5,
        "request":{"method":"GET","url":"https://example.com/api/x","headers":[]},
        "response":{"status":200,"content":{"mimeType":"application/json; charset=utf-8","text":"{\"a\":1}"}}}"#;

    #[test]
    fn parses_minimal_get() {
        let parsed = parse_archive(minimal(GET).as_bytes()).unwrap();
        assert_eq!(parsed.archive.len(), 1);
        let e = &parsed.archive.entries[0];
        assert_eq!(e.method, "GET");
        assert_eq!(e.response_media_type, "application/json");
        assert_eq!(e.response_text(), Some(r#"{"a":1}"#));
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn truncated_json_is_malformed() {
        let raw = minimal(GET);
        let cut = &raw.as_bytes()[..raw.len() / 2];
        assert!(matches!(parse_archive(cut), Err(CaptureError::MalformedArchive(_))));
    }

    #[test]
    fn missing_entries_is_malformed() {
        assert!(matches!(
            parse_archive(br#"{"log":{}}"#),
            Err(CaptureError::MalformedArchive(_))
        ));
    }

    #[test]
    fn zero_entries_is_empty() {
        assert!(matches!(parse_archive(minimal("").as_bytes()), Err(CaptureError::EmptyArchive)));
    }

    #[test]
    fn bad_url_is_skipped_with_diagnostic() {
        let bad = GET.replace("https://example.com/api/x", "not a url");
        let raw = minimal(&format!("{GET},{bad}"));
        let parsed = parse_archive(raw.as_bytes()).unwrap();
        assert_eq!(parsed.archive.len(), 1);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].index, 1);
        assert_eq!(parsed.diagnostics[0].kind, DiagnosticKind::Skipped);
    }

    #[test]
    fn oversized_body_is_truncated_and_flagged() {
        let parsed = parse_archive_with(minimal(GET).as_bytes(), &ParseOptions { max_body_bytes: 3 })
            .unwrap();
        let e = &parsed.archive.entries[0];
        assert!(e.response_truncated);
        assert_eq!(e.response_body.as_ref().unwrap().bytes.len(), 3);
        assert_eq!(parsed.diagnostics[0].kind, DiagnosticKind::Truncated);
    }

    #[test]
    fn entries_sorted_by_start_with_stable_ties() {
        let late = GET.replace("10:00:00.000", "10:00:05.000");
        let tie = GET.replace("/api/x", "/api/y");
        let raw = minimal(&format!("{late},{GET},{tie}"));
        let a = parse_archive(raw.as_bytes()).unwrap().archive;
        let paths: Vec<_> = a.entries.iter().map(|e| e.path().to_owned()).collect();
        assert_eq!(paths, ["/api/x", "/api/y", "/api/x"]);
        assert!(a.entries[2].started_at > a.entries[0].started_at);
    }

    #[test]
    fn negative_har_time_clamps_to_zero() {
        let raw = minimal(&GET.replace("\"time\":12.5", "\"time\":-1"));
        let a = parse_archive(raw.as_bytes()).unwrap().archive;
        assert_eq!(a.entries[0].duration_ms, 0.0);
    }
}
