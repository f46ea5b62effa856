use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::auth::{extract_auth, write_private, AuthDescriptor, AuthKind, Vault};
use super::paths::{normalize_paths, ParamKind, PathParam};
use super::shape::{infer_value, ResponseShape, ScalarKind};
use super::DistillError;
use crate::capture::CaptureEntry;
use crate::{canonical_json, Timestamp};

/// Endpoint identity within a domain: `METHOD /path/{template}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointKey(pub String);

impl EndpointKey {
    pub fn new(method: &str, path_template: &str) -> Self {
        Self(format!("{method} {path_template}"))
    }
}

impl fmt::Display for EndpointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryParam {
    pub kind: ScalarKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointTemplate {
    pub method: String,
    pub path_template: String,
    pub path_params: Vec<PathParam>,
    pub query_schema: BTreeMap<String, QueryParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_schema: Option<ResponseShape>,
    pub response_schema: ResponseShape,
    pub auth: AuthDescriptor,
    pub safe: bool,
    pub description: String,
    /// One observed concrete request (`/path?query`), sensitive query
    /// parameters removed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_request: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_example: Option<Value>,
}

impl EndpointTemplate {
    pub fn key(&self) -> EndpointKey {
        EndpointKey::new(&self.method, &self.path_template)
    }

    pub fn required_params(&self) -> Vec<String> {
        self.path_params
            .iter()
            .map(|p| p.name.clone())
            .chain(self.query_schema.iter().filter(|(_, q)| q.required).map(|(k, _)| k.clone()))
            .collect()
    }

    /// Canonical schema serialization, one fact per line.
    pub fn schema_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("endpoint: {}", self.key())];
        for p in &self.path_params {
            lines.push(format!("path.{}: {}", p.name, param_kind_name(p.kind)));
        }
        for (name, q) in &self.query_schema {
            let opt = if q.required { "" } else { "?" };
            lines.push(format!("query.{name}: {}{opt}", scalar_name(q.kind)));
        }
        if let Some(body) = &self.body_schema {
            lines.extend(body.lines("body"));
        }
        lines.extend(self.response_schema.lines("response"));
        lines.push(match &self.auth.location {
            Some(loc) => format!("auth: {} {loc}", self.auth.kind.as_str()),
            None => format!("auth: {}", self.auth.kind.as_str()),
        });
        lines
    }

    /// Text the intent matcher embeds: description plus field and parameter
    /// names.
    pub fn documentation(&self) -> String {
        let mut doc = self.description.clone();
        for n in self.response_schema.field_names() {
            doc.push(' ');
            doc.push_str(&n);
        }
        for n in self.query_schema.keys() {
            doc.push(' ');
            doc.push_str(n);
        }
        doc
    }

    fn refresh_description(&mut self) {
        self.description = describe(&self.method, &self.path_template, &self.response_schema);
    }
}

fn param_kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Integer => "integer",
        ParamKind::Uuid => "uuid",
        ParamKind::Opaque => "opaque",
    }
}

fn scalar_name(k: ScalarKind) -> &'static str {
    match k {
        ScalarKind::String => "string",
        ScalarKind::Number => "number",
        ScalarKind::Boolean => "boolean",
        ScalarKind::Null => "null",
    }
}

fn describe(method: &str, template: &str, response: &ResponseShape) -> String {
    let fields = response.field_names();
    let what = match response {
        ResponseShape::Array { .. } => "a list",
        ResponseShape::Object { .. } => "an object",
        ResponseShape::Null => "no content",
        _ => "a document",
    };
    if fields.is_empty() {
        format!("{method} {template} returns {what}.")
    } else {
        format!("{method} {template} returns {what} with {}.", fields.join(", "))
    }
}

/// The shareable unit of route knowledge for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPackage {
    pub domain: String,
    pub endpoints: Vec<EndpointTemplate>,
    #[serde(default)]
    pub manifest_text: String,
    /// Per-endpoint descriptors with vault references. Local only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auth_local: BTreeMap<EndpointKey, AuthDescriptor>,
    pub contributor: String,
    pub created_at: Timestamp,
}

impl SkillPackage {
    pub fn endpoint(&self, key: &EndpointKey) -> Option<&EndpointTemplate> {
        self.endpoints.iter().find(|e| &e.key() == key)
    }

    /// Copy safe to publish: no local auth map, no vault references.
    pub fn publishable(&self) -> SkillPackage {
        SkillPackage {
            endpoints: self
                .endpoints
                .iter()
                .map(|e| EndpointTemplate { auth: e.auth.without_ref(), ..e.clone() })
                .collect(),
            auth_local: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn schema_lines(&self) -> Vec<String> {
        let mut eps: Vec<&EndpointTemplate> = self.endpoints.iter().collect();
        eps.sort_by_key(|e| e.key());
        eps.iter().flat_map(|e| e.schema_lines()).collect()
    }

    pub fn normalize(&mut self) {
        self.endpoints.sort_by_key(|e| e.key());
        for e in &mut self.endpoints {
            e.refresh_description();
        }
        self.manifest_text = render_manifest(self);
    }
}

fn sensitive_param(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    ["key", "token", "auth", "sig", "secret", "password", "session"].iter().any(|m| n.contains(m))
}

fn query_kind(v: &str) -> ScalarKind {
    if v == "true" || v == "false" {
        ScalarKind::Boolean
    } else if v.parse::<f64>().is_ok() {
        ScalarKind::Number
    } else {
        ScalarKind::String
    }
}

fn unify_scalar(a: ScalarKind, b: ScalarKind) -> ScalarKind {
    if a == b {
        a
    } else {
        ScalarKind::String
    }
}

fn example_request(entry: &CaptureEntry) -> String {
    let kept: Vec<(String, String)> = entry
        .url
        .query_pairs()
        .filter(|(k, _)| !sensitive_param(k))
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    let mut out = entry.path().to_owned();
    if !kept.is_empty() {
        let q = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(kept).finish();
        out.push('?');
        out.push_str(&q);
    }
    out
}

fn json_body(bytes: Option<&[u8]>) -> Option<Value> {
    bytes.and_then(|b| serde_json::from_slice::<Value>(b).ok())
}

/// Turns filtered API entries into one skill package per host.
///
/// Only 2xx exchanges contribute. Paths on a host are templated together, so
/// different methods on the same resource share a template; endpoints are
/// keyed by (method, template).
pub fn distill(
    entries: &[CaptureEntry],
    vault: &mut Vault,
    contributor: &str,
    now: Timestamp,
) -> Result<Vec<SkillPackage>, DistillError> {
    let mut by_host: BTreeMap<String, Vec<&CaptureEntry>> = BTreeMap::new();
    for e in entries.iter().filter(|e| (200..300).contains(&e.response_status)) {
        by_host.entry(e.host().to_owned()).or_default().push(e);
    }
    if by_host.is_empty() {
        return Err(DistillError::NoApiEntries);
    }
    let mut packages = Vec::new();
    for (host, host_entries) in by_host {
        let unique: BTreeSet<&str> = host_entries.iter().map(|e| e.path()).collect();
        let unique: Vec<&str> = unique.into_iter().collect();
        let templates = normalize_paths(&unique);
        let template_of: BTreeMap<String, usize> = templates
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.samples.iter().map(move |s| (s.clone(), i)))
            .collect();

        let mut groups: BTreeMap<(String, usize), Vec<&CaptureEntry>> = BTreeMap::new();
        for e in &host_entries {
            let t = template_of[e.path()];
            groups.entry((e.method.clone(), t)).or_default().push(e);
        }

        let mut endpoints = Vec::new();
        let mut auth_local = BTreeMap::new();
        for ((method, t), samples) in groups {
            let tpl = &templates[t];
            let mut auth = AuthDescriptor::none();
            let mut secrets = Vec::new();
            for s in &samples {
                let d = extract_auth(s, vault)?;
                if let Some(secret) = d.value_ref.as_deref().and_then(|k| vault.get(k)) {
                    secrets.push(secret.to_owned());
                }
                if d.stronger_than(&auth) {
                    auth = d;
                }
            }
            let bodies: Vec<Value> = samples
                .iter()
                .filter_map(|s| json_body(s.response_body.as_ref().map(|b| b.bytes.as_slice())))
                .collect();
            let response_schema = match bodies.iter().map(infer_value).reduce(ResponseShape::unify) {
                Some(s) => s,
                None if samples.iter().any(|s| s.response_body.is_some()) => ResponseShape::String,
                None => ResponseShape::Null,
            };
            let body_schema = samples
                .iter()
                .filter_map(|s| json_body(s.request_body.as_ref().map(|b| b.bytes.as_slice())))
                .map(|v| infer_value(&v))
                .reduce(ResponseShape::unify);

            let mut query_schema: BTreeMap<String, QueryParam> = BTreeMap::new();
            let mut seen: BTreeMap<String, usize> = BTreeMap::new();
            for s in &samples {
                let mut names = BTreeSet::new();
                for (k, v) in s.url.query_pairs() {
                    if sensitive_param(&k) || !names.insert(k.to_string()) {
                        continue;
                    }
                    let kind = query_kind(&v);
                    query_schema
                        .entry(k.to_string())
                        .and_modify(|q| q.kind = unify_scalar(q.kind, kind))
                        .or_insert(QueryParam { kind, required: true });
                    *seen.entry(k.to_string()).or_default() += 1;
                }
            }
            for (k, q) in query_schema.iter_mut() {
                q.required = seen.get(k).copied().unwrap_or(0) == samples.len();
            }

            let response_example = bodies.first().filter(|v| {
                let text = v.to_string();
                text.len() <= 2048 && !secrets.iter().any(|s| text.contains(s.as_str()))
            });
            let mut ep = EndpointTemplate {
                safe: method == "GET",
                method,
                path_template: tpl.template.clone(),
                path_params: tpl.params.clone(),
                query_schema,
                body_schema,
                response_schema,
                auth: auth.clone(),
                description: String::new(),
                example_request: Some(example_request(samples[0])),
                response_example: response_example.cloned(),
            };
            ep.refresh_description();
            if !auth.is_none() {
                auth_local.insert(ep.key(), auth);
            }
            endpoints.push(ep);
        }
        let mut pkg = SkillPackage {
            domain: host,
            endpoints,
            manifest_text: String::new(),
            auth_local,
            contributor: contributor.to_owned(),
            created_at: now,
        };
        pkg.normalize();
        packages.push(pkg);
    }
    Ok(packages)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDelta {
    pub key: EndpointKey,
    pub new_endpoint: bool,
    pub added_lines: Vec<String>,
    pub removed_lines: Vec<String>,
}

/// What an incoming package changed, per endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeDelta {
    pub contributor: String,
    pub endpoints: Vec<EndpointDelta>,
}

impl MergeDelta {
    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn changed_lines(&self) -> usize {
        self.endpoints.iter().map(|d| d.added_lines.len() + d.removed_lines.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Merged {
    pub package: SkillPackage,
    pub delta: MergeDelta,
}

fn line_diff(before: &[String], after: &[String]) -> (Vec<String>, Vec<String>) {
    let b: BTreeSet<&String> = before.iter().collect();
    let a: BTreeSet<&String> = after.iter().collect();
    (
        after.iter().filter(|l| !b.contains(l)).cloned().collect(),
        before.iter().filter(|l| !a.contains(l)).cloned().collect(),
    )
}

fn merge_endpoint(existing: &EndpointTemplate, incoming: &EndpointTemplate) -> EndpointTemplate {
    let mut out = existing.clone();
    for (name, q) in &incoming.query_schema {
        out.query_schema
            .entry(name.clone())
            .or_insert(QueryParam { kind: q.kind, required: false });
    }
    out.response_schema = existing.response_schema.union_additive(&incoming.response_schema);
    out.body_schema = match (&existing.body_schema, &incoming.body_schema) {
        (Some(a), Some(b)) => Some(a.union_additive(b)),
        (a, b) => a.clone().or_else(|| b.clone()),
    };
    if incoming.auth.stronger_than(&existing.auth) {
        out.auth = incoming.auth.clone();
    }
    if out.example_request.is_none() {
        out.example_request = incoming.example_request.clone();
    }
    if out.response_example.is_none() {
        out.response_example = incoming.response_example.clone();
    }
    out.refresh_description();
    out
}

/// Merges `incoming` into `existing` at the domain level.
///
/// New endpoints are appended; overlapping endpoints keep the existing schema
/// and gain any query parameters or response fields only the incoming side
/// observed. The delta lists changed canonical schema lines per endpoint and
/// is attributed to the incoming contributor.
pub fn merge_skills(existing: &SkillPackage, incoming: &SkillPackage) -> Result<Merged, DistillError> {
    if existing.domain != incoming.domain {
        return Err(DistillError::DomainMismatch(existing.domain.clone(), incoming.domain.clone()));
    }
    let mut package = existing.clone();
    let mut delta = MergeDelta { contributor: incoming.contributor.clone(), endpoints: Vec::new() };
    for inc in &incoming.endpoints {
        let key = inc.key();
        match package.endpoints.iter().position(|e| e.key() == key) {
            None => {
                let mut ep = inc.clone();
                ep.refresh_description();
                delta.endpoints.push(EndpointDelta {
                    key: key.clone(),
                    new_endpoint: true,
                    added_lines: ep.schema_lines(),
                    removed_lines: Vec::new(),
                });
                if let Some(a) = incoming.auth_local.get(&key) {
                    package.auth_local.insert(key, a.clone());
                }
                package.endpoints.push(ep);
            }
            Some(i) => {
                let merged = merge_endpoint(&package.endpoints[i], inc);
                let (added, removed) =
                    line_diff(&package.endpoints[i].schema_lines(), &merged.schema_lines());
                if !added.is_empty() || !removed.is_empty() {
                    delta.endpoints.push(EndpointDelta {
                        key: key.clone(),
                        new_endpoint: false,
                        added_lines: added,
                        removed_lines: removed,
                    });
                    if merged.auth != package.endpoints[i].auth {
                        if let Some(a) = incoming.auth_local.get(&key) {
                            package.auth_local.insert(key.clone(), a.clone());
                        }
                    }
                }
                package.endpoints[i] = merged;
            }
        }
    }
    package.normalize();
    Ok(Merged { package, delta })
}

/// Deterministic Markdown documentation, one section per endpoint.
pub fn render_manifest(pkg: &SkillPackage) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", pkg.domain);
    let _ = writeln!(out, "Endpoints: {}\n", pkg.endpoints.len());
    for e in &pkg.endpoints {
        let _ = writeln!(out, "## {} {}\n", e.method, e.path_template);
        let _ = writeln!(out, "{}\n", e.description);
        let auth = match &e.auth.location {
            Some(loc) => format!("{} ({loc})", e.auth.kind.as_str()),
            None => e.auth.kind.as_str().to_owned(),
        };
        let _ = writeln!(out, "Auth: {auth}. Safe: {}.\n", if e.safe { "yes" } else { "no" });
        if !e.path_params.is_empty() || !e.query_schema.is_empty() {
            let _ = writeln!(out, "| param | in | kind | required |");
            let _ = writeln!(out, "|---|---|---|---|");
            for p in &e.path_params {
                let _ = writeln!(out, "| {} | path | {} | yes |", p.name, param_kind_name(p.kind));
            }
            for (n, q) in &e.query_schema {
                let req = if q.required { "yes" } else { "no" };
                let _ = writeln!(out, "| {n} | query | {} | {req} |", scalar_name(q.kind));
            }
            out.push('\n');
        }
        if let Some(body) = &e.body_schema {
            let _ = writeln!(out, "Request body:\n\n```\n{}\n```\n", body.lines("body").join("\n"));
        }
        let _ = writeln!(out, "Response:\n\n```\n{}\n```\n", e.response_schema.lines("response").join("\n"));
    }
    out
}

fn ts_type(shape: &ResponseShape) -> String {
    match shape {
        ResponseShape::Object { fields } => {
            let parts: Vec<String> = fields
                .iter()
                .map(|(k, f)| format!("{k}{}: {}", if f.optional { "?" } else { "" }, ts_type(&f.shape)))
                .collect();
            format!("{{ {} }}", parts.join("; "))
        }
        ResponseShape::Array { items } => format!("Array<{}>", ts_type(items)),
        ResponseShape::String => "string".into(),
        ResponseShape::Number => "number".into(),
        ResponseShape::Boolean => "boolean".into(),
        ResponseShape::Null => "null".into(),
    }
}

/// TypeScript client stub, rendered as documentation only.
pub fn render_client_stub(pkg: &SkillPackage) -> String {
    let mut out = format!("// Client stub for {}. Generated from endpoint templates.\n\n", pkg.domain);
    let _ = writeln!(out, "const BASE = \"https://{}\";\n", pkg.domain);
    for e in &pkg.endpoints {
        let mut name = e.method.to_ascii_lowercase();
        for seg in e.path_template.split('/').filter(|s| !s.is_empty()) {
            let clean: String = seg
                .trim_matches(|c| c == '{' || c == '}')
                .chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect();
            let mut chars = clean.chars();
            if let Some(first) = chars.next() {
                name.push(first.to_ascii_uppercase());
                name.extend(chars);
            }
        }
        let mut args: Vec<String> = e.path_params.iter().map(|p| format!("{}: string", p.name)).collect();
        if !e.query_schema.is_empty() {
            args.push("query: Record<string, string> = {}".into());
        }
        let path = e.path_template.replace('{', "${");
        let _ = writeln!(out, "/** {} */", e.description);
        let _ = writeln!(
            out,
            "export async function {name}({}): Promise<{}> {{",
            args.join(", "),
            ts_type(&e.response_schema)
        );
        let qs = if e.query_schema.is_empty() { "" } else { "?${new URLSearchParams(query)}" };
        let _ = writeln!(out, "  const res = await fetch(`${{BASE}}{path}{qs}`, {{ method: \"{}\" }});", e.method);
        let _ = writeln!(out, "  return res.json();\n}}\n");
    }
    out
}

const MANIFEST_FILE: &str = "manifest.md";
const ENDPOINTS_FILE: &str = "endpoints.json";
const AUTH_FILE: &str = "auth.local.json";
const CLIENT_FILE: &str = "api.ts";

pub fn write_skill_dir(pkg: &SkillPackage, dir: &Path) -> Result<(), DistillError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MANIFEST_FILE), &pkg.manifest_text)?;
    let public = pkg.publishable();
    let value = serde_json::to_value(&public)?;
    std::fs::write(dir.join(ENDPOINTS_FILE), serde_json::to_string_pretty(&value)? + "\n")?;
    std::fs::write(dir.join(CLIENT_FILE), render_client_stub(pkg))?;
    if !pkg.auth_local.is_empty() {
        write_private(&dir.join(AUTH_FILE), canonical_json(&pkg.auth_local).as_bytes())?;
    }
    Ok(())
}

pub fn read_skill_dir(dir: &Path) -> Result<SkillPackage, DistillError> {
    let mut pkg: SkillPackage = serde_json::from_slice(&std::fs::read(dir.join(ENDPOINTS_FILE))?)?;
    let auth_path = dir.join(AUTH_FILE);
    if auth_path.exists() {
        pkg.auth_local = serde_json::from_slice(&std::fs::read(auth_path)?)?;
        for e in &mut pkg.endpoints {
            if let Some(a) = pkg.auth_local.get(&e.key()) {
                e.auth = a.clone();
            }
        }
    }
    pkg.manifest_text = render_manifest(&pkg);
    Ok(pkg)
}

impl AuthKind {
    pub fn header_name(self, location: Option<&str>) -> Option<String> {
        match self {
            AuthKind::Bearer => Some("authorization".into()),
            AuthKind::ApiKeyHeader => location.map(str::to_ascii_lowercase),
            AuthKind::Cookie => Some("cookie".into()),
            AuthKind::None => None,
        }
    }
}
