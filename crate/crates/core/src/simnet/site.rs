use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::distill::AuthKind;

/// Header the simulated browser sends. Bot-protected sites reject anything
/// without it.
pub const BROWSER_MARKER: &str = "x-sim-browser";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPage {
    #[serde(default)]
    pub html: String,
    pub latency_ms: i64,
}

/// One JSON route on a site.
///
/// `response` is a template: strings starting with `$` are generators
/// (`$path.NAME`, `$query.NAME`, `$int`, `$int:LO:HI`, `$float`, `$word`,
/// `$text`, `$bool`); a non-empty array repeats its first element
/// `array_len` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEndpoint {
    #[serde(default = "get")]
    pub method: String,
    /// `/api/items/{id}`; `{name}` segments match any value.
    pub path: String,
    pub latency_ms: i64,
    pub response: Value,
    #[serde(default = "three")]
    pub array_len: usize,
    #[serde(default)]
    pub description: String,
    /// Parameter sets the site's own UI requests while a page loads. Names
    /// that appear as `{name}` in `path` fill the path, the rest go to the
    /// query string.
    #[serde(default)]
    pub samples: Vec<BTreeMap<String, String>>,
    /// Requires the site credential.
    #[serde(default)]
    pub auth: bool,
}

fn get() -> String {
    "GET".into()
}

fn three() -> usize {
    3
}

impl SimEndpoint {
    pub fn key(&self) -> String {
        format!("{} {}", self.method, self.path)
    }

    /// Path parameters if `path` fits the template.
    pub fn match_path(&self, path: &str) -> Option<BTreeMap<String, String>> {
        let t: Vec<&str> = self.path.trim_matches('/').split('/').collect();
        let p: Vec<&str> = path.trim_matches('/').split('/').collect();
        if t.len() != p.len() {
            return None;
        }
        let mut out = BTreeMap::new();
        for (a, b) in t.iter().zip(&p) {
            match a.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                Some(name) if !b.is_empty() => {
                    out.insert(name.to_owned(), (*b).to_owned());
                }
                Some(_) => return None,
                None if a == b => {}
                None => return None,
            }
        }
        Some(out)
    }

    /// Concrete `/path?query` for a sample parameter set.
    pub fn render(&self, params: &BTreeMap<String, String>) -> String {
        let mut path = self.path.clone();
        let mut query = url::form_urlencoded::Serializer::new(String::new());
        let mut any = false;
        for (k, v) in params {
            let slot = format!("{{{k}}}");
            if path.contains(&slot) {
                let enc: String = url::form_urlencoded::byte_serialize(v.as_bytes()).collect();
                path = path.replace(&slot, &enc);
            } else {
                query.append_pair(k, v);
                any = true;
            }
        }
        if any {
            format!("{path}?{}", query.finish())
        } else {
            path
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SiteFlags {
    #[serde(default)]
    pub bot_protected: bool,
    /// Renders everything server side; the browser sees no JSON traffic.
    #[serde(default)]
    pub html_only: bool,
    #[serde(default)]
    pub tier2_opt_in: bool,
    #[serde(default)]
    pub tier2_fee: crate::Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteAuth {
    pub kind: AuthKind,
    /// Header name for `api-key-header`, cookie name for `cookie`.
    #[serde(default)]
    pub name: Option<String>,
    pub secret: String,
}

impl SiteAuth {
    /// Header the browser sends once logged in.
    pub fn header(&self, secret: &str) -> Option<(String, String)> {
        match self.kind {
            AuthKind::None => None,
            AuthKind::Bearer => Some(("authorization".into(), format!("Bearer {secret}"))),
            AuthKind::ApiKeyHeader => Some((self.name.clone()?.to_ascii_lowercase(), secret.to_owned())),
            AuthKind::Cookie => Some(("cookie".into(), format!("{}={secret}", self.name.clone()?))),
        }
    }

    pub fn accepts(&self, headers: &BTreeMap<String, String>, secret: &str) -> bool {
        match self.header(secret) {
            None => true,
            Some((name, want)) if name == "cookie" => headers
                .get("cookie")
                .is_some_and(|c| c.split(';').any(|p| p.trim() == want)),
            Some((name, want)) => headers.get(&name) == Some(&want),
        }
    }
}

/// Something an agent on the fleet might ask of this site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteIntent {
    pub text: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSite {
    pub host: String,
    /// Words an intent without a domain hint is matched against.
    #[serde(default)]
    pub description: String,
    pub pages: BTreeMap<String, SimPage>,
    #[serde(default)]
    pub endpoints: Vec<SimEndpoint>,
    #[serde(default)]
    pub flags: SiteFlags,
    #[serde(default)]
    pub auth: Option<SiteAuth>,
    #[serde(default)]
    pub intents: Vec<SiteIntent>,
    #[serde(default)]
    pub seed: u64,
}

impl SimSite {
    /// The page a browser session lands on.
    pub fn landing(&self) -> Option<(&str, &SimPage)> {
        self.pages.get_key_value("/").or_else(|| self.pages.iter().next()).map(|(k, v)| (k.as_str(), v))
    }

    pub fn endpoint(&self, key_or_path: &str) -> Option<&SimEndpoint> {
        self.endpoints.iter().find(|e| e.key() == key_or_path || e.path == key_or_path)
    }
}

/// Loads site definitions from a JSON array (or `{"sites": [...]}`).
pub fn load_sites(json: &str) -> Result<Vec<SimSite>, serde_json::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<SimSite>),
        Wrapped { sites: Vec<SimSite> },
    }
    Ok(match serde_json::from_str(json)? {
        Doc::List(s) | Doc::Wrapped { sites: s } => s,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftKind {
    RemoveField { field: String },
    /// number becomes string; string becomes number; anything else becomes
    /// a string.
    ChangeType { field: String },
    AddField { field: String },
}

fn mix(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const WORDS: &[&str] = &[
    "amber", "birch", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper", "kestrel",
    "lumen", "maple", "nimbus", "onyx", "pepper", "quartz", "raven", "sierra", "tundra", "umber", "violet",
    "willow", "xenon", "yarrow", "zephyr",
];

pub(crate) struct Generator<'a> {
    pub seed: u64,
    pub resource: &'a str,
    pub path: &'a BTreeMap<String, String>,
    pub query: &'a BTreeMap<String, String>,
    pub array_len: usize,
}

fn scalar_from(raw: &str) -> Value {
    match raw.parse::<i64>() {
        Ok(n) => Value::Number(n.into()),
        Err(_) => Value::String(raw.to_owned()),
    }
}

impl Generator<'_> {
    fn rand(&self, at: &str) -> u64 {
        let h = mix(0xcbf2_9ce4_8422_2325 ^ self.seed, self.resource.as_bytes());
        // final avalanche so neighbouring paths differ in the low bits
        let mut x = mix(h, at.as_bytes());
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
        x ^ (x >> 33)
    }

    pub fn value(&self, tpl: &Value, at: &str) -> Value {
        match tpl {
            Value::String(s) if s.starts_with('$') => self.generate(s, at),
            Value::Array(items) => match items.first() {
                None => Value::Array(Vec::new()),
                Some(first) => {
                    Value::Array((0..self.array_len).map(|i| self.value(first, &format!("{at}[{i}]"))).collect())
                }
            },
            Value::Object(m) => Value::Object(
                m.iter().map(|(k, v)| (k.clone(), self.value(v, &format!("{at}.{k}")))).collect::<Map<_, _>>(),
            ),
            other => other.clone(),
        }
    }

    fn generate(&self, spec: &str, at: &str) -> Value {
        let r = self.rand(at);
        let mut parts = spec[1..].split(':');
        let head = parts.next().unwrap_or_default();
        if let Some(name) = head.strip_prefix("path.") {
            return self.path.get(name).map(|v| scalar_from(v)).unwrap_or(Value::Null);
        }
        if let Some(name) = head.strip_prefix("query.") {
            return self.query.get(name).map(|v| scalar_from(v)).unwrap_or(Value::Null);
        }
        match head {
            "int" => {
                let lo: i64 = parts.next().and_then(|p| p.parse().ok()).unwrap_or(0);
                let hi: i64 = parts.next().and_then(|p| p.parse().ok()).unwrap_or(1_000).max(lo);
                Value::Number((lo + (r % (hi - lo + 1) as u64) as i64).into())
            }
            "float" => {
                let cents = (r % 100_000) as f64 / 100.0;
                Number::from_f64(cents + 0.5).map(Value::Number).unwrap_or(Value::Null)
            }
            "word" => Value::String(WORDS[(r % WORDS.len() as u64) as usize].to_owned()),
            "text" => {
                let n = 3 + (r % 4) as usize;
                let words: Vec<&str> = (0..n).map(|i| WORDS[((r >> (i * 5)) % WORDS.len() as u64) as usize]).collect();
                Value::String(words.join(" "))
            }
            "bool" => Value::Bool(r & 1 == 1),
            _ => Value::String(spec.to_owned()),
        }
    }
}

pub(crate) fn apply_drift(v: &mut Value, kind: &DriftKind) {
    match kind {
        DriftKind::AddField { field } => match v {
            Value::Object(m) => {
                m.insert(field.clone(), Value::String("new".into()));
            }
            Value::Array(items) => items.iter_mut().for_each(|i| apply_drift(i, kind)),
            _ => {}
        },
        DriftKind::RemoveField { field } | DriftKind::ChangeType { field } => match v {
            Value::Object(m) => {
                let remove = matches!(kind, DriftKind::RemoveField { .. });
                if remove {
                    m.remove(field);
                } else if let Some(x) = m.get_mut(field) {
                    *x = match x.take() {
                        Value::String(s) => Value::Number(s.len().into()),
                        Value::Number(n) => Value::String(n.to_string()),
                        other => Value::String(other.to_string()),
                    };
                }
                m.values_mut().for_each(|c| apply_drift(c, kind));
            }
            Value::Array(items) => items.iter_mut().for_each(|i| apply_drift(i, kind)),
            _ => {}
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ep() -> SimEndpoint {
        serde_json::from_value(json!({
            "path": "/api/items/{id}",
            "latency_ms": 80,
            "response": {"id": "$path.id", "price": "$float", "tags": ["$word"], "q": "$query.q"}
        }))
        .unwrap()
    }

    #[test]
    fn path_matching() {
        let e = ep();
        assert_eq!(e.match_path("/api/items/42").unwrap()["id"], "42");
        assert!(e.match_path("/api/items").is_none());
        assert!(e.match_path("/api/users/42").is_none());
        let p = BTreeMap::from([("id".to_owned(), "7".to_owned()), ("q".to_owned(), "a b".to_owned())]);
        assert_eq!(e.render(&p), "/api/items/7?q=a+b");
    }

    #[test]
    fn generated_bodies_are_deterministic() {
        let e = ep();
        let path = BTreeMap::from([("id".to_owned(), "42".to_owned())]);
        let q = BTreeMap::new();
        let g = Generator { seed: 1, resource: "/api/items/42", path: &path, query: &q, array_len: 3 };
        let a = g.value(&e.response, "$");
        assert_eq!(a, g.value(&e.response, "$"));
        assert_eq!(a["id"], json!(42));
        assert!(a["price"].is_f64());
        assert_eq!(a["tags"].as_array().unwrap().len(), 3);
        assert_eq!(a["q"], Value::Null);
        let other = Generator { seed: 2, ..g };
        assert_ne!(a["price"], other.value(&e.response, "$")["price"]);
    }

    #[test]
    fn drift_mutations() {
        let mut v = json!({"price": 3.5, "items": [{"price": 1}]});
        apply_drift(&mut v, &DriftKind::ChangeType { field: "price".into() });
        assert_eq!(v, json!({"price": "3.5", "items": [{"price": "1"}]}));
        apply_drift(&mut v, &DriftKind::RemoveField { field: "price".into() });
        assert_eq!(v, json!({"items": [{}]}));
        apply_drift(&mut v, &DriftKind::AddField { field: "badge".into() });
        assert_eq!(v["badge"], "new");
    }

    #[test]
    fn cookie_auth_accepts_among_other_cookies() {
        let a = SiteAuth { kind: AuthKind::Cookie, name: Some("session_id".into()), secret: "s".into() };
        let h = BTreeMap::from([("cookie".to_owned(), "theme=dark; session_id=s".to_owned())]);
        assert!(a.accepts(&h, "s"));
        assert!(!a.accepts(&h, "t"));
    }
}
