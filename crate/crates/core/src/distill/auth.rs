use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::CaptureEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthKind {
    None,
    Cookie,
    Bearer,
    ApiKeyHeader,
}

impl AuthKind {
    fn precedence(self) -> u8 {
        match self {
            AuthKind::Bearer => 3,
            AuthKind::ApiKeyHeader => 2,
            AuthKind::Cookie => 1,
            AuthKind::None => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AuthKind::None => "none",
            AuthKind::Cookie => "cookie",
            AuthKind::Bearer => "bearer",
            AuthKind::ApiKeyHeader => "api-key-header",
        }
    }
}

/// How an endpoint authenticates. Never carries the credential itself; the
/// secret lives in the local [`Vault`] under `value_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthDescriptor {
    pub kind: AuthKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_ref: Option<String>,
}

impl AuthDescriptor {
    pub fn none() -> Self {
        Self { kind: AuthKind::None, location: None, value_ref: None }
    }

    pub fn is_none(&self) -> bool {
        self.kind == AuthKind::None
    }

    /// Vault key for this descriptor on `domain`. Derived from the kind and
    /// location, so an agent holding its own credentials can apply a
    /// descriptor published without a `value_ref`.
    pub fn vault_key(&self, domain: &str) -> Option<String> {
        if self.is_none() {
            return None;
        }
        Some(self.value_ref.clone().unwrap_or_else(|| derive_vault_key(domain, self)))
    }

    pub fn without_ref(&self) -> Self {
        Self { value_ref: None, ..self.clone() }
    }

    pub fn stronger_than(&self, other: &AuthDescriptor) -> bool {
        self.kind.precedence() > other.kind.precedence()
    }
}

fn derive_vault_key(domain: &str, d: &AuthDescriptor) -> String {
    format!("{domain}#{}#{}", d.kind.as_str(), d.location.as_deref().unwrap_or_default())
}

/// Local credential store. One writer at a time; callers share it behind a
/// mutex.
#[derive(Debug, Default, Clone)]
pub struct Vault {
    path: Option<PathBuf>,
    secrets: BTreeMap<String, String>,
}

impl Vault {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let secrets = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        Ok(Self { path: Some(path), secrets })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.secrets.get(key).map(String::as_str)
    }

    pub fn put(&mut self, key: impl Into<String>, secret: impl Into<String>) -> io::Result<()> {
        self.secrets.insert(key.into(), secret.into());
        self.save()
    }

    pub fn remove(&mut self, key: &str) -> io::Result<()> {
        self.secrets.remove(key);
        self.save()
    }

    pub fn secrets(&self) -> impl Iterator<Item = &str> {
        self.secrets.values().map(String::as_str)
    }

    fn save(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let bytes = serde_json::to_vec_pretty(&self.secrets).expect("vault serializes");
        write_private(path, &bytes)
    }
}

/// Writes `bytes` to `path` via a temp file, owner-only permissions on unix.
pub(crate) fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&tmp, std::fs::Permissions::from_mode(0o600))?;
    }
    std::fs::rename(&tmp, path)
}

const SESSION_MARKERS: &[&str] = &["session", "sess", "sid", "auth", "token", "jwt", "login"];

fn session_cookie(header: &str) -> Option<(String, String)> {
    header.split(';').find_map(|pair| {
        let (name, value) = pair.trim().split_once('=')?;
        let lower = name.to_ascii_lowercase();
        SESSION_MARKERS
            .iter()
            .any(|m| lower.contains(m))
            .then(|| (name.trim().to_owned(), value.trim().to_owned()))
    })
}

fn is_api_key_header(name: &str) -> bool {
    name.starts_with("x-") && (name.ends_with("-key") || name == "x-apikey")
}

/// Recognizes the credential an entry carries and stores it in `vault`.
///
/// Precedence: bearer token, then a custom `X-*-Key` header, then a
/// session-like cookie.
pub fn extract_auth(entry: &CaptureEntry, vault: &mut Vault) -> io::Result<AuthDescriptor> {
    let domain = entry.host().to_owned();
    let mut found: Option<(AuthDescriptor, String)> = None;
    if let Some(token) = entry
        .header("authorization")
        .and_then(|v| v.strip_prefix("Bearer ").or_else(|| v.strip_prefix("bearer ")))
    {
        found = Some((
            AuthDescriptor { kind: AuthKind::Bearer, location: Some("Authorization".into()), value_ref: None },
            token.trim().to_owned(),
        ));
    }
    if found.is_none() {
        if let Some((name, value)) = entry.request_headers.iter().find(|(k, _)| is_api_key_header(k)) {
            found = Some((
                AuthDescriptor { kind: AuthKind::ApiKeyHeader, location: Some(name.clone()), value_ref: None },
                value.clone(),
            ));
        }
    }
    if found.is_none() {
        if let Some((name, value)) = entry.header("cookie").and_then(session_cookie) {
            found = Some((
                AuthDescriptor { kind: AuthKind::Cookie, location: Some(name), value_ref: None },
                value,
            ));
        }
    }
    match found {
        None => Ok(AuthDescriptor::none()),
        Some((mut d, secret)) => {
            let key = derive_vault_key(&domain, &d);
            vault.put(key.clone(), secret)?;
            d.value_ref = Some(key);
            Ok(d)
        }
    }
}
