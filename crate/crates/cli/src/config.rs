//! Settings resolution: command-line flag, then environment, then the config
//! file, then defaults under the state directory.

use std::path::{Path, PathBuf};

use routegraph::econ::{CostModel, FeeSchedule};
use routegraph::Micros;
use serde::Deserialize;

use crate::error::CliError;

pub const REGISTRY_ENV: &str = "ROUTEGRAPH_REGISTRY";
pub const WALLET_ENV: &str = "ROUTEGRAPH_WALLET";
pub const DEFAULT_HOME: &str = ".routegraph";
pub const DEFAULT_AGENT: &str = "local-agent";

/// Contents of `config.toml`. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub home: Option<PathBuf>,
    pub registry: Option<String>,
    pub wallet: Option<PathBuf>,
    pub vault: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub skills: Option<PathBuf>,
    pub agent_id: Option<String>,
    pub fees: Option<FeeSchedule>,
    pub cost_model: Option<CostModel>,
    pub max_tier2: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryLocation {
    Local(PathBuf),
    Remote(url::Url),
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub registry: RegistryLocation,
    pub wallet: PathBuf,
    pub vault: PathBuf,
    pub cache: PathBuf,
    pub skills: PathBuf,
    pub agent_id: String,
    pub fees: FeeSchedule,
    pub cost_model: CostModel,
    pub max_tier2: Micros,
}

/// `$XDG_CONFIG_HOME/routegraph/config.toml`, else
/// `$HOME/.config/routegraph/config.toml`.
pub fn default_config_path() -> Option<PathBuf> {
    let base = match std::env::var_os("XDG_CONFIG_HOME").filter(|v| !v.is_empty()) {
        Some(x) => PathBuf::from(x),
        None => PathBuf::from(std::env::var_os("HOME")?).join(".config"),
    };
    Some(base.join("routegraph").join("config.toml"))
}

pub fn expand(p: &Path) -> PathBuf {
    let Ok(rest) = p.strip_prefix("~") else {
        return p.to_path_buf();
    };
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(rest),
        None => p.to_path_buf(),
    }
}

pub fn load_file(explicit: Option<&Path>) -> Result<FileConfig, CliError> {
    let path = match explicit {
        Some(p) => expand(p),
        None => match default_config_path() {
            Some(p) if p.exists() => p,
            _ => return Ok(FileConfig::default()),
        },
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}

pub fn parse_registry(raw: &str) -> Result<RegistryLocation, CliError> {
    if raw.starts_with("http://") || raw.starts_with("https://") {
        let mut url = url::Url::parse(raw).map_err(|e| CliError::Usage(format!("registry url {raw}: {e}")))?;
        if !url.path().ends_with('/') {
            url.set_path(&format!("{}/", url.path()));
        }
        return Ok(RegistryLocation::Remote(url));
    }
    Ok(RegistryLocation::Local(expand(Path::new(raw))))
}

impl CliConfig {
    /// `registry` and `wallet` are the flag-or-env values from the command line.
    pub fn resolve(file: FileConfig, registry: Option<&str>, wallet: Option<&Path>) -> Result<Self, CliError> {
        let home = expand(file.home.as_deref().unwrap_or(Path::new(DEFAULT_HOME)));
        let pick = |v: Option<PathBuf>, name: &str| v.map(|p| expand(&p)).unwrap_or_else(|| home.join(name));
        let registry = match registry.map(str::to_owned).or(file.registry) {
            Some(r) => parse_registry(&r)?,
            None => RegistryLocation::Local(home.join("registry")),
        };
        let cost_model = file.cost_model.unwrap_or_default();
        if !cost_model.is_valid() {
            return Err(CliError::Validation("cost_model.p_fail must lie in [0, 1]".into()));
        }
        let defaults = routegraph::http::ServiceConfig::default();
        Ok(CliConfig {
            registry,
            wallet: wallet.map(expand).unwrap_or_else(|| pick(file.wallet, "wallet.json")),
            vault: pick(file.vault, "vault.json"),
            cache: pick(file.cache, "cache.json"),
            skills: pick(file.skills, "skills"),
            agent_id: file.agent_id.unwrap_or_else(|| DEFAULT_AGENT.into()),
            fees: file.fees.unwrap_or(defaults.fees),
            cost_model,
            max_tier2: file.max_tier2.unwrap_or(Micros(10_000)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_kind_follows_scheme() {
        assert!(matches!(parse_registry("https://reg.example/api").unwrap(),
            RegistryLocation::Remote(u) if u.as_str() == "https://reg.example/api/"));
        assert_eq!(parse_registry("data/reg").unwrap(), RegistryLocation::Local("data/reg".into()));
    }

    #[test]
    fn file_values_apply_and_flags_win() {
        let file: FileConfig = toml::from_str(
            "home = \"/srv/rg\"\nregistry = \"/srv/reg\"\n[fees]\nf_search = 2000\nf_install = 9000\n",
        )
        .unwrap();
        let cfg = CliConfig::resolve(file, Some("http://localhost:8402"), None).unwrap();
        assert!(matches!(cfg.registry, RegistryLocation::Remote(_)));
        assert_eq!(cfg.wallet, PathBuf::from("/srv/rg/wallet.json"));
        assert_eq!(cfg.fees.f_search, Micros(2_000));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("registy = \"x\"").is_err());
    }
}
