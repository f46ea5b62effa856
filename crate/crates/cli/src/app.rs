//! Wiring shared by the commands: clock, wallet, registry client and agent.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use routegraph::distill::Vault;
use routegraph::econ::{rediscovery_cost, Ledger};
use routegraph::http::{HttpRegistryClient, RegistryService, ServiceConfig, Transport};
use routegraph::index::Registry;
use routegraph::orchestrator::{HttpOnlyWeb, InstalledSkills, Orchestrator, OrchestratorConfig, RouteCache, Web};
use routegraph::pay402::{Keyring, MockAdapter, PaymentGate, Wallet};
use routegraph::simnet::{load_sites, SimWeb};
use routegraph::{Clock, Micros, SimClock, SystemClock, Timestamp};
use url::Url;

use crate::config::{CliConfig, RegistryLocation};
use crate::error::CliError;
use crate::net::UreqTransport;

const LOCAL_BASE: &str = "http://registry.local/";

/// Per-invocation runtime: the clock and the resolved settings.
pub struct App {
    pub cfg: CliConfig,
    /// Fixed start time from `--now`; the clock is then virtual.
    pub now: Option<Timestamp>,
    pub seed: Option<u64>,
}

/// A registry directory opened in-process.
pub struct LocalRegistry {
    pub dir: PathBuf,
    pub service: Arc<RegistryService>,
    pub adapter: Arc<MockAdapter>,
    pub ledger: Arc<Ledger>,
}

impl LocalRegistry {
    pub fn registry(&self) -> &Registry {
        &self.service.registry
    }
}

pub fn ledger_path(dir: &Path) -> PathBuf {
    dir.join("ledger.jsonl")
}

fn wallets_dir(dir: &Path) -> PathBuf {
    dir.join("wallets")
}

/// Wallets in `<registry>/wallets/` are the payers the mock settlement
/// network accepts.
fn load_keyring(dir: &Path) -> Result<Keyring, CliError> {
    let mut ring = Keyring::new();
    let Ok(rd) = std::fs::read_dir(wallets_dir(dir)) else {
        return Ok(ring);
    };
    let mut paths: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths.iter().filter(|p| p.extension().is_some_and(|x| x == "json")) {
        ring.add(&Wallet::load(p).map_err(|e| CliError::Input(format!("wallet {}: {e}", p.display())))?);
    }
    Ok(ring)
}

impl App {
    pub fn clock(&self) -> Arc<dyn Clock> {
        match self.now {
            Some(t) => Arc::new(SimClock::new(t)),
            None => Arc::new(SystemClock),
        }
    }

    pub fn sim_clock(&self) -> SimClock {
        SimClock::new(self.now.unwrap_or_else(|| SystemClock.now()))
    }

    pub fn service_config(&self) -> ServiceConfig {
        ServiceConfig { fees: self.cfg.fees, cost_model: self.cfg.cost_model, ..ServiceConfig::default() }
    }

    /// Paying more than a browser rediscovery would cost is never worth it.
    pub fn default_budget(&self) -> Micros {
        rediscovery_cost(&self.cfg.cost_model)
    }

    pub fn wallet(&self) -> Result<Wallet, CliError> {
        let path = &self.cfg.wallet;
        if path.exists() {
            return Wallet::load(path).map_err(|e| CliError::Input(format!("wallet {}: {e}", path.display())));
        }
        let w = Wallet::generate(self.cfg.agent_id.clone());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        w.save(path)?;
        Ok(w)
    }

    pub fn local_dir(&self) -> Result<&Path, CliError> {
        match &self.cfg.registry {
            RegistryLocation::Local(d) => Ok(d),
            RegistryLocation::Remote(u) => {
                Err(CliError::Usage(format!("this command needs a local registry directory, not {u}")))
            }
        }
    }

    pub fn open_local(&self, clock: Arc<dyn Clock>) -> Result<LocalRegistry, CliError> {
        let dir = self.local_dir()?.to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let registry = Arc::new(Registry::open(&dir)?);
        let ledger = Arc::new(Ledger::open(ledger_path(&dir))?);
        let adapter = Arc::new(MockAdapter::new(load_keyring(&dir)?));
        let mut gate = PaymentGate::new(adapter.clone());
        if let Some(seed) = self.seed {
            gate = gate.with_seeded_nonces(seed);
        }
        let service = Arc::new(RegistryService::new(registry, ledger.clone(), Arc::new(gate), clock, self.service_config()));
        Ok(LocalRegistry { dir, service, adapter, ledger })
    }

    /// Adds the wallet to the local settlement network so its proofs verify.
    pub fn enroll(&self, local: &LocalRegistry, w: &Wallet) -> Result<(), CliError> {
        local.adapter.register(w);
        let path = wallets_dir(&local.dir).join(format!("{}.json", w.payer));
        if !path.exists() {
            std::fs::create_dir_all(wallets_dir(&local.dir))?;
            w.save(&path)?;
        }
        Ok(())
    }

    /// Client for the configured registry. A local directory is served
    /// in-process through the same HTTP surface a remote one exposes.
    pub fn client(&self, clock: Arc<dyn Clock>) -> Result<(HttpRegistryClient, Option<LocalRegistry>), CliError> {
        let wallet = self.wallet()?;
        match &self.cfg.registry {
            RegistryLocation::Remote(url) => {
                let t: Arc<dyn Transport> = Arc::new(UreqTransport::default());
                Ok((HttpRegistryClient::new(t, url.clone(), wallet), None))
            }
            RegistryLocation::Local(_) => {
                let local = self.open_local(clock)?;
                self.enroll(&local, &wallet)?;
                let base = Url::parse(LOCAL_BASE).expect("static url");
                let client = HttpRegistryClient::new(local.service.clone(), base, wallet);
                Ok((client, Some(local)))
            }
        }
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        let mut oc = OrchestratorConfig::new(self.cfg.agent_id.clone());
        oc.cost_model = self.cfg.cost_model;
        oc.fee_estimate = self.cfg.fees;
        oc.max_tier2 = self.cfg.max_tier2;
        oc
    }

    /// The agent, executing over real HTTP or against simulated sites.
    pub fn orchestrator(
        &self,
        sites: Option<&Path>,
    ) -> Result<(Orchestrator, Option<LocalRegistry>), CliError> {
        let sim = match sites {
            Some(p) => Some(self.sim_web(p)?),
            None => None,
        };
        let clock: Arc<dyn Clock> = match &sim {
            Some(w) => Arc::new(w.clock().clone()),
            None => self.clock(),
        };
        let (client, local) = self.client(clock.clone())?;
        let web: Arc<dyn Web> = match sim {
            Some(w) => match &local {
                Some(l) => Arc::new(w.with_settlement(l.adapter.clone(), l.ledger.clone())),
                None => Arc::new(w),
            },
            None => Arc::new(HttpOnlyWeb(UreqTransport::default())),
        };
        let wallet = self.wallet()?;
        let vault = Vault::open(&self.cfg.vault)?;
        let cache = RouteCache::open(&self.cfg.cache)?;
        let installed = InstalledSkills::open(&self.cfg.skills)?;
        let orch = Orchestrator::new(
            self.orchestrator_config(),
            clock,
            Arc::new(client),
            web,
            cache,
            installed,
            vault,
            wallet,
        );
        Ok((orch, local))
    }

    pub fn sim_web(&self, sites: &Path) -> Result<SimWeb, CliError> {
        let text = std::fs::read_to_string(sites)
            .map_err(|e| CliError::Input(format!("sites {}: {e}", sites.display())))?;
        let sites = load_sites(&text).map_err(|e| CliError::Input(format!("sites {}: {e}", sites.display())))?;
        Ok(SimWeb::new(sites, self.sim_clock()))
    }
}
