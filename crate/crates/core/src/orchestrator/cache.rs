use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::clock::{Timestamp, MS_PER_HOUR};
use crate::distill::SkillPackage;
use crate::econ::Micros;

pub const DEFAULT_TTL_MS: i64 = 24 * MS_PER_HOUR;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteCacheEntry {
    pub intent_key: String,
    pub skill_id: String,
    pub endpoint: String,
    pub resolved_at: Timestamp,
    pub ttl_ms: i64,
}

impl RouteCacheEntry {
    pub fn live_at(&self, now: Timestamp) -> bool {
        now - self.resolved_at < self.ttl_ms
    }
}

/// Intent -> (skill, endpoint) bindings, persisted as one JSON file.
#[derive(Debug)]
pub struct RouteCache {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, RouteCacheEntry>>,
}

impl RouteCache {
    pub fn in_memory() -> Self {
        RouteCache { path: None, entries: Mutex::default() }
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            serde_json::from_slice(&std::fs::read(&path)?).map_err(std::io::Error::other)?
        } else {
            BTreeMap::new()
        };
        Ok(RouteCache { path: Some(path), entries: Mutex::new(entries) })
    }

    /// Only entries younger than their TTL are returned.
    pub fn get(&self, key: &str, now: Timestamp) -> Option<RouteCacheEntry> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.get(key).filter(|e| e.live_at(now)).cloned()
    }

    pub fn put(&self, entry: RouteCacheEntry) -> std::io::Result<()> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.insert(entry.intent_key.clone(), entry);
        self.flush(&entries)
    }

    pub fn remove(&self, key: &str) -> std::io::Result<()> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if entries.remove(key).is_some() {
            self.flush(&entries)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flush(&self, entries: &BTreeMap<String, RouteCacheEntry>) -> std::io::Result<()> {
        match &self.path {
            Some(p) => crate::write_atomic(p, crate::canonical_json(entries).as_bytes()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstalledSkill {
    pub record_id: String,
    pub package: SkillPackage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_fee: Option<Micros>,
    pub installed_at: Timestamp,
}

/// Skills this agent has installed or discovered, one JSON file per record.
#[derive(Debug)]
pub struct InstalledSkills {
    dir: Option<PathBuf>,
    skills: Mutex<BTreeMap<String, InstalledSkill>>,
}

impl InstalledSkills {
    pub fn in_memory() -> Self {
        InstalledSkills { dir: None, skills: Mutex::default() }
    }

    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut skills = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.extension().and_then(|e| e.to_str()) == Some("json") {
                let s: InstalledSkill =
                    serde_json::from_slice(&std::fs::read(&p)?).map_err(std::io::Error::other)?;
                skills.insert(s.record_id.clone(), s);
            }
        }
        Ok(InstalledSkills { dir: Some(dir), skills: Mutex::new(skills) })
    }

    pub fn get(&self, record_id: &str) -> Option<InstalledSkill> {
        self.skills.lock().unwrap_or_else(|e| e.into_inner()).get(record_id).cloned()
    }

    pub fn put(&self, skill: InstalledSkill) -> std::io::Result<()> {
        let mut skills = self.skills.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(dir) = &self.dir {
            // may hold vault references, so keep it private
            crate::distill::write_private(
                &dir.join(format!("{}.json", skill.record_id)),
                crate::canonical_json(&skill).as_bytes(),
            )?;
        }
        skills.insert(skill.record_id.clone(), skill);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.skills.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(at: Timestamp) -> RouteCacheEntry {
        RouteCacheEntry { intent_key: "k".into(), skill_id: "sk".into(), endpoint: "GET /x".into(), resolved_at: at, ttl_ms: DEFAULT_TTL_MS }
    }

    #[test]
    fn ttl_boundary() {
        let c = RouteCache::in_memory();
        c.put(entry(0)).unwrap();
        assert!(c.get("k", 0).is_some());
        assert!(c.get("k", DEFAULT_TTL_MS - 1).is_some());
        assert!(c.get("k", DEFAULT_TTL_MS).is_none());
        assert!(c.get("k", 25 * MS_PER_HOUR).is_none());
    }

    #[test]
    fn survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.json");
        RouteCache::open(&p).unwrap().put(entry(5)).unwrap();
        assert_eq!(RouteCache::open(&p).unwrap().get("k", 10), Some(entry(5)));
    }
}
