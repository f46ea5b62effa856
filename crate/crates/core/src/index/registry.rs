use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::embed::{cosine, embed_text};
use super::record::{
    lifecycle_transition, record_id, EndpointHealth, Lifecycle, LifecycleEvent, SkillRecord, VerificationStatus,
};
use super::validate::{validate_for_publish, ValidationReport};
use super::IndexError;
use crate::canonical_json;
use crate::clock::Timestamp;
use crate::distill::{merge_skills, MergeDelta, SkillPackage};
use crate::econ::{delta_score, DeltaCommit, DeltaParams, Micros, RouteSnapshot};
use crate::par::{self, Execution};
use crate::trust::{Outcome, ReliabilityStats, VerificationConfig};

pub const DEPRECATED_PENALTY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    pub w_sim: f64,
    pub w_rel: f64,
    pub w_fresh: f64,
    pub w_ver: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        ScoringWeights { w_sim: 0.40, w_rel: 0.30, w_fresh: 0.15, w_ver: 0.15 }
    }
}

impl ScoringWeights {
    pub fn validate(&self) -> Result<(), IndexError> {
        let w = [self.w_sim, self.w_rel, self.w_fresh, self.w_ver];
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(IndexError::InvalidArgument(format!("weights must be non-negative and sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub similarity: f64,
    pub reliability: f64,
    pub freshness: f64,
    pub verification: f64,
}

impl Components {
    pub fn composite(&self, w: &ScoringWeights) -> f64 {
        w.w_sim * self.similarity + w.w_rel * self.reliability + w.w_fresh * self.freshness + w.w_ver * self.verification
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResult {
    pub id: String,
    pub domain: String,
    /// Exactly the weighted sum of `components`.
    pub composite: f64,
    /// `composite` after the lifecycle penalty; results are ordered by this.
    pub rank_score: f64,
    pub components: Components,
    pub lifecycle: Lifecycle,
}

pub fn score_record(rec: &SkillRecord, query: &[f32], w: &ScoringWeights, now: Timestamp) -> ScoredResult {
    let components = Components {
        similarity: cosine(query, &rec.embedding).max(0.0),
        reliability: rec.reliability.clamp(0.0, 1.0),
        freshness: rec.freshness(now),
        verification: rec.verification_status.score(),
    };
    let composite = components.composite(w);
    let penalty = if rec.lifecycle == Lifecycle::Deprecated { DEPRECATED_PENALTY } else { 1.0 };
    ScoredResult {
        id: rec.id.clone(),
        domain: rec.domain.clone(),
        composite,
        rank_score: composite * penalty,
        components,
        lifecycle: rec.lifecycle,
    }
}

/// One line of the registry event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RegistryEvent {
    Published {
        at: Timestamp,
        record_id: String,
        domain: String,
        contributor: String,
        merged: bool,
        changed_lines: usize,
        delta_score: f64,
    },
    Lifecycle {
        at: Timestamp,
        record_id: String,
        event: LifecycleEvent,
        from: Lifecycle,
        to: Lifecycle,
        reason: String,
    },
    Verification {
        at: Timestamp,
        record_id: String,
        endpoint: String,
        outcome: String,
        drift: String,
    },
    Execution {
        at: Timestamp,
        record_id: String,
        endpoint: String,
        outcome: Outcome,
    },
}

#[derive(Debug, Clone)]
pub struct PublishOutcome {
    pub record: Arc<SkillRecord>,
    pub merged: bool,
    pub delta: MergeDelta,
    pub delta_score: f64,
}

type Records = BTreeMap<String, Arc<SkillRecord>>;

struct Writer {
    log: Option<File>,
    events: Vec<RegistryEvent>,
}

/// Readers get a consistent snapshot without blocking; writers are
/// serialized and swap in a new snapshot when done.
pub struct Registry {
    dir: Option<PathBuf>,
    state: RwLock<Arc<Records>>,
    writer: Mutex<Writer>,
    delta: DeltaParams,
    deprecate_after: u64,
    exec: Execution,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("dir", &self.dir).field("records", &self.len()).finish()
    }
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry {
            dir: None,
            state: RwLock::new(Arc::new(Records::new())),
            writer: Mutex::new(Writer { log: None, events: Vec::new() }),
            delta: DeltaParams::default(),
            deprecate_after: VerificationConfig::default().deprecate_after,
            exec: Execution::default(),
        }
    }

    /// Loads `dir/records/*.json` and appends to `dir/events.jsonl`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = dir.as_ref().to_path_buf();
        let rec_dir = dir.join("records");
        std::fs::create_dir_all(&rec_dir)?;
        let mut records = Records::new();
        for entry in std::fs::read_dir(&rec_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let rec: SkillRecord = serde_json::from_slice(&std::fs::read(&path)?)?;
            records.insert(rec.id.clone(), Arc::new(rec));
        }
        let log_path = dir.join("events.jsonl");
        let mut events = Vec::new();
        if log_path.exists() {
            for line in BufReader::new(File::open(&log_path)?).lines() {
                let line = line?;
                // a torn final line is skipped rather than failing the open
                if let Ok(ev) = serde_json::from_str(&line) {
                    events.push(ev);
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Registry {
            dir: Some(dir),
            state: RwLock::new(Arc::new(records)),
            writer: Mutex::new(Writer { log: Some(log), events }),
            ..Registry::in_memory()
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_delta_params(mut self, p: DeltaParams) -> Self {
        self.delta = p;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Records> {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn records(&self) -> Vec<Arc<SkillRecord>> {
        self.snapshot().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Arc<SkillRecord>> {
        self.snapshot().get(id).cloned()
    }

    pub fn get_by_domain(&self, domain: &str) -> Option<Arc<SkillRecord>> {
        self.get(&record_id(domain))
    }

    pub fn events(&self) -> Vec<RegistryEvent> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner()).events.clone()
    }

    fn persist(&self, rec: &SkillRecord) -> Result<(), IndexError> {
        if let Some(dir) = &self.dir {
            let path = dir.join("records").join(format!("{}.json", rec.id));
            crate::write_atomic(&path, canonical_json(rec).as_bytes())?;
        }
        Ok(())
    }

    fn log(w: &mut Writer, ev: RegistryEvent) -> Result<(), IndexError> {
        if let Some(f) = w.log.as_mut() {
            let mut line = canonical_json(&ev);
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        w.events.push(ev);
        Ok(())
    }

    pub fn log_event(&self, ev: RegistryEvent) -> Result<(), IndexError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        Self::log(&mut w, ev)
    }

    fn install(&self, rec: SkillRecord) -> Result<Arc<SkillRecord>, IndexError> {
        self.persist(&rec)?;
        let rec = Arc::new(rec);
        let mut guard = self.state.write().unwrap_or_else(|e| e.into_inner());
        let mut next = (**guard).clone();
        next.insert(rec.id.clone(), rec.clone());
        *guard = Arc::new(next);
        Ok(rec)
    }

    /// Creates a record for a new domain or merges into the existing one,
    /// crediting the contributor with the delta score of the change.
    pub fn publish(
        &self,
        pkg: &SkillPackage,
        report: &ValidationReport,
        now: Timestamp,
    ) -> Result<PublishOutcome, IndexError> {
        if !report.passed {
            return Err(IndexError::ValidationFailed(vec!["validation report did not pass".into()]));
        }
        validate_for_publish(pkg)?;
        let mut incoming = pkg.publishable();
        incoming.normalize();

        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let id = record_id(&incoming.domain);
        let existing = self.get(&id);
        let (mut rec, before, delta, merged) = match &existing {
            Some(rec) => {
                let m = merge_skills(&rec.package(), &incoming)?;
                let mut next = (**rec).clone();
                next.endpoints = m.package.endpoints;
                next.manifest_text = m.package.manifest_text;
                (next, rec.snapshot(), m.delta, true)
            }
            None => {
                let delta = MergeDelta {
                    contributor: incoming.contributor.clone(),
                    endpoints: incoming
                        .endpoints
                        .iter()
                        .map(|e| crate::distill::EndpointDelta {
                            key: e.key(),
                            new_endpoint: true,
                            added_lines: e.schema_lines(),
                            removed_lines: Vec::new(),
                        })
                        .collect(),
                };
                let rec = SkillRecord {
                    id: id.clone(),
                    domain: incoming.domain.clone(),
                    endpoints: incoming.endpoints.clone(),
                    manifest_text: incoming.manifest_text.clone(),
                    embedding: Vec::new(),
                    reliability: ReliabilityStats::default().reliability(),
                    stats: ReliabilityStats::default(),
                    endpoint_health: BTreeMap::new(),
                    last_verified_at: now,
                    verification_status: VerificationStatus::Unverified,
                    lifecycle: Lifecycle::Active,
                    attributions: BTreeMap::new(),
                    commits: Vec::new(),
                    tier2_opt_in: false,
                    tier2_fee: None,
                    installs: Vec::new(),
                    created_at: now,
                    updated_at: now,
                    caveats: Vec::new(),
                };
                (rec, RouteSnapshot::default(), delta, false)
            }
        };
        rec.embedding = embed_text(&rec.manifest_text);
        rec.updated_at = now;
        for e in &rec.endpoints {
            rec.endpoint_health.entry(e.key().0).or_insert_with(|| EndpointHealth::new(now));
        }
        if !report.caveats.is_empty() {
            rec.caveats = report.caveats.clone();
        }
        if let Some(live) = &report.live {
            for k in &live.verified {
                if let Some(h) = rec.endpoint_health.get_mut(k) {
                    h.last_verified_at = now;
                }
            }
            if !live.verified.is_empty() && rec.verification_status == VerificationStatus::Unverified {
                rec.verification_status = VerificationStatus::Verified;
                rec.last_verified_at = now;
            }
        }
        let score = if delta.is_empty() { 0.0 } else { delta_score(&before, &rec.snapshot(), &self.delta) };
        if !delta.is_empty() {
            rec.commits.push(DeltaCommit {
                contributor: incoming.contributor.clone(),
                skill_id: id.clone(),
                score,
                changed_lines: delta.changed_lines(),
                at: now,
            });
            if score > 0.0 {
                *rec.attributions.entry(incoming.contributor.clone()).or_default() += score;
            }
        }
        let changed_lines = delta.changed_lines();
        let record = self.install(rec)?;
        Self::log(
            &mut w,
            RegistryEvent::Published {
                at: now,
                record_id: id,
                domain: incoming.domain.clone(),
                contributor: incoming.contributor.clone(),
                merged,
                changed_lines,
                delta_score: score,
            },
        )?;
        Ok(PublishOutcome { record, merged, delta, delta_score: score })
    }

    /// Applies `f` to a copy of the record and swaps it in.
    pub fn update<R>(&self, id: &str, f: impl FnOnce(&mut SkillRecord) -> R) -> Result<R, IndexError> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let cur = self.get(id).ok_or_else(|| IndexError::NotFound(id.to_owned()))?;
        let mut rec = (*cur).clone();
        let out = f(&mut rec);
        self.install(rec)?;
        Ok(out)
    }

    /// Returns `(from, to)`; only real transitions are logged.
    pub fn apply_lifecycle(
        &self,
        id: &str,
        event: LifecycleEvent,
        now: Timestamp,
        reason: &str,
    ) -> Result<(Lifecycle, Lifecycle), IndexError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let cur = self.get(id).ok_or_else(|| IndexError::NotFound(id.to_owned()))?;
        let from = cur.lifecycle;
        let to = lifecycle_transition(from, event);
        if from != to {
            let mut rec = (*cur).clone();
            rec.lifecycle = to;
            rec.updated_at = now;
            self.install(rec)?;
            Self::log(
                &mut w,
                RegistryEvent::Lifecycle { at: now, record_id: id.to_owned(), event, from, to, reason: reason.to_owned() },
            )?;
        }
        Ok((from, to))
    }

    /// Folds an execution outcome reported by an agent into reliability, and
    /// deprecates the record after too many consecutive failures.
    pub fn record_execution(
        &self,
        id: &str,
        endpoint: &str,
        outcome: Outcome,
        now: Timestamp,
    ) -> Result<f64, IndexError> {
        let (rel, streak) = self.update(id, |rec| {
            rec.stats.record(outcome, now);
            rec.refresh_reliability();
            let h = rec.endpoint_health.entry(endpoint.to_owned()).or_insert_with(|| EndpointHealth::new(now));
            h.stats.record(outcome, now);
            (rec.reliability, h.stats.consecutive_failures)
        })?;
        self.log_event(RegistryEvent::Execution {
            at: now,
            record_id: id.to_owned(),
            endpoint: endpoint.to_owned(),
            outcome,
        })?;
        if streak >= self.deprecate_after {
            self.apply_lifecycle(id, LifecycleEvent::LowReliabilityWarning, now, "consecutive execution failures")?;
        }
        Ok(rel)
    }

    pub fn record_install(&self, id: &str, now: Timestamp) -> Result<(), IndexError> {
        self.update(id, |rec| {
            rec.installs.retain(|t| now - *t <= 30 * crate::clock::MS_PER_DAY);
            rec.installs.push(now);
        })
    }

    pub fn set_tier2(&self, id: &str, fee: Option<Micros>) -> Result<(), IndexError> {
        self.update(id, |rec| {
            rec.tier2_opt_in = fee.is_some();
            rec.tier2_fee = fee;
        })
    }

    pub fn search(
        &self,
        query: &str,
        k: usize,
        weights: &ScoringWeights,
        now: Timestamp,
    ) -> Result<Vec<ScoredResult>, IndexError> {
        self.search_filtered(query, k, weights, now, None)
    }

    /// Ranked top-`k`. Disabled records never appear; deprecated ones are
    /// ranked by half their composite; ties go to the smaller id.
    pub fn search_filtered(
        &self,
        query: &str,
        k: usize,
        weights: &ScoringWeights,
        now: Timestamp,
        domain: Option<&str>,
    ) -> Result<Vec<ScoredResult>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidArgument("k must be at least 1".into()));
        }
        weights.validate()?;
        let snap = self.snapshot();
        let candidates: Vec<&Arc<SkillRecord>> = snap
            .values()
            .filter(|r| r.lifecycle != Lifecycle::Disabled)
            .filter(|r| domain.is_none_or(|d| r.domain.eq_ignore_ascii_case(d)))
            .collect();
        if candidates.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let q = embed_text(query);
        let mut scored = par::map(self.exec, &candidates, |r| score_record(r, &q, weights, now));
        sort_ranked(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }
}

pub(crate) fn sort_ranked(v: &mut [ScoredResult]) {
    v.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score).then_with(|| a.id.cmp(&b.id)));
}
