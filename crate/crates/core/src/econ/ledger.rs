use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Micros;
use crate::clock::Timestamp;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger entries must have a positive amount")]
    ZeroAmount,
    #[error("tier1 charges of {charged} are not matched by payouts of {paid}")]
    Unbalanced { charged: u64, paid: u64 },
    #[error("corrupt ledger line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Tier1,
    Tier2,
    Tier3,
    Payout,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Tier1 => "tier1",
            EntryKind::Tier2 => "tier2",
            EntryKind::Tier3 => "tier3",
            EntryKind::Payout => "payout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u64,
    /// Entries written in one atomic append share a batch number.
    pub batch: u64,
    pub timestamp: Timestamp,
    pub kind: EntryKind,
    pub payer: String,
    pub payee: String,
    pub amount: Micros,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEntry {
    pub timestamp: Timestamp,
    pub kind: EntryKind,
    pub payer: String,
    pub payee: String,
    pub amount: Micros,
    pub reference: String,
}

impl NewEntry {
    pub fn new(
        timestamp: Timestamp,
        kind: EntryKind,
        payer: impl Into<String>,
        payee: impl Into<String>,
        amount: Micros,
        reference: impl Into<String>,
    ) -> Self {
        NewEntry {
            timestamp,
            kind,
            payer: payer.into(),
            payee: payee.into(),
            amount,
            reference: reference.into(),
        }
    }
}

struct Inner {
    file: Option<File>,
    entries: Vec<LedgerEntry>,
}

/// Append-only ledger backed by a JSON-lines file. Each batch is written with
/// a single `write` and fsync'd, so a crash leaves at most a torn last line,
/// which is discarded on reopen.
pub struct Ledger {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger { path: None, inner: Mutex::new(Inner { file: None, entries: Vec::new() }) }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut entries = Vec::new();
        let mut good_len: u64 = 0;
        if path.exists() {
            let raw = std::fs::read(&path)?;
            let mut reader = BufReader::new(&raw[..]);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    break; // torn tail
                }
                let text = line.trim();
                if !text.is_empty() {
                    let e: LedgerEntry = serde_json::from_str(text)
                        .map_err(|e| LedgerError::Corrupt { line: n, reason: e.to_string() })?;
                    entries.push(e);
                }
                good_len += read as u64;
            }
        }
        let entries = drop_unbalanced_tail(entries);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() != good_len {
            // rewrite without the torn or unbalanced tail
            let mut body = String::new();
            for e in &entries {
                body.push_str(&serde_json::to_string(e).expect("ledger entry serializes"));
                body.push('\n');
            }
            crate::distill::write_private(&path, body.as_bytes())?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Ledger { path: Some(path), inner: Mutex::new(Inner { file: Some(file), entries }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, entry: NewEntry) -> Result<LedgerEntry, LedgerError> {
        Ok(self.append_batch(vec![entry])?.remove(0))
    }

    /// Appends all entries or none. Tier1 charges in the batch must be
    /// matched exactly by payouts in the same batch.
    pub fn append_batch(&self, batch: Vec<NewEntry>) -> Result<Vec<LedgerEntry>, LedgerError> {
        if batch.iter().any(|e| e.amount.is_zero()) {
            return Err(LedgerError::ZeroAmount);
        }
        let charged: u64 = batch.iter().filter(|e| e.kind == EntryKind::Tier1).map(|e| e.amount.0).sum();
        let paid: u64 = batch.iter().filter(|e| e.kind == EntryKind::Payout).map(|e| e.amount.0).sum();
        if charged > 0 && charged != paid {
            return Err(LedgerError::Unbalanced { charged, paid });
        }
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let next_id = inner.entries.last().map(|e| e.id + 1).unwrap_or(1);
        let batch_no = inner.entries.last().map(|e| e.batch + 1).unwrap_or(1);
        let out: Vec<LedgerEntry> = batch
            .into_iter()
            .enumerate()
            .map(|(i, e)| LedgerEntry {
                id: next_id + i as u64,
                batch: batch_no,
                timestamp: e.timestamp,
                kind: e.kind,
                payer: e.payer,
                payee: e.payee,
                amount: e.amount,
                reference: e.reference,
            })
            .collect();
        if let Some(file) = inner.file.as_mut() {
            let mut buf = String::new();
            for e in &out {
                buf.push_str(&serde_json::to_string(e).expect("ledger entry serializes"));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes())?;
            file.sync_data()?;
        }
        inner.entries.extend(out.iter().cloned());
        Ok(out)
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).entries.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Net position per party: received minus paid.
    pub fn balances(&self) -> BTreeMap<String, i128> {
        let mut out: BTreeMap<String, i128> = BTreeMap::new();
        for e in self.inner.lock().unwrap_or_else(|e| e.into_inner()).entries.iter() {
            *out.entry(e.payer.clone()).or_default() -= e.amount.0 as i128;
            *out.entry(e.payee.clone()).or_default() += e.amount.0 as i128;
        }
        out
    }

    /// Checks that every batch containing tier1 charges is balanced by its payouts.
    pub fn check_conservation(&self) -> Result<(), LedgerError> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut per_batch: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        for e in &inner.entries {
            let slot = per_batch.entry(e.batch).or_default();
            match e.kind {
                EntryKind::Tier1 => slot.0 += e.amount.0,
                EntryKind::Payout => slot.1 += e.amount.0,
                _ => {}
            }
        }
        for (charged, paid) in per_batch.values() {
            if *charged > 0 && charged != paid {
                return Err(LedgerError::Unbalanced { charged: *charged, paid: *paid });
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger").field("path", &self.path).field("len", &self.len()).finish()
    }
}

fn drop_unbalanced_tail(mut entries: Vec<LedgerEntry>) -> Vec<LedgerEntry> {
    let Some(last_batch) = entries.last().map(|e| e.batch) else {
        return entries;
    };
    let tail = entries.iter().filter(|e| e.batch == last_batch);
    let (mut charged, mut paid) = (0u64, 0u64);
    for e in tail {
        match e.kind {
            EntryKind::Tier1 => charged += e.amount.0,
            EntryKind::Payout => paid += e.amount.0,
            _ => {}
        }
    }
    if charged > 0 && charged != paid {
        entries.retain(|e| e.batch != last_batch);
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(kind: EntryKind, payer: &str, payee: &str, amount: u64) -> NewEntry {
        NewEntry::new(0, kind, payer, payee, Micros(amount), "sk_x")
    }

    #[test]
    fn batch_must_balance() {
        let l = Ledger::in_memory();
        let err = l.append_batch(vec![e(EntryKind::Tier1, "a", "m", 10), e(EntryKind::Payout, "m", "c", 9)]);
        assert!(matches!(err, Err(LedgerError::Unbalanced { .. })));
        assert!(l.is_empty());
        l.append_batch(vec![e(EntryKind::Tier1, "a", "m", 10), e(EntryKind::Payout, "m", "c", 10)]).unwrap();
        assert_eq!(l.balances()["m"], 0);
        assert_eq!(l.balances()["c"], 10);
        assert!(matches!(l.append(e(EntryKind::Tier3, "a", "p", 0)), Err(LedgerError::ZeroAmount)));
    }

    #[test]
    fn persists_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        {
            let l = Ledger::open(&path).unwrap();
            l.append(e(EntryKind::Tier3, "a", "p", 5)).unwrap();
            l.append_batch(vec![e(EntryKind::Tier1, "a", "m", 10), e(EntryKind::Payout, "m", "c", 10)]).unwrap();
        }
        // simulate a crash mid-write
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":4,\"batch\"").unwrap();
        drop(f);
        let l = Ledger::open(&path).unwrap();
        assert_eq!(l.len(), 3);
        l.check_conservation().unwrap();
        let next = l.append(e(EntryKind::Tier3, "a", "p", 1)).unwrap();
        assert_eq!(next.id, 4);
        drop(l);
        assert_eq!(Ledger::open(&path).unwrap().len(), 4);
    }
}
