//! The cross-training cache: (program, schedule, backend) -> legality and
//! execution time. Shared by every rollout worker; persistence is an
//! explicit checkpoint in newline-delimited JSON.

use crate::ir::{serialize_program, Program};
use crate::runtime::BackendTag;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Stable content hash of the canonical program serialization. Equal
/// programs share an id regardless of file names.
pub fn program_id(program: &Program) -> String {
    let mut h = Sha256::new();
    h.update(serialize_program(program).as_bytes());
    format!("{:x}", h.finalize())
}

/// Where measured times were taken. Reusing another machine's wall-clock
/// numbers is unsound, so loading warns on mismatch.
pub fn host_fingerprint() -> String {
    let host = std::fs::read_to_string("/etc/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "unknown".into());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{host}/{cores}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemoKey {
    pub program_id: String,
    pub schedule_key: String,
    pub backend: BackendTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoRecord {
    pub legal: bool,
    /// Present iff legal: minimum time over `runs` executions.
    pub exec_time: Option<f64>,
    pub runs: u32,
    pub host: Option<String>,
}

impl MemoRecord {
    pub fn illegal() -> Self {
        MemoRecord {
            legal: false,
            exec_time: None,
            runs: 0,
            host: None,
        }
    }

    pub fn legal(exec_time: f64, runs: u32, host: Option<String>) -> Self {
        MemoRecord {
            legal: true,
            exec_time: Some(exec_time),
            runs,
            host,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Error)]
pub enum MemoError {
    #[error("record violates the legality/time invariant")]
    InvalidRecord,
    #[error("conflicting legality for {program_id}/{schedule_key}")]
    LegalityConflict {
        program_id: String,
        schedule_key: String,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    program_id: String,
    schedule_key: String,
    backend: String,
    legal: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    exec_time_s: Option<f64>,
    runs: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    host: Option<String>,
}

#[derive(Debug, Default)]
pub struct MemoStore {
    map: Mutex<HashMap<MemoKey, MemoRecord>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl MemoStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> MemoStats {
        MemoStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// A hit bypasses legality checking and execution entirely.
    pub fn lookup(&self, key: &MemoKey) -> Option<MemoRecord> {
        let found = self.map.lock().unwrap().get(key).cloned();
        match &found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Inserting a conflicting legality verdict for an existing key is a
    /// corruption guard error; identical-legality reinserts overwrite the
    /// time (last write wins).
    pub fn insert(&self, key: MemoKey, record: MemoRecord) -> Result<(), MemoError> {
        if record.legal != record.exec_time.is_some() {
            return Err(MemoError::InvalidRecord);
        }
        let mut map = self.map.lock().unwrap();
        if let Some(existing) = map.get(&key) {
            if existing.legal != record.legal {
                return Err(MemoError::LegalityConflict {
                    program_id: key.program_id,
                    schedule_key: key.schedule_key,
                });
            }
        }
        map.insert(key, record);
        Ok(())
    }

    /// One JSON object per line; ordering is irrelevant on load.
    pub fn save(&self, path: &Path) -> Result<(), MemoError> {
        let map = self.map.lock().unwrap();
        let mut entries: Vec<(&MemoKey, &MemoRecord)> = map.iter().collect();
        entries.sort_by(|a, b| {
            (&a.0.program_id, &a.0.schedule_key, a.0.backend.as_str())
                .cmp(&(&b.0.program_id, &b.0.schedule_key, b.0.backend.as_str()))
        });
        let mut out = String::new();
        for (key, rec) in entries {
            let line = Line {
                program_id: key.program_id.clone(),
                schedule_key: key.schedule_key.clone(),
                backend: key.backend.as_str().to_string(),
                legal: rec.legal,
                exec_time_s: rec.exec_time,
                runs: rec.runs,
                host: rec.host.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MemoStore, MemoError> {
        let text = std::fs::read_to_string(path)?;
        let store = MemoStore::new();
        let here = host_fingerprint();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| MemoError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let backend = BackendTag::parse(&line.backend).ok_or(MemoError::Malformed {
                line: i + 1,
                msg: format!("unknown backend `{}`", line.backend),
            })?;
            if backend == BackendTag::Measured {
                if let Some(host) = &line.host {
                    if *host != here {
                        eprintln!(
                            "warning: measured record from host `{host}` loaded on `{here}`; \
                             timings may not transfer"
                        );
                    }
                }
            }
            store.insert(
                MemoKey {
                    program_id: line.program_id,
                    schedule_key: line.schedule_key,
                    backend,
                },
                MemoRecord {
                    legal: line.legal,
                    exec_time: line.exec_time_s,
                    runs: line.runs,
                    host: line.host,
                },
            )?;
        }
        Ok(store)
    }
}
