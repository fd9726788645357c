//! Persistent case banks: the human-insight bank and the agent-experience bank.
//!
//! A bank is a directory holding `cases.jsonl`, one JSON object per line.
//! Writers serialize through an advisory file lock and publish snapshots with
//! a temp-file + atomic-rename, so readers never observe a torn file.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::retrieval::Embedder;

pub const BANK_FILE: &str = "cases.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Insight,
    Solution,
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseKind::Insight => write!(f, "insight"),
            CaseKind::Solution => write!(f, "solution"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    TimeSeries,
    Tabular,
    Other,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Text => write!(f, "text"),
            Modality::TimeSeries => write!(f, "time_series"),
            Modality::Tabular => write!(f, "tabular"),
            Modality::Other => write!(f, "other"),
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "time_series" => Ok(Modality::TimeSeries),
            "tabular" => Ok(Modality::Tabular),
            "other" => Ok(Modality::Other),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// One entry of a case bank: a textual human insight, or a solved
/// (task description, solution script) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub kind: CaseKind,
    pub modality: Modality,
    /// Task description; required (and meaningful) for solution cases.
    pub task_desc: String,
    /// Insight text, or the full solution script for solution cases.
    pub body: String,
    pub embedding: Vec<f64>,
    /// Free-text provenance.
    pub source: String,
}

impl Case {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidCase("id is empty".into()));
        }
        if self.body.trim().is_empty() {
            return Err(Error::InvalidCase(format!("case `{}` has empty body", self.id)));
        }
        if self.embedding.is_empty() {
            return Err(Error::InvalidCase(format!("case `{}` has empty embedding", self.id)));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCase(format!(
                "case `{}` has non-finite embedding values",
                self.id
            )));
        }
        if self.kind == CaseKind::Solution {
            if self.task_desc.trim().is_empty() {
                return Err(Error::InvalidCase(format!(
                    "solution case `{}` has empty task_desc",
                    self.id
                )));
            }
            if self.body.lines().any(|l| l.trim_start().starts_with("```")) {
                return Err(Error::InvalidCase(format!(
                    "solution case `{}` body contains fence markers",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// An ordered, append-only collection of cases with a fixed embedding
/// dimension. Banks may be purely in-memory (tests) or backed by a directory.
#[derive(Debug, Clone)]
pub struct CaseBank {
    cases: Vec<Case>,
    dim: Option<usize>,
    path: Option<PathBuf>,
}

impl CaseBank {
    pub fn in_memory() -> Self {
        CaseBank { cases: Vec::new(), dim: None, path: None }
    }

    /// Load a bank from its directory. The directory must exist; a missing
    /// or empty `cases.jsonl` yields an empty bank with undetermined dim.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::BankIo {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "bank directory missing"),
            });
        }
        let file = dir.join(BANK_FILE);
        let mut bank = CaseBank { cases: Vec::new(), dim: None, path: Some(dir.to_path_buf()) };
        if !file.exists() {
            return Ok(bank);
        }
        let reader = BufReader::new(File::open(&file).map_err(|e| Error::BankIo {
            path: file.clone(),
            source: e,
        })?);
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::BankIo { path: file.clone(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let case: Case = serde_json::from_str(&line).map_err(|e| Error::BankParse {
                path: file.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
            bank.insert(case).map_err(|e| Error::BankParse {
                path: file.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
        }
        Ok(bank)
    }

    /// Load a bank, creating the directory (and an empty bank) if absent.
    pub fn load_or_create(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            fs::create_dir_all(dir).map_err(|e| Error::BankIo {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
        Self::load(dir)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Deterministic id for the next case of `kind`: insertion index plus a
    /// short content hash. Keeps replayed runs byte-identical where random
    /// ids would not.
    pub fn next_id(&self, kind: CaseKind, task_desc: &str, body: &str) -> String {
        let prefix = match kind {
            CaseKind::Insight => "ins",
            CaseKind::Solution => "sol",
        };
        let mut hasher = Sha256::new();
        hasher.update(task_desc.as_bytes());
        hasher.update(b"\x1f");
        hasher.update(body.as_bytes());
        let digest = hasher.finalize();
        format!("{prefix}-{:05}-{}", self.cases.len(), &hex::encode(digest)[..8])
    }

    /// In-memory insert with invariant checks; does not persist.
    fn insert(&mut self, case: Case) -> Result<()> {
        case.validate()?;
        if let Some(dim) = self.dim {
            if case.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: case.embedding.len() });
            }
        }
        if self.cases.iter().any(|c| c.id == case.id) {
            return Err(Error::DuplicateId(case.id));
        }
        self.dim = Some(case.embedding.len());
        self.cases.push(case);
        Ok(())
    }

    /// Add a case and persist before returning. On persistence failure the
    /// in-memory bank is rolled back and the on-disk file is untouched.
    pub fn add_case(&mut self, case: Case) -> Result<String> {
        let id = case.id.clone();
        match &self.path {
            None => {
                self.insert(case)?;
                Ok(id)
            }
            Some(dir) => {
                let dir = dir.clone();
                let _lock = BankLock::acquire(&dir)?;
                // Refresh from disk under the lock so concurrent writers
                // from other processes are never overwritten.
                let fresh = Self::load(&dir)?;
                let prev = std::mem::replace(self, fresh);
                self.path = Some(dir);
                if let Err(e) = self.insert(case) {
                    *self = prev;
                    return Err(e);
                }
                if let Err(e) = self.save_locked() {
                    *self = prev;
                    return Err(e);
                }
                Ok(id)
            }
        }
    }

    /// Persist the whole bank: write a temp file in the bank directory, then
    /// atomically rename over `cases.jsonl`.
    pub fn save(&self) -> Result<()> {
        let Some(dir) = &self.path else {
            return Ok(()); // in-memory bank
        };
        let _lock = BankLock::acquire(dir)?;
        self.save_locked()
    }

    fn save_locked(&self) -> Result<()> {
        let dir = self.path.as_ref().expect("save_locked requires a persistent bank");
        let target = dir.join(BANK_FILE);
        let tmp = dir.join(format!("{BANK_FILE}.tmp-{}", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = File::create(&tmp)?;
            for case in &self.cases {
                serde_json::to_writer(&mut f, case)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
            fs::rename(&tmp, &target)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::BankIo { path: target.clone(), source: e }
        })
    }
}

/// Advisory exclusive lock on a bank directory, released on drop.
struct BankLock {
    _file: File,
}

impl BankLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let lock_path = dir.join(format!("{BANK_FILE}.lock"));
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&lock_path)
            .map_err(|e| Error::BankIo { path: lock_path.clone(), source: e })?;
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
        if rc != 0 {
            return Err(Error::BankIo {
                path: lock_path,
                source: std::io::Error::last_os_error(),
            });
        }
        Ok(BankLock { _file: file })
    }
}

/// Archive a successful (task description, solution script) pair into both
/// the insight bank and the agent bank. The embedding is computed over the
/// task description, so later retrieval compares task against task. Both
/// banks are persisted; any failure leaves both unchanged.
pub fn retain(
    insight_bank: &mut CaseBank,
    agent_bank: &mut CaseBank,
    task_desc: &str,
    script: &str,
    modality: Modality,
    embedder: &dyn Embedder,
) -> Result<(String, String)> {
    if script.trim().is_empty() {
        return Err(Error::InvalidCase("retain requires a non-empty script".into()));
    }
    let embedding = embedder.embed(task_desc)?;
    for bank in [&*insight_bank, &*agent_bank] {
        if let Some(dim) = bank.dim() {
            if embedding.values().len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: embedding.values().len(),
                });
            }
        }
    }
    let make_case = |bank: &CaseBank, source: &str| {
        let id = bank.next_id(CaseKind::Solution, task_desc, script);
        Case {
            id,
            kind: CaseKind::Solution,
            modality,
            task_desc: task_desc.to_string(),
            body: script.to_string(),
            embedding: embedding.values().to_vec(),
            source: source.to_string(),
        }
    };
    let insight_case = make_case(insight_bank, "retained solution");
    let agent_case = make_case(agent_bank, "retained solution");

    let insight_snapshot = insight_bank.clone();
    let insight_id = insight_bank.add_case(insight_case)?;
    let agent_id = match agent_bank.add_case(agent_case) {
        Ok(id) => id,
        Err(e) => {
            // Roll the first bank back so the pair stays atomic.
            *insight_bank = insight_snapshot;
            insight_bank.save()?;
            return Err(e);
        }
    };
    Ok((insight_id, agent_id))
}
