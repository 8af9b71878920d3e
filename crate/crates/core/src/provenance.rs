//! Append-only JSON-lines log of every LLM call and page fetch.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Monotonic tick counter. Used in replay mode so logs are reproducible.
#[derive(Default)]
pub struct LogicalClock(AtomicU64);

impl LogicalClock {
    pub fn starting_at(tick: u64) -> Self {
        LogicalClock(AtomicU64::new(tick))
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Llm,
    Fetch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: RecordKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub role: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub call_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt_hash: Option<String>,
    /// Hash of the response text or fetched page.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub content_hash: Option<String>,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ProvenanceRecord {
    pub fn llm(role: &str, prompt_hash: String) -> Self {
        ProvenanceRecord {
            seq: 0,
            timestamp_ms: 0,
            kind: RecordKind::Llm,
            role: Some(role.to_string()),
            call_id: None,
            url: None,
            prompt_hash: Some(prompt_hash),
            content_hash: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            error: None,
        }
    }

    pub fn fetch(url: &str) -> Self {
        ProvenanceRecord {
            seq: 0,
            timestamp_ms: 0,
            kind: RecordKind::Fetch,
            role: None,
            call_id: None,
            url: Some(url.to_string()),
            prompt_hash: None,
            content_hash: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            error: None,
        }
    }
}

struct LogState {
    next_seq: u64,
    records: Vec<ProvenanceRecord>,
    file: Option<File>,
}

pub struct ProvenanceLog {
    path: Option<PathBuf>,
    clock: Box<dyn Clock>,
    state: Mutex<LogState>,
}

impl ProvenanceLog {
    pub fn in_memory(clock: Box<dyn Clock>) -> Self {
        ProvenanceLog {
            path: None,
            clock,
            state: Mutex::new(LogState {
                next_seq: 1,
                records: Vec::new(),
                file: None,
            }),
        }
    }

    /// Open `path`, truncating it unless `resume`, in which case existing
    /// records are loaded and numbering continues after them.
    pub fn open(path: &Path, resume: bool, clock: Box<dyn Clock>) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let records = if resume && path.exists() {
            read_records(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(path)?;
        Ok(ProvenanceLog {
            path: Some(path.to_path_buf()),
            clock,
            state: Mutex::new(LogState {
                next_seq: records.last().map(|r| r.seq + 1).unwrap_or(1),
                records,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Number of the record the next `append` will get.
    pub fn peek_seq(&self) -> u64 {
        self.state.lock().unwrap().next_seq
    }

    pub fn append(&self, mut record: ProvenanceRecord) -> std::io::Result<u64> {
        let mut st = self.state.lock().unwrap();
        record.seq = st.next_seq;
        record.timestamp_ms = self.clock.now_ms();
        st.next_seq += 1;
        if let Some(f) = st.file.as_mut() {
            let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            writeln!(f, "{line}")?;
        }
        let seq = record.seq;
        st.records.push(record);
        Ok(seq)
    }

    pub fn records(&self) -> Vec<ProvenanceRecord> {
        self.state.lock().unwrap().records.clone()
    }
}

pub fn read_records(path: &Path) -> std::io::Result<Vec<ProvenanceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resume_continues_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        {
            let log = ProvenanceLog::open(&path, false, Box::new(LogicalClock::default())).unwrap();
            log.append(ProvenanceRecord::fetch("https://a")).unwrap();
            log.append(ProvenanceRecord::llm("SUMMARIZE_PR", "h".into())).unwrap();
        }
        let log = ProvenanceLog::open(&path, true, Box::new(LogicalClock::starting_at(2))).unwrap();
        assert_eq!(log.peek_seq(), 3);
        log.append(ProvenanceRecord::fetch("https://b")).unwrap();
        let recs = read_records(&path).unwrap();
        assert_eq!(recs.iter().map(|r| r.seq).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(recs[2].timestamp_ms, 3);

        let fresh = ProvenanceLog::open(&path, false, Box::new(SystemClock)).unwrap();
        assert_eq!(fresh.peek_seq(), 1);
        assert!(read_records(&path).unwrap().is_empty());
    }
}
