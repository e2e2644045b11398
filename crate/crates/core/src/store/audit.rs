use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::canonical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditAction {
    Upload,
    Download,
    AttachTests,
    TestRun,
    Promote,
    Retire,
    JobSubmit,
    JobComplete,
    JobFail,
}

/// One link of the audit chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub sequence: u64,
    pub timestamp: String,
    pub actor: String,
    pub action: AuditAction,
    pub subject: String,
    pub payload: serde_json::Value,
    pub payload_hash: String,
    pub prev_hash: String,
    pub record_hash: String,
}

#[derive(Serialize)]
struct Unsealed<'a> {
    sequence: u64,
    timestamp: &'a str,
    actor: &'a str,
    action: AuditAction,
    subject: &'a str,
    payload: &'a serde_json::Value,
    payload_hash: &'a str,
    prev_hash: &'a str,
}

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

impl AuditRecord {
    /// `SHA256(prev_hash bytes || canonical(record without record_hash))`.
    pub fn compute_hash(&self) -> Option<String> {
        let prev = hex::decode(&self.prev_hash).ok().filter(|b| b.len() == 32)?;
        let body = canonical::to_vec(&Unsealed {
            sequence: self.sequence,
            timestamp: &self.timestamp,
            actor: &self.actor,
            action: self.action,
            subject: &self.subject,
            payload: &self.payload,
            payload_hash: &self.payload_hash,
            prev_hash: &self.prev_hash,
        });
        let mut buf = prev;
        buf.extend_from_slice(&body);
        Some(canonical::sha256_hex(&buf))
    }

    fn problem(&self, expected_seq: u64, prev_hash: &str) -> Option<String> {
        if self.sequence != expected_seq {
            return Some(format!("expected sequence {expected_seq}, found {}", self.sequence));
        }
        if self.prev_hash != prev_hash {
            return Some("prev_hash does not match the preceding record".into());
        }
        if canonical::sha256_hex(&canonical::to_vec(&self.payload)) != self.payload_hash {
            return Some("payload does not match payload_hash".into());
        }
        if self.compute_hash().as_deref() != Some(self.record_hash.as_str()) {
            return Some("record_hash mismatch".into());
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerification {
    pub ok: bool,
    pub records: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_bad: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Result of scanning a log: valid prefix plus the first problem, if any.
pub(crate) struct Scan {
    pub records: Vec<AuditRecord>,
    /// Byte offset where each valid record starts, plus the end offset.
    pub offsets: Vec<u64>,
    pub problem: Option<(u64, String)>,
}

impl Scan {
    pub fn verification(&self) -> AuditVerification {
        AuditVerification {
            ok: self.problem.is_none(),
            records: self.records.len() as u64,
            first_bad: self.problem.as_ref().map(|p| p.0),
            reason: self.problem.as_ref().map(|p| p.1.clone()),
        }
    }
}

pub(crate) fn scan(bytes: &[u8]) -> Scan {
    let mut records = Vec::new();
    let mut offsets = vec![0u64];
    let mut pos = 0usize;
    let mut prev = GENESIS_HASH.to_string();
    let mut problem = None;
    while pos < bytes.len() {
        let expected = records.len() as u64 + 1;
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            problem = Some((expected, "truncated length prefix".into()));
            break;
        };
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            problem = Some((expected, "truncated record".into()));
            break;
        };
        let rec: AuditRecord = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => {
                problem = Some((expected, format!("unreadable record: {e}")));
                break;
            }
        };
        if canonical::to_vec(&rec) != body {
            problem = Some((expected, "record is not in canonical form".into()));
            break;
        }
        if let Some(p) = rec.problem(expected, &prev) {
            problem = Some((expected, p));
            break;
        }
        prev = rec.record_hash.clone();
        pos += 4 + len;
        offsets.push(pos as u64);
        records.push(rec);
    }
    Scan {
        records,
        offsets,
        problem,
    }
}

/// Recomputes every hash of a log file from genesis.
pub fn verify_audit_file(path: &Path) -> Result<AuditVerification, StoreError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(scan(&bytes).verification()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(AuditVerification {
            ok: true,
            records: 0,
            first_bad: None,
            reason: None,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Append-only log file with a remembered tail.
#[derive(Debug)]
pub(crate) struct AuditLog {
    path: PathBuf,
    tail: Option<(u64, String)>,
    tail_offset: u64,
    end: u64,
    corrupt: Option<String>,
}

impl AuditLog {
    pub fn open(path: PathBuf) -> Result<AuditLog, StoreError> {
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let s = scan(&bytes);
        let n = s.records.len();
        Ok(AuditLog {
            path,
            tail: s.records.last().map(|r| (r.sequence, r.record_hash.clone())),
            tail_offset: if n == 0 { 0 } else { s.offsets[n - 1] },
            end: s.offsets[n],
            corrupt: s.problem.map(|(seq, why)| format!("record {seq}: {why}")),
        })
    }

    pub fn len(&self) -> u64 {
        self.tail.as_ref().map_or(0, |t| t.0)
    }

    /// Re-reads the tail record from disk and checks its own hash.
    fn check_tail(&mut self) -> Result<(), StoreError> {
        if let Some(why) = &self.corrupt {
            return Err(StoreError::Corrupt(why.clone()));
        }
        let mut f = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && self.tail.is_none() => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        };
        let actual_len = f.metadata()?.len();
        let problem = if actual_len != self.end {
            Some(format!("log length {actual_len}, expected {}", self.end))
        } else if let Some((seq, hash)) = &self.tail {
            f.seek(SeekFrom::Start(self.tail_offset))?;
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            let rec = buf
                .get(4..)
                .and_then(|b| serde_json::from_slice::<AuditRecord>(b).ok());
            match rec {
                Some(r) if r.sequence == *seq
                    && &r.record_hash == hash
                    && r.compute_hash().as_ref() == Some(hash) =>
                {
                    None
                }
                _ => Some(format!("tail record {seq} fails its hash")),
            }
        } else {
            None
        };
        match problem {
            Some(p) => {
                self.corrupt = Some(p.clone());
                Err(StoreError::Corrupt(p))
            }
            None => Ok(()),
        }
    }

    pub fn append(
        &mut self,
        actor: &str,
        action: AuditAction,
        subject: &str,
        payload: serde_json::Value,
    ) -> Result<AuditRecord, StoreError> {
        self.check_tail()?;
        let (sequence, prev_hash) = match &self.tail {
            Some((s, h)) => (s + 1, h.clone()),
            None => (1, GENESIS_HASH.to_string()),
        };
        let mut rec = AuditRecord {
            sequence,
            timestamp: super::now(),
            actor: actor.to_string(),
            action,
            subject: subject.to_string(),
            payload_hash: canonical::sha256_hex(&canonical::to_vec(&payload)),
            payload,
            prev_hash,
            record_hash: String::new(),
        };
        rec.record_hash = rec.compute_hash().expect("valid prev hash");
        let body = canonical::to_vec(&rec);
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&frame)?;
        f.sync_data()?;
        self.tail_offset = self.end;
        self.end += frame.len() as u64;
        self.tail = Some((sequence, rec.record_hash.clone()));
        Ok(rec)
    }

    pub fn read_all(&self) -> Result<Scan, StoreError> {
        match std::fs::read(&self.path) {
            Ok(b) => Ok(scan(&b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(scan(&[])),
            Err(e) => Err(e.into()),
        }
    }
}
