//! Line-oriented event log.
//!
//! One record per line, tab separated:
//! `seq \t at \t kind \t crc32 \t payload-json`. The checksum covers the other
//! four fields joined by tabs.

use std::fs::{File, OpenOptions};
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};

use super::{Payload, StoreError};
use crate::clock::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub payload: Payload,
}

impl LogRecord {
    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }

    pub fn encode(&self) -> String {
        let at = self.at.to_rfc3339_opts(SecondsFormat::AutoSi, true);
        let (seq, kind, payload) = (self.seq, self.kind(), self.payload.to_json());
        let crc = crc32fast::hash(format!("{seq}\t{at}\t{kind}\t{payload}").as_bytes());
        format!("{seq}\t{at}\t{kind}\t{crc:08x}\t{payload}\n")
    }

    /// Parses one line (without its newline).
    pub fn decode(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.splitn(5, '\t').collect();
        let [seq, at, kind, crc, payload] = f[..] else {
            return Err(format!("expected 5 fields, found {}", f.len()));
        };
        let want = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum field {crc:?}"))?;
        let got = crc32fast::hash(format!("{seq}\t{at}\t{kind}\t{payload}").as_bytes());
        if want != got {
            return Err(format!("checksum mismatch ({crc} != {got:08x})"));
        }
        let seq = seq.parse().map_err(|_| format!("bad seq {seq:?}"))?;
        let at = DateTime::parse_from_rfc3339(at)
            .map_err(|e| format!("bad timestamp: {e}"))?
            .to_utc();
        let payload = Payload::from_json(kind, payload)?;
        Ok(Self { seq, at, payload })
    }
}

/// What [`read_log`] found beyond the valid records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    /// Byte offset where the valid prefix ends.
    pub offset: u64,
    pub reason: String,
}

/// Reads every record, checking checksums and seq continuity. A bad final line
/// is reported as a torn tail; a bad line anywhere else is an integrity error.
pub fn read_log(path: &Path) -> Result<(Vec<LogRecord>, Option<TornTail>), StoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(|e| StoreError::io(path, e))?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(StoreError::io(path, e)),
    }

    let mut records: Vec<LogRecord> = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let consumed = line.len() + usize::from(terminated);
        let is_last = offset + consumed == bytes.len();
        let expected = records.last().map_or(1, |r| r.seq + 1);
        let parsed = if !terminated {
            Err("unterminated record".to_string())
        } else {
            std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(LogRecord::decode)
                .and_then(|r| {
                    if r.seq == expected {
                        Ok(r)
                    } else {
                        Err(format!("expected seq {expected}, found {}", r.seq))
                    }
                })
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) if is_last => {
                let torn = TornTail {
                    offset: offset as u64,
                    reason,
                };
                return Ok((records, Some(torn)));
            }
            Err(reason) => {
                return Err(StoreError::Integrity {
                    seq: Some(expected),
                    reason,
                });
            }
        }
        offset += consumed;
    }
    Ok((records, None))
}

/// Append handle. Every append is flushed and synced before returning.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_seq: u64,
}

impl EventLog {
    /// Opens (creating if needed) and returns the valid records. A torn final
    /// record is truncated away with a warning.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogRecord>), StoreError> {
        let (records, torn) = read_log(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        if let Some(t) = torn {
            tracing::warn!(
                path = %path.display(),
                offset = t.offset,
                "truncating torn final record: {}",
                t.reason
            );
            file.set_len(t.offset).map_err(|e| StoreError::io(path, e))?;
            file.sync_all().map_err(|e| StoreError::io(path, e))?;
        }
        let last_seq = records.last().map_or(0, |r| r.seq);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                last_seq,
            },
            records,
        ))
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, at: Timestamp, payload: Payload) -> Result<LogRecord, StoreError> {
        let rec = LogRecord {
            seq: self.last_seq + 1,
            at,
            payload,
        };
        self.file
            .write_all(rec.encode().as_bytes())
            .and_then(|()| self.file.flush())
            .and_then(|()| self.file.sync_data())
            .map_err(|e| StoreError::io(&self.path, e))?;
        self.last_seq = rec.seq;
        Ok(rec)
    }
}
