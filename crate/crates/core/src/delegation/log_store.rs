//! Append-only accountability log.
//!
//! On disk every record is a frame: a big-endian `u32` length followed by that
//! many bytes of JSON. Forgetting an entry overwrites its frame in place with
//! a tombstone padded to the same length with spaces, so the original bytes
//! are gone from the file and every later read sees only the tombstone.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::Safeguard;
use super::session::SessionStatus;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log store unavailable: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt log frame at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("log entry {0} not found")]
    NotFound(u64),
    #[error("log entry {} was forgotten at {}", .0.entry_id, .0.deleted_at)]
    Forgotten(Tombstone),
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

/// Settable clock for tests and reproducible runs.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(AtomicU64::new(start))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, dt: u64) {
        self.0.fetch_add(dt, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountabilityEntry {
    pub entry_id: u64,
    pub timestamp: u64,
    pub cluster: usize,
    /// Absent only for sessions abandoned before routing.
    pub primary_model: Option<String>,
    pub auditor_model: Option<String>,
    pub risk_value: Option<f64>,
    pub high_assurance: bool,
    pub safeguards: Vec<Safeguard>,
    pub overridden: bool,
    pub status: SessionStatus,
    pub repair_or_handoff_note: Option<String>,
    /// Set when the session opted into retention; only then are the two
    /// fields below filled.
    pub retained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub entry_id: u64,
    pub deleted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogItem {
    Entry(AccountabilityEntry),
    Tombstone(Tombstone),
}

impl LogItem {
    pub fn entry_id(&self) -> u64 {
        match self {
            LogItem::Entry(e) => e.entry_id,
            LogItem::Tombstone(t) => t.entry_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPage {
    pub items: Vec<LogItem>,
    /// Pass back as `cursor` for the next page; absent at the end.
    pub next_cursor: Option<u64>,
}

struct Slot {
    offset: u64,
    len: u32,
    item: LogItem,
}

pub struct LogStore {
    file: Option<File>,
    path: Option<PathBuf>,
    slots: Vec<Slot>,
    next_id: u64,
    end: u64,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for LogStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogStore")
            .field("path", &self.path)
            .field("records", &self.slots.len())
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl LogStore {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        LogStore {
            file: None,
            path: None,
            slots: Vec::new(),
            next_id: 1,
            end: 0,
            clock,
        }
    }

    /// Open (creating if needed) and replay a log file. A torn trailing frame
    /// from an interrupted append is cut off; anything else malformed is an
    /// error.
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut slots = Vec::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            if bytes.len() - pos < 4 {
                break;
            }
            let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let start = pos + 4;
            let stop = start + len as usize;
            if stop > bytes.len() {
                break;
            }
            let item: LogItem = serde_json::from_slice(&bytes[start..stop]).map_err(|e| LogError::Corrupt {
                offset: pos as u64,
                reason: e.to_string(),
            })?;
            if let Some(last) = slots.last().map(|s: &Slot| s.item.entry_id()) {
                if item.entry_id() <= last {
                    return Err(LogError::Corrupt {
                        offset: pos as u64,
                        reason: format!("entry id {} after {}", item.entry_id(), last),
                    });
                }
            }
            slots.push(Slot {
                offset: pos as u64,
                len,
                item,
            });
            pos = stop;
        }
        if pos < bytes.len() {
            tracing::warn!(path = %path.display(), kept = pos, "dropping torn trailing log frame");
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        let next_id = slots.last().map_or(1, |s| s.item.entry_id() + 1);
        Ok(LogStore {
            file: Some(file),
            path: Some(path),
            slots,
            next_id,
            end: pos as u64,
            clock,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Number of frames, tombstones included.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Store `entry` under the next id and the current time; both fields of
    /// the argument are overwritten.
    pub fn append(&mut self, mut entry: AccountabilityEntry) -> Result<AccountabilityEntry, LogError> {
        entry.entry_id = self.next_id;
        entry.timestamp = self.clock.now();
        let item = LogItem::Entry(entry.clone());
        let json = serde_json::to_vec(&item).expect("log items serialize");
        let len = u32::try_from(json.len()).map_err(|_| LogError::Corrupt {
            offset: self.end,
            reason: "entry larger than 4 GiB".into(),
        })?;
        if let Some(f) = self.file.as_mut() {
            f.seek(SeekFrom::Start(self.end))?;
            let mut frame = Vec::with_capacity(4 + json.len());
            frame.extend_from_slice(&len.to_be_bytes());
            frame.extend_from_slice(&json);
            f.write_all(&frame)?;
            f.sync_data()?;
        }
        self.slots.push(Slot {
            offset: self.end,
            len,
            item,
        });
        self.end += 4 + u64::from(len);
        self.next_id += 1;
        Ok(entry)
    }

    fn slot_index(&self, entry_id: u64) -> Option<usize> {
        self.slots.binary_search_by_key(&entry_id, |s| s.item.entry_id()).ok()
    }

    pub fn get(&self, entry_id: u64) -> Result<&AccountabilityEntry, LogError> {
        let i = self.slot_index(entry_id).ok_or(LogError::NotFound(entry_id))?;
        match &self.slots[i].item {
            LogItem::Entry(e) => Ok(e),
            LogItem::Tombstone(t) => Err(LogError::Forgotten(*t)),
        }
    }

    pub fn forget(&mut self, entry_id: u64) -> Result<Tombstone, LogError> {
        let i = self.slot_index(entry_id).ok_or(LogError::NotFound(entry_id))?;
        if let LogItem::Tombstone(t) = self.slots[i].item {
            return Err(LogError::Forgotten(t));
        }
        let tomb = Tombstone {
            entry_id,
            deleted_at: self.clock.now(),
        };
        let mut json = serde_json::to_vec(&LogItem::Tombstone(tomb)).expect("tombstones serialize");
        let len = self.slots[i].len as usize;
        if json.len() > len {
            return Err(LogError::Corrupt {
                offset: self.slots[i].offset,
                reason: "entry frame shorter than its tombstone".into(),
            });
        }
        json.resize(len, b' ');
        if let Some(f) = self.file.as_mut() {
            f.seek(SeekFrom::Start(self.slots[i].offset + 4))?;
            f.write_all(&json)?;
            f.sync_data()?;
        }
        self.slots[i].item = LogItem::Tombstone(tomb);
        Ok(tomb)
    }

    /// Items with id greater than `cursor`, oldest first.
    pub fn list(&self, limit: usize, cursor: Option<u64>) -> LogPage {
        let start = cursor.map_or(0, |c| self.slots.partition_point(|s| s.item.entry_id() <= c));
        let items: Vec<LogItem> = self.slots[start..].iter().take(limit).map(|s| s.item.clone()).collect();
        let next_cursor = if start + items.len() < self.slots.len() {
            items.last().map(LogItem::entry_id)
        } else {
            None
        };
        LogPage { items, next_cursor }
    }

    /// Live entries, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &AccountabilityEntry> {
        self.slots.iter().filter_map(|s| match &s.item {
            LogItem::Entry(e) => Some(e),
            LogItem::Tombstone(_) => None,
        })
    }

    pub fn tombstones(&self) -> impl Iterator<Item = &Tombstone> {
        self.slots.iter().filter_map(|s| match &s.item {
            LogItem::Tombstone(t) => Some(t),
            LogItem::Entry(_) => None,
        })
    }

    /// Live entries as JSON lines; forgotten entries do not appear.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<(), LogError> {
        for e in self.entries() {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        if let Some(f) = self.file.as_mut() {
            f.sync_all()?;
        }
        Ok(())
    }
}
