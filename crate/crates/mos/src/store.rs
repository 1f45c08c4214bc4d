//! Durable rating storage.
//!
//! Every accepted rating is appended as one JSON line to `ratings.jsonl`
//! and synced before the request is answered. Every `snapshot_every`
//! appends the current record set is written to `snapshot.json` together
//! with the log length it covers; reopening loads the snapshot and replays
//! only the log tail. A final line without its newline (an interrupted
//! write) is ignored on replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{MosError, Result};

pub const LOG_FILE: &str = "ratings.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRecord {
    pub rater_id: String,
    pub pair_id: String,
    pub quality: u8,
    pub similarity: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    log_offset: u64,
    records: Vec<RatingRecord>,
}

#[derive(Debug)]
pub struct RatingStore {
    dir: PathBuf,
    log: File,
    log_len: u64,
    records: BTreeMap<(String, String), RatingRecord>,
    since_snapshot: usize,
    snapshot_every: usize,
}

impl RatingStore {
    pub fn open(dir: impl AsRef<Path>, snapshot_every: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| MosError::io(&dir, e))?;
        let mut records = BTreeMap::new();
        let mut offset = 0;
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let text = std::fs::read_to_string(&snap_path).map_err(|e| MosError::io(&snap_path, e))?;
            let snap: Snapshot =
                serde_json::from_str(&text).map_err(|e| MosError::Log(format!("{}: {e}", snap_path.display())))?;
            offset = snap.log_offset;
            for r in snap.records {
                records.insert((r.rater_id.clone(), r.pair_id.clone()), r);
            }
        }
        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| MosError::io(&log_path, e))?;
        let len = log.metadata().map_err(|e| MosError::io(&log_path, e))?.len();
        if offset > len {
            return Err(MosError::Log(format!("snapshot covers {offset} bytes but the log has {len}")));
        }
        let mut tail = String::new();
        log.seek(SeekFrom::Start(offset)).map_err(|e| MosError::io(&log_path, e))?;
        log.read_to_string(&mut tail).map_err(|e| MosError::io(&log_path, e))?;
        let mut complete = offset;
        let mut replayed = 0;
        for line in tail.split_inclusive('\n') {
            if !line.ends_with('\n') {
                tracing::warn!(bytes = line.len(), "ignoring incomplete final rating log line");
                break;
            }
            complete += line.len() as u64;
            if line.trim().is_empty() {
                continue;
            }
            let r: RatingRecord = serde_json::from_str(line)
                .map_err(|e| MosError::Log(format!("{} at byte {}: {e}", log_path.display(), complete - line.len() as u64)))?;
            records.insert((r.rater_id.clone(), r.pair_id.clone()), r);
            replayed += 1;
        }
        if complete < len {
            // Drop the torn line so the next append starts on a fresh line.
            log.set_len(complete).map_err(|e| MosError::io(&log_path, e))?;
        }
        Ok(Self {
            dir,
            log,
            log_len: complete,
            records,
            since_snapshot: replayed,
            snapshot_every: snapshot_every.max(1),
        })
    }

    /// Append and apply a record; a later record for the same rater and
    /// pair replaces the earlier one.
    pub fn put(&mut self, record: RatingRecord) -> Result<()> {
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(line.as_bytes()).map_err(|e| MosError::io(&path, e))?;
        self.log.sync_data().map_err(|e| MosError::io(&path, e))?;
        self.log_len += line.len() as u64;
        self.records.insert((record.rater_id.clone(), record.pair_id.clone()), record);
        self.since_snapshot += 1;
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self) -> Result<()> {
        let snap = Snapshot {
            log_offset: self.log_len,
            records: self.records(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let dest = self.dir.join(SNAPSHOT_FILE);
        let mut f = File::create(&tmp).map_err(|e| MosError::io(&tmp, e))?;
        f.write_all(serde_json::to_string(&snap)?.as_bytes()).map_err(|e| MosError::io(&tmp, e))?;
        f.sync_all().map_err(|e| MosError::io(&tmp, e))?;
        std::fs::rename(&tmp, &dest).map_err(|e| MosError::io(&dest, e))?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Current records, one per (rater, pair), ordered by rater then pair.
    pub fn records(&self) -> Vec<RatingRecord> {
        self.records.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
