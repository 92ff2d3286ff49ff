//! Append-only record log.
//!
//! Each frame is `[len: u32 LE][crc32: u32 LE][json]`, the checksum covering
//! the JSON bytes. Reading stops at the first frame that is short, fails its
//! checksum or does not decode; everything before it is returned.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::bus::AuditRecord;
use crate::error::{GdmError, Result};
use crate::events::Event;
use crate::ids::CollaborationId;
use crate::lifecycle::CommandEnvelope;

const HEADER: usize = 8;
/// Frames larger than this are treated as corruption rather than allocated.
const MAX_FRAME: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum LogPayload {
    Command { envelope: CommandEnvelope },
    Event { event: Event },
    Audit { audit: AuditRecord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogRecord {
    /// Contiguous per collaboration, starting at 1.
    pub seq: u64,
    pub collaboration_id: CollaborationId,
    pub payload: LogPayload,
}

fn storage(e: io::Error) -> GdmError {
    GdmError::Storage(e.to_string())
}

pub fn encode_frame<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(value).map_err(|e| GdmError::Storage(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + json.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

/// Result of scanning a log image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T> {
    pub records: Vec<T>,
    /// Byte offset where each record starts, parallel to `records`.
    pub offsets: Vec<u64>,
    /// Length of the valid prefix.
    pub valid_len: u64,
    /// `CorruptLog` describing the first bad frame, if any.
    pub corruption: Option<GdmError>,
}

pub fn scan_frames<T: DeserializeOwned>(bytes: &[u8], base: u64) -> Scan<T> {
    let mut pos = 0usize;
    let mut records = Vec::new();
    let mut offsets = Vec::new();
    let corrupt = |pos: usize, reason: &str| {
        Some(GdmError::CorruptLog {
            offset: base + pos as u64,
            reason: reason.to_string(),
        })
    };
    let mut corruption = None;
    while pos < bytes.len() {
        if bytes.len() - pos < HEADER {
            corruption = corrupt(pos, "truncated frame header");
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        if len > MAX_FRAME {
            corruption = corrupt(pos, "frame length out of range");
            break;
        }
        let end = pos + HEADER + len as usize;
        if end > bytes.len() {
            corruption = corrupt(pos, "truncated frame body");
            break;
        }
        let body = &bytes[pos + HEADER..end];
        if crc32fast::hash(body) != crc {
            corruption = corrupt(pos, "checksum mismatch");
            break;
        }
        match serde_json::from_slice(body) {
            Ok(r) => {
                records.push(r);
                offsets.push(base + pos as u64);
            }
            Err(e) => {
                corruption = corrupt(pos, &format!("undecodable record: {e}"));
                break;
            }
        }
        pos = end;
    }
    Scan {
        records,
        offsets,
        valid_len: base + pos as u64,
        corruption,
    }
}

/// Reads every valid record of the file at `path`. A missing file is empty.
pub fn read_log(path: &Path) -> Result<Scan<LogRecord>> {
    read_log_from(path, 0)
}

pub fn read_log_from(path: &Path, offset: u64) -> Result<Scan<LogRecord>> {
    let mut file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(Scan {
                records: Vec::new(),
                offsets: Vec::new(),
                valid_len: 0,
                corruption: None,
            })
        }
        Err(e) => return Err(storage(e)),
    };
    file.seek(SeekFrom::Start(offset)).map_err(storage)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(storage)?;
    Ok(scan_frames(&bytes, offset))
}

/// Single appender over a log file, or an in-memory buffer when no path is given.
#[derive(Debug)]
pub struct LogWriter {
    target: Target,
    len: u64,
    durable: bool,
}

#[derive(Debug)]
enum Target {
    File { file: File, path: PathBuf },
    Memory(Vec<u8>),
}

impl LogWriter {
    pub fn in_memory() -> Self {
        LogWriter {
            target: Target::Memory(Vec::new()),
            len: 0,
            durable: false,
        }
    }

    /// Opens `path` for appending after truncating it to `valid_len`, which
    /// drops a torn or corrupt tail found by [`read_log`].
    pub fn open(path: &Path, valid_len: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)
            .map_err(storage)?;
        let current = file.metadata().map_err(storage)?.len();
        if current != valid_len {
            file.set_len(valid_len).map_err(storage)?;
        }
        let mut file = file;
        file.seek(SeekFrom::Start(valid_len)).map_err(storage)?;
        Ok(LogWriter {
            target: Target::File {
                file,
                path: path.to_path_buf(),
            },
            len: valid_len,
            durable: true,
        })
    }

    /// Skips `fsync` after each append. Meant for tests and throwaway runs.
    pub fn set_durable(&mut self, durable: bool) {
        self.durable = durable;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.target {
            Target::File { path, .. } => Some(path),
            Target::Memory(_) => None,
        }
    }

    /// Writes all records as one contiguous append.
    pub fn append(&mut self, records: &[LogRecord]) -> Result<()> {
        let mut buf = Vec::new();
        for r in records {
            buf.extend(encode_frame(r)?);
        }
        match &mut self.target {
            Target::File { file, .. } => {
                file.write_all(&buf).map_err(storage)?;
                if self.durable {
                    file.sync_data().map_err(storage)?;
                }
            }
            Target::Memory(bytes) => bytes.extend_from_slice(&buf),
        }
        self.len += buf.len() as u64;
        Ok(())
    }

    /// Raw bytes of an in-memory log.
    pub fn memory_bytes(&self) -> Option<&[u8]> {
        match &self.target {
            Target::Memory(b) => Some(b),
            Target::File { .. } => None,
        }
    }
}

/// Path of the snapshot kept next to a log.
pub fn snapshot_path(log: &Path) -> PathBuf {
    let mut name = log.as_os_str().to_owned();
    name.push(".snap");
    PathBuf::from(name)
}

/// Writes `value` atomically: temporary file, then rename.
pub fn write_snapshot<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let frame = encode_frame(value)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(storage)?;
        f.write_all(&frame).map_err(storage)?;
        f.sync_data().map_err(storage)?;
    }
    std::fs::rename(&tmp, path).map_err(storage)
}

/// Reads a snapshot; `None` when absent or unreadable.
pub fn read_snapshot<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let bytes = std::fs::read(path).ok()?;
    let mut scan = scan_frames::<T>(&bytes, 0);
    if scan.corruption.is_some() || scan.records.len() != 1 {
        return None;
    }
    scan.records.pop()
}
