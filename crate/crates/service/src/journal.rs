//! Append-only JSON-lines files with crash recovery.
//!
//! Every append is written and synced before it returns. On open, a final
//! line that does not parse (a torn write) is cut off with a warning; a bad
//! line anywhere else is a hard error.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Result, ServiceError};

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    lines: usize,
}

/// Entries read back from a journal, with their byte offsets.
#[derive(Debug)]
pub struct Replay<T> {
    pub entries: Vec<T>,
    /// Byte offset at which each entry starts.
    pub offsets: Vec<u64>,
    /// Whether a torn final line was removed.
    pub truncated: bool,
}

impl Journal {
    /// Opens (creating if needed) and replays `path`.
    pub fn open<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Journal, Replay<T>)> {
        let path = path.as_ref().to_path_buf();
        let io_err = |e: io::Error| ServiceError::Io(path.clone(), e);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut text = Vec::new();
        file.read_to_end(&mut text).map_err(io_err)?;

        let mut replay = Replay {
            entries: Vec::new(),
            offsets: Vec::new(),
            truncated: false,
        };
        let mut start = 0usize;
        let mut line_no = 0usize;
        while start < text.len() {
            line_no += 1;
            let end = text[start..].iter().position(|&b| b == b'\n').map(|p| start + p);
            let line = &text[start..end.unwrap_or(text.len())];
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<T>(s).map_err(|e| e.to_string()));
            match (parsed, end) {
                (Ok(entry), Some(end)) => {
                    replay.entries.push(entry);
                    replay.offsets.push(start as u64);
                    start = end + 1;
                }
                // A parseable line without its newline was still torn: the
                // newline is part of the write.
                (_, None) => {
                    log::warn!("{}: dropping torn final line {line_no}", path.display());
                    replay.truncated = true;
                    break;
                }
                (Err(msg), Some(_)) => {
                    return Err(ServiceError::CorruptLog {
                        path: path.clone(),
                        line: line_no,
                        msg,
                    })
                }
            }
        }
        if replay.truncated {
            truncate(&mut file, start as u64).map_err(io_err)?;
        }
        let lines = replay.entries.len();
        Ok((Journal { path, file, lines }, replay))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of complete lines in the file.
    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    /// Current end of file.
    pub fn offset(&mut self) -> Result<u64> {
        self.file
            .seek(SeekFrom::End(0))
            .map_err(|e| ServiceError::Io(self.path.clone(), e))
    }

    /// Appends all entries in one write and syncs.
    pub fn append<T: Serialize>(&mut self, entries: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).map_err(|e| ServiceError::Internal(e.to_string()))?;
            buf.push(b'\n');
        }
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ServiceError::Io(self.path.clone(), e))?;
        self.lines += entries.len();
        Ok(())
    }

    /// Cuts the file back to `offset`, dropping `dropped` lines from the count.
    pub fn truncate_to(&mut self, offset: u64, dropped: usize) -> Result<()> {
        truncate(&mut self.file, offset).map_err(|e| ServiceError::Io(self.path.clone(), e))?;
        self.lines -= dropped;
        Ok(())
    }
}

fn truncate(file: &mut File, len: u64) -> io::Result<()> {
    file.set_len(len)?;
    file.sync_data()
}
