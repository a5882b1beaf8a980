//! Append-only experiment log persisted as JSONL.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub title: String,
    /// Value the program passed in, as shown to the agent.
    pub reported_activation: f64,
    /// Unrounded activation, when the image came from a probe in this session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<f64>,
    /// Path relative to the run root, or `<image:id>` when images are not
    /// persisted.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Position in the log, starting at 1.
    pub round_index: u64,
    /// Agent round whose program wrote the entry.
    pub session_round: u32,
    pub program_source: String,
    pub records: Vec<LogRecord>,
    pub notes: String,
    #[serde(skip)]
    pub images: Vec<Image>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("log line {line}: round index {got} does not follow {prev}")]
    OutOfOrder { line: usize, prev: u64, got: u64 },
}

#[derive(Debug, Default)]
pub struct ExperimentLog {
    entries: Vec<LogEntry>,
    path: Option<PathBuf>,
}

impl ExperimentLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends go to `path` as they happen. An existing file is truncated.
    pub fn persisted(path: &Path) -> Result<Self, LogError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, b"")?;
        Ok(Self {
            entries: Vec::new(),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries: Vec<LogEntry> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry =
                serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            let prev = entries.last().map_or(0, |e| e.round_index);
            if entry.round_index <= prev {
                return Err(LogError::OutOfOrder {
                    line: i + 1,
                    prev,
                    got: entry.round_index,
                });
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_index(&self) -> u64 {
        self.entries.last().map_or(1, |e| e.round_index + 1)
    }

    /// Assigns the next index, persists, then keeps the entry in memory.
    pub fn append(&mut self, mut entry: LogEntry) -> Result<&LogEntry, LogError> {
        entry.round_index = self.next_index();
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&entry).expect("log entries serialize");
            line.push(b'\n');
            let mut f = OpenOptions::new().append(true).create(true).open(path)?;
            f.write_all(&line)?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(n: usize) -> LogEntry {
        LogEntry {
            round_index: 0,
            session_round: 1,
            program_source: "fn run_experiment(system, tools) {}".into(),
            records: (0..n)
                .map(|i| LogRecord {
                    title: format!("t{i}"),
                    reported_activation: 0.5,
                    activation: Some(0.5012),
                    image: format!("<image:{i}>"),
                })
                .collect(),
            notes: "n".into(),
            images: Vec::new(),
        }
    }

    #[test]
    fn indices_increase_and_survive_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = ExperimentLog::persisted(&path).unwrap();
        assert_eq!(log.append(entry(3)).unwrap().round_index, 1);
        assert_eq!(log.append(entry(1)).unwrap().round_index, 2);
        let back = ExperimentLog::load(&path).unwrap();
        assert_eq!(back.entries(), log.entries());
        assert_eq!(back.entries()[0].records.len(), 3);
        assert_eq!(back.entries()[0].records[0].activation, Some(0.5012));
    }

    #[test]
    fn reordered_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = ExperimentLog::persisted(&path).unwrap();
        log.append(entry(1)).unwrap();
        log.append(entry(1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        std::fs::write(&path, format!("{}\n{}\n", lines[1], lines[0])).unwrap();
        assert!(matches!(ExperimentLog::load(&path), Err(LogError::OutOfOrder { .. })));
    }
}
