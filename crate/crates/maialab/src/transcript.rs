//! Session transcripts and their JSONL form.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Agent,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    /// Title and reported activation, shown alongside the image.
    pub caption: String,
    /// Path relative to the run root, or `<image:id>`.
    pub image: String,
    #[serde(skip)]
    pub handle: Option<Image>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            attachments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
    /// Milliseconds since the epoch at which each message was appended.
    pub timestamps_ms: Vec<u64>,
    pub rounds_used: u32,
}

#[derive(Serialize)]
struct Line<'a> {
    index: usize,
    #[serde(flatten)]
    message: &'a Message,
    timestamp_ms: u64,
}

/// Keys dropped before transcripts or reports are compared across runs.
pub const VOLATILE_KEYS: &[&str] = &["timestamp_ms", "run_id", "started_at", "finished_at"];

impl Transcript {
    pub fn push(&mut self, message: Message) {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.messages.push(message);
        self.timestamps_ms.push(now);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (index, (message, ts)) in self.messages.iter().zip(&self.timestamps_ms).enumerate() {
            let line = Line {
                index,
                message,
                timestamp_ms: *ts,
            };
            out.push_str(&serde_json::to_string(&line).expect("messages serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

fn strip(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(*k);
            }
            map.values_mut().for_each(strip);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
        _ => {}
    }
}

/// Re-serializes each JSON line without volatile keys. Non-JSON lines pass
/// through unchanged.
pub fn canonicalize_jsonl(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(mut v) => {
                strip(&mut v);
                out.push_str(&v.to_string());
            }
            Err(_) => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

/// Canonical form of a single JSON document.
pub fn canonicalize_json(text: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(mut v) => {
            strip(&mut v);
            v.to_string()
        }
        Err(_) => text.to_string(),
    }
}
