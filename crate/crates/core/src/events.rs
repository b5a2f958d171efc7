//! Question-event timelines, stored as JSONL:
//! `{"at_frame": 120, "tokens": [[...], ...], "expected_segment": 3}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A question arriving after stream position `at_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEvent {
    pub at_frame: u64,
    /// Token embeddings in model dimension.
    pub tokens: Vec<Vec<f32>>,
    #[serde(default)]
    pub expected_segment: Option<u32>,
}

impl QuestionEvent {
    pub fn validate(&self, stream_len: Option<u64>, model_dim: usize) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("question has no tokens".into());
        }
        if let Some(bad) = self.tokens.iter().find(|t| t.len() != model_dim) {
            return Err(format!("token has dimension {}, model dimension is {model_dim}", bad.len()));
        }
        if self.tokens.iter().flatten().any(|v| !v.is_finite()) {
            return Err("token contains non-finite values".into());
        }
        if let Some(len) = stream_len {
            if self.at_frame >= len {
                return Err(format!("at_frame {} is past the end of a {len}-frame stream", self.at_frame));
            }
        }
        Ok(())
    }
}

pub fn read_events<R: BufRead>(source: R) -> Result<Vec<QuestionEvent>, EventError> {
    let mut events = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: QuestionEvent =
            serde_json::from_str(&line).map_err(|e| EventError::Malformed { line: i + 1, message: e.to_string() })?;
        if event.tokens.is_empty() {
            return Err(EventError::Malformed { line: i + 1, message: "question has no tokens".into() });
        }
        events.push(event);
    }
    Ok(events)
}

pub fn write_events<W: Write>(events: &[QuestionEvent], mut sink: W) -> Result<(), EventError> {
    for e in events {
        serde_json::to_writer(&mut sink, e).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}
