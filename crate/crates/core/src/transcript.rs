//! JSONL run transcripts.
//!
//! One record per line. `ts` is a logical sequence number rather than a
//! clock reading, so scripted runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const RUN_START: &str = "run_start";
pub const RUN_END: &str = "run_end";

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("transcript is empty")]
    Empty,
    #[error("first record must be run_start")]
    MissingStart,
    #[error("unterminated run")]
    Unterminated,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub ts: u64,
    pub iteration: usize,
    pub planner_id: Option<String>,
    pub event: String,
    pub payload: Value,
    pub score: Option<f64>,
}

/// Append-only record sink, optionally mirrored to a file line by line.
#[derive(Debug, Default)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
    sink: Option<BufWriter<File>>,
    io_error: Option<io::Error>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self, TranscriptError> {
        Ok(Self { sink: Some(BufWriter::new(File::create(path)?)), ..Self::default() })
    }

    /// Append a record. A write failure is latched and reported by [`Transcript::finish`].
    pub fn record(&mut self, iteration: usize, planner_id: Option<&str>, event: &str, payload: Value, score: Option<f64>) {
        let rec = TranscriptRecord {
            ts: self.records.len() as u64,
            iteration,
            planner_id: planner_id.map(str::to_string),
            event: event.to_string(),
            payload,
            score,
        };
        if let (Some(sink), None) = (self.sink.as_mut(), self.io_error.as_ref()) {
            let line = serde_json::to_string(&rec).expect("records serialize");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                self.io_error = Some(e);
            }
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn count(&self, event: &str) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }

    pub fn finish(mut self) -> Result<Vec<TranscriptRecord>, TranscriptError> {
        if let Some(e) = self.io_error.take() {
            return Err(e.into());
        }
        if let Some(mut sink) = self.sink.take() {
            sink.flush()?;
        }
        Ok(std::mem::take(&mut self.records))
    }
}

/// Parse JSONL, checking `ts` monotonicity and run_start/run_end framing.
pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptRecord>, TranscriptError> {
    let mut records: Vec<TranscriptRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord = serde_json::from_str(line)
            .map_err(|e| TranscriptError::Malformed { line: i + 1, message: e.to_string() })?;
        if let Some(prev) = records.last() {
            if rec.ts <= prev.ts {
                return Err(TranscriptError::Malformed { line: i + 1, message: "ts is not increasing".into() });
            }
        }
        records.push(rec);
    }
    let first = records.first().ok_or(TranscriptError::Empty)?;
    if first.event != RUN_START {
        return Err(TranscriptError::MissingStart);
    }
    if records.last().is_none_or(|r| r.event != RUN_END) {
        return Err(TranscriptError::Unterminated);
    }
    Ok(records)
}

/// Per-iteration view of a parsed transcript.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationSummary {
    pub iteration: usize,
    /// Evaluated total per planner, in record order.
    pub scores: Vec<(String, f64)>,
    pub events: BTreeMap<String, usize>,
    pub best_so_far: Option<f64>,
}

pub fn summarize(records: &[TranscriptRecord]) -> Vec<IterationSummary> {
    let mut out: Vec<IterationSummary> = Vec::new();
    for r in records.iter().filter(|r| r.iteration > 0) {
        if out.last().is_none_or(|s| s.iteration != r.iteration) {
            out.push(IterationSummary { iteration: r.iteration, ..Default::default() });
        }
        let s = out.last_mut().expect("pushed above");
        *s.events.entry(r.event.clone()).or_default() += 1;
        if r.event == "evaluated" {
            if let (Some(p), Some(score)) = (&r.planner_id, r.score) {
                s.scores.push((p.clone(), score));
            }
        }
        if r.event == "iteration_end" {
            s.best_so_far = r.score;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Transcript {
        let mut t = Transcript::in_memory();
        t.record(0, None, RUN_START, json!({"config_digest": "abc"}), None);
        t.record(1, Some("planner-a"), "evaluated", json!({}), Some(40.0));
        t.record(1, None, "iteration_end", json!({}), Some(40.0));
        t.record(1, None, RUN_END, json!({}), Some(40.0));
        t
    }

    #[test]
    fn round_trip_and_summary() {
        let text = sample().to_jsonl();
        let recs = parse_transcript(&text).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs.iter().map(|r| r.ts).collect::<Vec<_>>(), [0, 1, 2, 3]);
        let s = summarize(&recs);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].scores, [("planner-a".to_string(), 40.0)]);
        assert_eq!(s[0].best_so_far, Some(40.0));
    }

    #[test]
    fn framing_errors() {
        assert!(matches!(parse_transcript(""), Err(TranscriptError::Empty)));
        let text = sample().to_jsonl();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_transcript(&truncated), Err(TranscriptError::Unterminated)));
        let broken = text.replacen("\"evaluated\"", "\"evaluated", 1);
        assert!(matches!(parse_transcript(&broken), Err(TranscriptError::Malformed { line: 2, .. })));
    }

    #[test]
    fn file_sink_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut t = Transcript::create(&path).unwrap();
        t.record(0, None, RUN_START, json!({}), None);
        t.record(0, None, RUN_END, json!({}), None);
        let expected = t.to_jsonl();
        t.finish().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), expected);
    }
}
