//! JSONL trace corpora: one trace object per line.

use crate::trace::{TraceError, TraceState};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: invariant violation on `{field}`: {reason}")]
    InvariantViolation {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReplayError {
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ReplayError::InvariantViolation { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub fn replay_load(path: &Path) -> Result<Vec<TraceState>, ReplayError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(file)
}

/// Parses and validates a JSONL corpus. Blank lines are skipped.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<TraceState>, ReplayError> {
    let mut traces = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: TraceState =
            serde_json::from_str(&line).map_err(|e| ReplayError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
        trace.validate().map_err(|e| match e {
            TraceError::InvariantViolation { field, reason } => ReplayError::InvariantViolation {
                line: line_no,
                field,
                reason,
            },
            other => ReplayError::InvariantViolation {
                line: line_no,
                field: "steps",
                reason: other.to_string(),
            },
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

pub fn write_jsonl<W: Write>(mut writer: W, traces: &[TraceState]) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Origin, StepRecord, Truth};

    const TWO: &str = r#"{"query_id":"a","steps":[{"score":0.9,"tokens":12,"origin":"weak","truth":"correct"}],"terminated":true}
{"query_id":"b","steps":[{"score":0.2,"tokens":40,"origin":"strong"},{"score":0.7,"tokens":9,"origin":"weak"}],"terminated":false}
"#;

    #[test]
    fn loads_two_traces() {
        let traces = read_jsonl(TWO.as_bytes()).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[1].step_index(), 2);
        assert_eq!(traces[0].steps()[0].truth, Some(Truth::Correct));
        assert_eq!(traces[1].steps()[0].origin, Origin::Strong);
    }

    #[test]
    fn out_of_range_score_names_field() {
        let bad = r#"{"query_id":"a","steps":[{"score":1.5,"tokens":3,"origin":"weak"}],"terminated":true}"#;
        let err = read_jsonl(bad.as_bytes()).unwrap_err();
        assert_eq!(err.field(), Some("score"));
        assert!(matches!(err, ReplayError::InvariantViolation { line: 1, .. }));
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let text = format!("{}{}", TWO, r#"{"query_id":"c","steps":[{"score":0.5"#);
        let err = read_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, ReplayError::ParseError { line: 3, .. }), "{err}");
    }

    #[test]
    fn write_then_read_is_lossless() {
        let t = TraceState::from_steps(
            "q",
            vec![
                StepRecord::new(0.123456789, 17, Origin::Weak).with_truth(Truth::Incorrect),
                StepRecord::new(1.0, 1, Origin::Strong),
            ],
            true,
            30,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&t)).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), vec![t]);
    }
}
