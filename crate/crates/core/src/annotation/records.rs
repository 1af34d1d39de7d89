use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{BehavioralLabel, EmotionalLabel};
use crate::{Error, Result};

/// One annotator's judgment of one image. Interchange format is one JSON
/// object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub behavioral: BehavioralLabel,
    pub emotional: EmotionalLabel,
    pub timestamp: DateTime<Utc>,
}

impl AnnotationRecord {
    /// Record stamped with the Unix epoch; see [`AnnotationRecord::at`].
    pub fn new(
        sample_id: impl Into<String>,
        annotator_id: impl Into<String>,
        behavioral: BehavioralLabel,
        emotional: EmotionalLabel,
    ) -> Self {
        AnnotationRecord {
            sample_id: sample_id.into(),
            annotator_id: annotator_id.into(),
            behavioral,
            emotional,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    pub fn at(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = timestamp;
        self
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<annotation records>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("annotation line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<'a, W: Write>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    mut out: W,
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<annotation records>", e))?;
    }
    Ok(())
}
