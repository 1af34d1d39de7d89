//! The two-dimension engagement annotation model.
//!
//! Annotators judge a behavioral dimension (on/off task) and an emotional
//! dimension (satisfied/confused/bored) for each image. The two are combined
//! into an engaged/disengaged vote per annotator, votes are aggregated per
//! image by strict majority, and images with too many "can't decide"
//! judgments are dropped.

mod aggregate;
mod build;
mod kappa;
mod records;

pub use aggregate::{aggregate_sample, AggregationResult, ExclusionReason, Outcome, VoteCounts};
pub use build::{build_dataset, BuildStats, ImageSource, SampleInfo};
pub use kappa::fleiss_kappa;
pub use records::{read_records, write_records, AnnotationRecord};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum number of annotations per image.
pub const MIN_ANNOTATIONS: usize = 6;
/// An image is dropped when either dimension receives more "can't decide"
/// judgments than this.
pub const MAX_CANT_DECIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehavioralLabel {
    OnTask,
    OffTask,
    CantDecide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionalLabel {
    Satisfied,
    Confused,
    Bored,
    CantDecide,
}

impl BehavioralLabel {
    pub const ALL: [BehavioralLabel; 3] = [
        BehavioralLabel::OnTask,
        BehavioralLabel::OffTask,
        BehavioralLabel::CantDecide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehavioralLabel::OnTask => "on_task",
            BehavioralLabel::OffTask => "off_task",
            BehavioralLabel::CantDecide => "cant_decide",
        }
    }
}

impl EmotionalLabel {
    pub const ALL: [EmotionalLabel; 4] = [
        EmotionalLabel::Satisfied,
        EmotionalLabel::Confused,
        EmotionalLabel::Bored,
        EmotionalLabel::CantDecide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionalLabel::Satisfied => "satisfied",
            EmotionalLabel::Confused => "confused",
            EmotionalLabel::Bored => "bored",
            EmotionalLabel::CantDecide => "cant_decide",
        }
    }
}

impl std::str::FromStr for BehavioralLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BehavioralLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown behavioral label {s:?}")))
    }
}

impl std::str::FromStr for EmotionalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmotionalLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown emotional label {s:?}")))
    }
}

/// One annotator's combined judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedLabel {
    Engaged,
    Disengaged,
    Undecidable,
}

/// Maps a (behavioral, emotional) pair to engagement. On-task with satisfied
/// or confused is engaged; on-task and bored, or any off-task judgment, is
/// disengaged; "can't decide" in either dimension yields no vote.
pub fn combine_dimensions(b: BehavioralLabel, e: EmotionalLabel) -> CombinedLabel {
    use BehavioralLabel as B;
    use EmotionalLabel as E;
    match (b, e) {
        (B::CantDecide, _) | (_, E::CantDecide) => CombinedLabel::Undecidable,
        (B::OnTask, E::Satisfied) | (B::OnTask, E::Confused) => CombinedLabel::Engaged,
        (B::OnTask, E::Bored) => CombinedLabel::Disengaged,
        (B::OffTask, _) => CombinedLabel::Disengaged,
    }
}

/// Annotator-facing definitions of each option, in display order.
pub fn definitions() -> serde_json::Value {
    serde_json::json!({
        "behavioral": [
            {"value": "on_task", "label": "On-Task",
             "definition": "Gaze is directed at the screen, or down at the keyboard just below it."},
            {"value": "off_task", "label": "Off-Task",
             "definition": "Gaze is directed anywhere else, the eyes are fully closed, or the head is turned away."},
            {"value": "cant_decide", "label": "Can't Decide",
             "definition": "Choose this when the behavioral state cannot be judged."}
        ],
        "emotional": [
            {"value": "satisfied", "label": "Satisfied",
             "definition": "No emotional difficulty with the task; covers every positive state from neutral to excited."},
            {"value": "confused", "label": "Confused",
             "definition": "The student appears confused by the task; may include related negative states such as frustration."},
            {"value": "bored", "label": "Bored",
             "definition": "The student appears bored with the task."},
            {"value": "cant_decide", "label": "Can't Decide",
             "definition": "Choose this when the emotional state cannot be judged."}
        ]
    })
}
