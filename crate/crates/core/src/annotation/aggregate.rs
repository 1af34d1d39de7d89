use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    combine_dimensions, AnnotationRecord, BehavioralLabel, CombinedLabel, EmotionalLabel,
    MAX_CANT_DECIDE, MIN_ANNOTATIONS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Engaged,
    Disengaged,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooManyCantDecide,
    Tie,
    TooFewAnnotations,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub engaged: usize,
    pub disengaged: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub sample_id: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<ExclusionReason>,
    pub vote_counts: VoteCounts,
}

impl AggregationResult {
    fn excluded(sample_id: String, reason: ExclusionReason, votes: VoteCounts) -> Self {
        AggregationResult {
            sample_id,
            outcome: Outcome::Excluded,
            exclusion_reason: Some(reason),
            vote_counts: votes,
        }
    }
}

/// Aggregates every annotation of one image.
///
/// Checks run in order: more than two "can't decide" in either dimension,
/// fewer than six annotations, then a strict majority over the cast
/// engaged/disengaged votes (undecidable judgments abstain). Equal vote counts
/// exclude the image as a tie.
pub fn aggregate_sample(records: &[AnnotationRecord]) -> Result<AggregationResult> {
    let sample_id = records
        .first()
        .map(|r| r.sample_id.clone())
        .ok_or_else(|| Error::Validation("no annotations to aggregate".into()))?;
    let mut annotators = HashSet::with_capacity(records.len());
    for r in records {
        if r.sample_id != sample_id {
            return Err(Error::Validation(format!(
                "records for {} and {} aggregated together",
                sample_id, r.sample_id
            )));
        }
        if !annotators.insert(r.annotator_id.as_str()) {
            return Err(Error::DuplicateAnnotation {
                sample_id: sample_id.clone(),
                annotator_id: r.annotator_id.clone(),
            });
        }
    }

    let mut votes = VoteCounts::default();
    let (mut cant_b, mut cant_e) = (0usize, 0usize);
    for r in records {
        cant_b += (r.behavioral == BehavioralLabel::CantDecide) as usize;
        cant_e += (r.emotional == EmotionalLabel::CantDecide) as usize;
        match combine_dimensions(r.behavioral, r.emotional) {
            CombinedLabel::Engaged => votes.engaged += 1,
            CombinedLabel::Disengaged => votes.disengaged += 1,
            CombinedLabel::Undecidable => {}
        }
    }

    if cant_b > MAX_CANT_DECIDE || cant_e > MAX_CANT_DECIDE {
        return Ok(AggregationResult::excluded(
            sample_id,
            ExclusionReason::TooManyCantDecide,
            votes,
        ));
    }
    if records.len() < MIN_ANNOTATIONS {
        return Ok(AggregationResult::excluded(
            sample_id,
            ExclusionReason::TooFewAnnotations,
            votes,
        ));
    }
    let outcome = match votes.engaged.cmp(&votes.disengaged) {
        std::cmp::Ordering::Greater => Outcome::Engaged,
        std::cmp::Ordering::Less => Outcome::Disengaged,
        std::cmp::Ordering::Equal => {
            return Ok(AggregationResult::excluded(sample_id, ExclusionReason::Tie, votes))
        }
    };
    Ok(AggregationResult {
        sample_id,
        outcome,
        exclusion_reason: None,
        vote_counts: votes,
    })
}
