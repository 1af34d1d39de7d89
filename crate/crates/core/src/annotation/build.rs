use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    aggregate_sample, combine_dimensions, fleiss_kappa, AggregationResult, AnnotationRecord,
    CombinedLabel, ExclusionReason, Outcome,
};
use crate::dataset::{ErManifestEntry, DISENGAGED, ENGAGED};
use crate::{Error, Result};

/// Where an annotated image lives and whose it is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub sample_id: String,
    pub image_path: String,
    pub subject_id: String,
}

pub trait ImageSource {
    fn lookup(&self, sample_id: &str) -> Option<&SampleInfo>;
}

impl ImageSource for HashMap<String, SampleInfo> {
    fn lookup(&self, sample_id: &str) -> Option<&SampleInfo> {
        self.get(sample_id)
    }
}

impl ImageSource for BTreeMap<String, SampleInfo> {
    fn lookup(&self, sample_id: &str) -> Option<&SampleInfo> {
        self.get(sample_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub samples: usize,
    pub total: usize,
    pub engaged: usize,
    pub disengaged: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
    /// Agreement over engaged/disengaged/undecidable votes, computed on the
    /// samples carrying the most common annotation count.
    pub fleiss_kappa: Option<f64>,
    pub kappa_raters: Option<usize>,
    pub results: Vec<AggregationResult>,
}

impl BuildStats {
    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }
}

/// Aggregates every sample and keeps the ones with a decided label.
/// Output order follows sample id.
pub fn build_dataset(
    records: &[AnnotationRecord],
    source: &dyn ImageSource,
) -> Result<(Vec<ErManifestEntry>, BuildStats)> {
    let mut grouped: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.sample_id.as_str()).or_default().push(r.clone());
    }

    let mut stats = BuildStats {
        samples: grouped.len(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    for (sample_id, recs) in &grouped {
        let result = aggregate_sample(recs)?;
        let label = match result.outcome {
            Outcome::Engaged => Some(ENGAGED),
            Outcome::Disengaged => Some(DISENGAGED),
            Outcome::Excluded => None,
        };
        match (label, result.exclusion_reason) {
            (Some(label), _) => {
                let info = source.lookup(sample_id).ok_or_else(|| {
                    Error::Validation(format!("sample {sample_id} is missing from the image source"))
                })?;
                if label == ENGAGED {
                    stats.engaged += 1;
                } else {
                    stats.disengaged += 1;
                }
                entries.push(ErManifestEntry {
                    image_path: info.image_path.clone(),
                    subject_id: Some(info.subject_id.clone()),
                    label,
                    split: None,
                    sample_id: Some(info.sample_id.clone()),
                });
            }
            (None, Some(reason)) => *stats.excluded.entry(reason).or_default() += 1,
            (None, None) => unreachable!("excluded outcome always carries a reason"),
        }
        stats.results.push(result);
    }
    stats.total = entries.len();

    let mut by_count: BTreeMap<usize, usize> = BTreeMap::new();
    for recs in grouped.values() {
        *by_count.entry(recs.len()).or_default() += 1;
    }
    if let Some((&raters, _)) = by_count
        .iter()
        .filter(|(&n, _)| n >= 2)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
    {
        let rows: Vec<Vec<u32>> = grouped
            .values()
            .filter(|r| r.len() == raters)
            .map(|recs| {
                let mut row = vec![0u32; 3];
                for r in recs {
                    let idx = match combine_dimensions(r.behavioral, r.emotional) {
                        CombinedLabel::Engaged => 0,
                        CombinedLabel::Disengaged => 1,
                        CombinedLabel::Undecidable => 2,
                    };
                    row[idx] += 1;
                }
                row
            })
            .collect();
        stats.fleiss_kappa = fleiss_kappa(&rows).ok();
        stats.kappa_raters = Some(raters);
    }
    Ok((entries, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{BehavioralLabel as B, EmotionalLabel as E};

    fn source(ids: &[&str]) -> HashMap<String, SampleInfo> {
        ids.iter()
            .map(|id| {
                (
                    id.to_string(),
                    SampleInfo {
                        sample_id: id.to_string(),
                        image_path: format!("{id}.png"),
                        subject_id: "subj".into(),
                    },
                )
            })
            .collect()
    }

    fn sample(id: &str, pairs: &[(B, E)]) -> Vec<AnnotationRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(b, e))| AnnotationRecord::new(id, format!("a{i}"), b, e))
            .collect()
    }

    #[test]
    fn mixed_three_samples() {
        // s1: 4 engaged (on/satisfied, on/confused) vs 2 disengaged -> engaged
        // s2: on/bored and off/* dominate -> disengaged 5 vs 1
        // s3: 3 behavioral can't-decide -> excluded
        let mut recs = sample(
            "s1",
            &[
                (B::OnTask, E::Satisfied),
                (B::OnTask, E::Confused),
                (B::OnTask, E::Satisfied),
                (B::OnTask, E::Confused),
                (B::OffTask, E::Satisfied),
                (B::OnTask, E::Bored),
            ],
        );
        recs.extend(sample(
            "s2",
            &[
                (B::OnTask, E::Bored),
                (B::OffTask, E::Confused),
                (B::OffTask, E::Bored),
                (B::OffTask, E::Satisfied),
                (B::OnTask, E::Satisfied),
                (B::OnTask, E::Bored),
            ],
        ));
        recs.extend(sample(
            "s3",
            &[
                (B::CantDecide, E::Satisfied),
                (B::CantDecide, E::Bored),
                (B::CantDecide, E::Confused),
                (B::OnTask, E::Satisfied),
                (B::OnTask, E::Satisfied),
                (B::OnTask, E::Satisfied),
            ],
        ));
        let (entries, stats) = build_dataset(&recs, &source(&["s1", "s2", "s3"])).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].label, ENGAGED);
        assert_eq!(entries[1].label, DISENGAGED);
        assert_eq!(stats.engaged, 1);
        assert_eq!(stats.disengaged, 1);
        assert_eq!(stats.excluded[&ExclusionReason::TooManyCantDecide], 1);
        assert_eq!(stats.total + stats.excluded_total(), stats.samples);
        assert_eq!(stats.kappa_raters, Some(6));
    }

    #[test]
    fn all_tied() {
        let half = [
            (B::OnTask, E::Satisfied),
            (B::OnTask, E::Satisfied),
            (B::OnTask, E::Satisfied),
            (B::OffTask, E::Bored),
            (B::OffTask, E::Bored),
            (B::OffTask, E::Bored),
        ];
        let mut recs = sample("x", &half);
        recs.extend(sample("y", &half));
        let (entries, stats) = build_dataset(&recs, &source(&[])).unwrap();
        assert!(entries.is_empty());
        assert_eq!(stats.excluded[&ExclusionReason::Tie], 2);
    }

    #[test]
    fn labeled_sample_missing_from_source() {
        let recs = sample("z", &[(B::OnTask, E::Satisfied); 6]);
        assert!(build_dataset(&recs, &source(&[])).is_err());
    }
}
