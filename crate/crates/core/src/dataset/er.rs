//! Engagement-recognition manifests and subject-independent splitting.
//!
//! A manifest is line-delimited JSON. An optional first line
//! `{"header": {...}}` records the counts the file is expected to hold; every
//! other line is one [`ErManifestEntry`]. Image paths are resolved relative to
//! the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FaceGrid, LabeledImage, Split, DISENGAGED, ENGAGED, SIDE};
use crate::preprocess::{load_image, standardize_face, FaceBox};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErManifestEntry {
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub total: usize,
    pub engaged: usize,
    pub disengaged: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, usize>,
}

impl ManifestHeader {
    pub fn tally(entries: &[ErManifestEntry]) -> Self {
        let mut h = ManifestHeader {
            total: entries.len(),
            ..Default::default()
        };
        for e in entries {
            if e.label == ENGAGED {
                h.engaged += 1;
            } else {
                h.disengaged += 1;
            }
            if let Some(s) = e.split {
                *h.splits.entry(s.as_str().to_string()).or_default() += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErManifest {
    pub header: Option<ManifestHeader>,
    pub entries: Vec<ErManifestEntry>,
}

#[derive(Deserialize)]
struct HeaderLine {
    header: ManifestHeader,
}

fn validate_entry(e: &ErManifestEntry, line: usize) -> Result<()> {
    if e.label != ENGAGED && e.label != DISENGAGED {
        return Err(Error::Validation(format!(
            "line {line}: label {} is not binary",
            e.label
        )));
    }
    match &e.subject_id {
        Some(s) if !s.is_empty() => {}
        _ => {
            return Err(Error::Validation(format!(
                "line {line}: record {:?} has no subject_id",
                e.image_path
            )))
        }
    }
    if let Some(s) = e.split {
        if !matches!(s, Split::Train | Split::Valid | Split::Test) {
            return Err(Error::Validation(format!(
                "line {line}: split {s} is not one of train/valid/test"
            )));
        }
    }
    Ok(())
}

/// Reads and validates a manifest without touching the images.
pub fn read_er_manifest(path: &Path) -> Result<ErManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = ErManifest::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if manifest.header.is_none() && manifest.entries.is_empty() && trimmed.contains("\"header\"") {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(trimmed) {
                manifest.header = Some(h.header);
                continue;
            }
        }
        let entry: ErManifestEntry = serde_json::from_str(trimmed)
            .map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?;
        validate_entry(&entry, i + 1)?;
        manifest.entries.push(entry);
    }
    if let Some(h) = &manifest.header {
        let actual = ManifestHeader::tally(&manifest.entries);
        if actual.total != h.total || actual.engaged != h.engaged || actual.disengaged != h.disengaged {
            return Err(Error::Dataset(format!(
                "manifest header declares {}/{}/{} (total/engaged/disengaged) but file holds {}/{}/{}",
                h.total, h.engaged, h.disengaged, actual.total, actual.engaged, actual.disengaged
            )));
        }
    }
    Ok(manifest)
}

/// Writes entries with a header line tallied from them.
pub fn write_er_manifest<W: Write>(entries: &[ErManifestEntry], mut out: W) -> Result<()> {
    let header = ManifestHeader::tally(entries);
    let io = |e| Error::io("<manifest writer>", e);
    serde_json::to_writer(&mut out, &serde_json::json!({ "header": header }))?;
    out.write_all(b"\n").map_err(io)?;
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_face(path: &Path) -> Result<FaceGrid> {
    let img = load_image(path)?;
    if img.width() as usize == SIDE && img.height() as usize == SIDE {
        if let image::DynamicImage::ImageLuma8(g) = img {
            return FaceGrid::new(g.into_raw());
        }
    }
    standardize_face(&img, &FaceBox::full_frame(img.width(), img.height()))
}

/// Loads a manifest and its images. Images that are not already 48×48
/// grayscale are converted with a full-frame standardization.
pub fn load_er_manifest(path: &Path) -> Result<Vec<LabeledImage>> {
    let manifest = read_er_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(LabeledImage {
                pixels: load_face(&resolve(base, &e.image_path))?,
                label: e.label,
                split: e.split,
                subject_id: e.subject_id.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct ErSplits {
    pub train: Vec<LabeledImage>,
    pub valid: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl ErSplits {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Routes every record to its subject's split.
pub fn split_er(records: Vec<LabeledImage>, assignment: &[(String, Split)]) -> Result<ErSplits> {
    let mut by_subject: HashMap<&str, Split> = HashMap::new();
    for (subject, split) in assignment {
        if !matches!(split, Split::Train | Split::Valid | Split::Test) {
            return Err(Error::Validation(format!(
                "subject {subject} assigned to {split}, expected train/valid/test"
            )));
        }
        if let Some(prev) = by_subject.insert(subject.as_str(), *split) {
            if prev != *split {
                return Err(Error::Validation(format!(
                    "subject {subject} assigned to both {prev} and {split}"
                )));
            }
        }
    }
    let mut out = ErSplits::default();
    for rec in records {
        let subject = rec
            .subject_id
            .as_deref()
            .ok_or_else(|| Error::Validation("record without subject_id".into()))?;
        let split = *by_subject
            .get(subject)
            .ok_or_else(|| Error::Validation(format!("subject {subject} has no split assignment")))?;
        let rec = LabeledImage {
            split: Some(split),
            ..rec
        };
        match split {
            Split::Train => out.train.push(rec),
            Split::Valid => out.valid.push(rec),
            _ => out.test.push(rec),
        }
    }
    Ok(out)
}

/// Target proportions for subject-level assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// Proportions of the 3,224 / 715 / 688 engagement partition.
    fn default() -> Self {
        SplitFractions {
            train: 3224.0 / 4627.0,
            valid: 715.0 / 4627.0,
            test: 688.0 / 4627.0,
        }
    }
}

/// Assigns whole subjects to splits, greedily filling the split with the
/// largest remaining deficit. `sample_counts` maps subject to its record count.
pub fn assign_subjects(
    sample_counts: &BTreeMap<String, usize>,
    fractions: SplitFractions,
    seed: u64,
) -> Vec<(String, Split)> {
    let total: usize = sample_counts.values().sum();
    let sum_f = fractions.train + fractions.valid + fractions.test;
    let targets = [
        (Split::Train, fractions.train / sum_f * total as f64),
        (Split::Valid, fractions.valid / sum_f * total as f64),
        (Split::Test, fractions.test / sum_f * total as f64),
    ];
    let mut subjects: Vec<(&String, usize)> = sample_counts.iter().map(|(k, &v)| (k, v)).collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // larger subjects first keeps the greedy fill close to target
    subjects.sort_by_key(|s| std::cmp::Reverse(s.1));
    let mut filled = [0usize; 3];
    let mut out = Vec::with_capacity(subjects.len());
    for (subject, count) in subjects {
        let (idx, _) = targets
            .iter()
            .enumerate()
            .map(|(i, (_, t))| (i, t - filled[i] as f64))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        filled[idx] += count;
        out.push((subject.clone(), targets[idx].0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(subject: &str, label: u8) -> LabeledImage {
        LabeledImage {
            pixels: FaceGrid::filled(1),
            label,
            split: None,
            subject_id: Some(subject.into()),
        }
    }

    #[test]
    fn single_subject_to_test() {
        let recs = vec![rec("s1", 1), rec("s1", 0), rec("s1", 1)];
        let s = split_er(recs, &[("s1".into(), Split::Test)]).unwrap();
        assert_eq!(s.test.len(), 3);
        assert!(s.train.is_empty() && s.valid.is_empty());
    }

    #[test]
    fn subject_in_two_splits_is_an_error() {
        let recs = vec![rec("s1", 1)];
        let err = split_er(
            recs,
            &[("s1".into(), Split::Train), ("s1".into(), Split::Test)],
        );
        assert!(err.is_err());
    }

    #[test]
    fn unassigned_subject_is_an_error() {
        assert!(split_er(vec![rec("s9", 1)], &[("s1".into(), Split::Train)]).is_err());
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(read_er_manifest(&p).unwrap().entries.is_empty());
        assert!(load_er_manifest(&p).unwrap().is_empty());

        std::fs::write(&p, r#"{"image_path":"a.png","label":1}"#).unwrap();
        assert!(matches!(read_er_manifest(&p), Err(Error::Validation(_))));

        std::fs::write(&p, r#"{"image_path":"a.png","subject_id":"s","label":2}"#).unwrap();
        assert!(matches!(read_er_manifest(&p), Err(Error::Validation(_))));

        assert!(matches!(
            read_er_manifest(&dir.path().join("missing.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn header_counts_are_checked() {
        let entries: Vec<ErManifestEntry> = (0..10)
            .map(|i| ErManifestEntry {
                image_path: format!("{i}.png"),
                subject_id: Some(format!("s{}", i % 3)),
                label: (i % 2) as u8,
                split: None,
                sample_id: None,
            })
            .collect();
        let mut buf = Vec::new();
        write_er_manifest(&entries, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, &buf).unwrap();
        let m = read_er_manifest(&p).unwrap();
        assert_eq!(m.entries, entries);
        assert_eq!(m.header.unwrap().engaged, 5);

        let tampered = String::from_utf8(buf).unwrap().replacen("\"engaged\":5", "\"engaged\":6", 1);
        std::fs::write(&p, tampered).unwrap();
        assert!(matches!(read_er_manifest(&p), Err(Error::Dataset(_))));
    }

    #[test]
    fn loads_images_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let g = image::GrayImage::from_fn(48, 48, |x, y| image::Luma([(x + y) as u8]));
        g.save(dir.path().join("a.png")).unwrap();
        image::GrayImage::from_pixel(96, 96, image::Luma([9]))
            .save(dir.path().join("b.png"))
            .unwrap();
        std::fs::write(
            dir.path().join("m.jsonl"),
            "{\"image_path\":\"a.png\",\"subject_id\":\"s1\",\"label\":1,\"split\":\"train\"}\n\
             {\"image_path\":\"b.png\",\"subject_id\":\"s2\",\"label\":0}\n",
        )
        .unwrap();
        let recs = load_er_manifest(&dir.path().join("m.jsonl")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pixels.pixels(), g.as_raw().as_slice());
        assert_eq!(recs[0].split, Some(Split::Train));
        assert!(recs[1].pixels.pixels().iter().all(|&p| p == 9));
    }

    proptest! {
        #[test]
        fn splits_are_subject_disjoint_and_complete(
            counts in proptest::collection::btree_map("[a-z]{1,4}", 1usize..40, 1..25),
            seed in any::<u64>(),
        ) {
            let assignment = assign_subjects(&counts, SplitFractions::default(), seed);
            let recs: Vec<LabeledImage> = counts
                .iter()
                .flat_map(|(s, &n)| (0..n).map(move |i| rec(s, (i % 2) as u8)))
                .collect();
            let total = recs.len();
            let splits = split_er(recs, &assignment).unwrap();
            prop_assert_eq!(splits.len(), total);
            let subjects = |v: &Vec<LabeledImage>| {
                v.iter().map(|r| r.subject_id.clone().unwrap()).collect::<std::collections::HashSet<_>>()
            };
            let (a, b, c) = (subjects(&splits.train), subjects(&splits.valid), subjects(&splits.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        }
    }
}
