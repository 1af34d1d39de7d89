//! FER-2013 CSV ingestion and the train/valid partition of its Training rows.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FaceGrid, LabeledImage, Split, PIXELS};
use crate::{Error, Result};

/// Label order of the public FER-2013 release.
pub const FER_CLASSES: [&str; 7] = [
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "neutral",
];

pub const FER_TRAIN_SIZE: usize = 25_109;
pub const FER_VALID_SIZE: usize = 3_589;
pub const FER_PUBLIC_TEST_SIZE: usize = 3_589;
pub const FER_PRIVATE_TEST_SIZE: usize = 3_589;

const EXPECTED_TRAINING_AFTER_REMOVAL: usize = FER_TRAIN_SIZE + FER_VALID_SIZE;

fn usage_to_split(tag: &str) -> Option<Split> {
    match tag.trim() {
        "Training" => Some(Split::Train),
        "PublicTest" => Some(Split::PublicTest),
        "PrivateTest" => Some(Split::PrivateTest),
        "Validation" => Some(Split::Valid),
        _ => None,
    }
}

fn split_to_usage(split: Option<Split>) -> &'static str {
    match split {
        Some(Split::Valid) => "Validation",
        Some(Split::PublicTest) => "PublicTest",
        Some(Split::PrivateTest) | Some(Split::Test) => "PrivateTest",
        Some(Split::Train) | None => "Training",
    }
}

fn parse_pixels(field: &str, row: usize) -> Result<Vec<u8>> {
    let mut pixels = Vec::with_capacity(PIXELS);
    for tok in field.split_ascii_whitespace() {
        let v: u8 = tok.parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("pixel value {tok:?} is not in 0..=255"),
        })?;
        pixels.push(v);
    }
    if pixels.len() != PIXELS {
        return Err(Error::MalformedRow {
            row,
            reason: format!("expected {PIXELS} pixel values, found {}", pixels.len()),
        });
    }
    Ok(pixels)
}

/// Parses a FER-2013 CSV (`emotion,pixels,Usage`). Row indices in errors are
/// zero-based data rows, not counting the header.
pub fn parse_fer_csv<R: Read>(reader: R) -> Result<Vec<LabeledImage>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Dataset(format!("FER CSV header lacks column {name:?}")))
    };
    let (emotion_col, pixels_col, usage_col) = (col("emotion")?, col("pixels")?, col("usage")?);

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    while rdr.read_record(&mut record)? {
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::MalformedRow {
                row,
                reason: format!("missing column {i}"),
            })
        };
        let label_txt = field(emotion_col)?;
        let label: u8 = match label_txt.parse::<u8>() {
            Ok(v) if (v as usize) < FER_CLASSES.len() => v,
            _ => {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("label {label_txt:?} outside 0..=6"),
                })
            }
        };
        let pixels = parse_pixels(field(pixels_col)?, row)?;
        let usage = field(usage_col)?;
        let split = usage_to_split(usage).ok_or_else(|| Error::MalformedRow {
            row,
            reason: format!("unknown usage tag {usage:?}"),
        })?;
        out.push(LabeledImage {
            pixels: FaceGrid::new(pixels)?,
            label,
            split: Some(split),
            subject_id: None,
        });
        row += 1;
    }
    Ok(out)
}

/// Writes records in the FER-2013 CSV layout. Validation rows are tagged
/// `Validation` so a written split can be read back with its tag intact.
pub fn write_fer_csv<'a, W: Write>(
    records: impl IntoIterator<Item = &'a LabeledImage>,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(["emotion", "pixels", "Usage"])?;
    let mut buf = String::with_capacity(PIXELS * 4);
    for rec in records {
        buf.clear();
        for (i, p) in rec.pixels.pixels().iter().enumerate() {
            if i > 0 {
                buf.push(' ');
            }
            let _ = write!(buf, "{p}");
        }
        wtr.write_record([
            rec.label.to_string().as_str(),
            buf.as_str(),
            split_to_usage(rec.split),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<fer csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct FerSplits {
    pub train: Vec<LabeledImage>,
    pub valid: Vec<LabeledImage>,
    pub public_test: Vec<LabeledImage>,
    pub private_test: Vec<LabeledImage>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FerSplitReport {
    pub removed_black: usize,
    pub training_after_removal: usize,
    pub warnings: Vec<String>,
}

/// Removes all-black Training rows and carves a validation part out of the
/// remaining Training rows with a seeded shuffle. Test rows pass through.
///
/// When the post-removal Training count is not the canonical 28,698 the split
/// proceeds proportionally and a warning is recorded in the report.
pub fn split_fer(records: Vec<LabeledImage>, seed: u64) -> (FerSplits, FerSplitReport) {
    let mut report = FerSplitReport::default();
    let mut training = Vec::new();
    let mut splits = FerSplits::default();
    for rec in records {
        match rec.split {
            Some(Split::PublicTest) => splits.public_test.push(rec),
            Some(Split::PrivateTest) | Some(Split::Test) => splits.private_test.push(rec),
            _ => {
                if rec.pixels.is_black() {
                    report.removed_black += 1;
                } else {
                    training.push(rec);
                }
            }
        }
    }
    report.training_after_removal = training.len();

    let n_valid = if training.len() == EXPECTED_TRAINING_AFTER_REMOVAL {
        FER_VALID_SIZE
    } else {
        let msg = format!(
            "dataset mismatch: {} Training rows after removing black images, expected {}; \
             splitting proportionally",
            training.len(),
            EXPECTED_TRAINING_AFTER_REMOVAL
        );
        log::warn!("{msg}");
        report.warnings.push(msg);
        ((training.len() as f64) * FER_VALID_SIZE as f64 / EXPECTED_TRAINING_AFTER_REMOVAL as f64)
            .round() as usize
    };

    let mut order: Vec<usize> = (0..training.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_valid = vec![false; training.len()];
    for &i in &order[..n_valid] {
        is_valid[i] = true;
    }
    for (rec, v) in training.into_iter().zip(is_valid) {
        if v {
            splits.valid.push(LabeledImage {
                split: Some(Split::Valid),
                ..rec
            });
        } else {
            splits.train.push(LabeledImage {
                split: Some(Split::Train),
                ..rec
            });
        }
    }
    (splits, report)
}
