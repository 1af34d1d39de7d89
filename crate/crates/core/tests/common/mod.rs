//! Synthetic corpora for integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use engagement_core::annotation::{AnnotationRecord, BehavioralLabel as B, EmotionalLabel as E};
use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAME: u32 = 96;

fn disk(img: &mut GrayImage, cx: f64, cy: f64, rx: f64, ry: f64, v: u8) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, Luma([v]));
            }
        }
    }
}

/// A bright face-shaped blob on a dark background. Engaged frames look
/// straight ahead with open eyes; disengaged ones have closed eyes or a
/// head turned to one side.
pub fn face_frame(engaged: bool, subject: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let bg = 20 + rng.random_range(0..12u8);
    let mut img = GrayImage::from_pixel(FRAME, FRAME, Luma([bg]));
    let skin = 150 + (subject * 37 % 60) as u8;
    let cx = 48.0 + rng.random_range(-8.0..8.0);
    let cy = 48.0 + rng.random_range(-6.0..6.0);
    let rx = 19.0 + (subject % 5) as f64;
    let ry = 25.0 + (subject % 4) as f64;
    let turned = !engaged && rng.random_bool(0.5);
    let (face_rx, shift) = if turned {
        (rx * 0.8, if rng.random_bool(0.5) { 8.0 } else { -8.0 })
    } else {
        (rx, 0.0)
    };
    disk(&mut img, cx, cy, face_rx, ry, skin);
    let eye_y = cy - 7.0;
    for side in [-1.0, 1.0] {
        let ex = cx + shift + side * 8.0;
        if engaged || turned {
            disk(&mut img, ex, eye_y, 4.0, 3.5, 45);
        } else {
            disk(&mut img, ex, eye_y, 4.5, 1.0, 70);
        }
    }
    disk(&mut img, cx + shift, cy + 12.0, 7.0, 1.5, 90);
    for p in img.pixels_mut() {
        let n: i16 = rng.random_range(-8..=8);
        p.0[0] = (p.0[0] as i16 + n).clamp(0, 255) as u8;
    }
    img
}

pub struct ErCorpus {
    /// (sample_id, subject_id, engaged)
    pub samples: Vec<(String, String, bool)>,
}

/// Writes `n` frames and a `frames.jsonl` listing them into `dir`.
pub fn write_er_frames(dir: &Path, n: usize, subjects: usize, seed: u64) -> ErCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let mut list = std::fs::File::create(dir.join("frames.jsonl")).unwrap();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let subject = i % subjects;
        let engaged = rng.random_bool(0.5);
        let id = format!("s{i:04}");
        let rel = format!("frames/{id}.png");
        face_frame(engaged, subject, &mut rng).save(dir.join(&rel)).unwrap();
        let subject_id = format!("subj{subject:02}");
        let line = serde_json::json!({ "sample_id": id, "image_path": rel, "subject_id": subject_id });
        writeln!(list, "{line}").unwrap();
        samples.push((id, subject_id, engaged));
    }
    ErCorpus { samples }
}

/// Six annotators per sample, each mostly right, sometimes wrong or unsure.
pub fn synthetic_annotations(corpus: &ErCorpus, annotators: usize, seed: u64) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (id, _, engaged) in &corpus.samples {
        for a in 0..annotators {
            let u: f64 = rng.random();
            let says_engaged = if u < 0.8 { *engaged } else { !*engaged };
            let (b, e) = if u > 0.93 {
                if rng.random_bool(0.5) {
                    (B::CantDecide, E::Satisfied)
                } else {
                    (B::OnTask, E::CantDecide)
                }
            } else if says_engaged {
                (B::OnTask, if rng.random_bool(0.7) { E::Satisfied } else { E::Confused })
            } else if rng.random_bool(0.5) {
                (B::OffTask, E::Satisfied)
            } else {
                (B::OnTask, E::Bored)
            };
            out.push(AnnotationRecord::new(id.clone(), format!("ann{a}"), b, e));
        }
    }
    out
}

/// Small FER-style CSV: one oriented-stripe pattern per class plus a few
/// all-black Training rows.
pub fn write_small_fer_csv(path: &Path, per_class: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("emotion,pixels,Usage\n");
    for class in 0..7 {
        let angle = class as f64 * std::f64::consts::PI / 7.0;
        let (s, c) = angle.sin_cos();
        for k in 0..per_class {
            let usage = match k % 10 {
                8 => "PublicTest",
                9 => "PrivateTest",
                _ => "Training",
            };
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut px = String::new();
            for r in 0..48 {
                for col in 0..48 {
                    let t = (r as f64 * s + col as f64 * c) * 0.6 + phase;
                    let v = 128.0 + 90.0 * t.sin() + rng.random_range(-20.0..20.0);
                    let _ = write!(px, "{}{}", if r + col > 0 { " " } else { "" }, v.clamp(0.0, 255.0) as u8);
                }
            }
            let _ = writeln!(text, "{class},{px},{usage}");
        }
    }
    let black = vec!["0"; 2304].join(" ");
    for _ in 0..3 {
        let _ = writeln!(text, "0,{black},Training");
    }
    std::fs::write(path, text).unwrap();
}

/// FER-2013-shaped CSV text: 28,709 Training rows of which 11 are all black,
/// 3,589 PublicTest and 3,589 PrivateTest. Pixel values are single digits
/// to keep the text small.
pub fn canonical_fer_text() -> String {
    let black: Vec<usize> = (0..11).map(|k| 101 + k * 2503).collect();
    let mut text = String::with_capacity(36_000 * 4700);
    text.push_str("emotion,pixels,Usage\n");
    let row = |i: usize, usage: &str, text: &mut String| {
        let _ = write!(text, "{},", i % 7);
        let is_black = usage == "Training" && black.contains(&i);
        for p in 0..2304 {
            if p > 0 {
                text.push(' ');
            }
            let v = if is_black { 0 } else { (i * 7 + p) % 10 };
            text.push((b'0' + v as u8) as char);
        }
        text.push(',');
        text.push_str(usage);
        text.push('\n');
    };
    for i in 0..28_709 {
        row(i, "Training", &mut text);
    }
    for i in 0..3_589 {
        row(i, "PublicTest", &mut text);
    }
    for i in 0..3_589 {
        row(i, "PrivateTest", &mut text);
    }
    text
}
