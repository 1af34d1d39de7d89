use std::collections::VecDeque;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

/// Axis-aligned detection in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub score: f32,
}

impl FaceBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32, score: f32) -> Self {
        FaceBox {
            x,
            y,
            width,
            height,
            score,
        }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Box covering a whole `width`×`height` image.
    pub fn full_frame(width: u32, height: u32) -> Self {
        FaceBox::new(0, 0, width, height, 1.0)
    }

    /// Clips the box to the image; `None` when nothing of positive area is left.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<FaceBox> {
        let x0 = self.x.min(width);
        let y0 = self.y.min(height);
        let x1 = self.x.saturating_add(self.width).min(width);
        let y1 = self.y.saturating_add(self.height).min(height);
        (x1 > x0 && y1 > y0).then(|| FaceBox::new(x0, y0, x1 - x0, y1 - y0, self.score))
    }
}

/// A source of face detections. Implementations return every face they find;
/// selection of the one to keep happens in [`detect_largest_face`].
pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &GrayImage) -> Vec<FaceBox>;
}

/// Picks the detection with the largest area. Ties are broken by score and
/// then by position so the result does not depend on detection order.
pub fn largest_face(boxes: &[FaceBox]) -> Option<FaceBox> {
    boxes.iter().copied().max_by(|a, b| {
        a.area()
            .cmp(&b.area())
            .then(a.score.total_cmp(&b.score))
            .then(b.y.cmp(&a.y))
            .then(b.x.cmp(&a.x))
            .then(b.width.cmp(&a.width))
    })
}

pub fn detect_largest_face(detector: &dyn FaceDetector, image: &DynamicImage) -> Option<FaceBox> {
    let gray = image.to_luma8();
    let boxes: Vec<FaceBox> = detector
        .detect(&gray)
        .into_iter()
        .filter_map(|b| b.clamp_to(gray.width(), gray.height()))
        .collect();
    largest_face(&boxes)
}

/// Bundled detector for frames where the face is the dominant bright region
/// against a darker background (webcam frames of a seated student, synthetic
/// renders). Otsu-thresholds a downscaled frame, labels connected bright
/// components and keeps the roughly face-shaped ones.
///
/// It is not a general-purpose detector. Frames with precomputed boxes from an
/// external CNN detector should bypass it.
#[derive(Debug, Clone)]
pub struct ContrastBlobDetector {
    /// Frames whose gray-level standard deviation is below this have no
    /// detectable structure.
    pub min_contrast: f64,
    /// Minimum component box area as a fraction of the frame.
    pub min_area_fraction: f64,
    /// Accepted width/height range.
    pub aspect_range: (f64, f64),
    /// Minimum ratio of component pixels to box area.
    pub min_fill: f64,
    /// Longest side of the working copy.
    pub work_size: u32,
}

impl Default for ContrastBlobDetector {
    fn default() -> Self {
        ContrastBlobDetector {
            min_contrast: 8.0,
            min_area_fraction: 0.01,
            aspect_range: (0.5, 2.0),
            min_fill: 0.45,
            work_size: 160,
        }
    }
}

fn otsu_threshold(hist: &[u64; 256], total: u64) -> u8 {
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w_b, mut sum_b) = (0f64, 0f64);
    let (mut best, mut best_t) = (-1f64, 0u8);
    for (t, &h) in hist.iter().enumerate() {
        w_b += h as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total as f64 - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += t as f64 * h as f64;
        let m_b = sum_b / w_b;
        let m_f = (sum_all - sum_b) / w_f;
        let between = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

impl FaceDetector for ContrastBlobDetector {
    fn detect(&self, image: &GrayImage) -> Vec<FaceBox> {
        let (w0, h0) = image.dimensions();
        if w0 == 0 || h0 == 0 {
            return Vec::new();
        }
        let scale = (w0.max(h0) as f64 / self.work_size as f64).max(1.0);
        let (w, h) = (
            ((w0 as f64 / scale).round() as u32).max(1),
            ((h0 as f64 / scale).round() as u32).max(1),
        );
        let work = if scale > 1.0 {
            image::imageops::resize(image, w, h, image::imageops::FilterType::Triangle)
        } else {
            image.clone()
        };

        let n = (w * h) as u64;
        let mut hist = [0u64; 256];
        let (mut s, mut s2) = (0f64, 0f64);
        for p in work.pixels() {
            let v = p.0[0];
            hist[v as usize] += 1;
            s += v as f64;
            s2 += (v as f64) * (v as f64);
        }
        let mean = s / n as f64;
        let std = (s2 / n as f64 - mean * mean).max(0.0).sqrt();
        if std < self.min_contrast {
            return Vec::new();
        }
        let t = otsu_threshold(&hist, n);
        let fg: Vec<bool> = work.pixels().map(|p| p.0[0] > t).collect();

        let (wu, hu) = (w as usize, h as usize);
        let mut seen = vec![false; fg.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..fg.len() {
            if !fg[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
            let mut count = 0usize;
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % wu, i / wu);
                count += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |j: usize| {
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < wu {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - wu);
                }
                if y + 1 < hu {
                    visit(i + wu);
                }
            }
            let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            let box_area = bw * bh;
            let aspect = bw / bh;
            let fill = count as f64 / box_area;
            if box_area < self.min_area_fraction * n as f64
                || aspect < self.aspect_range.0
                || aspect > self.aspect_range.1
                || fill < self.min_fill
            {
                continue;
            }
            let to_src = |v: usize| ((v as f64) * scale).round() as u32;
            let bx = to_src(x0);
            let by = to_src(y0);
            let bxe = to_src(x1 + 1).min(w0);
            let bye = to_src(y1 + 1).min(h0);
            if bxe > bx && bye > by {
                out.push(FaceBox::new(bx, by, bxe - bx, bye - by, fill as f32));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn biggest_box_wins() {
        let a = FaceBox::new(0, 0, 30, 30, 0.5);
        let b = FaceBox::new(50, 50, 20, 20, 0.9);
        assert_eq!(largest_face(&[a, b]), Some(a));
        assert_eq!(largest_face(&[b, a]), Some(a));
        assert_eq!(largest_face(&[b]), Some(b));
        assert_eq!(largest_face(&[]), None);
    }

    #[test]
    fn equal_areas_do_not_depend_on_order() {
        let a = FaceBox::new(0, 0, 20, 20, 0.5);
        let b = FaceBox::new(40, 0, 20, 20, 0.5);
        let c = FaceBox::new(0, 40, 20, 20, 0.5);
        let first = largest_face(&[a, b, c]);
        assert_eq!(first, largest_face(&[c, b, a]));
        assert_eq!(first, largest_face(&[b, c, a]));
    }

    #[test]
    fn clamp_rejects_outside_boxes() {
        assert_eq!(FaceBox::new(100, 0, 10, 10, 0.0).clamp_to(50, 50), None);
        assert_eq!(
            FaceBox::new(40, 40, 20, 20, 0.0).clamp_to(50, 50),
            Some(FaceBox::new(40, 40, 10, 10, 0.0))
        );
    }

    fn frame_with_blobs(blobs: &[(u32, u32, u32)]) -> GrayImage {
        GrayImage::from_fn(200, 150, |x, y| {
            let inside = blobs.iter().any(|&(cx, cy, r)| {
                let dx = x as f64 - cx as f64;
                let dy = (y as f64 - cy as f64) / 1.2;
                dx * dx + dy * dy <= (r * r) as f64
            });
            Luma([if inside { 200 } else { 30 }])
        })
    }

    #[test]
    fn finds_bright_blobs_and_selects_largest() {
        let img = frame_with_blobs(&[(50, 60, 30), (150, 70, 18)]);
        let det = ContrastBlobDetector::default();
        let boxes = det.detect(&img);
        assert_eq!(boxes.len(), 2);
        let best = detect_largest_face(&det, &DynamicImage::ImageLuma8(img)).unwrap();
        assert!(best.x <= 22 && best.x + best.width >= 78, "{best:?}");
    }

    #[test]
    fn uniform_frame_has_no_face() {
        let img = GrayImage::from_pixel(120, 120, Luma([90]));
        let det = ContrastBlobDetector::default();
        assert!(detect_largest_face(&det, &DynamicImage::ImageLuma8(img)).is_none());
    }
}
