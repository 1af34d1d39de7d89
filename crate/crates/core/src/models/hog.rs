use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cell size in pixels, block size in cells, and unsigned orientation bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    pub cell: usize,
    pub block: usize,
    pub bins: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            cell: 8,
            block: 2,
            bins: 9,
        }
    }
}

/// Descriptor length for 48×48 inputs under the default parameters.
pub const HOG_LEN: usize = 900;

impl HogParams {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || self.block == 0 || self.bins == 0 {
            return Err(Error::Validation(format!("degenerate HOG parameters {self:?}")));
        }
        Ok(())
    }

    pub fn descriptor_len(&self, height: usize, width: usize) -> usize {
        let (cy, cx) = (height / self.cell, width / self.cell);
        if cy < self.block || cx < self.block {
            return 0;
        }
        (cy - self.block + 1) * (cx - self.block + 1) * self.block * self.block * self.bins
    }
}

const EPS: f64 = 1e-3;

/// Histogram-of-oriented-gradients descriptor. Gradients are central
/// differences (one-sided at the border); each pixel votes its magnitude
/// into one of `bins` unsigned orientation bins of its cell; overlapping
/// blocks are L2-normalized.
pub fn hog_descriptor(image: &Array2<f64>, params: &HogParams) -> Vec<f64> {
    let (h, w) = image.dim();
    let (cy, cx) = (h / params.cell, w / params.cell);
    let mut cells = Array3::<f64>::zeros((cy, cx, params.bins));
    let bin_width = std::f64::consts::PI / params.bins as f64;
    for i in 0..cy * params.cell {
        for j in 0..cx * params.cell {
            let gx = image[[i, (j + 1).min(w - 1)]] - image[[i, j.saturating_sub(1)]];
            let gy = image[[(i + 1).min(h - 1), j]] - image[[i.saturating_sub(1), j]];
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += std::f64::consts::PI;
            }
            let bin = ((angle / bin_width) as usize) % params.bins;
            cells[[i / params.cell, j / params.cell, bin]] += mag;
        }
    }

    let mut out = Vec::with_capacity(params.descriptor_len(h, w));
    if cy < params.block || cx < params.block {
        return out;
    }
    for by in 0..=cy - params.block {
        for bx in 0..=cx - params.block {
            let start = out.len();
            for y in by..by + params.block {
                for x in bx..bx + params.block {
                    out.extend((0..params.bins).map(|b| cells[[y, x, b]]));
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            for v in &mut out[start..] {
                *v /= norm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_length() {
        let img = Array2::from_shape_fn((48, 48), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let d = hog_descriptor(&img, &HogParams::default());
        assert_eq!(d.len(), HOG_LEN);
        assert_eq!(HogParams::default().descriptor_len(48, 48), 5 * 5 * 4 * 9);
    }

    #[test]
    fn constant_image_is_zero() {
        let d = hog_descriptor(&Array2::from_elem((48, 48), -0.7), &HogParams::default());
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_edge_votes_horizontal_gradient_bin() {
        // step from dark to bright at column 20; gradient points along +x (0 rad)
        let img = Array2::from_shape_fn((48, 48), |(_, j)| if j < 20 { -1.0 } else { 1.0 });
        let p = HogParams::default();
        let d = hog_descriptor(&img, &p);
        let mut touched = 0;
        for cell in d.chunks(p.bins) {
            let total: f64 = cell.iter().sum();
            if total > 0.0 {
                touched += 1;
                assert_eq!(cell[0], total, "all energy in bin 0");
            }
        }
        assert!(touched > 0);
    }

    #[test]
    fn block_norm_bounded() {
        let img = Array2::from_shape_fn((48, 48), |(i, j)| ((i * j) % 13) as f64 * 3.0);
        let p = HogParams::default();
        let d = hog_descriptor(&img, &p);
        for block in d.chunks(p.block * p.block * p.bins) {
            let n: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-12);
        }
    }
}
