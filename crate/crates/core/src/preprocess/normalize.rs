//! Two-stage input normalization: per-image (zero mean, fixed Euclidean
//! norm) followed by per-pixel-position standardization with statistics fitted
//! on a training split.

use ndarray::{Array2, Zip};

use crate::dataset::{FaceGrid, SIDE};
use crate::{Error, Result};

/// Euclidean norm of every normalized image.
pub const IMAGE_NORM: f64 = 100.0;
/// Lower bound on per-position standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Centers `values` and rescales them to Euclidean norm [`IMAGE_NORM`].
pub fn normalize_values(values: &[f64]) -> Result<Vec<f64>> {
    let Some(&first) = values.first() else {
        return Err(Error::Normalization("empty image".into()));
    };
    if values.iter().all(|&v| v == first) {
        return Err(Error::Normalization(
            "constant image has zero norm after centering".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|&v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::Normalization(format!("degenerate norm {norm}")));
    }
    let k = IMAGE_NORM / norm;
    Ok(centered.into_iter().map(|v| v * k).collect())
}

pub fn normalize_image(grid: &FaceGrid) -> Result<Array2<f64>> {
    let values: Vec<f64> = grid.pixels().iter().map(|&p| p as f64).collect();
    let out = normalize_values(&values)?;
    Ok(Array2::from_shape_vec((SIDE, SIDE), out).expect("48x48"))
}

/// Per-position mean and (floored, population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

pub fn fit_pixel_stats<'a>(images: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<PixelStats> {
    let mut n = 0usize;
    let mut sum = Array2::<f64>::zeros((SIDE, SIDE));
    let mut min = Array2::<f64>::from_elem((SIDE, SIDE), f64::INFINITY);
    let mut max = Array2::<f64>::from_elem((SIDE, SIDE), f64::NEG_INFINITY);
    let images: Vec<&Array2<f64>> = images.into_iter().collect();
    for img in &images {
        if img.dim() != (SIDE, SIDE) {
            return Err(Error::Shape(format!("expected 48x48 image, got {:?}", img.dim())));
        }
        sum += *img;
        Zip::from(&mut min).and(&mut max).and(*img).for_each(|lo, hi, &v| {
            *lo = lo.min(v);
            *hi = hi.max(v);
        });
        n += 1;
    }
    if n == 0 {
        return Err(Error::Dataset("cannot fit pixel statistics on an empty training set".into()));
    }
    let mut mean = sum / n as f64;
    // constant positions get their exact value so they map to exactly zero
    Zip::from(&mut mean).and(&min).and(&max).for_each(|m, &lo, &hi| {
        if lo == hi {
            *m = lo;
        }
    });
    let mut var = Array2::<f64>::zeros((SIDE, SIDE));
    for img in &images {
        Zip::from(&mut var).and(*img).and(&mean).for_each(|acc, &v, &m| {
            let d = v - m;
            *acc += d * d;
        });
    }
    let std = var.mapv(|v| (v / n as f64).sqrt().max(STD_FLOOR));
    Ok(PixelStats { mean, std })
}

pub fn apply_pixel_stats(image: &Array2<f64>, stats: &PixelStats) -> Array2<f64> {
    let mut out = image - &stats.mean;
    out /= &stats.std;
    out
}

/// Full inference-time transform of a raw face: image-level normalization,
/// then per-position standardization, then conversion to model precision.
pub fn prepare_input(grid: &FaceGrid, stats: &PixelStats) -> Result<Array2<f32>> {
    let img = normalize_image(grid)?;
    Ok(apply_pixel_stats(&img, stats).mapv(|v| v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_value_grid_hand_computed() {
        // {1,3} tiled evenly: mean 2, centered ±1, norm sqrt(2304)=48,
        // so every value becomes ±100/48.
        let grid = FaceGrid::from_fn(|r, c| if (r + c) % 2 == 0 { 1 } else { 3 });
        let out = normalize_image(&grid).unwrap();
        let expected = 100.0 / 48.0;
        for ((r, c), &v) in out.indexed_iter() {
            let sign = if (r + c) % 2 == 0 { -1.0 } else { 1.0 };
            assert!((v - sign * expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_an_error() {
        assert!(matches!(
            normalize_image(&FaceGrid::filled(77)),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn identical_training_images_map_to_zero() {
        let img = normalize_image(&FaceGrid::from_fn(|r, c| ((r * 13 + c * 7) % 256) as u8)).unwrap();
        let stats = fit_pixel_stats([&img, &img, &img]).unwrap();
        assert!(stats.std.iter().all(|&s| s == STD_FLOOR));
        assert!(apply_pixel_stats(&img, &stats).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_image_mean_is_average() {
        let a = Array2::from_elem((SIDE, SIDE), 1.0);
        let b = Array2::from_elem((SIDE, SIDE), 3.0);
        let stats = fit_pixel_stats([&a, &b]).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 2.0));
        assert!(stats.std.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn empty_training_set() {
        assert!(fit_pixel_stats(std::iter::empty()).is_err());
    }

    proptest! {
        #[test]
        fn scale_and_shift_invariance(
            pixels in proptest::collection::vec(0.0f64..255.0, SIDE * SIDE),
            alpha in 0.01f64..50.0,
            shift in -500.0f64..500.0,
        ) {
            let base = normalize_values(&pixels).unwrap();
            let scaled: Vec<f64> = pixels.iter().map(|v| v * alpha).collect();
            let shifted: Vec<f64> = pixels.iter().map(|v| v + shift).collect();
            for (a, b) in base.iter().zip(normalize_values(&scaled).unwrap()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            for (a, b) in base.iter().zip(normalize_values(&shifted).unwrap()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
