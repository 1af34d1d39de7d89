use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hog::{hog_descriptor, HogParams};
use crate::dataset::{FaceGrid, ENGAGED, SIDE};
use crate::preprocess::{apply_pixel_stats, normalize_image, PixelStats};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// Regularization strength; larger values penalize margin violations more.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread of an epoch falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 0.1,
            max_epochs: 1000,
            tolerance: 1e-3,
            seed: 42,
        }
    }
}

/// Hinge-loss linear SVM, `score = w·x + b`, trained by dual coordinate
/// descent with the bias folded in as a constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearSvm {
    /// `positive[i]` marks the +1 class.
    pub fn fit(features: &[Vec<f64>], positive: &[bool], params: &SvmParams) -> Result<Self> {
        if features.len() != positive.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.len(),
                positive.len()
            )));
        }
        if params.c.is_nan() || params.c <= 0.0 {
            return Err(Error::Validation(format!("C must be positive, got {}", params.c)));
        }
        if !positive.iter().any(|&p| p) || positive.iter().all(|&p| p) {
            return Err(Error::Training("SVM training data has a single class".into()));
        }
        let dim = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::Shape(format!("feature length {} differs from {dim}", bad.len())));
        }

        let n = features.len();
        let y: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let qd: Vec<f64> = features.iter().map(|x| dot(x, x) + 1.0).collect();
        let mut alpha = vec![0.0; n];
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

        for _ in 0..params.max_epochs {
            order.shuffle(&mut rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let g = y[i] * (dot(&w, &features[i]) + b) - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == params.c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qd[i]).clamp(0.0, params.c);
                    let step = (alpha[i] - old) * y[i];
                    for (wj, xj) in w.iter_mut().zip(&features[i]) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
            if pg_max - pg_min < params.tolerance {
                break;
            }
        }
        Ok(LinearSvm {
            weights: w,
            bias: b,
            c: params.c,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// HOG descriptor + linear SVM over normalized faces, with the
/// normalization statistics it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogSvmModel {
    pub hog: HogParams,
    pub svm: LinearSvm,
    pub pixel_mean: Vec<f64>,
    pub pixel_std: Vec<f64>,
}

impl HogSvmModel {
    /// `inputs` are already normalized with `stats`.
    pub fn fit(
        inputs: &[Array2<f64>],
        labels: &[u8],
        stats: &PixelStats,
        hog: HogParams,
        params: &SvmParams,
    ) -> Result<Self> {
        hog.validate()?;
        let feats: Vec<Vec<f64>> = inputs.iter().map(|x| hog_descriptor(x, &hog)).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == ENGAGED).collect();
        let svm = LinearSvm::fit(&feats, &pos, params)?;
        Ok(HogSvmModel {
            hog,
            svm,
            pixel_mean: stats.mean.iter().copied().collect(),
            pixel_std: stats.std.iter().copied().collect(),
        })
    }

    pub fn pixel_stats(&self) -> Result<PixelStats> {
        let grid = |v: &[f64]| {
            Array2::from_shape_vec((SIDE, SIDE), v.to_vec())
                .map_err(|_| Error::Checkpoint(format!("pixel statistics have {} values", v.len())))
        };
        Ok(PixelStats {
            mean: grid(&self.pixel_mean)?,
            std: grid(&self.pixel_std)?,
        })
    }

    /// Signed distance-like score; positive means engaged.
    pub fn decision(&self, input: &Array2<f64>) -> f64 {
        self.svm.decision(&hog_descriptor(input, &self.hog))
    }

    pub fn decision_raw(&self, grid: &FaceGrid) -> Result<f64> {
        let stats = self.pixel_stats()?;
        Ok(self.decision(&apply_pixel_stats(&normalize_image(grid)?, &stats)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: HogSvmModel = serde_json::from_str(&text)?;
        if model.svm.weights.len() != model.hog.descriptor_len(SIDE, SIDE) {
            return Err(Error::Checkpoint(format!(
                "SVM has {} weights, HOG descriptor has {}",
                model.svm.weights.len(),
                model.hog.descriptor_len(SIDE, SIDE)
            )));
        }
        model.pixel_stats()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            xs.push(vec![1.0 + t, 0.5 - t]);
            ys.push(true);
            xs.push(vec![-1.0 - t, 0.2 + t]);
            ys.push(false);
        }
        (xs, ys)
    }

    #[test]
    fn separable_toy_is_fit() {
        let (xs, ys) = toy();
        let svm = LinearSvm::fit(&xs, &ys, &SvmParams { c: 10.0, ..Default::default() }).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(svm.decision(x) > 0.0, y);
        }
    }

    #[test]
    fn default_c() {
        assert_eq!(SvmParams::default().c, 0.1);
    }

    #[test]
    fn flipped_labels_negate_scores() {
        let (xs, ys) = toy();
        let flipped: Vec<bool> = ys.iter().map(|y| !y).collect();
        let p = SvmParams::default();
        let a = LinearSvm::fit(&xs, &ys, &p).unwrap();
        let b = LinearSvm::fit(&xs, &flipped, &p).unwrap();
        for x in &xs {
            assert_eq!(a.decision(x), -b.decision(x));
        }
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            LinearSvm::fit(&xs, &[true, true], &SvmParams::default()),
            Err(Error::Training(_))
        ));
        assert!(LinearSvm::fit(&xs, &[true, false], &SvmParams { c: 0.0, ..Default::default() }).is_err());
    }
}
