use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Training-time augmentation: random horizontal flip, zero-pad and random
/// crop back to the input size, then a random rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub max_rotation_deg: f32,
    pub crop_pad: usize,
    pub flip_probability: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 10.0,
            crop_pad: 4,
            flip_probability: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        AugmentParams {
            max_rotation_deg: 0.0,
            crop_pad: 0,
            flip_probability: 0.0,
        }
    }
}

fn rotate(src: &Array2<f32>, degrees: f32) -> Array2<f32> {
    let (h, w) = src.dim();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let at = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            src[[r as usize, c as usize]]
        }
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        // inverse map each output pixel into the source
        let (dy, dx) = (r as f32 - cy, c as f32 - cx);
        let sy = cos * dy - sin * dx + cy;
        let sx = sin * dy + cos * dx + cx;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (ty, tx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
        let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

pub fn augment<R: Rng + ?Sized>(grid: &Array2<f32>, rng: &mut R, params: &AugmentParams) -> Array2<f32> {
    let (h, w) = grid.dim();
    let flip = rng.random_bool(params.flip_probability.clamp(0.0, 1.0));
    let mut out = if flip {
        Array2::from_shape_fn((h, w), |(r, c)| grid[[r, w - 1 - c]])
    } else {
        grid.clone()
    };

    let pad = params.crop_pad;
    if pad > 0 {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let src = out;
        out = Array2::from_shape_fn((h, w), |(r, c)| {
            let (sr, sc) = (r as isize + dy, c as isize + dx);
            if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                0.0
            } else {
                src[[sr as usize, sc as usize]]
            }
        });
    }

    if params.max_rotation_deg > 0.0 {
        let m = params.max_rotation_deg;
        let angle = rng.random_range(-m..=m);
        out = rotate(&out, angle);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Array2<f32> {
        Array2::from_shape_fn((48, 48), |(r, c)| (r * 48 + c) as f32 * 0.01 - 5.0)
    }

    #[test]
    fn disabled_params_are_identity() {
        let g = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&g, &mut rng, &AugmentParams::none()), g);
    }

    #[test]
    fn double_flip_is_identity() {
        let g = sample();
        let p = AugmentParams {
            flip_probability: 1.0,
            ..AugmentParams::none()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let once = augment(&g, &mut rng, &p);
        assert_ne!(once, g);
        assert_eq!(once[[3, 0]], g[[3, 47]]);
        assert_eq!(augment(&once, &mut rng, &p), g);
    }

    #[test]
    fn shape_and_reproducibility() {
        let g = sample();
        let p = AugmentParams::default();
        for seed in 0..20 {
            let a = augment(&g, &mut ChaCha8Rng::seed_from_u64(seed), &p);
            let b = augment(&g, &mut ChaCha8Rng::seed_from_u64(seed), &p);
            assert_eq!(a.dim(), (48, 48));
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let g = sample();
        assert_eq!(rotate(&g, 0.0), g);
    }
}
