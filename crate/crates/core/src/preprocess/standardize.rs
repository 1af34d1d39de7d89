use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::FaceBox;
use crate::dataset::{FaceGrid, SIDE};
use crate::{Error, Result};

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?)
}

/// Bilinear resampling with pixel-center alignment. Same-size output is the
/// identity and an exact 2× reduction averages 2×2 blocks.
pub fn bilinear_resize(src: &GrayImage, out_w: u32, out_h: u32) -> GrayImage {
    let (w, h) = src.dimensions();
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let sample = |x: u32, y: u32| src.get_pixel(x, y).0[0] as f64;
    GrayImage::from_fn(out_w, out_h, |ox, oy| {
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let top = sample(x0, y0) * (1.0 - tx) + sample(x1, y0) * tx;
        let bottom = sample(x0, y1) * (1.0 - tx) + sample(x1, y1) * tx;
        let v = top * (1.0 - ty) + bottom * ty;
        image::Luma([(v + 0.5).floor().clamp(0.0, 255.0) as u8])
    })
}

/// Crops `image` to `face`, converts to luminance and resizes to 48×48.
pub fn standardize_face(image: &DynamicImage, face: &FaceBox) -> Result<FaceGrid> {
    if face.width == 0 || face.height == 0 {
        return Err(Error::Validation(format!("degenerate face box {face:?}")));
    }
    let b = face
        .clamp_to(image.width(), image.height())
        .ok_or_else(|| Error::Validation(format!("face box {face:?} lies outside the image")))?;
    let gray = image.crop_imm(b.x, b.y, b.width, b.height).to_luma8();
    let resized = bilinear_resize(&gray, SIDE as u32, SIDE as u32);
    FaceGrid::new(resized.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};

    #[test]
    fn two_x_downscale_averages_blocks() {
        let src = GrayImage::from_fn(96, 96, |x, y| Luma([((x / 2 + y / 2) % 200) as u8]));
        let out = standardize_face(
            &DynamicImage::ImageLuma8(src.clone()),
            &FaceBox::full_frame(96, 96),
        )
        .unwrap();
        for r in 0..SIDE {
            for c in 0..SIDE {
                assert_eq!(out.get(r, c), ((c + r) % 200) as u8);
            }
        }
        let noisy = GrayImage::from_fn(96, 96, |x, y| Luma([((x * 31 + y * 17) % 256) as u8]));
        let out = standardize_face(&DynamicImage::ImageLuma8(noisy.clone()), &FaceBox::full_frame(96, 96)).unwrap();
        let (x, y) = (10u32, 7u32);
        let avg = (0..2)
            .flat_map(|dy| (0..2).map(move |dx| (dx, dy)))
            .map(|(dx, dy)| noisy.get_pixel(2 * x + dx, 2 * y + dy).0[0] as f64)
            .sum::<f64>()
            / 4.0;
        assert_eq!(out.get(y as usize, x as usize), (avg + 0.5).floor() as u8);
    }

    #[test]
    fn same_size_is_identity() {
        let src = GrayImage::from_fn(48, 48, |x, y| Luma([((x * 5 + y * 3) % 256) as u8]));
        let out =
            standardize_face(&DynamicImage::ImageLuma8(src.clone()), &FaceBox::full_frame(48, 48))
                .unwrap();
        assert_eq!(out.pixels(), src.as_raw().as_slice());
    }

    #[test]
    fn color_crop_becomes_gray() {
        let src = RgbImage::from_pixel(64, 80, Rgb([200, 10, 10]));
        let out = standardize_face(
            &DynamicImage::ImageRgb8(src),
            &FaceBox::new(8, 8, 40, 60, 1.0),
        )
        .unwrap();
        assert_eq!(out.pixels().len(), SIDE * SIDE);
        let v = out.get(0, 0);
        assert!(out.pixels().iter().all(|&p| p == v));
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let img = DynamicImage::ImageLuma8(GrayImage::new(10, 10));
        assert!(standardize_face(&img, &FaceBox::new(0, 0, 0, 5, 1.0)).is_err());
        assert!(standardize_face(&img, &FaceBox::new(20, 20, 5, 5, 1.0)).is_err());
    }
}
