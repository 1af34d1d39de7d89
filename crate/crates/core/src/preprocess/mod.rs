//! Face standardization, normalization and training-time augmentation.

mod augment;
mod face;
mod normalize;
mod standardize;

pub use augment::{augment, AugmentParams};
pub use face::{
    detect_largest_face, largest_face, ContrastBlobDetector, FaceBox, FaceDetector,
};
pub use normalize::{
    apply_pixel_stats, fit_pixel_stats, normalize_image, normalize_values, prepare_input,
    PixelStats, IMAGE_NORM, STD_FLOOR,
};
pub use standardize::{bilinear_resize, load_image, standardize_face};
