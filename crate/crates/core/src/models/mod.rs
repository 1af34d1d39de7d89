//! Network definitions, the numeric engine behind them, checkpoints, and
//! the HOG + linear SVM baseline.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

mod checkpoint;
mod hog;
mod network;
mod ops;
mod spec;
mod svm;
mod transfer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use hog::{hog_descriptor, HogParams, HOG_LEN};
pub use network::{gradient_check, Activation, GradCheck, Gradients, Network};
pub use spec::{
    build_small_cnn, build_small_cnn_with, build_vgg_variant, build_vgg_variant_with, Architecture,
    Census, Layer, LrnParams, ModelSpec, Shape, SmallCnnConfig, VggConfig,
};
pub use svm::{HogSvmModel, LinearSvm, SvmParams};
pub use transfer::transfer_init;

/// Element type the network runs in. Training uses f32; gradient checks use f64.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
