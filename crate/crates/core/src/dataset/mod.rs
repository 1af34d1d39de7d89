//! Typed datasets: 48×48 grayscale faces with class labels and split tags.

mod er;
mod fer;

pub use er::{
    assign_subjects, load_er_manifest, read_er_manifest, split_er, write_er_manifest, ErManifest,
    ErManifestEntry, ErSplits, ManifestHeader, SplitFractions,
};
pub use fer::{
    parse_fer_csv, split_fer, write_fer_csv, FerSplitReport, FerSplits, FER_CLASSES,
    FER_PRIVATE_TEST_SIZE, FER_PUBLIC_TEST_SIZE, FER_TRAIN_SIZE, FER_VALID_SIZE,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Side length of every face grid.
pub const SIDE: usize = 48;
/// Number of pixels in a face grid.
pub const PIXELS: usize = SIDE * SIDE;

/// Engagement class ids used in manifests and model outputs.
pub const DISENGAGED: u8 = 0;
pub const ENGAGED: u8 = 1;

/// A 48×48 grid of 8-bit gray values, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct FaceGrid(Box<[u8]>);

impl FaceGrid {
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::Shape(format!(
                "face grid needs {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(FaceGrid(pixels.into_boxed_slice()))
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut v = Vec::with_capacity(PIXELS);
        for r in 0..SIDE {
            for c in 0..SIDE {
                v.push(f(r, c));
            }
        }
        FaceGrid(v.into_boxed_slice())
    }

    pub fn filled(value: u8) -> Self {
        FaceGrid(vec![value; PIXELS].into_boxed_slice())
    }

    pub fn pixels(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.0[row * SIDE + col]
    }

    /// Every pixel is exactly zero.
    pub fn is_black(&self) -> bool {
        self.0.iter().all(|&p| p == 0)
    }
}

impl std::fmt::Debug for FaceGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mean = self.0.iter().map(|&p| p as f64).sum::<f64>() / PIXELS as f64;
        write!(f, "FaceGrid(48x48, mean={mean:.2})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    PublicTest,
    PrivateTest,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::PublicTest => "public_test",
            Split::PrivateTest => "private_test",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "public_test" => Ok(Split::PublicTest),
            "private_test" => Ok(Split::PrivateTest),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: FaceGrid,
    pub label: u8,
    pub split: Option<Split>,
    pub subject_id: Option<String>,
}
