//! Water images: decoding, normalization, and the synthetic dataset.

mod image;
mod manifest;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::image::{
    decode_and_resize, encode_png, luminance, mean_luminance, normalize_brightness, resize_bilinear, turbidity_score,
    BrightnessStatus, Normalized, LUMA, TARGET_LUMINANCE,
};
pub use manifest::{
    generate_dataset, load_dataset, write_dataset, ClassCounts, DatasetManifest, Group, ManifestEntry, MANIFEST_FILE,
    MANIFEST_SCHEMA,
};
pub use synth::{generate_sample, SampleParams, CLEAN_TURBIDITY_CEILING, MAX_STAGE};

use crate::label::Label;
use crate::tensor::{Tensor, TensorError};
use crate::train::Example;

/// Side length of model inputs.
pub const IMAGE_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("image format error: {0}")]
    Format(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("contamination stage {0} outside 0..=4")]
    InvalidStage(u8),
    #[error("darkness {0} outside [0, 1]")]
    InvalidDarkness(f64),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tint {
    None,
    LightBlue,
    Green,
    Blue,
    Yellow,
    Brown,
    Orange,
    Red,
}

impl Tint {
    /// The seven water colorings, in collection order.
    pub const COLORS: [Tint; 7] = [
        Tint::LightBlue,
        Tint::Green,
        Tint::Blue,
        Tint::Yellow,
        Tint::Brown,
        Tint::Orange,
        Tint::Red,
    ];

    pub fn rgb(self) -> Option<[f64; 3]> {
        Some(match self {
            Tint::None => return None,
            Tint::LightBlue => [0.55, 0.82, 0.95],
            Tint::Green => [0.25, 0.68, 0.30],
            Tint::Blue => [0.15, 0.30, 0.85],
            Tint::Yellow => [0.92, 0.85, 0.25],
            Tint::Brown => [0.50, 0.33, 0.16],
            Tint::Orange => [0.95, 0.58, 0.15],
            Tint::Red => [0.85, 0.15, 0.15],
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Tint::None => "none",
            Tint::LightBlue => "light-blue",
            Tint::Green => "green",
            Tint::Blue => "blue",
            Tint::Yellow => "yellow",
            Tint::Brown => "brown",
            Tint::Orange => "orange",
            Tint::Red => "red",
        }
    }
}

impl fmt::Display for Tint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tint {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(Tint::None)
            .chain(Tint::COLORS)
            .find(|t| t.name() == s)
            .ok_or_else(|| DataError::Manifest(format!("unknown tint {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic { seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub tint: Tint,
    /// 0 is clean; 1..=4 is the number of contaminant layers.
    pub stage: u8,
    pub darkness: f64,
    pub source: Source,
}

/// A `[3, 64, 64]` image in [0, 1] with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor<f64>,
    pub label: Label,
    pub meta: SampleMeta,
}

impl Example<f64> for ImageSample {
    fn input(&self) -> &Tensor<f64> {
        &self.pixels
    }
    fn label(&self) -> Label {
        self.label
    }
}
