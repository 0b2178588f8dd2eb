//! Image bytes in, verdict out. Shared by `aquasight predict` and the HTTP service.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{decode_and_resize, normalize_brightness, BrightnessStatus, DataError};
use crate::eval::{classify, EvalError, Prediction};
use crate::label::Label;
use crate::model::{ModelError, Network, WeightsError, WeightsFile};
use crate::tensor::Tensor;

pub const RESPONSE_SCHEMA: &str = "aquasight.predict/1";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// The input could not be turned into an image; the caller's fault.
    #[error(transparent)]
    Input(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Model input for `image`: brightness-normalized unless `normalize` is false.
/// Training, evaluation and prediction all go through here.
pub fn prepare(image: &Tensor<f64>, normalize: bool) -> Result<(Tensor<f64>, Option<BrightnessStatus>), DataError> {
    if normalize {
        let n = normalize_brightness(image)?;
        Ok((n.image, Some(n.status)))
    } else {
        Ok((image.clone(), None))
    }
}

/// A loaded, immutable model plus its version tag.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Network<f64>,
    version: String,
}

impl Classifier {
    pub fn new(net: Network<f64>, version: String) -> Self {
        let mut net = net;
        net.set_mode(crate::ops::Mode::Eval);
        Self { net, version }
    }

    pub fn from_weights(file: WeightsFile) -> Result<Self, WeightsError> {
        let version = file.version_tag();
        Ok(Self::new(file.into_network()?, version))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_weights(WeightsFile::read(path)?)
    }

    pub fn network(&self) -> &Network<f64> {
        &self.net
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Classifies an already decoded `[3, 64, 64]` image.
    pub fn predict_tensor(&self, image: &Tensor<f64>, normalize: bool) -> Result<(Prediction, Option<BrightnessStatus>), PipelineError> {
        let (input, status) = prepare(image, normalize)?;
        let raw = self.net.predict(&input)?;
        Ok((classify(raw)?, status))
    }

    /// Decode, resize, optionally normalize, predict and classify.
    pub fn predict_bytes(&self, bytes: &[u8], normalize: bool) -> Result<PredictResponse, PipelineError> {
        let start = Instant::now();
        let image = decode_and_resize(bytes)?;
        let (p, _) = self.predict_tensor(&image, normalize)?;
        Ok(PredictResponse::new(&p, &self.version, start.elapsed().as_secs_f64() * 1e3))
    }
}

/// Body of a successful prediction, also printed by `aquasight predict --json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema: String,
    pub class: Label,
    /// Rounded to 6 decimals.
    pub raw: f64,
    pub confidence: f64,
    pub model_version: String,
    pub latency_ms: f64,
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl PredictResponse {
    pub fn new(p: &Prediction, model_version: &str, latency_ms: f64) -> Self {
        Self {
            schema: RESPONSE_SCHEMA.to_string(),
            class: p.class,
            raw: round6(p.raw),
            confidence: round6(p.confidence),
            model_version: model_version.to_string(),
            latency_ms: (latency_ms * 1e3).round() / 1e3,
        }
    }

    /// `contaminated raw=0.912 confidence=0.825 model=1a2b3c4d`; the JSON form keeps 6 decimals.
    pub fn verdict_line(&self) -> String {
        format!(
            "{} raw={:.3} confidence={:.3} model={}",
            self.class, self.raw, self.confidence, self.model_version
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}
