//! Binary cross-entropy training with a stratified train/validation split.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::model::{ModelError, Network};
use crate::ops::Mode;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Predictions are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-12;

pub const REPORT_SCHEMA: &str = "aquasight.train-report/1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    Empty,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("split fraction {fraction} leaves one side of {total} samples empty")]
    EmptySplit { fraction: f64, total: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that can be fed to [`fit`]: an input tensor and its label.
pub trait Example<T: Scalar> {
    fn input(&self) -> &Tensor<T>;
    fn label(&self) -> Label;
}

impl<T: Scalar> Example<T> for (Tensor<T>, Label) {
    fn input(&self) -> &Tensor<T> {
        &self.0
    }
    fn label(&self) -> Label {
        self.1
    }
}

impl<T: Scalar, E: Example<T>> Example<T> for &E {
    fn input(&self) -> &Tensor<T> {
        (*self).input()
    }
    fn label(&self) -> Label {
        (*self).label()
    }
}

fn check_lengths(predictions: usize, labels: usize) -> Result<(), TrainError> {
    if predictions == 0 {
        return Err(TrainError::Empty);
    }
    if predictions != labels {
        return Err(TrainError::LengthMismatch { predictions, labels });
    }
    Ok(())
}

/// Mean binary cross-entropy `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_loss<T: Scalar>(predictions: &[T], labels: &[Label]) -> Result<T, TrainError> {
    check_lengths(predictions.len(), labels.len())?;
    let eps = T::of(BCE_EPSILON);
    let one = T::one();
    let total: T = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(one - eps);
            match y {
                Label::Contaminated => -p.ln(),
                Label::Clean => -(one - p).ln(),
            }
        })
        .sum();
    Ok(total / T::of(predictions.len() as f64))
}

/// Derivative of [`bce_loss`] with respect to each prediction.
/// Zero where the clamp is active.
pub fn bce_loss_grad<T: Scalar>(predictions: &[T], labels: &[Label]) -> Result<Vec<T>, TrainError> {
    check_lengths(predictions.len(), labels.len())?;
    let eps = T::of(BCE_EPSILON);
    let one = T::one();
    let n = T::of(predictions.len() as f64);
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p < eps || p > one - eps {
                return T::zero();
            }
            let d = match y {
                Label::Contaminated => -one / p,
                Label::Clean => one / (one - p),
            };
            d / n
        })
        .collect())
}

/// Index partition produced by [`split`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    pub fn apply<'a, S>(&self, items: &'a [S]) -> (Vec<&'a S>, Vec<&'a S>) {
        (
            self.train.iter().map(|&i| &items[i]).collect(),
            self.validation.iter().map(|&i| &items[i]).collect(),
        )
    }
}

/// Deterministic stratified split.
///
/// The training side receives `floor(fraction * N)` samples. Each class gets
/// `floor(fraction * n_class)` of them, and any remainder goes to the
/// classes with the largest fractional shares, so every class lands within
/// one sample of its proportional share.
pub fn split(labels: &[Label], fraction: f64, seed: u64) -> Result<Split, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::Empty);
    }
    let total = labels.len();
    let train_total = if fraction.is_finite() {
        (fraction * total as f64 + 1e-9).floor().max(0.0) as usize
    } else {
        0
    };
    if !(fraction > 0.0 && fraction < 1.0) || train_total == 0 || train_total >= total {
        return Err(TrainError::EmptySplit { fraction, total });
    }

    let mut rng = SeededRng::derive(seed, 0x5_1117);
    let mut per_class: Vec<(Label, Vec<usize>)> = [Label::Clean, Label::Contaminated]
        .into_iter()
        .map(|c| (c, (0..total).filter(|&i| labels[i] == c).collect()))
        .collect();
    for (_, idx) in per_class.iter_mut() {
        rng.shuffle(idx);
    }

    let shares: Vec<f64> = per_class.iter().map(|(_, idx)| fraction * idx.len() as f64).collect();
    let mut quota: Vec<usize> = shares.iter().map(|s| (s + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..per_class.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - quota[b] as f64).total_cmp(&(shares[a] - quota[a] as f64)));
    let mut remaining = train_total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quota[c] < per_class[c].1.len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }

    let mut train = Vec::with_capacity(train_total);
    let mut validation = Vec::with_capacity(total - train_total);
    for ((_, idx), q) in per_class.iter().zip(&quota) {
        train.extend_from_slice(&idx[..*q]);
        validation.extend_from_slice(&idx[*q..]);
    }
    rng.shuffle(&mut train);
    validation.sort_unstable();
    Ok(Split { train, validation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            split_fraction: 0.75,
            seed: 7,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (a null update); everything else
    /// must be strictly positive.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad("split fraction must lie strictly between 0 and 1");
        }
        match self.optimizer {
            OptimizerKind::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad("momentum must lie in [0, 1)")
            }
            OptimizerKind::Adam { beta1, beta2, epsilon }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) =>
            {
                bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: String,
    pub config: TrainConfig,
    pub train_size: usize,
    pub validation_size: usize,
    /// Mean training loss of each epoch, measured with dropout active.
    pub epoch_losses: Vec<f64>,
    /// Eval-mode validation loss after each epoch; empty without validation data.
    pub validation_losses: Vec<f64>,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    /// `key = value` lines for people to read.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        let _ = writeln!(s, "schema = {}", self.schema);
        let _ = writeln!(s, "epochs = {}", self.epoch_losses.len());
        let _ = writeln!(s, "batch_size = {}", self.config.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.config.learning_rate);
        let _ = writeln!(s, "optimizer = {:?}", self.config.optimizer);
        let _ = writeln!(s, "split_fraction = {}", self.config.split_fraction);
        let _ = writeln!(s, "seed = {}", self.config.seed);
        let _ = writeln!(s, "train_size = {}", self.train_size);
        let _ = writeln!(s, "validation_size = {}", self.validation_size);
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let val = self.validation_losses.get(i).map(|v| format!(" validation_loss = {v:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "epoch.{} = train_loss = {loss:.6}{val} seconds = {:.3}",
                i + 1,
                self.epoch_seconds[i]
            );
        }
        let _ = writeln!(s, "final_train_loss = {}", opt(self.epoch_losses.last().copied()));
        let _ = writeln!(s, "validation_loss = {}", opt(self.validation_loss));
        let _ = writeln!(s, "validation_accuracy = {}", opt(self.validation_accuracy));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Eval-mode predictions for a set of examples, in order.
pub fn predict_all<T: Scalar, S: Example<T>>(net: &Network<T>, examples: &[S]) -> Result<Vec<T>, ModelError> {
    examples.iter().map(|e| net.predict(e.input())).collect()
}

/// Validation loss and accuracy with the 0.5 decision threshold.
pub fn evaluate<T: Scalar, S: Example<T>>(net: &Network<T>, examples: &[S]) -> Result<(f64, f64), TrainError> {
    let preds = predict_all(net, examples)?;
    let labels: Vec<Label> = examples.iter().map(Example::label).collect();
    let loss = bce_loss(&preds, &labels)?.as_f64();
    let correct = preds
        .iter()
        .zip(&labels)
        .filter(|(p, y)| (p.as_f64() >= 0.5) == (**y == Label::Contaminated))
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Trains `net` in place with mini-batch gradient descent on mean BCE.
///
/// Dropout is active during the epochs; the network is left in eval mode.
/// All randomness (shuffling and dropout masks) is drawn from `config.seed`.
pub fn fit<T: Scalar, S: Example<T>>(
    net: &mut Network<T>,
    train: &[S],
    validation: &[S],
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut rng = SeededRng::derive(config.seed, 0xF17);
    let mut optimizer = Optimizer::new(config.optimizer, net.params_mut());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        schema: REPORT_SCHEMA.to_string(),
        config: *config,
        train_size: train.len(),
        validation_size: validation.len(),
        epoch_losses: Vec::with_capacity(config.epochs),
        validation_losses: Vec::new(),
        validation_loss: None,
        validation_accuracy: None,
        epoch_seconds: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        let started = Instant::now();
        net.set_mode(Mode::Train);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            net.zero_grad();
            let scale = T::of(1.0 / chunk.len() as f64);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let example = &train[i];
                let tape = net.forward(example.input(), &mut rng)?;
                let p = tape.output().data()[0];
                batch_loss += bce_loss(&[p], &[example.label()])?.as_f64();
                net.backward_bce(tape, T::of(example.label().as_f64()), scale)?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: batch + 1 });
            }
            optimizer.step(net.params_mut(), config.learning_rate);
            epoch_loss += batch_loss;
        }
        report.epoch_losses.push(epoch_loss / train.len() as f64);
        net.set_mode(Mode::Eval);
        if !validation.is_empty() {
            let (loss, acc) = evaluate(net, validation)?;
            report.validation_losses.push(loss);
            report.validation_loss = Some(loss);
            report.validation_accuracy = Some(acc);
        }
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {}/{}: train loss {:.4}{}",
            epoch + 1,
            config.epochs,
            report.epoch_losses[epoch],
            report.validation_loss.map(|v| format!(", validation loss {v:.4}")).unwrap_or_default()
        );
    }
    net.set_mode(Mode::Eval);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_closed_forms() {
        let near_one = 1.0 - BCE_EPSILON;
        assert!(bce_loss(&[near_one], &[Label::Contaminated]).unwrap() < 1e-11);
        let l = bce_loss(&[0.5], &[Label::Clean]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn bce_errors() {
        assert!(matches!(bce_loss::<f64>(&[], &[]), Err(TrainError::Empty)));
        assert!(matches!(
            bce_loss(&[0.5, 0.5], &[Label::Clean]),
            Err(TrainError::LengthMismatch { predictions: 2, labels: 1 })
        ));
    }

    #[test]
    fn bce_saturated_prediction_is_finite() {
        let l: f64 = bce_loss(&[0.0, 1.0], &[Label::Contaminated, Label::Clean]).unwrap();
        assert!(l.is_finite());
        assert!((l + BCE_EPSILON.ln()).abs() < 1e-3);
    }

    #[test]
    fn split_105_gives_78_27() {
        let labels: Vec<Label> = (0..105)
            .map(|i| if i < 49 { Label::Clean } else { Label::Contaminated })
            .collect();
        let s = split(&labels, 0.75, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (78, 27));
        let clean = s.train.iter().filter(|&&i| labels[i] == Label::Clean).count();
        let dirty = s.train.len() - clean;
        assert!((36..=37).contains(&clean), "clean {clean}");
        assert_eq!(dirty, 42);
        assert_eq!(split(&labels, 0.75, 1).unwrap(), s);
        assert_ne!(split(&labels, 0.75, 2).unwrap(), s);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let labels = vec![Label::Clean, Label::Contaminated];
        assert!(matches!(split(&labels, 0.4, 0), Err(TrainError::EmptySplit { .. })));
        assert!(matches!(split(&labels, 1.0, 0), Err(TrainError::EmptySplit { .. })));
        assert!(matches!(split(&labels, 0.0, 0), Err(TrainError::EmptySplit { .. })));
        assert!(matches!(split(&[], 0.5, 0), Err(TrainError::Empty)));
        assert!(split(&labels, 0.5, 0).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { split_fraction: 1.0, ..Default::default() },
            TrainConfig {
                optimizer: OptimizerKind::SgdMomentum { momentum: 1.5 },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
