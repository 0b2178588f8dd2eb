//! Decision rule, confusion matrix and the four summary measures.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

pub const THRESHOLD: f64 = 0.5;
pub const METRICS_SCHEMA: &str = "aquasight.metrics/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("raw prediction {0} outside (0, 1)")]
    RawOutOfRange(f64),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw: f64,
    pub class: Label,
    /// `|raw - 0.5| * 2`.
    pub confidence: f64,
}

/// Applies the 0.5 rule; the boundary itself is contaminated.
pub fn classify(raw: f64) -> Result<Prediction, EvalError> {
    if !(raw > 0.0 && raw < 1.0) {
        return Err(EvalError::RawOutOfRange(raw));
    }
    Ok(Prediction {
        raw,
        class: if raw >= THRESHOLD { Label::Contaminated } else { Label::Clean },
        confidence: (raw - THRESHOLD).abs() * 2.0,
    })
}

/// Positive is contaminated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Contaminated, Label::Contaminated) => self.tp += 1,
            (Label::Clean, Label::Clean) => self.tn += 1,
            (Label::Contaminated, Label::Clean) => self.fp += 1,
            (Label::Clean, Label::Contaminated) => self.fn_ += 1,
        }
    }

    /// Exact `(TP + TN) / total`, or `None` when empty.
    pub fn accuracy_ratio(&self) -> Option<Ratio<u64>> {
        (self.total() > 0).then(|| Ratio::new(self.tp + self.tn, self.total()))
    }

    pub fn render(&self) -> String {
        format!(
            "                   actual contaminated  actual clean\n\
             pred contaminated  {:>19}  {:>12}\n\
             pred clean         {:>19}  {:>12}\n",
            format!("TP {}", self.tp),
            format!("FP {}", self.fp),
            format!("FN {}", self.fn_),
            format!("TN {}", self.tn),
        )
    }
}

pub fn confusion(predictions: &[Prediction], labels: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, &l) in predictions.iter().zip(labels) {
        cm.record(p.class, l);
    }
    Ok(cm)
}

/// A ratio that may have a zero denominator. Serialized as a number or the
/// string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Value(f64),
    Undefined,
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Measure::Value(v) => s.serialize_f64(*v),
            Measure::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Measure::Value)
                .ok_or_else(|| serde::de::Error::custom("measure out of range")),
            serde_json::Value::String(s) if s == "undefined" => Ok(Measure::Undefined),
            other => Err(serde::de::Error::custom(format!("invalid measure {other}"))),
        }
    }
}

impl Measure {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Measure::Undefined
        } else {
            Measure::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::Undefined => None,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Value(v) => write!(f, "{v:.3}"),
            Measure::Undefined => f.write_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Measure,
    pub precision: Measure,
    pub sensitivity: Measure,
    pub f_beta: Measure,
    pub beta: f64,
}

/// `(1 + b^2) P R / (b^2 P + R)`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<Measure, EvalError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(EvalError::InvalidBeta(beta));
    }
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    Ok(if den == 0.0 {
        Measure::Undefined
    } else {
        Measure::Value((1.0 + b2) * precision * recall / den)
    })
}

pub fn metrics(cm: &ConfusionMatrix, beta: f64) -> Result<MetricsReport, EvalError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(EvalError::InvalidBeta(beta));
    }
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let precision = Measure::ratio(cm.tp, cm.tp + cm.fp);
    let sensitivity = Measure::ratio(cm.tp, cm.tp + cm.fn_);
    let f = match (precision, sensitivity) {
        (Measure::Value(p), Measure::Value(r)) => f_beta(p, r, beta)?,
        _ => Measure::Undefined,
    };
    Ok(MetricsReport {
        accuracy: Measure::ratio(cm.tp + cm.tn, cm.total()),
        precision,
        sensitivity,
        f_beta: f,
        beta,
    })
}

impl MetricsReport {
    /// Columns in the order F-Beta, Sensitivity, Precision, Accuracy.
    pub fn render_table(&self) -> String {
        let head = ["F-Beta", "Sensitivity", "Precision", "Accuracy"];
        let vals = [self.f_beta, self.sensitivity, self.precision, self.accuracy].map(|m| m.to_string());
        let widths: Vec<usize> = head.iter().map(|h| h.len().max(5)).collect();
        let row = |cells: &[String]| {
            let inner: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!(" {c:>w$} ")).collect();
            format!("|{}|\n", inner.join("|"))
        };
        let rule = format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
        let head: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        format!("{}{}{}", row(&head), rule, row(&vals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ClassStats {
    fn of(raws: impl Iterator<Item = f64>) -> Option<Self> {
        let mut acc: Option<Self> = None;
        let mut sum = 0.0;
        for r in raws {
            sum += r;
            acc = Some(match acc {
                None => Self { count: 1, mean: 0.0, min: r, max: r },
                Some(s) => Self {
                    count: s.count + 1,
                    mean: 0.0,
                    min: s.min.min(r),
                    max: s.max.max(r),
                },
            });
        }
        acc.map(|s| Self { mean: sum / s.count as f64, ..s })
    }
}

/// Raw-score statistics grouped by predicted class. An empty class is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub clean: Option<ClassStats>,
    pub contaminated: Option<ClassStats>,
}

pub fn prediction_stats(predictions: &[Prediction]) -> Result<PredictionStats, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let of = |class| ClassStats::of(predictions.iter().filter(|p| p.class == class).map(|p| p.raw));
    Ok(PredictionStats {
        clean: of(Label::Clean),
        contaminated: of(Label::Contaminated),
    })
}

impl PredictionStats {
    pub fn render(&self) -> String {
        let line = |name: &str, s: &Option<ClassStats>| match s {
            Some(s) => format!(
                "{name:<13} n={:<3} mean={:.3} range=[{:.3}, {:.3}]\n",
                s.count, s.mean, s.min, s.max
            ),
            None => format!("{name:<13} none\n"),
        };
        line("clean", &self.clean) + &line("contaminated", &self.contaminated)
    }
}

/// One image's outcome in an evaluation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub file: String,
    pub label: Label,
    pub raw: f64,
    pub class: Label,
}

/// The structured evaluation report written by `aquasight eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub model_version: String,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub stats: PredictionStats,
    pub samples: Vec<ScoredSample>,
}

impl EvalReport {
    pub fn new(model_version: String, samples: Vec<ScoredSample>, beta: f64) -> Result<Self, EvalError> {
        let preds = samples.iter().map(|s| classify(s.raw)).collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
        let confusion = confusion(&preds, &labels)?;
        Ok(Self {
            schema: METRICS_SCHEMA.to_string(),
            model_version,
            metrics: metrics(&confusion, beta)?,
            stats: prediction_stats(&preds)?,
            confusion,
            samples,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
