use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, confusion, f1_is_degenerate, ConfusionMatrix};
use crate::dataset::ENGAGED;
use crate::models::{HogSvmModel, Network};
use crate::training::{predict, TrainData};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub split: String,
    pub samples: u64,
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the split holds a single class.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
    /// Row-normalized percentages, rows actual (engaged, disengaged).
    pub confusion_percent: [[f64; 2]; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    /// `scores` rank samples by how engaged they look; `predictions` and
    /// `labels` are class ids.
    pub fn from_predictions(
        model_id: &str,
        split: &str,
        scores: &[f64],
        predictions: &[u8],
        labels: &[u8],
    ) -> Result<Self> {
        let m = confusion(predictions, labels)?;
        let mut notes = Vec::new();
        if f1_is_degenerate(m.tp(), m.fp(), m.fn_()) {
            notes.push("F1 set to 0: precision or recall undefined".to_string());
        }
        let positives: Vec<bool> = labels.iter().map(|&y| y == ENGAGED).collect();
        let auc = match auc(scores, &positives) {
            Ok(a) => Some(a),
            Err(Error::Metric(msg)) => {
                notes.push(format!("AUC not computed: {msg}"));
                None
            }
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            model_id: model_id.to_string(),
            split: split.to_string(),
            samples: m.total(),
            accuracy: m.accuracy()?,
            f1: m.f1(),
            auc,
            confusion: m,
            confusion_percent: m.row_percentages(),
            notes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Row-normalized confusion matrix, two decimals.
    pub fn confusion_table(&self) -> String {
        let p = self.confusion_percent;
        let mut out = String::new();
        let _ = writeln!(out, "Confusion matrix: {} ({})", self.model_id, self.split);
        let _ = writeln!(out, "{:<20}{:>12}{:>14}", "actual \\ predicted", "engaged", "disengaged");
        let _ = writeln!(out, "{:<20}{:>12.2}{:>14.2}", "engaged", p[0][0], p[0][1]);
        let _ = writeln!(out, "{:<20}{:>12.2}{:>14.2}", "disengaged", p[1][0], p[1][1]);
        out
    }
}

/// One row per model: accuracy, F1 and AUC as percentages.
pub fn metrics_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.model_id.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "Split: {}", first.split);
    }
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}", "Model", "Accuracy", "F1", "AUC");
    for r in reports {
        let auc = r.auc.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}", 100.0 * a));
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>9.2}  {:>9}",
            r.model_id,
            100.0 * r.accuracy,
            100.0 * r.f1,
            auc
        );
    }
    out
}

fn binary_labels(data: &TrainData) -> Result<Vec<u8>> {
    data.labels
        .iter()
        .map(|&y| match u8::try_from(y) {
            Ok(v) if v <= 1 => Ok(v),
            _ => Err(Error::Metric(format!("label {y} is not binary"))),
        })
        .collect()
}

/// Inference-mode evaluation of a two-class network; the engaged-class
/// probability is the ranking score.
pub fn evaluate_network(net: &Network<f32>, data: &TrainData, model_id: &str, split: &str) -> Result<EvalReport> {
    if net.spec().num_classes != 2 {
        return Err(Error::Metric(format!(
            "engagement metrics need a 2-class model, got {} classes",
            net.spec().num_classes
        )));
    }
    let labels = binary_labels(data)?;
    if labels.is_empty() {
        return Err(Error::Metric("evaluation split is empty".into()));
    }
    let (preds, probs) = predict(net, data, 64)?;
    let preds: Vec<u8> = preds.into_iter().map(|p| p as u8).collect();
    let scores: Vec<f64> = probs.column(ENGAGED as usize).iter().map(|&p| p as f64).collect();
    EvalReport::from_predictions(model_id, split, &scores, &preds, &labels)
}

/// SVM decision values are the ranking score; positive means engaged.
pub fn evaluate_svm(model: &HogSvmModel, inputs: &[Array2<f64>], labels: &[u8], model_id: &str, split: &str) -> Result<EvalReport> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs for {} labels", inputs.len(), labels.len())));
    }
    let scores: Vec<f64> = inputs.iter().map(|x| model.decision(x)).collect();
    let preds: Vec<u8> = scores.iter().map(|&s| (s > 0.0) as u8).collect();
    EvalReport::from_predictions(model_id, split, &scores, &preds, labels)
}
