//! OTB-style scoring: success curves over 21 IoU thresholds, AUC, center
//! precision, and per-attribute macro averages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_error, iou, BoundingBox};

pub const SUCCESS_STEPS: usize = 21;
pub const PRECISION_MAX_PX: usize = 50;
pub const PRECISION_THRESHOLD_PX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub success_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCurve {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

fn check_lengths(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no frames to score".into()));
    }
    Ok(())
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|k| k as f64 / (SUCCESS_STEPS - 1) as f64).collect()
}

/// Success curve from per-frame IoUs; a frame counts when `iou > threshold`.
pub fn success_curve_from_ious(ious: &[f64]) -> SuccessCurve {
    let thresholds = success_thresholds();
    let n = ious.len() as f64;
    let success_rate = thresholds
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n)
        .collect();
    SuccessCurve { thresholds, success_rate }
}

pub fn success_curve(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<SuccessCurve> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    Ok(success_curve_from_ious(&ious))
}

/// Mean of the success rates.
pub fn auc(curve: &SuccessCurve) -> f64 {
    curve.success_rate.iter().sum::<f64>() / curve.success_rate.len() as f64
}

/// Fraction of frames whose center error is within each pixel threshold
/// `0, 1, …, 50`.
pub fn precision_curve(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<PrecisionCurve> {
    check_lengths(pred, gt)?;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    let thresholds: Vec<f64> = (0..=PRECISION_MAX_PX).map(|t| t as f64).collect();
    let n = errors.len() as f64;
    let rates = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(PrecisionCurve { thresholds, rates })
}

/// Rate at the largest curve threshold not above `px`.
pub fn precision_at(curve: &PrecisionCurve, px: f64) -> f64 {
    curve
        .thresholds
        .iter()
        .zip(&curve.rates)
        .take_while(|(t, _)| **t <= px)
        .last()
        .map_or(0.0, |(_, r)| *r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub auc: f64,
    pub precision: f64,
    pub frames: usize,
    pub success: SuccessCurve,
    pub precision_curve: PrecisionCurve,
}

pub fn score_sequence(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<SequenceScore> {
    let success = success_curve(pred, gt)?;
    let precision_curve = precision_curve(pred, gt)?;
    Ok(SequenceScore {
        auc: auc(&success),
        precision: precision_at(&precision_curve, PRECISION_THRESHOLD_PX),
        frames: pred.len(),
        success,
        precision_curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub auc: f64,
    pub precision: f64,
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: BTreeMap<String, SequenceScore>,
    pub mean_auc: f64,
    pub mean_precision: f64,
    pub attributes: BTreeMap<String, AttributeScore>,
}

/// Macro-averages per-sequence scores overall and per challenge tag.
/// Tags carried by no sequence are absent from the report.
pub fn attribute_report(
    results: BTreeMap<String, SequenceScore>,
    tags: &BTreeMap<String, Vec<String>>,
) -> EvalReport {
    let n = results.len().max(1) as f64;
    let mean_auc = results.values().map(|s| s.auc).sum::<f64>() / n;
    let mean_precision = results.values().map(|s| s.precision).sum::<f64>() / n;
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (name, score) in &results {
        let Some(seq_tags) = tags.get(name) else { continue };
        let mut seen: Vec<&String> = seq_tags.iter().collect();
        seen.sort();
        seen.dedup();
        for tag in seen {
            let e = acc.entry(tag.clone()).or_default();
            e.0 += score.auc;
            e.1 += score.precision;
            e.2 += 1;
        }
    }
    let attributes = acc
        .into_iter()
        .map(|(tag, (a, p, c))| {
            (tag, AttributeScore { auc: a / c as f64, precision: p / c as f64, sequences: c })
        })
        .collect();
    EvalReport { sequences: results, mean_auc, mean_precision, attributes }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>7}", "sequence", "AUC", "Pre@20", "frames");
        for (name, sc) in &self.sequences {
            let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>7}", name, sc.auc, sc.precision, sc.frames);
        }
        let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>7}", "MEAN", self.mean_auc, self.mean_precision, self.sequences.len());
        if !self.attributes.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>7}", "attribute", "AUC", "Pre@20", "seqs");
            for (tag, a) in &self.attributes {
                let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>7}", tag, a.auc, a.precision, a.sequences);
            }
        }
        s
    }

    /// Long-format CSV `sequence,curve,threshold,value` for plotting.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("sequence,curve,threshold,value\n");
        for (name, sc) in &self.sequences {
            for (t, v) in sc.success.thresholds.iter().zip(&sc.success.success_rate) {
                let _ = writeln!(s, "{name},success,{t:.2},{v:.6}");
            }
            for (t, v) in sc.precision_curve.thresholds.iter().zip(&sc.precision_curve.rates) {
                let _ = writeln!(s, "{name},precision,{t:.0},{v:.6}");
            }
        }
        s
    }
}
