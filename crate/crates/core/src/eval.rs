//! Split-detection metrics, threshold calibration and the LDA-on-HSV baseline.
//!
//! All metrics pool pixels across images and skip tray pixels, the same
//! pixels the split model's loss ignores.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{rgb_to_hsv, LabelMask, PixelClass, Raster, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no positive labels")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("union of predicted and true masks is empty")]
    EmptyUnion,
    #[error("true BSR of image {index} is zero; percent error undefined")]
    ZeroTruth { index: usize },
    #[error("no scored images")]
    EmptySet,
    #[error("threshold step {0} must evenly divide [0, 1]")]
    InvalidStep(f64),
    #[error("LDA needs samples of both classes")]
    SingleClass,
}

/// Mean over positives of the precision at their rank, scores descending.
/// Tied scores are evaluated together at the end of their group.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut sum = 0.0;
    let mut tp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_tp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        sum += group_tp as f64 * tp as f64 / j as f64;
        i = j;
    }
    Ok(sum / positives as f64)
}

pub fn iou(pred: &[bool], truth: &[bool]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    if union == 0 {
        return Err(EvalError::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroTruthPolicy {
    #[default]
    Error,
    /// Drop images whose true BSR is zero.
    Exclude,
}

/// Mean over images of `100·|pred − truth| / truth`.
pub fn bsr_percent_error(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    bsr_percent_error_with(pred, truth, ZeroTruthPolicy::Error)
}

pub fn bsr_percent_error_with(
    pred: &[f64],
    truth: &[f64],
    policy: ZeroTruthPolicy,
) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (index, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if t <= 0.0 {
            match policy {
                ZeroTruthPolicy::Error => return Err(EvalError::ZeroTruth { index }),
                ZeroTruthPolicy::Exclude => continue,
            }
        }
        sum += 100.0 * (p - t).abs() / t;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptySet);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Maximize pooled split IoU.
    Iou,
    /// Minimize mean BSR percent error.
    Bsr,
}

/// Split-class probabilities for one image, aligned with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub split_prob: Raster<f64>,
    pub truth: LabelMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub thresholds: Vec<f64>,
    pub iou: Vec<f64>,
    /// NaN where no image has a nonzero true BSR.
    pub bsr_error_pct: Vec<f64>,
    pub criterion: Criterion,
    pub chosen_threshold: f64,
    pub chosen_index: usize,
}

impl CalibrationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,iou,bsr_error_pct\n");
        for i in 0..self.thresholds.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.thresholds[i], self.iou[i], self.bsr_error_pct[i]
            ));
        }
        out
    }
}

/// Grid `0, step, 2·step, …, 1`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(EvalError::InvalidStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(EvalError::InvalidStep(step));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Sweeps the split threshold (pixel is split when `prob >= threshold`)
/// over bean pixels of the ground truth and picks the best grid point for
/// the criterion; ties go to the lowest threshold. Images with zero true BSR
/// are left out of the BSR error.
pub fn calibrate_threshold(
    scored: &[ScoredImage],
    criterion: Criterion,
    step: f64,
) -> Result<CalibrationCurve, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::EmptySet);
    }
    for s in scored {
        if !s.split_prob.same_dims(&s.truth) {
            return Err(EvalError::LengthMismatch(s.split_prob.len(), s.truth.len()));
        }
    }
    let total_truth: usize = scored
        .iter()
        .map(|s| s.truth.data().iter().filter(|&&c| c == PixelClass::Split).count())
        .sum();
    if total_truth == 0 {
        return Err(EvalError::NoPositives);
    }

    let thresholds = threshold_grid(step)?;
    let mut ious = Vec::with_capacity(thresholds.len());
    let mut errors = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let (mut inter, mut union) = (0usize, 0usize);
        let mut pred_bsr = Vec::with_capacity(scored.len());
        let mut true_bsr = Vec::with_capacity(scored.len());
        for s in scored {
            let (mut pred_split, mut true_split, mut bean) = (0usize, 0usize, 0usize);
            for (&p, &c) in s.split_prob.data().iter().zip(s.truth.data()) {
                if c == PixelClass::Tray {
                    continue;
                }
                let pred = p >= t;
                let truth = c == PixelClass::Split;
                bean += 1;
                pred_split += pred as usize;
                true_split += truth as usize;
                inter += (pred && truth) as usize;
                union += (pred || truth) as usize;
            }
            if bean > 0 {
                pred_bsr.push(pred_split as f64 / bean as f64);
                true_bsr.push(true_split as f64 / bean as f64);
            }
        }
        ious.push(inter as f64 / union as f64);
        errors.push(
            bsr_percent_error_with(&pred_bsr, &true_bsr, ZeroTruthPolicy::Exclude).unwrap_or(f64::NAN),
        );
    }

    let mut best = 0;
    for i in 1..thresholds.len() {
        let better = match criterion {
            Criterion::Iou => ious[i] > ious[best],
            Criterion::Bsr => errors[i] < errors[best] || (errors[best].is_nan() && !errors[i].is_nan()),
        };
        if better {
            best = i;
        }
    }
    if criterion == Criterion::Bsr && errors[best].is_nan() {
        return Err(EvalError::NoPositives);
    }
    Ok(CalibrationCurve {
        chosen_threshold: thresholds[best],
        chosen_index: best,
        thresholds,
        iou: ious,
        bsr_error_pct: errors,
        criterion,
    })
}

/// One row of the split-detection comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub ap: f64,
    pub iou: f64,
    pub bsr_error_pct: f64,
    pub bsh_error: f64,
}

pub const METRICS_CSV_HEADER: &str = "method,ap,iou,bsr_error_pct,bsh_error";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method, self.ap, self.iou, self.bsr_error_pct, self.bsh_error
        )
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Fisher discriminant on HSV triples (hue in degrees). Scores are positive
/// on the class-1 side of the midpoint between projected class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: [f64; 3],
    pub bias: f64,
}

pub fn hsv_feature(px: [u8; 3]) -> [f64; 3] {
    rgb_to_hsv(px[0], px[1], px[2]).to_array()
}

pub fn hsv_features(image: &RgbImage) -> Vec<[f64; 3]> {
    image.data().iter().map(|&px| hsv_feature(px)).collect()
}

pub fn lda_fit(features: &[[f64; 3]], labels: &[bool]) -> Result<LdaModel, EvalError> {
    if features.len() != labels.len() {
        return Err(EvalError::LengthMismatch(features.len(), labels.len()));
    }
    let mut sums = [Vector3::zeros(); 2];
    let mut counts = [0usize; 2];
    for (f, &l) in features.iter().zip(labels) {
        sums[l as usize] += Vector3::from(*f);
        counts[l as usize] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(EvalError::SingleClass);
    }
    let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];

    let mut scatter = Matrix3::zeros();
    for (f, &l) in features.iter().zip(labels) {
        let d = Vector3::from(*f) - means[l as usize];
        scatter += d * d.transpose();
    }
    let dof = (features.len() as f64 - 2.0).max(1.0);
    let cov = scatter / dof;
    let ridge = 1e-6 * cov.trace() / 3.0;
    let diff = means[1] - means[0];
    let w = (cov + Matrix3::identity() * ridge)
        .try_inverse()
        .map(|inv| inv * diff)
        // all features constant within classes: fall back to the mean difference
        .unwrap_or(diff);
    let mid = (means[0] + means[1]) / 2.0;
    Ok(LdaModel {
        weights: [w[0], w[1], w[2]],
        bias: -w.dot(&mid),
    })
}

pub fn lda_score(model: &LdaModel, feature: &[f64; 3]) -> f64 {
    model
        .weights
        .iter()
        .zip(feature)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + model.bias
}
