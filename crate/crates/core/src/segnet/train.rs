//! Full-image AdaDelta training over the dihedral-augmented train set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy_with_targets;
use super::network::{backward, forward};
use super::optim::{adadelta_step, OptimizerState};
use super::{ModelKind, NetError, NetworkConfig, NetworkWeights, Tensor};
use crate::dataset::{dihedral, pad_image, pad_to_multiple, LabeledImage, PadFill};
use crate::eval;
use crate::imagecore::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    /// Operating point for the validation IoU reported after training.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            rho: 0.95,
            epsilon: 1e-6,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Pooled validation IoU of the positive class at the configured threshold.
    pub final_val_iou: Option<f64>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_ap\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.val_ap));
        }
        out
    }

    pub fn best_val_ap(&self) -> Option<f64> {
        self.epochs
            .iter()
            .map(|e| e.val_ap)
            .filter(|v| v.is_finite())
            .reduce(f64::max)
    }
}

/// A padded training image with per-pixel targets (`None` = ignored).
struct Prepared {
    image: Raster<[u8; 3]>,
    targets: Raster<Option<usize>>,
}

fn prepare(sample: &LabeledImage, kind: ModelKind, multiple: usize) -> Prepared {
    let mapping = kind.class_mapping();
    let targets = sample.mask.map(|&c| mapping.target(c));
    Prepared {
        image: pad_image(&sample.image, multiple).raster,
        // padding never contributes to the loss
        targets: pad_to_multiple(&targets, multiple, PadFill::Constant(None)).raster,
    }
}

fn channel_means(images: &[LabeledImage]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for s in images {
        for px in s.image.data() {
            for c in 0..3 {
                sum[c] += px[c] as f64 / 255.0;
            }
        }
        n += s.image.len();
    }
    sum.map(|v| v / n as f64)
}

/// Positive-class probabilities and binary labels over every non-ignored pixel.
pub fn validation_scores(
    weights: &NetworkWeights,
    images: &[LabeledImage],
) -> Result<(Vec<f64>, Vec<bool>), NetError> {
    let mapping = weights.model_kind.class_mapping();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in images {
        let probs = super::predict_probabilities(weights, &s.image)?;
        for (px, &class) in probs.data.chunks_exact(probs.channels).zip(s.mask.data()) {
            if let Some(t) = mapping.target(class) {
                scores.push(px[1]);
                labels.push(t == 1);
            }
        }
    }
    Ok((scores, labels))
}

pub fn train_model(
    kind: ModelKind,
    train: &[LabeledImage],
    val: &[LabeledImage],
    config: NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(NetworkWeights, TrainingHistory), NetError> {
    train_model_with_progress(kind, train, val, config, train_cfg, |_| {})
}

/// Trains one model. When `val` is empty, validation AP is measured on the
/// unaugmented training images.
pub fn train_model_with_progress(
    kind: ModelKind,
    train: &[LabeledImage],
    val: &[LabeledImage],
    mut config: NetworkConfig,
    train_cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(NetworkWeights, TrainingHistory), NetError> {
    config.validate()?;
    if train.is_empty() {
        return Err(NetError::EmptyPartition("train"));
    }
    config.input_norm = channel_means(train);
    let multiple = config.size_multiple();
    let mut weights = NetworkWeights::init(config, kind, train_cfg.seed)?;

    let prepared: Vec<Prepared> = train
        .iter()
        .map(|s| prepare(s, kind, multiple))
        .filter(|p| p.targets.data().iter().any(Option::is_some))
        .collect();
    if prepared.is_empty() {
        return Err(NetError::EmptyPartition("train pixels for this model"));
    }
    let val_set = if val.is_empty() { train } else { val };

    let mut state = OptimizerState::new(weights.params.len(), train_cfg.rho, train_cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(1));
    let mut order: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|i| (0..8).map(move |k| (i, k)))
        .collect();
    let mut history = TrainingHistory::default();

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &(i, k) in &order {
            let p = &prepared[i];
            let image = dihedral(&p.image, k);
            let targets = dihedral(&p.targets, k);
            let input = Tensor::from_rgb(&image, weights.config.input_norm);
            let (logits, cache) = forward(&weights, &input)?;
            let (loss, grad) = cross_entropy_with_targets(&logits, targets.data())?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch });
            }
            total += loss;
            let (grads, _) = backward(&weights, &cache, &grad)?;
            adadelta_step(&mut weights.params, &grads, &mut state)?;
        }
        let (scores, labels) = validation_scores(&weights, val_set)?;
        let val_ap = eval::average_precision(&scores, &labels).unwrap_or(f64::NAN);
        let record = EpochRecord {
            epoch,
            loss: total / order.len() as f64,
            val_ap,
        };
        progress(&record);
        history.epochs.push(record);
    }

    let (scores, labels) = validation_scores(&weights, val_set)?;
    let pred: Vec<bool> = scores.iter().map(|&s| s >= train_cfg.threshold).collect();
    history.final_val_iou = eval::iou(&pred, &labels).ok();
    Ok((weights, history))
}
