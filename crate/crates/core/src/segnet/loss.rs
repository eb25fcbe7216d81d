use super::{ClassMapping, NetError, ScoreMap, Tensor};
use crate::imagecore::LabelMask;

/// Per-pixel targets from a mask; ignored classes become `None`.
pub fn targets_from_mask(labels: &LabelMask, mapping: &ClassMapping) -> Vec<Option<usize>> {
    labels.data().iter().map(|&c| mapping.target(c)).collect()
}

/// Mean softmax cross-entropy over the pixels whose class is not ignored,
/// and its gradient with respect to the logits (zero at ignored pixels).
pub fn masked_cross_entropy(
    logits: &ScoreMap,
    labels: &LabelMask,
    mapping: &ClassMapping,
) -> Result<(f64, Tensor), NetError> {
    if logits.width != labels.width() || logits.height != labels.height() {
        return Err(NetError::DimensionMismatch {
            expected: (logits.height, logits.width),
            actual: (labels.height(), labels.width()),
        });
    }
    cross_entropy_with_targets(logits, &targets_from_mask(labels, mapping))
}

pub fn cross_entropy_with_targets(
    logits: &ScoreMap,
    targets: &[Option<usize>],
) -> Result<(f64, Tensor), NetError> {
    if targets.len() != logits.pixels() {
        return Err(NetError::ShapeMismatch {
            expected: logits.pixels(),
            actual: targets.len(),
        });
    }
    let active = targets.iter().filter(|t| t.is_some()).count();
    if active == 0 {
        return Err(NetError::EmptyLoss);
    }
    let c = logits.channels;
    let scale = 1.0 / active as f64;
    let mut grad = Tensor::zeros(logits.height, logits.width, c);
    let mut loss = 0.0;
    for ((px, g), target) in logits
        .data
        .chunks_exact(c)
        .zip(grad.data.chunks_exact_mut(c))
        .zip(targets)
    {
        let Some(t) = *target else { continue };
        if t >= c {
            return Err(NetError::ShapeMismatch {
                expected: c,
                actual: t + 1,
            });
        }
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = px.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - px[t];
        for (k, (gv, &v)) in g.iter_mut().zip(px).enumerate() {
            let p = (v - log_z).exp();
            *gv = scale * (p - if k == t { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{PixelClass, Raster};
    use crate::segnet::ModelKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabelMask {
        Raster::from_fn(w, h, |_, _| PixelClass::ALL[rng.random_range(0..3)])
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::zeros(3, 3, 2);
        let mask = Raster::filled(3, 3, PixelClass::SeedCoat);
        let (loss, _) =
            masked_cross_entropy(&logits, &mask, &ModelKind::SplitVsSeedCoat.class_mapping()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let logits = Tensor::zeros(2, 2, 2);
        let mask = Raster::filled(2, 2, PixelClass::Tray);
        assert!(matches!(
            masked_cross_entropy(&logits, &mask, &ModelKind::SplitVsSeedCoat.class_mapping()),
            Err(NetError::EmptyLoss)
        ));
    }

    #[test]
    fn ignored_labels_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits =
            Tensor::from_data(4, 4, 2, (0..32).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut mask = random_mask(&mut rng, 4, 4);
        mask.set(0, 0, PixelClass::SeedCoat);
        // Tray and Split both ignored so labels can change underneath the mask
        let mapping = ClassMapping([None, Some(1), None]);
        let (l1, g1) = masked_cross_entropy(&logits, &mask, &mapping).unwrap();
        let mut changed = mask.clone();
        for c in changed.data_mut() {
            *c = match *c {
                PixelClass::Tray => PixelClass::Split,
                PixelClass::Split => PixelClass::Tray,
                other => other,
            };
        }
        assert_ne!(changed, mask);
        let (l2, g2) = masked_cross_entropy(&logits, &changed, &mapping).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
        for (px, c) in g1.data.chunks_exact(2).zip(mask.data()) {
            if mapping.target(*c).is_none() {
                assert!(px.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits =
            Tensor::from_data(4, 4, 2, (0..32).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mask = random_mask(&mut rng, 4, 4);
        let mapping = ModelKind::BeanVsTray.class_mapping();
        let (_, grad) = masked_cross_entropy(&logits, &mask, &mapping).unwrap();
        let h = 1e-5;
        for i in 0..logits.data.len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data[i] += h;
            m.data[i] -= h;
            let fp = masked_cross_entropy(&p, &mask, &mapping).unwrap().0;
            let fm = masked_cross_entropy(&m, &mask, &mapping).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grad.data[i]).abs() / fd.abs().max(grad.data[i].abs()).max(1e-8);
            assert!(err < 1e-4, "{i}: {fd} vs {}", grad.data[i]);
        }
    }
}
