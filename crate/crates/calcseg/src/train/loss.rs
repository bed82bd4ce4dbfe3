//! Masked binary cross-entropy on logits, plus hard-negative selection.
//!
//! Loss and gradient are computed in the log-sum-exp form
//! `max(z,0) - z*y + ln(1 + e^-|z|)`, which never exponentiates a positive
//! argument and so stays finite for any logit.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Scalar, Tensor};

/// Per-pixel binary cross-entropy of logits `z` against labels `y` in {0,1},
/// with no masking or reduction. This is the hardness measure used to rank
/// negatives.
pub fn bce_per_pixel<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.shape() != labels.shape() {
        return Err(Error::dim_mismatch(
            "bce_per_pixel",
            logits.shape(),
            labels.shape(),
        ));
    }
    let data = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
        .collect();
    Tensor::from_vec(logits.shape(), data)
}

/// Mean binary cross-entropy over the pixels where `mask` is set, and the
/// gradient of that mean with respect to the logits. The gradient is exactly
/// zero wherever `mask` is zero.
///
/// Fails with [`Error::DegenerateBatch`] when the mask selects nothing; the
/// caller is expected to skip such a step.
pub fn bce_loss_masked<T: Scalar>(
    logits: &Tensor<T>,
    labels: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    if logits.shape() != labels.shape() {
        return Err(Error::dim_mismatch(
            "bce_loss_masked labels",
            logits.shape(),
            labels.shape(),
        ));
    }
    if logits.shape() != mask.shape() {
        return Err(Error::dim_mismatch(
            "bce_loss_masked mask",
            logits.shape(),
            mask.shape(),
        ));
    }
    let half = T::from_f64(0.5);
    let count = mask.data().iter().filter(|&&m| m > half).count();
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    let scale = T::one() / T::from_f64(count as f64);

    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((&z, &y), &m) in logits.data().iter().zip(labels.data()).zip(mask.data()) {
        if m > half {
            loss = loss + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
            grad.push((sigmoid(z) - y) * scale);
        } else {
            grad.push(T::zero());
        }
    }
    Ok((loss * scale, Tensor::from_vec(logits.shape(), grad)?))
}

/// Builds the contribution mask for one training step: every positive pixel,
/// plus the `min(ratio * n_pos, n_neg)` negatives with the largest per-pixel
/// loss. Ties are broken toward the smaller row-major index, so the
/// selection is fully deterministic. When the crop holds no positives at
/// all, the top `fallback` negatives are taken instead.
pub fn select_hard_negatives<T: Scalar>(
    per_pixel_loss: &Tensor<T>,
    labels: &Tensor<T>,
    ratio: usize,
    fallback: usize,
) -> Result<Tensor<T>> {
    if per_pixel_loss.shape() != labels.shape() {
        return Err(Error::dim_mismatch(
            "select_hard_negatives",
            per_pixel_loss.shape(),
            labels.shape(),
        ));
    }
    let half = T::from_f64(0.5);
    let mut mask = vec![T::zero(); labels.len()];
    let mut negatives: Vec<(T, usize)> = Vec::new();
    let mut n_pos = 0usize;
    for (i, (&y, &l)) in labels.data().iter().zip(per_pixel_loss.data()).enumerate() {
        if y > half {
            mask[i] = T::one();
            n_pos += 1;
        } else {
            negatives.push((l, i));
        }
    }

    let want = if n_pos > 0 { ratio * n_pos } else { fallback };
    let take = want.min(negatives.len());
    if take > 0 {
        // Largest loss first; on equal loss the smaller index wins.
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            b.0.to_f64()
                .total_cmp(&a.0.to_f64())
                .then(a.1.cmp(&b.1))
        };
        if take < negatives.len() {
            negatives.select_nth_unstable_by(take - 1, cmp);
        }
        for &(_, i) in &negatives[..take] {
            mask[i] = T::one();
        }
    }
    Tensor::from_vec(labels.shape(), mask)
}
