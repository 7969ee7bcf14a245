use super::{shape_err, NnError, Scalar, Tensor};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy `-(1/2N) sum [t ln p + (1 - t) ln(1 - p)]` and its
/// gradient with respect to `prediction`. The loss is accumulated in `f64`.
pub fn bce_loss<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    if prediction.shape() != target.shape() {
        return Err(shape_err(
            "bce",
            format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        ));
    }
    if prediction.is_empty() {
        return Err(shape_err("bce", "empty input"));
    }
    let n = prediction.len() as f64;
    let scale = 1.0 / (2.0 * n);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(prediction.shape());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data())
        .zip(target.data())
    {
        let raw = p.as_f64();
        let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let t = t.as_f64();
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        // Zero gradient where the clamp is active.
        *g = if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
            T::from_f64(scale * (p - t) / (p * (1.0 - p)))
        } else {
            T::zero()
        };
    }
    Ok((loss * scale, grad))
}
