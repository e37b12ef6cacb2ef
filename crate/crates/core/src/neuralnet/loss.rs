use crate::error::{Error, Result};
use crate::scenario::Activity;

use super::layers::{sigmoid_scalar, Activations};
use super::real::Real;

/// Probabilities are kept inside `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn term(target: f64, p: f64, q: f64) -> f64 {
    -(target * clamp(p).ln() + (1.0 - target) * clamp(q).ln())
}

/// Binary cross-entropy of one sample, summed over users.
pub fn bce_loss(a: &Activity, a_hat: &[f64]) -> Result<f64> {
    if a.len() != a_hat.len() {
        return Err(Error::Structural(format!(
            "{} targets vs {} predictions",
            a.len(),
            a_hat.len()
        )));
    }
    Ok(a.0
        .iter()
        .zip(a_hat)
        .map(|(&t, &p)| term(if t { 1.0 } else { 0.0 }, p, 1.0 - p))
        .sum())
}

/// Mean over the batch of the per-sample summed cross-entropy, with the
/// gradient with respect to the logits. `targets` is `batch × outputs`
/// row-major; logits are `outputs × batch`.
pub(crate) fn bce_with_logits<T: Real>(
    logits: &Activations<T>,
    targets: &[f64],
) -> Result<(f64, Activations<T>)> {
    let k = logits.channels;
    let b = logits.batch;
    if targets.len() != k * b {
        return Err(Error::Structural(format!(
            "expected {} targets for a {b}-sample batch of {k} outputs, got {}",
            k * b,
            targets.len()
        )));
    }
    let mut grad = Activations::zeros(k, b, 1, 1);
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    for u in 0..k {
        for s in 0..b {
            let r = logits.data[u * b + s].f64();
            let t = targets[s * k + u];
            let p = sigmoid_scalar(r);
            total += term(t, p, sigmoid_scalar(-r));
            grad.data[u * b + s] = T::of((p - t) * inv_b);
        }
    }
    Ok((total * inv_b, grad))
}
