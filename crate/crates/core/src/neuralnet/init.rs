use rand::Rng;

use super::real::Real;
use crate::scenario::RandomStream;

/// Glorot-uniform weights (variance `2 / (fan_in + fan_out)`) and zero biases.
///
/// Draws are made in double precision so both element types see the same
/// initial network for a given stream.
pub fn glorot_init<T: Real>(
    weight_len: usize,
    bias_len: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut RandomStream,
) -> (Vec<T>, Vec<T>) {
    assert!(fan_in >= 1 && fan_out >= 1, "fans must be positive");
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..weight_len)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    (w, vec![T::zero(); bias_len])
}
