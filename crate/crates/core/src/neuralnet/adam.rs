use super::network::Network;
use super::real::Real;

/// Adam moments for every parameter tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Moments shaped after `net`, with (0.9, 0.999, 1e-8).
    pub fn new(net: &mut Network<T>, learning_rate: f64) -> Self {
        let lens = net.param_lens();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One bias-corrected update using the gradients held by `net`.
    pub fn step(&mut self, net: &mut Network<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.eps);
        let one = T::one();
        for ((slot, m), v) in net.params().into_iter().zip(&mut self.first).zip(&mut self.second) {
            debug_assert_eq!(slot.value.len(), m.len());
            for i in 0..slot.value.len() {
                let g = slot.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                slot.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
