use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::init::glorot_init;
use super::layers::{relu_in_place, sigmoid_scalar, Activations, BatchNorm, Conv2d, Linear, Padding};
use super::loss::bce_with_logits;
use super::real::Real;
use crate::scenario::RandomStream;

/// Shape and hyper-parameters of the detector network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Input depth (one channel per AP, two in re/im mode).
    pub in_channels: usize,
    /// Antennas per AP.
    pub height: usize,
    /// Number of users.
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub conv_widths: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ArchSpec {
    /// Three conv blocks of 128/64/32 filters, two 500-unit hidden layers and
    /// one output per user. Kernels are 2×2, or 1×2 for single-antenna APs.
    pub fn reference(in_channels: usize, num_antennas: usize, num_users: usize) -> Self {
        Self::with_widths(in_channels, num_antennas, num_users, &[128, 64, 32], &[500, 500])
    }

    pub fn with_widths(
        in_channels: usize,
        num_antennas: usize,
        num_users: usize,
        conv_widths: &[usize],
        hidden_widths: &[usize],
    ) -> Self {
        Self {
            in_channels,
            height: num_antennas,
            width: num_users,
            kernel_h: if num_antennas > 1 { 2 } else { 1 },
            kernel_w: 2,
            conv_widths: conv_widths.to_vec(),
            hidden_widths: hidden_widths.to_vec(),
            outputs: num_users,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.in_channels, self.height, self.width, self.kernel_h, self.kernel_w, self.outputs];
        if dims.contains(&0)
            || self.conv_widths.contains(&0)
            || self.hidden_widths.contains(&0)
        {
            return Err(Error::Structural(format!("degenerate architecture {self:?}")));
        }
        if self.conv_widths.is_empty() {
            return Err(Error::Structural("at least one conv block is required".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Structural("invalid batch-norm hyper-parameters".into()));
        }
        Ok(())
    }

    /// Length of one input sample.
    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Norm(BatchNorm<T>),
    Relu { mask: Vec<bool> },
    Flatten { channels: usize, height: usize, width: usize },
    Linear(Linear<T>),
}

/// Mutable view of one parameter tensor and its gradient.
pub struct ParamSlot<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: ArchSpec,
    /// Factor applied to raw inputs in [`Network::batch`]; raw channel
    /// estimates are orders of magnitude below the batch-norm stabilizer.
    pub input_scale: f64,
    pub layers: Vec<Layer<T>>,
}

fn flatten<T: Real>(x: &Activations<T>) -> Activations<T> {
    let plane = x.height * x.width;
    let features = x.channels * plane;
    let row = x.row_len();
    let mut out = Activations::zeros(features, x.batch, 1, 1);
    for c in 0..x.channels {
        for b in 0..x.batch {
            for p in 0..plane {
                out.data[(c * plane + p) * x.batch + b] = x.data[c * row + b * plane + p];
            }
        }
    }
    out
}

fn unflatten<T: Real>(dy: &Activations<T>, channels: usize, height: usize, width: usize) -> Activations<T> {
    let plane = height * width;
    let mut out = Activations::zeros(channels, dy.batch, height, width);
    let row = out.row_len();
    for c in 0..channels {
        for b in 0..dy.batch {
            for p in 0..plane {
                out.data[c * row + b * plane + p] = dy.data[(c * plane + p) * dy.batch + b];
            }
        }
    }
    out
}

impl<T: Real> Network<T> {
    /// Layer stack with zeroed parameters.
    pub fn new(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        let mut ch = arch.in_channels;
        let pad = Padding::same(arch.kernel_h, arch.kernel_w);
        for &w in &arch.conv_widths {
            layers.push(Layer::Conv(Conv2d::new(ch, w, arch.kernel_h, arch.kernel_w, 1, pad)));
            layers.push(Layer::Norm(BatchNorm::new(w, arch.bn_momentum, arch.bn_eps)));
            layers.push(Layer::Relu { mask: Vec::new() });
            ch = w;
        }
        layers.push(Layer::Flatten {
            channels: ch,
            height: arch.height,
            width: arch.width,
        });
        let mut feat = ch * arch.height * arch.width;
        for &w in &arch.hidden_widths {
            layers.push(Layer::Linear(Linear::new(feat, w)));
            layers.push(Layer::Norm(BatchNorm::new(w, arch.bn_momentum, arch.bn_eps)));
            layers.push(Layer::Relu { mask: Vec::new() });
            feat = w;
        }
        layers.push(Layer::Linear(Linear::new(feat, arch.outputs)));
        Ok(Self {
            arch,
            input_scale: 1.0,
            layers,
        })
    }

    /// Glorot-uniform weights, zero biases, unit BN scale.
    pub fn initialized(arch: ArchSpec, rng: &mut RandomStream) -> Result<Self> {
        let mut net = Self::new(arch)?;
        for layer in &mut net.layers {
            match layer {
                Layer::Conv(c) => {
                    let rf = c.kernel_h * c.kernel_w;
                    let (w, b) = glorot_init::<T>(
                        c.weight.len(),
                        c.bias.len(),
                        c.in_channels * rf,
                        c.out_channels * rf,
                        rng,
                    );
                    c.weight = w;
                    c.bias = b;
                }
                Layer::Linear(l) => {
                    let (w, b) = glorot_init::<T>(l.weight.len(), l.bias.len(), l.inputs, l.outputs, rng);
                    l.weight = w;
                    l.bias = b;
                }
                _ => {}
            }
        }
        Ok(net)
    }

    /// Packs per-sample `C × N × K` inputs into a batch, checking shapes and
    /// applying [`Network::input_scale`].
    pub fn batch<S: Copy + Into<f64>>(&self, samples: &[&[S]]) -> Result<Activations<T>> {
        let mut x = Activations::from_samples(samples, self.arch.in_channels, self.arch.height, self.arch.width)?;
        if self.input_scale != 1.0 {
            let s = T::of(self.input_scale);
            x.data.iter_mut().for_each(|v| *v *= s);
        }
        Ok(x)
    }

    fn check_input(&self, x: &Activations<T>) -> Result<()> {
        let a = &self.arch;
        if (x.channels, x.height, x.width) != (a.in_channels, a.height, a.width) {
            return Err(Error::Structural(format!(
                "input is {}x{}x{}, network expects {}x{}x{}",
                x.channels, x.height, x.width, a.in_channels, a.height, a.width
            )));
        }
        Ok(())
    }

    /// Logits (`outputs × batch`) with batch-norm running statistics.
    pub fn infer_logits(&self, x: &Activations<T>) -> Result<Activations<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => c.infer(&h)?,
                Layer::Norm(n) => n.infer(&h)?,
                Layer::Relu { .. } => {
                    relu_in_place(&mut h.data);
                    h
                }
                Layer::Flatten { .. } => flatten(&h),
                Layer::Linear(l) => l.infer(&h)?,
            };
        }
        Ok(h)
    }

    /// Training-phase forward pass; caches what backpropagation needs and
    /// updates batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Activations<T>) -> Result<Activations<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Norm(n) => n.forward(&h)?,
                Layer::Relu { mask } => {
                    mask.clear();
                    mask.extend(h.data.iter().map(|v| *v > T::zero()));
                    relu_in_place(&mut h.data);
                    h
                }
                Layer::Flatten { .. } => flatten(&h),
                Layer::Linear(l) => l.forward(&h)?,
            };
        }
        Ok(h)
    }

    /// Backpropagates `dlogits` and leaves parameter gradients in the layers.
    pub fn backward(&mut self, dlogits: Activations<T>) {
        let mut g = dlogits;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let first = i == 0;
            g = match layer {
                Layer::Conv(c) => match c.backward(&g, !first) {
                    Some(dx) => dx,
                    None => break,
                },
                Layer::Norm(n) => n.backward(&g),
                Layer::Relu { mask } => {
                    for (v, keep) in g.data.iter_mut().zip(mask.iter()) {
                        if !keep {
                            *v = T::zero();
                        }
                    }
                    g
                }
                Layer::Flatten {
                    channels,
                    height,
                    width,
                } => unflatten(&g, *channels, *height, *width),
                Layer::Linear(l) => match l.backward(&g, !first) {
                    Some(dx) => dx,
                    None => break,
                },
            };
        }
    }

    /// Mean binary cross-entropy of a batch; fills every parameter gradient.
    pub fn loss_and_grad(&mut self, x: &Activations<T>, targets: &[f64]) -> Result<f64> {
        let logits = self.forward_train(x)?;
        let (loss, dlogits) = bce_with_logits(&logits, targets)?;
        self.backward(dlogits);
        Ok(loss)
    }

    /// Mean binary cross-entropy in inference phase.
    pub fn eval_loss(&self, x: &Activations<T>, targets: &[f64]) -> Result<f64> {
        let logits = self.infer_logits(x)?;
        Ok(bce_with_logits(&logits, targets)?.0)
    }

    /// Activity probabilities, `batch × outputs` row-major.
    pub fn predict_batch(&self, x: &Activations<T>) -> Result<Vec<f64>> {
        let logits = self.infer_logits(x)?;
        let b = logits.batch;
        let k = logits.channels;
        let mut out = vec![0.0; b * k];
        for u in 0..k {
            for s in 0..b {
                out[s * k + u] = sigmoid_scalar(logits.data[u * b + s].f64());
            }
        }
        Ok(out)
    }

    /// Activity probabilities of one `C × N × K` sample.
    pub fn predict<S: Copy + Into<f64>>(&self, sample: &[S]) -> Result<Vec<f64>> {
        let x = self.batch(&[sample])?;
        self.predict_batch(&x)
    }

    /// Every trainable tensor with its gradient, in a fixed order.
    pub fn params(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(ParamSlot { value: &mut c.weight, grad: &c.grad_weight });
                    out.push(ParamSlot { value: &mut c.bias, grad: &c.grad_bias });
                }
                Layer::Norm(n) => {
                    out.push(ParamSlot { value: &mut n.gamma, grad: &n.grad_gamma });
                    out.push(ParamSlot { value: &mut n.shift, grad: &n.grad_shift });
                }
                Layer::Linear(l) => {
                    out.push(ParamSlot { value: &mut l.weight, grad: &l.grad_weight });
                    out.push(ParamSlot { value: &mut l.bias, grad: &l.grad_bias });
                }
                _ => {}
            }
        }
        out
    }

    /// Shapes of the trainable tensors, matching [`Network::params`].
    pub fn param_lens(&mut self) -> Vec<usize> {
        self.params().iter().map(|p| p.value.len()).collect()
    }

    pub fn num_params(&mut self) -> usize {
        self.param_lens().iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::stream;

    fn tiny() -> ArchSpec {
        ArchSpec::with_widths(2, 2, 6, &[4, 3, 2], &[8, 8])
    }

    #[test]
    fn reference_layout() {
        let a = ArchSpec::reference(20, 3, 200);
        assert_eq!((a.kernel_h, a.kernel_w), (2, 2));
        assert_eq!(a.conv_widths, vec![128, 64, 32]);
        assert_eq!(a.hidden_widths, vec![500, 500]);
        assert_eq!(a.outputs, 200);
        let a1 = ArchSpec::reference(20, 1, 200);
        assert_eq!((a1.kernel_h, a1.kernel_w), (1, 2));
        let net = Network::<f64>::new(a1).unwrap();
        // 3 conv blocks * 3 + flatten + 2 hidden blocks * 3 + output
        assert_eq!(net.layers.len(), 17);
        match net.layers.last().unwrap() {
            Layer::Linear(l) => assert_eq!((l.inputs, l.outputs), (500, 200)),
            _ => panic!("last layer must be linear"),
        }
        match &net.layers[10] {
            Layer::Linear(l) => assert_eq!(l.inputs, 32 * 200),
            _ => panic!("first hidden layer must follow flatten"),
        }
    }

    #[test]
    fn fresh_net_outputs_are_probabilities() {
        let net = Network::<f64>::initialized(tiny(), &mut stream(1, 0)).unwrap();
        let x: Vec<f64> = (0..24).map(|i| (i as f64).sin() * 100.0).collect();
        let p = net.predict(&x).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn shape_mismatch() {
        let net = Network::<f64>::initialized(tiny(), &mut stream(1, 0)).unwrap();
        assert!(net.predict(&[0.0f64; 23]).is_err());
    }

    #[test]
    fn batch_prediction_matches_single() {
        let mut net = Network::<f64>::initialized(tiny(), &mut stream(2, 0)).unwrap();
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|s| (0..24).map(|i| ((i * 7 + s * 13) as f64).cos()).collect())
            .collect();
        let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
        // Move running stats away from their initial values first.
        let x = net.batch(&refs).unwrap();
        net.forward_train(&x).unwrap();
        let batch = net.predict_batch(&x).unwrap();
        for (s, sample) in samples.iter().enumerate() {
            let single = net.predict(sample).unwrap();
            for u in 0..6 {
                assert!((batch[s * 6 + u] - single[u]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ap_slabs_are_not_interchangeable() {
        let net = Network::<f64>::initialized(tiny(), &mut stream(3, 0)).unwrap();
        let x: Vec<f64> = (0..24).map(|i| ((i * 5) as f64 * 0.3).sin()).collect();
        let mut swapped = x[12..].to_vec();
        swapped.extend_from_slice(&x[..12]);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&swapped).unwrap();
        assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9));
    }

    #[test]
    fn param_order_is_stable() {
        let mut net = Network::<f32>::new(tiny()).unwrap();
        let lens = net.param_lens();
        // conv1 w,b bn g,s conv2 ... lin3 w,b
        assert_eq!(lens[0], 4 * 2 * 2 * 2);
        assert_eq!(lens.len(), 3 * 4 + 2 * 4 + 2);
        assert_eq!(*lens.last().unwrap(), 6);
    }
}
