//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use cfmimo_aud::neuralnet::{Activations, Network};

/// Central-difference gradient of the training-phase batch loss with respect
/// to every parameter, in [`Network::params`] order.
pub fn finite_difference_grads(
    net: &Network<f64>,
    x: &Activations<f64>,
    targets: &[f64],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut probe = net.clone();
    let lens = probe.param_lens();
    let mut out = Vec::with_capacity(lens.len());
    for (p, &len) in lens.iter().enumerate() {
        let mut g = vec![0.0; len];
        for i in 0..len {
            let orig = probe.params()[p].value[i];
            probe.params()[p].value[i] = orig + step;
            let up = probe.clone().loss_and_grad(x, targets).unwrap();
            probe.params()[p].value[i] = orig - step;
            let down = probe.clone().loss_and_grad(x, targets).unwrap();
            probe.params()[p].value[i] = orig;
            g[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Relative error with an absolute floor for gradients that are zero
/// analytically (biases feeding a batch norm).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between analytic and numerical gradients.
pub fn max_grad_error(
    net: &Network<f64>,
    x: &Activations<f64>,
    targets: &[f64],
    step: f64,
    floor: f64,
) -> (f64, usize, usize) {
    let mut analytic = net.clone();
    analytic.loss_and_grad(x, targets).unwrap();
    let ag: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.grad.to_vec()).collect();
    let ng = finite_difference_grads(net, x, targets, step);
    let mut worst = (0.0, 0, 0);
    for (p, (a, n)) in ag.iter().zip(&ng).enumerate() {
        for (i, (x, y)) in a.iter().zip(n).enumerate() {
            let e = rel_err(*x, *y, floor);
            if e > worst.0 {
                worst = (e, p, i);
            }
        }
    }
    worst
}

fn relu_masks(net: &Network<f64>, x: &Activations<f64>) -> Vec<bool> {
    let mut probe = net.clone();
    probe.forward_train(x).unwrap();
    probe
        .layers
        .iter()
        .flat_map(|l| match l {
            cfmimo_aud::neuralnet::Layer::Relu { mask } => mask.clone(),
            _ => Vec::new(),
        })
        .collect()
}

/// Per-parameter flag: does the `±step` stencil change any ReLU on/off state?
pub fn kink_crossings(net: &Network<f64>, x: &Activations<f64>, step: f64) -> Vec<Vec<bool>> {
    let base = relu_masks(net, x);
    let mut probe = net.clone();
    let lens = probe.param_lens();
    lens.iter()
        .enumerate()
        .map(|(p, &len)| {
            (0..len)
                .map(|i| {
                    let orig = probe.params()[p].value[i];
                    probe.params()[p].value[i] = orig + step;
                    let up = relu_masks(&probe, x);
                    probe.params()[p].value[i] = orig - step;
                    let down = relu_masks(&probe, x);
                    probe.params()[p].value[i] = orig;
                    up != base || down != base
                })
                .collect()
        })
        .collect()
}

pub struct GradReport {
    pub max_err: f64,
    pub max_err_smooth: f64,
    pub kinked: usize,
    pub total: usize,
}

/// Gradient comparison split by whether the stencil crosses a ReLU kink.
pub fn grad_report(
    net: &Network<f64>,
    x: &Activations<f64>,
    targets: &[f64],
    step: f64,
    floor: f64,
) -> GradReport {
    let mut analytic = net.clone();
    analytic.loss_and_grad(x, targets).unwrap();
    let ag: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.grad.to_vec()).collect();
    let ng = finite_difference_grads(net, x, targets, step);
    let kinks = kink_crossings(net, x, step);
    let mut r = GradReport { max_err: 0.0, max_err_smooth: 0.0, kinked: 0, total: 0 };
    for p in 0..ag.len() {
        for i in 0..ag[p].len() {
            let e = rel_err(ag[p][i], ng[p][i], floor);
            r.total += 1;
            r.max_err = r.max_err.max(e);
            if kinks[p][i] {
                r.kinked += 1;
            } else {
                r.max_err_smooth = r.max_err_smooth.max(e);
            }
        }
    }
    r
}
