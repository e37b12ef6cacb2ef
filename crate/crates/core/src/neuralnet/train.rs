//! Mini-batch training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::scenario::RandomStream;

use super::adam::AdamState;
use super::network::Network;
use super::real::Real;

/// In-memory samples: inputs `C × N × K` per sample, one 0/1 label per user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub sample_len: usize,
    pub num_users: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn new(sample_len: usize, num_users: usize) -> Self {
        Self {
            sample_len,
            num_users,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        if self.num_users == 0 {
            0
        } else {
            self.labels.len() / self.num_users
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, input: &[f32], labels: &[bool]) -> Result<()> {
        if input.len() != self.sample_len || labels.len() != self.num_users {
            return Err(Error::Structural(format!(
                "sample of {}/{} values, set expects {}/{}",
                input.len(),
                labels.len(),
                self.sample_len,
                self.num_users
            )));
        }
        self.inputs.extend_from_slice(input);
        self.labels.extend(labels.iter().map(|&b| b as u8));
        Ok(())
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    pub fn label(&self, i: usize) -> &[u8] {
        &self.labels[i * self.num_users..(i + 1) * self.num_users]
    }

    /// Splits off the trailing `n` samples.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let keep = self.len().saturating_sub(n);
        let tail = Self {
            sample_len: self.sample_len,
            num_users: self.num_users,
            inputs: self.inputs.split_off(keep * self.sample_len),
            labels: self.labels.split_off(keep * self.num_users),
        };
        (self, tail)
    }

    fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| self.label(i).iter().map(|&v| v as f64))
            .collect()
    }
}

/// How the detection threshold is chosen at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Fixed(f64),
    TargetFalseAlarm(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub threshold: ThresholdPolicy,
    /// Set [`Network::input_scale`] to the inverse RMS of the training inputs
    /// before the first epoch.
    pub fit_input_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            learning_rate: 1e-3,
            threshold: ThresholdPolicy::TargetFalseAlarm(0.1),
            fit_input_scale: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

impl LossTrace {
    /// `epoch,train_loss,val_loss` rows; the validation column is empty
    /// when no validation set was given.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, val);
        }
        s
    }
}

const EVAL_CHUNK: usize = 512;

/// Mean per-sample loss of `set` in inference phase.
pub fn evaluate_loss<T: Real>(net: &Network<T>, set: &LabeledSet) -> Result<f64> {
    let mut total = 0.0;
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let refs: Vec<&[f32]> = idx.iter().map(|&i| set.input(i)).collect();
        let x = net.batch(&refs)?;
        total += net.eval_loss(&x, &set.targets(idx))? * idx.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Activity probabilities for every sample, `len × K` row-major.
pub fn predict_set<T: Real>(net: &Network<T>, set: &LabeledSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len() * set.num_users);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let refs: Vec<&[f32]> = idx.iter().map(|&i| set.input(i)).collect();
        out.extend(net.predict_batch(&net.batch(&refs)?)?);
    }
    Ok(out)
}

/// Root mean square over every input value of a set.
pub fn input_rms(set: &LabeledSet) -> f64 {
    if set.inputs.is_empty() {
        return 0.0;
    }
    let sum: f64 = set.inputs.iter().map(|v| f64::from(*v).powi(2)).sum();
    (sum / set.inputs.len() as f64).sqrt()
}

/// Shuffled mini-batch training with Adam.
///
/// A trailing batch of a single sample is skipped: batch statistics are
/// undefined for it.
pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &LabeledSet,
    val: Option<&LabeledSet>,
    cfg: &TrainConfig,
    rng: &mut RandomStream,
) -> Result<LossTrace> {
    if data.is_empty() {
        return Err(Error::Structural("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.num_users != net.arch.outputs || data.sample_len != net.arch.input_len() {
        return Err(Error::Structural(format!(
            "training data ({} inputs, {} users) does not fit the network ({} inputs, {} outputs)",
            data.sample_len,
            data.num_users,
            net.arch.input_len(),
            net.arch.outputs
        )));
    }
    if cfg.fit_input_scale {
        let rms = input_rms(data);
        if rms > 0.0 && rms.is_finite() {
            net.input_scale = 1.0 / rms;
        }
    }
    let mut adam = AdamState::new(net, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = LossTrace::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 && cfg.batch_size > 1 {
                continue;
            }
            let refs: Vec<&[f32]> = idx.iter().map(|&i| data.input(i)).collect();
            let x = net.batch(&refs)?;
            let loss = net.loss_and_grad(&x, &data.targets(idx))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss in epoch {epoch}")));
            }
            adam.step(net);
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        let val_loss = val.map(|v| evaluate_loss(net, v)).transpose()?;
        let e = EpochLoss {
            epoch,
            train_loss: total / seen.max(1) as f64,
            val_loss,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}{}",
            e.train_loss,
            val_loss.map(|v| format!(", val loss {v:.5}")).unwrap_or_default()
        );
        trace.epochs.push(e);
    }
    Ok(trace)
}
