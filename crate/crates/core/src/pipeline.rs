//! Drivers shared by the command line and the desk-scale experiments:
//! in-memory sample sets, detector training in either precision, and
//! baseline scoring by frame regeneration.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::covdet::{estimate_per_ap, max_over_aps, CdOptions};
use crate::error::{Error, Result};
use crate::evalkit::{roc_sweep, threshold_for_fa, Calibration, RocCurve};
use crate::neuralnet::{train, ArchSpec, LabeledSet, LossTrace, Network, Real, TrainConfig};
use crate::scenario::{stream, Precision, SystemConfig};
use crate::store::{decode_checkpoint, encode_checkpoint};
use crate::synth::Layout;

/// Stream ids reserved for training randomness, far from sample indices.
const INIT_STREAM: u64 = u64::MAX - 1;
const SHUFFLE_STREAM: u64 = u64::MAX - 2;

/// Noise variance in normalized units, known to the baseline.
pub const NOISE_VARIANCE: f64 = 1.0;

/// Simulates samples `range` of `seed` straight into a training set.
pub fn simulate_set(layout: &Layout, seed: u64, range: Range<u64>) -> Result<LabeledSet> {
    let c = &layout.config;
    let rows = range
        .into_par_iter()
        .map(|i| {
            let s = layout.simulate(seed, i)?;
            let t = layout.features(&s.frames)?;
            let x: Vec<f32> = t.to_chw().iter().map(|v| *v as f32).collect();
            Ok((x, s.activity.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = LabeledSet::new(c.tensor_depth() * c.num_antennas * c.num_users, c.num_users);
    for (x, a) in rows {
        set.push(&x, &a)?;
    }
    Ok(set)
}

/// Per-user baseline scores `max_m gamma_k^(m)` for samples `range`, sample-major,
/// with the ground-truth labels of the regenerated frames.
pub fn baseline_scores(
    layout: &Layout,
    seed: u64,
    range: Range<u64>,
    opts: &CdOptions,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let per_sample = range
        .into_par_iter()
        .map(|i| {
            let s = layout.simulate(seed, i)?;
            let powers = estimate_per_ap(&layout.pilots, &s.frames.y, NOISE_VARIANCE, opts)?;
            Ok((max_over_aps(&powers)?, s.activity.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, a) in per_sample {
        scores.extend(s);
        labels.extend(a);
    }
    Ok((scores, labels))
}

/// A detector network in the precision chosen by the configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    F64(Network<f64>),
    F32(Network<f32>),
}

impl Detector {
    /// Reference architecture for `config`, Glorot-initialized from `seed`.
    pub fn initialized(config: &SystemConfig, seed: u64) -> Result<Self> {
        let arch = reference_arch(config);
        let mut rng = stream(seed, INIT_STREAM);
        Ok(match config.precision {
            Precision::F64 => Detector::F64(Network::initialized(arch, &mut rng)?),
            Precision::F32 => Detector::F32(Network::initialized(arch, &mut rng)?),
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        match self {
            Detector::F64(n) => &n.arch,
            Detector::F32(n) => &n.arch,
        }
    }

    pub fn train(
        &mut self,
        data: &LabeledSet,
        val: Option<&LabeledSet>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<LossTrace> {
        let mut rng = stream(seed, SHUFFLE_STREAM);
        match self {
            Detector::F64(n) => train(n, data, val, cfg, &mut rng),
            Detector::F32(n) => train(n, data, val, cfg, &mut rng),
        }
    }

    /// Activity probabilities, sample-major.
    pub fn scores(&self, set: &LabeledSet) -> Result<Vec<f64>> {
        match self {
            Detector::F64(n) => parallel_predict(n, set),
            Detector::F32(n) => parallel_predict(n, set),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        match self {
            Detector::F64(n) => encode_checkpoint(n),
            Detector::F32(n) => encode_checkpoint(n),
        }
    }

    pub fn decode(bytes: &[u8], expected: Option<&ArchSpec>, precision: Precision) -> Result<Self> {
        Ok(match precision {
            Precision::F64 => Detector::F64(decode_checkpoint(bytes, expected)?),
            Precision::F32 => Detector::F32(decode_checkpoint(bytes, expected)?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&ArchSpec>, precision: Precision) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, expected, precision)
    }
}

/// Inference-phase predictions split into contiguous chunks across workers.
fn parallel_predict<T: Real>(net: &Network<T>, set: &LabeledSet) -> Result<Vec<f64>> {
    const CHUNK: usize = 1024;
    let starts: Vec<usize> = (0..set.len()).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let end = (s + CHUNK).min(set.len());
            let refs: Vec<&[f32]> = (s..end).map(|i| set.input(i)).collect();
            net.predict_batch(&net.batch(&refs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub fn reference_arch(config: &SystemConfig) -> ArchSpec {
    ArchSpec::reference(config.tensor_depth(), config.num_antennas, config.num_users)
}

pub fn train_config(config: &SystemConfig) -> TrainConfig {
    TrainConfig {
        batch_size: config.batch_size,
        epochs: config.num_epochs,
        learning_rate: config.learning_rate,
        ..TrainConfig::default()
    }
}

/// Flattened labels of a set, sample-major.
pub fn labels_of(set: &LabeledSet) -> Vec<bool> {
    set.labels.iter().map(|b| *b != 0).collect()
}

/// ROC of pooled decisions plus the operating point for `target_fa`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub roc: RocCurve,
    pub operating_point: Calibration,
}

pub fn summarize(scores: &[f64], labels: &[bool], target_fa: f64) -> Result<Summary> {
    let roc = roc_sweep(scores, labels)?;
    let operating_point = threshold_for_fa(&roc, target_fa)?;
    Ok(Summary { roc, operating_point })
}
