//! Pilot-matched channel estimates and the detector input tensor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::airlink::{CMatrix, PilotMatrix, ReceivedFrames};
use crate::error::{Error, Result};

/// How complex estimates become real tensor features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// `|g|`, one channel per AP.
    #[serde(rename = "magnitude")]
    Magnitude,
    /// Real and imaginary parts as two channels per AP.
    #[serde(rename = "reim-stack")]
    ReImStack,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Magnitude => "magnitude",
            FeatureMode::ReImStack => "reim-stack",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(FeatureMode::Magnitude),
            "reim-stack" => Ok(FeatureMode::ReImStack),
            other => Err(Error::Config(format!(
                "feature_mode must be `magnitude` or `reim-stack`, got `{other}`"
            ))),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FeatureMode::Magnitude => 0,
            FeatureMode::ReImStack => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FeatureMode::Magnitude),
            1 => Some(FeatureMode::ReImStack),
            _ => None,
        }
    }

    /// Tensor depth for `num_aps` access points.
    pub fn depth(self, num_aps: usize) -> usize {
        match self {
            FeatureMode::Magnitude => num_aps,
            FeatureMode::ReImStack => 2 * num_aps,
        }
    }
}

/// Per-AP estimates `G_m` (K × N).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimates {
    pub ghat: Vec<CMatrix>,
}

/// Real `N × K × depth` tensor stored row-major with the depth axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub num_antennas: usize,
    pub num_users: usize,
    pub depth: usize,
    pub data: Vec<f64>,
}

impl InputTensor {
    pub fn zeros(num_antennas: usize, num_users: usize, depth: usize) -> Self {
        Self {
            num_antennas,
            num_users,
            depth,
            data: vec![0.0; num_antennas * num_users * depth],
        }
    }

    #[inline]
    pub fn index(&self, n: usize, k: usize, d: usize) -> usize {
        (n * self.num_users + k) * self.depth + d
    }

    pub fn get(&self, n: usize, k: usize, d: usize) -> f64 {
        self.data[self.index(n, k, d)]
    }

    /// Channel-major copy (`depth × N × K`), the layout the CNN consumes.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        let plane = self.num_antennas * self.num_users;
        for n in 0..self.num_antennas {
            for k in 0..self.num_users {
                for d in 0..self.depth {
                    out[d * plane + n * self.num_users + k] = self.get(n, k, d);
                }
            }
        }
        out
    }
}

/// Divides every pilot by its own squared norm so that `phi_k^H phi_k / ||phi_k||^2 = 1`.
pub fn normalize_pilots(phi: &PilotMatrix) -> Result<PilotMatrix> {
    let mut out = phi.phi.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        let e = col.norm_squared();
        if !(e > 0.0) {
            return Err(Error::DegeneratePilot(k));
        }
        col /= Complex64::new(e, 0.0);
    }
    Ok(PilotMatrix { phi: out })
}

/// `G_m = Phi_norm^H Y_m / sqrt(rho)` for every AP.
pub fn estimate_channels(
    phi_norm: &PilotMatrix,
    frame: &ReceivedFrames,
    rho: f64,
) -> Result<ChannelEstimates> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho must be positive, got {rho}")));
    }
    let tau = phi_norm.pilot_len();
    let inv = 1.0 / rho.sqrt();
    let ph = phi_norm.phi.adjoint();
    let ghat = frame
        .y
        .iter()
        .enumerate()
        .map(|(m, y)| {
            if y.nrows() != tau {
                return Err(Error::Structural(format!(
                    "frame of AP {m} has {} rows, pilots have {tau}",
                    y.nrows()
                )));
            }
            Ok((&ph * y).map(|z| z * inv))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelEstimates { ghat })
}

/// Lays the estimates out as `c[n, k, m]`.
pub fn assemble_tensor(est: &ChannelEstimates, mode: FeatureMode) -> Result<InputTensor> {
    let first = est
        .ghat
        .first()
        .ok_or_else(|| Error::Structural("no AP estimates".into()))?;
    let (k_count, n_count) = first.shape();
    let m_count = est.ghat.len();
    let mut t = InputTensor::zeros(n_count, k_count, mode.depth(m_count));
    for (m, g) in est.ghat.iter().enumerate() {
        if g.shape() != (k_count, n_count) {
            return Err(Error::Structural(format!(
                "estimate slab {m} is {:?}, expected {:?}",
                g.shape(),
                (k_count, n_count)
            )));
        }
        for n in 0..n_count {
            for k in 0..k_count {
                let z = g[(k, n)];
                match mode {
                    FeatureMode::Magnitude => {
                        let i = t.index(n, k, m);
                        t.data[i] = z.norm();
                    }
                    FeatureMode::ReImStack => {
                        let i = t.index(n, k, 2 * m);
                        t.data[i] = z.re;
                        t.data[i + 1] = z.im;
                    }
                }
            }
        }
    }
    Ok(t)
}
