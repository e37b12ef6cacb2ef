//! Pilot generation and synthesis of the uplink pilot-phase observations.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scenario::{Activity, LargeScale, RandomStream, SystemConfig};

pub type CMatrix = DMatrix<Complex64>;

/// One circularly-symmetric complex Gaussian draw with the given variance.
pub fn complex_normal(rng: &mut RandomStream, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `rows × cols` matrix of i.i.d. CN(0, 1) entries, filled column by column.
pub fn complex_normal_matrix(rows: usize, cols: usize, rng: &mut RandomStream) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
}

/// `tau × K` pilot book; column `k` belongs to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub phi: CMatrix,
}

impl PilotMatrix {
    pub fn new(phi: CMatrix) -> Result<Self> {
        if phi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("pilot entries must be finite".into()));
        }
        Ok(Self { phi })
    }

    pub fn pilot_len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.phi.ncols()
    }
}

/// Per-AP channel matrices `G_m` (K × N).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub g: Vec<CMatrix>,
}

/// Per-AP received frames `Y_m` (tau × N).
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrames {
    pub y: Vec<CMatrix>,
}

impl ReceivedFrames {
    pub fn num_aps(&self) -> usize {
        self.y.len()
    }

    /// Vertical stack of all per-AP frames as seen by the central unit.
    pub fn aggregate(&self) -> CMatrix {
        let tau = self.y.first().map_or(0, |y| y.nrows());
        let n = self.y.first().map_or(0, |y| y.ncols());
        let mut out = CMatrix::zeros(tau * self.y.len(), n);
        for (m, ym) in self.y.iter().enumerate() {
            out.view_mut((m * tau, 0), (tau, n)).copy_from(ym);
        }
        out
    }
}

impl std::ops::Add for &ReceivedFrames {
    type Output = ReceivedFrames;

    fn add(self, rhs: &ReceivedFrames) -> ReceivedFrames {
        ReceivedFrames {
            y: self.y.iter().zip(&rhs.y).map(|(a, b)| a + b).collect(),
        }
    }
}

pub fn gen_pilots(tau: usize, k: usize, rng: &mut RandomStream) -> Result<PilotMatrix> {
    if tau == 0 || k == 0 {
        return Err(Error::Structural(format!(
            "pilot book needs tau, K >= 1, got {tau} x {k}"
        )));
    }
    Ok(PilotMatrix {
        phi: complex_normal_matrix(tau, k, rng),
    })
}

/// Small-scale Rayleigh fading scaled by the square root of `beta`.
pub fn sample_channels(
    ls: &LargeScale,
    config: &SystemConfig,
    rng: &mut RandomStream,
) -> Result<ChannelRealization> {
    if let Some(b) = ls.beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::Domain(format!(
            "large-scale coefficient {b} violates positivity"
        )));
    }
    let n = config.num_antennas;
    let g = (0..ls.num_aps)
        .map(|m| {
            CMatrix::from_fn(ls.num_users, n, |_, _| complex_normal(rng, 1.0))
                .map_with_location(|k, _, h| h * ls.beta(m, k).sqrt())
        })
        .collect();
    Ok(ChannelRealization { g })
}

fn check_dims(phi: &PilotMatrix, act: &Activity, chan: &ChannelRealization) -> Result<usize> {
    let k = phi.num_users();
    if act.len() != k {
        return Err(Error::Structural(format!(
            "activity has {} users, pilots have {k}",
            act.len()
        )));
    }
    let n = chan.g.first().map_or(0, |g| g.ncols());
    for (m, g) in chan.g.iter().enumerate() {
        if g.nrows() != k || g.ncols() != n {
            return Err(Error::Structural(format!(
                "channel of AP {m} is {}x{}, expected {k}x{n}",
                g.nrows(),
                g.ncols()
            )));
        }
    }
    Ok(n)
}

/// Signal part `sqrt(rho) * Phi * A * G_m` for every AP.
pub fn noiseless_frame(
    phi: &PilotMatrix,
    act: &Activity,
    chan: &ChannelRealization,
    rho: f64,
) -> Result<ReceivedFrames> {
    check_dims(phi, act, chan)?;
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!("transmit power {rho} must be non-negative")));
    }
    let scale = rho.sqrt();
    // Phi * A keeps only the active columns.
    let phi_a = CMatrix::from_fn(phi.pilot_len(), phi.num_users(), |t, k| {
        if act.0[k] {
            phi.phi[(t, k)] * scale
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(ReceivedFrames {
        y: chan.g.iter().map(|g| &phi_a * g).collect(),
    })
}

/// Unit-variance noise frames for `m` APs.
pub fn sample_noise(tau: usize, n: usize, m: usize, rng: &mut RandomStream) -> ReceivedFrames {
    ReceivedFrames {
        y: (0..m).map(|_| complex_normal_matrix(tau, n, rng)).collect(),
    }
}

/// Full pilot-phase observation at every AP with CN(0, 1) noise.
pub fn synthesize_frame(
    phi: &PilotMatrix,
    act: &Activity,
    chan: &ChannelRealization,
    rho: f64,
    rng: &mut RandomStream,
) -> Result<ReceivedFrames> {
    let signal = noiseless_frame(phi, act, chan, rho)?;
    let n = chan.g.first().map_or(0, |g| g.ncols());
    let noise = sample_noise(phi.pilot_len(), n, chan.g.len(), rng);
    Ok(&signal + &noise)
}

/// Block-diagonal covariance of each aggregate column:
/// blocks `rho * Phi * A * B_m * Phi^H + sigma2 * I`.
pub fn aggregate_covariance(
    phi: &PilotMatrix,
    act: &Activity,
    ls: &LargeScale,
    rho: f64,
    sigma2: f64,
) -> Result<CMatrix> {
    let tau = phi.pilot_len();
    let k = phi.num_users();
    if act.len() != k || ls.num_users != k {
        return Err(Error::Structural("covariance inputs disagree on K".into()));
    }
    let mut q = CMatrix::zeros(tau * ls.num_aps, tau * ls.num_aps);
    for m in 0..ls.num_aps {
        let weights: Vec<f64> = (0..k)
            .map(|u| if act.0[u] { rho * ls.beta(m, u) } else { 0.0 })
            .collect();
        let block = weighted_gram(&phi.phi, &weights, sigma2);
        q.view_mut((m * tau, m * tau), (tau, tau)).copy_from(&block);
    }
    Ok(q)
}

/// `Phi * diag(w) * Phi^H + sigma2 * I`.
pub fn weighted_gram(phi: &CMatrix, weights: &[f64], sigma2: f64) -> CMatrix {
    let tau = phi.nrows();
    let scaled = CMatrix::from_fn(tau, phi.ncols(), |t, k| phi[(t, k)] * weights[k]);
    let mut out = &scaled * phi.adjoint();
    for t in 0..tau {
        out[(t, t)] += sigma2;
    }
    out
}
