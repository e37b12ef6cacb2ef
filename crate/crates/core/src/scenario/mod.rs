//! Deployments, large-scale fading and user activity.

mod config;

pub use config::{Precision, SystemConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Counter-based random stream. Independent streams share a seed and differ
/// by stream id, so sample `i` of a dataset can be regenerated on its own.
pub type RandomStream = ChaCha8Rng;

/// Opens stream `id` of the generator keyed by `seed`.
pub fn stream(seed: u64, id: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Users closer than this to an access point are re-placed.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Industrial path loss in dB for distance `d_m` (meters) and carrier `f_ghz`.
pub fn path_loss_db(d_m: f64, f_ghz: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(f_ghz > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs positive distance and frequency, got d={d_m}, f={f_ghz}"
        )));
    }
    Ok(32.40 + 23.0 * d_m.log10() + 20.0 * f_ghz.log10())
}

/// Linear large-scale gain from path loss and a standard-normal shadowing draw.
pub fn large_scale_coeff(pl_db: f64, s: f64, sigma_sh: f64) -> f64 {
    10f64.powf((sigma_sh * s - pl_db) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
}

/// Large-scale coefficients, indexed `[m * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScale {
    pub num_aps: usize,
    pub num_users: usize,
    pub beta: Vec<f64>,
    pub shadow_draws: Vec<f64>,
}

impl LargeScale {
    pub fn beta(&self, m: usize, k: usize) -> f64 {
        self.beta[m * self.num_users + k]
    }

    /// Builds a large-scale matrix from explicit coefficients.
    pub fn from_beta(num_aps: usize, num_users: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != num_aps * num_users {
            return Err(Error::Structural(format!(
                "expected {} coefficients, got {}",
                num_aps * num_users,
                beta.len()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::Domain(format!(
                "large-scale coefficients must be positive and finite, got {b}"
            )));
        }
        Ok(Self {
            num_aps,
            num_users,
            shadow_draws: vec![0.0; beta.len()],
            beta,
        })
    }
}

/// Binary activity vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activity(pub Vec<bool>);

impl Activity {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

fn uniform_point(side: f64, rng: &mut RandomStream) -> Point {
    Point {
        x: rng.random::<f64>() * side,
        y: rng.random::<f64>() * side,
    }
}

fn too_close(p: Point, aps: &[Point]) -> bool {
    aps.iter().any(|ap| p.distance(*ap) < MIN_DISTANCE_M)
}

/// Places one user uniformly, re-drawing while it sits within
/// [`MIN_DISTANCE_M`] of an access point.
pub fn sample_user_position(aps: &[Point], side: f64, rng: &mut RandomStream) -> Point {
    loop {
        let p = uniform_point(side, rng);
        if !too_close(p, aps) {
            return p;
        }
    }
}

pub fn sample_ap_positions(config: &SystemConfig, rng: &mut RandomStream) -> Vec<Point> {
    (0..config.num_aps)
        .map(|_| uniform_point(config.area_side_m, rng))
        .collect()
}

pub fn sample_user_positions(
    aps: &[Point],
    config: &SystemConfig,
    rng: &mut RandomStream,
) -> Vec<Point> {
    (0..config.num_users)
        .map(|_| sample_user_position(aps, config.area_side_m, rng))
        .collect()
}

/// APs and users i.i.d. uniform over the square.
pub fn sample_deployment(config: &SystemConfig, rng: &mut RandomStream) -> Result<Deployment> {
    config.validate()?;
    let ap_positions = sample_ap_positions(config, rng);
    let user_positions = sample_user_positions(&ap_positions, config, rng);
    Ok(Deployment {
        ap_positions,
        user_positions,
    })
}

/// Draws shadowing and computes every AP-user coefficient.
///
/// A user closer than [`MIN_DISTANCE_M`] to any AP is moved to a fresh
/// uniform position first, which is why the deployment is borrowed mutably.
pub fn sample_large_scale(
    dep: &mut Deployment,
    config: &SystemConfig,
    rng: &mut RandomStream,
) -> Result<LargeScale> {
    let m_count = dep.ap_positions.len();
    let k_count = dep.user_positions.len();
    if m_count == 0 || k_count == 0 {
        return Err(Error::Structural("deployment has no APs or no users".into()));
    }
    for k in 0..k_count {
        if too_close(dep.user_positions[k], &dep.ap_positions) {
            dep.user_positions[k] =
                sample_user_position(&dep.ap_positions, config.area_side_m, rng);
        }
    }
    let mut beta = Vec::with_capacity(m_count * k_count);
    let mut shadow_draws = Vec::with_capacity(m_count * k_count);
    for ap in &dep.ap_positions {
        for user in &dep.user_positions {
            let pl = path_loss_db(ap.distance(*user), config.carrier_ghz)?;
            let s: f64 = rng.sample(StandardNormal);
            beta.push(large_scale_coeff(pl, s, config.shadow_intensity));
            shadow_draws.push(s);
        }
    }
    Ok(LargeScale {
        num_aps: m_count,
        num_users: k_count,
        beta,
        shadow_draws,
    })
}

/// I.i.d. Bernoulli(`eps`) activity for `k` users.
pub fn sample_activity(k: usize, eps: f64, rng: &mut RandomStream) -> Result<Activity> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("activity probability {eps} outside [0, 1]")));
    }
    Ok(Activity((0..k).map(|_| rng.random::<f64>() < eps).collect()))
}
