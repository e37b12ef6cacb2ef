//! Covariance-based activity detection: per-AP maximum-likelihood estimation
//! of the composite receive powers by coordinate descent, fused across APs.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::airlink::{weighted_gram, CMatrix, PilotMatrix};
use crate::error::{Error, Result};
use crate::scenario::{stream, Activity};

/// Per-AP unknown `gamma_k = rho * a_k * beta_mk`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPower {
    pub gamma: Vec<f64>,
}

/// Order in which coordinates are visited within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    RoundRobin,
    /// Fresh random permutation per sweep, reproducible from the seed.
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    pub max_sweeps: usize,
    /// Stop once a full sweep changes no coordinate by more than this.
    pub tolerance: f64,
    pub order: OrderPolicy,
    /// Recompute the exact objective after every coordinate update.
    pub record_trace: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 15,
            tolerance: 1e-8,
            order: OrderPolicy::RoundRobin,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdReport {
    pub power: ActivityPower,
    pub sweeps: usize,
    pub final_nll: f64,
    /// Objective at the start and after every coordinate update; empty unless
    /// [`CdOptions::record_trace`] is set.
    pub nll_trace: Vec<f64>,
    /// Largest relative Frobenius distance between the maintained inverse and
    /// a direct inversion, checked after every sweep.
    pub max_inverse_error: f64,
}

/// `Y Y^H / N`.
pub fn sample_covariance(frame: &CMatrix) -> CMatrix {
    let n = frame.ncols().max(1) as f64;
    (frame * frame.adjoint()).unscale(n)
}

fn check_inputs(gamma_len: usize, phi: &PilotMatrix, frame: &CMatrix, sigma2: f64) -> Result<()> {
    if phi.pilot_len() != frame.nrows() {
        return Err(Error::Structural(format!(
            "frame has {} rows, pilots have length {}",
            frame.nrows(),
            phi.pilot_len()
        )));
    }
    if gamma_len != phi.num_users() {
        return Err(Error::Structural(format!(
            "gamma has {gamma_len} entries for {} users",
            phi.num_users()
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("noise variance {sigma2} must be positive")));
    }
    Ok(())
}

/// `N log|Q| + Tr(Q^-1 Y Y^H)` with `Q = Phi diag(gamma) Phi^H + sigma2 I`.
pub fn per_ap_nll(gamma: &[f64], phi: &PilotMatrix, frame: &CMatrix, sigma2: f64) -> Result<f64> {
    check_inputs(gamma.len(), phi, frame, sigma2)?;
    if let Some(g) = gamma.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::Domain(format!("gamma entry {g} must be non-negative")));
    }
    let q = weighted_gram(&phi.phi, gamma, sigma2);
    let chol = Cholesky::new(q)
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
    let whitened = chol.l().solve_lower_triangular(frame).ok_or_else(|| {
        Error::Numerical("triangular solve failed on covariance factor".into())
    })?;
    Ok(frame.ncols() as f64 * log_det + whitened.norm_squared())
}

fn relative_inverse_error(q_inv: &CMatrix, gamma: &[f64], phi: &PilotMatrix, sigma2: f64) -> Result<(f64, CMatrix)> {
    let direct = weighted_gram(&phi.phi, gamma, sigma2)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("covariance inversion failed".into()))?;
    let err = (q_inv - &direct).norm() / direct.norm();
    Ok((err, direct))
}

/// Minimizes [`per_ap_nll`] over `gamma >= 0`, one coordinate at a time,
/// starting from `gamma = 0`.
///
/// Each update solves the rank-one subproblem exactly: with
/// `a = phi_k^H Q^-1 phi_k` and `b = phi_k^H Q^-1 S Q^-1 phi_k` the step is
/// `max((b - a) / a^2, -gamma_k)`, and `Q^-1` is refreshed by Sherman-Morrison.
pub fn coordinate_descent(
    phi: &PilotMatrix,
    frame: &CMatrix,
    sigma2: f64,
    opts: &CdOptions,
) -> Result<CdReport> {
    let k = phi.num_users();
    check_inputs(k, phi, frame, sigma2)?;
    if opts.max_sweeps == 0 {
        return Err(Error::Config("coordinate descent needs at least one sweep".into()));
    }
    let tau = phi.pilot_len();
    let n = frame.ncols() as f64;
    let mut gamma = vec![0.0; k];
    let mut q_inv = CMatrix::identity(tau, tau).unscale(sigma2);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(per_ap_nll(&gamma, phi, frame, sigma2)?);
    }
    let mut order: Vec<usize> = (0..k).collect();
    let mut shuffler = match opts.order {
        OrderPolicy::Shuffled(seed) => Some(stream(seed, 0)),
        OrderPolicy::RoundRobin => None,
    };
    let mut max_inverse_error: f64 = 0.0;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        if let Some(rng) = shuffler.as_mut() {
            order.shuffle(rng);
        }
        let mut max_change: f64 = 0.0;
        for &u in &order {
            let col = phi.phi.column(u);
            let v = &q_inv * col;
            let a = col.dotc(&v).re;
            if !(a > 0.0) {
                // Zero pilot column: the objective does not depend on gamma_u.
                continue;
            }
            let yv = frame.adjoint() * &v;
            let b = yv.norm_squared() / n;
            let d = ((b - a) / (a * a)).max(-gamma[u]);
            if d == 0.0 {
                continue;
            }
            gamma[u] += d;
            max_change = max_change.max(d.abs());
            let denom = 1.0 + d * a;
            let scale = Complex64::new(d / denom, 0.0);
            q_inv.gerc(-scale, &v, &v, Complex64::new(1.0, 0.0));
            if opts.record_trace {
                trace.push(per_ap_nll(&gamma, phi, frame, sigma2)?);
            }
        }
        let (err, direct) = relative_inverse_error(&q_inv, &gamma, phi, sigma2)?;
        max_inverse_error = max_inverse_error.max(err);
        if err > 1e-8 {
            log::debug!("resynchronizing inverse after drift {err:.3e}");
            q_inv = direct;
        }
        if max_change < opts.tolerance {
            break;
        }
    }
    let final_nll = match trace.last() {
        Some(v) => *v,
        None => per_ap_nll(&gamma, phi, frame, sigma2)?,
    };
    Ok(CdReport {
        power: ActivityPower { gamma },
        sweeps,
        final_nll,
        nll_trace: trace,
        max_inverse_error,
    })
}

/// Independent estimates for every AP frame.
pub fn estimate_per_ap(
    phi: &PilotMatrix,
    frames: &[CMatrix],
    sigma2: f64,
    opts: &CdOptions,
) -> Result<Vec<ActivityPower>> {
    frames
        .iter()
        .map(|y| coordinate_descent(phi, y, sigma2, opts).map(|r| r.power))
        .collect()
}

fn check_fusion_inputs(per_ap: &[ActivityPower]) -> Result<usize> {
    let first = per_ap
        .first()
        .ok_or_else(|| Error::Structural("fusion needs at least one AP".into()))?;
    let k = first.gamma.len();
    if per_ap.iter().any(|p| p.gamma.len() != k) {
        return Err(Error::Structural("per-AP estimates disagree on K".into()));
    }
    Ok(k)
}

/// User `k` is active iff some AP has `gamma_k > threshold`.
pub fn fuse_union(per_ap: &[ActivityPower], threshold: f64) -> Result<Activity> {
    let scores = max_over_aps(per_ap)?;
    Ok(Activity(scores.into_iter().map(|s| s > threshold).collect()))
}

/// Per-user score `max_m gamma_k^(m)`; thresholding it is union fusion.
pub fn max_over_aps(per_ap: &[ActivityPower]) -> Result<Vec<f64>> {
    let k = check_fusion_inputs(per_ap)?;
    Ok((0..k)
        .map(|u| per_ap.iter().map(|p| p.gamma[u]).fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink::complex_normal_matrix;
    use proptest::prelude::*;

    fn instance(tau: usize, k: usize, n: usize, seed: u64) -> (PilotMatrix, CMatrix) {
        let mut rng = stream(seed, 1);
        let phi = PilotMatrix::new(complex_normal_matrix(tau, k, &mut rng)).unwrap();
        let powers: Vec<f64> = (0..k).map(|u| if u % 3 == 0 { 2.0 + u as f64 } else { 0.0 }).collect();
        let q = weighted_gram(&phi.phi, &powers, 1.0);
        let l = Cholesky::new(q).unwrap().l();
        let frame = l * complex_normal_matrix(tau, n, &mut rng);
        (phi, frame)
    }

    #[test]
    fn zero_gamma_closed_form() {
        let (phi, y) = instance(5, 4, 3, 0);
        let v = per_ap_nll(&[0.0; 4], &phi, &y, 0.5).unwrap();
        let expected = 3.0 * 5.0 * 0.5f64.ln() + y.norm_squared() / 0.5;
        assert!((v - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn scalar_case_minimizer() {
        let phi = PilotMatrix::new(CMatrix::from_element(1, 1, Complex64::new(0.6, 0.8))).unwrap();
        let y = CMatrix::from_row_slice(1, 4, &[
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.3),
            Complex64::new(2.0, -1.0),
            Complex64::new(0.1, 0.0),
        ]);
        let sigma2 = 0.7;
        let energy = y.norm_squared();
        let scalar = |g: f64| 4.0 * (g + sigma2).ln() + energy / (g + sigma2);
        for g in [0.0, 0.5, 3.0] {
            let v = per_ap_nll(&[g], &phi, &y, sigma2).unwrap();
            assert!((v - scalar(g)).abs() < 1e-12);
        }
        let report = coordinate_descent(&phi, &y, sigma2, &CdOptions::default()).unwrap();
        let expected = (energy / 4.0 - sigma2).max(0.0);
        assert!((report.power.gamma[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_pilot_column_is_irrelevant() {
        let (phi, y) = instance(4, 3, 2, 1);
        let mut padded = CMatrix::zeros(4, 4);
        padded.view_mut((0, 0), (4, 3)).copy_from(&phi.phi);
        let padded = PilotMatrix::new(padded).unwrap();
        let g = [0.3, 1.2, 0.0];
        let a = per_ap_nll(&g, &phi, &y, 1.0).unwrap();
        let b = per_ap_nll(&[0.3, 1.2, 0.0, 7.5], &padded, &y, 1.0).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
        let r = coordinate_descent(&padded, &y, 1.0, &CdOptions::default()).unwrap();
        assert_eq!(r.power.gamma[3], 0.0);
    }

    #[test]
    fn rejects_negative_gamma_and_bad_noise() {
        let (phi, y) = instance(3, 2, 2, 2);
        assert!(matches!(per_ap_nll(&[-1.0, 0.0], &phi, &y, 1.0), Err(Error::Domain(_))));
        assert!(matches!(per_ap_nll(&[0.0, 0.0], &phi, &y, 0.0), Err(Error::Domain(_))));
        assert!(matches!(per_ap_nll(&[0.0], &phi, &y, 1.0), Err(Error::Structural(_))));
    }

    #[test]
    fn trace_is_monotone_and_inverse_stays_in_sync() {
        for seed in 0..20 {
            let (phi, y) = instance(8, 12, 4, seed);
            let opts = CdOptions {
                record_trace: true,
                ..CdOptions::default()
            };
            let r = coordinate_descent(&phi, &y, 1.0, &opts).unwrap();
            for w in r.nll_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
            assert!(r.max_inverse_error < 1e-8, "inverse drift {}", r.max_inverse_error);
            assert!(r.power.gamma.iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn more_sweeps_never_hurt() {
        let (phi, y) = instance(6, 10, 3, 7);
        let mut last = f64::INFINITY;
        for sweeps in [1, 2, 4, 8, 16] {
            let opts = CdOptions {
                max_sweeps: sweeps,
                tolerance: 0.0,
                ..CdOptions::default()
            };
            let r = coordinate_descent(&phi, &y, 1.0, &opts).unwrap();
            assert!(r.final_nll <= last + 1e-9 * last.abs());
            last = r.final_nll;
        }
    }

    #[test]
    fn shuffled_order_reaches_same_optimum() {
        let (phi, y) = instance(10, 4, 16, 3);
        let long = |order| CdOptions {
            max_sweeps: 2000,
            tolerance: 1e-13,
            order,
            record_trace: false,
        };
        let a = coordinate_descent(&phi, &y, 1.0, &long(OrderPolicy::RoundRobin)).unwrap();
        let b = coordinate_descent(&phi, &y, 1.0, &long(OrderPolicy::Shuffled(5))).unwrap();
        assert!((a.final_nll - b.final_nll).abs() < 1e-8 * a.final_nll.abs());
    }

    #[test]
    fn fusion_semantics() {
        let p = |g: &[f64]| ActivityPower { gamma: g.to_vec() };
        let aps = [p(&[0.1, 5.0, 0.0]), p(&[2.0, 0.2, 0.0])];
        assert_eq!(fuse_union(&aps, 1.0).unwrap().0, vec![true, true, false]);
        assert_eq!(fuse_union(&aps[..1], 1.0).unwrap().0, vec![false, true, false]);
        assert_eq!(fuse_union(&aps, f64::INFINITY).unwrap().count_active(), 0);
        assert_eq!(max_over_aps(&aps).unwrap(), vec![2.0, 5.0, 0.0]);
        assert!(fuse_union(&[], 1.0).is_err());
        assert!(fuse_union(&[p(&[1.0]), p(&[1.0, 2.0])], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn lowering_threshold_never_removes_users(
            g in proptest::collection::vec(0.0f64..10.0, 12),
            hi in 0.0f64..10.0,
            drop in 0.0f64..10.0,
        ) {
            let aps = [ActivityPower { gamma: g[..6].to_vec() }, ActivityPower { gamma: g[6..].to_vec() }];
            let strict = fuse_union(&aps, hi).unwrap();
            let loose = fuse_union(&aps, hi - drop).unwrap();
            for (s, l) in strict.0.iter().zip(&loose.0) {
                prop_assert!(!s || *l);
            }
        }
    }
}
