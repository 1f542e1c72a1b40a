//! Per-record uncertainty weights: the fixed-point iteration that assigns
//! each data point a weight matching its own uncertainty against the rest of
//! the data, plus its distribution-shift variant and a sampling-based
//! variance estimator for the linear bonus.
//!
//! The iteration starts from unit weights and repeats
//! `sigma_i^2 <- max(1, u_i / alpha)` with `u_i` the uncertainty of point `i`
//! under the previous weights, stopping once no squared weight grew by more
//! than a factor of 2 in a pass. Squared weights are nondecreasing in `t` and
//! capped by `max(1, 1/(alpha*sqrt(lambda)))`, so the stop is guaranteed; the
//! pass cap below turns that guarantee into a hard error if it ever breaks.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Cell, FunctionClass, LinearBackend};
use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;
use crate::rng::rng_from_seed;

/// Output of the weight iteration, aligned with the input point order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    /// Converged squared weights, each in `[1, max(1, 1/(alpha*sqrt(lambda)))]`.
    pub sigma_sq: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub iterations: usize,
}

impl WeightVector {
    pub fn unit(n: usize, alpha: f64, lambda: f64) -> Self {
        WeightVector {
            sigma_sq: vec![1.0; n],
            alpha,
            lambda,
            iterations: 0,
        }
    }
}

/// Uncertainty of a single cell against a weighted point set.
pub fn uncertainty(
    z: Cell,
    points: &[Cell],
    sigma_sq: &[f64],
    backend: &dyn FunctionClass,
    lambda: f64,
) -> Result<f64> {
    Ok(backend.uncertainties(&[z], points, sigma_sq, lambda)?[0])
}

fn check_params(alpha: f64, lambda: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid_argument("alpha must be positive"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid_argument("lambda must be positive"));
    }
    Ok(())
}

/// Pass budget: the weight sequence doubles (in squared value) on every
/// non-final pass and is capped, so this bound is generous.
fn pass_cap(alpha: f64, lambda: f64) -> usize {
    let bound = 1.0 / (alpha * lambda.sqrt());
    let doublings = if bound > 1.0 { bound.log2().ceil() as usize } else { 0 };
    10 * doublings + 10
}

fn iterate_impl(
    points: &[Cell],
    rho: Option<&[f64]>,
    backend: &dyn FunctionClass,
    alpha: f64,
    lambda: f64,
    trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<WeightVector> {
    check_params(alpha, lambda)?;
    if let Some(r) = rho {
        if r.len() != points.len() {
            return Err(Error::dimension("rho and points differ in length"));
        }
        if r.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::invalid_argument("rho entries must be positive"));
        }
    }
    let n = points.len();
    let mut sigma_sq = vec![1.0; n];
    let cap = pass_cap(alpha, lambda);
    let bound = (1.0 / (alpha * lambda.sqrt())).max(1.0);
    let mut trace = trace;
    if let Some(t) = trace.as_deref_mut() {
        t.push(sigma_sq.clone());
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(Error::NoConvergence(format!(
                "weight iteration exceeded {cap} passes"
            )));
        }
        let u = backend.uncertainties(points, points, &sigma_sq, lambda)?;
        let mut ratio: f64 = 0.0;
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let scale = alpha * rho.map_or(1.0, |r| r[i]);
            let cand = (u[i] / scale).max(1.0);
            // monotone by construction; anything else is a numerical bug
            if cand < sigma_sq[i] - 1e-9 {
                return Err(Error::NoConvergence(format!(
                    "squared weight decreased at point {i}: {} -> {cand}",
                    sigma_sq[i]
                )));
            }
            let cand = cand.max(sigma_sq[i]);
            if cand > bound + 1e-9 {
                return Err(Error::NoConvergence(format!(
                    "squared weight {cand} exceeded its bound {bound}"
                )));
            }
            ratio = ratio.max(cand / sigma_sq[i]);
            next.push(cand);
        }
        sigma_sq = next;
        if let Some(t) = trace.as_deref_mut() {
            t.push(sigma_sq.clone());
        }
        if ratio <= 2.0 {
            break;
        }
    }
    Ok(WeightVector {
        sigma_sq,
        alpha,
        lambda,
        iterations,
    })
}

/// Runs the uncertainty weight iteration to its stopping rule.
pub fn iterate_weights(
    points: &[Cell],
    backend: &dyn FunctionClass,
    alpha: f64,
    lambda: f64,
) -> Result<WeightVector> {
    iterate_impl(points, None, backend, alpha, lambda, None)
}

/// Same, also returning the per-pass squared weights (pass 0 is all ones).
pub fn iterate_weights_traced(
    points: &[Cell],
    backend: &dyn FunctionClass,
    alpha: f64,
    lambda: f64,
) -> Result<(WeightVector, Vec<Vec<f64>>)> {
    let mut trace = Vec::new();
    let wv = iterate_impl(points, None, backend, alpha, lambda, Some(&mut trace))?;
    Ok((wv, trace))
}

/// Distribution-shift variant: the update divides the uncertainty by
/// `alpha * rho_i` instead of `alpha`. With all `rho_i = 1` the output matches
/// [`iterate_weights`] bit for bit.
pub fn iterate_weights_shifted(
    points: &[Cell],
    rho: &[f64],
    backend: &dyn FunctionClass,
    alpha: f64,
    lambda: f64,
) -> Result<WeightVector> {
    iterate_impl(points, Some(rho), backend, alpha, lambda, None)
}

/// Draws `k` weight vectors from the Gaussian posterior `N(mu, Gram^{-1})`
/// implied by unit-variance noise on the ridge problem, and returns the
/// sample variance of `phi(z)^T w`. Converges to `phi(z)^T Gram^{-1} phi(z)`
/// as `k` grows; the targets only shift the mean and cancel exactly in the
/// sample variance.
pub fn bootstrap_variance(
    z: Cell,
    points: &[Cell],
    targets: &[f64],
    backend: &LinearBackend,
    lambda: f64,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid_argument("need at least 2 posterior draws"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid_argument("lambda must be positive"));
    }
    if targets.len() != points.len() {
        return Err(Error::dimension("targets and points differ in length"));
    }
    let unit = vec![1.0; points.len()];
    let gram = backend.gram(points, &unit, lambda);
    let chol = spd_cholesky(&gram)?;
    let mut rhs = DVector::zeros(backend.d);
    for (&p, &y) in points.iter().zip(targets) {
        rhs.axpy(y, &backend.feature(p), 1.0);
    }
    let mu = chol.solve(&rhs);
    let phi_z = backend.feature(z);
    let mean_resp = phi_z.dot(&mu);

    // w = mu + L^{-T} xi gives covariance (L L^T)^{-1} = Gram^{-1.}
    let l_t = chol.l().transpose();
    let mut rng = rng_from_seed(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut draws = 0;
    let mut pending: Option<f64> = None;
    while draws < k {
        let xi = DVector::from_iterator(
            backend.d,
            (0..backend.d).map(|_| match pending.take() {
                Some(v) => v,
                None => {
                    // Box-Muller, both outputs used
                    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.random();
                    let r = (-2.0 * u1.ln()).sqrt();
                    let theta = 2.0 * std::f64::consts::PI * u2;
                    pending = Some(r * theta.sin());
                    r * theta.cos()
                }
            }),
        );
        let t = l_t
            .solve_upper_triangular(&xi)
            .ok_or_else(|| Error::invalid_argument("triangular solve failed"))?;
        let v = mean_resp + phi_z.dot(&t);
        sum += v;
        sum_sq += v * v;
        draws += 1;
    }
    let kf = k as f64;
    Ok((sum_sq - sum * sum / kf) / (kf - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FiniteBackend;

    fn line_backend() -> LinearBackend {
        // d=1 over two cells with features 1.0 and 0.1
        LinearBackend::new(1, vec![vec![vec![1.0], vec![0.1]]; 1])
    }

    #[test]
    fn large_alpha_keeps_unit_weights_in_one_pass() {
        let lb = line_backend();
        let pts = vec![(0, 0), (0, 1)];
        let wv = iterate_weights(&pts, &lb, 1.0, 1.0).unwrap();
        assert_eq!(wv.sigma_sq, vec![1.0, 1.0]);
        assert_eq!(wv.iterations, 1);
    }

    #[test]
    fn two_point_fixed_point_matches_hand_value() {
        // alpha=0.5, lambda=1: first pass gives sigma1^2 = 2/sqrt(2.01),
        // sigma2^2 = 1, and the stopping rule fires immediately.
        let lb = line_backend();
        let pts = vec![(0, 0), (0, 1)];
        let wv = iterate_weights(&pts, &lb, 0.5, 1.0).unwrap();
        let expected = 2.0 / 2.01f64.sqrt();
        assert!((wv.sigma_sq[0] - expected).abs() < 1e-12, "{}", wv.sigma_sq[0]);
        assert_eq!(wv.sigma_sq[1], 1.0);
    }

    #[test]
    fn unit_rho_reduces_to_plain_iteration() {
        let lb = line_backend();
        let pts = vec![(0, 0), (0, 1)];
        let plain = iterate_weights(&pts, &lb, 0.3, 0.5).unwrap();
        let shifted = iterate_weights_shifted(&pts, &[1.0, 1.0], &lb, 0.3, 0.5).unwrap();
        assert_eq!(plain.sigma_sq, shifted.sigma_sq);
        assert_eq!(plain.iterations, shifted.iterations);
    }

    #[test]
    fn huge_rho_collapses_to_unit_weights() {
        let lb = line_backend();
        let pts = vec![(0, 0), (0, 1)];
        let wv = iterate_weights_shifted(&pts, &[1e12, 1e12], &lb, 0.05, 1.0).unwrap();
        assert_eq!(wv.sigma_sq, vec![1.0, 1.0]);
    }

    #[test]
    fn permuting_points_permutes_weights() {
        let lb = LinearBackend::new(
            2,
            vec![vec![vec![1.0, 0.0], vec![0.3, 0.4], vec![0.0, 0.9]]; 1],
        );
        let pts = vec![(0, 0), (0, 1), (0, 2)];
        let perm = vec![(0, 2), (0, 0), (0, 1)];
        let a = iterate_weights(&pts, &lb, 0.2, 1.0).unwrap();
        let b = iterate_weights(&perm, &lb, 0.2, 1.0).unwrap();
        assert_eq!(a.sigma_sq[0], b.sigma_sq[1]);
        assert_eq!(a.sigma_sq[1], b.sigma_sq[2]);
        assert_eq!(a.sigma_sq[2], b.sigma_sq[0]);
    }

    #[test]
    fn finite_singleton_gives_unit_weights() {
        let fb = FiniteBackend::new(vec![vec![vec![0.4, 0.6]; 3]]).unwrap();
        let pts = vec![(0, 0), (2, 1)];
        let wv = iterate_weights(&pts, &fb, 0.01, 1.0).unwrap();
        assert_eq!(wv.sigma_sq, vec![1.0, 1.0]);
    }

    #[test]
    fn bootstrap_variance_ignores_targets_and_tracks_lambda() {
        let lb = line_backend();
        let pts = vec![(0, 0)];
        let v1 = bootstrap_variance((0, 0), &pts, &[1.0], &lb, 1.0, 4000, 7).unwrap();
        let v2 = bootstrap_variance((0, 0), &pts, &[-3.5], &lb, 1.0, 4000, 7).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
        let tiny = bootstrap_variance((0, 0), &pts, &[1.0], &lb, 1e12, 4000, 7).unwrap();
        assert!(tiny < 1e-9);
    }
}
