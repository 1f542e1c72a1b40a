//! Exact evaluation: suboptimality against the clean environment, true
//! Bellman residuals, coverage coefficients, and well-explored-data
//! diagnostics. Everything here is deterministic; expectations over the
//! optimal policy come from exact occupancy propagation, not rollouts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Cell, FunctionClass, LinearBackend};
use crate::dataset::OfflineDataset;
use crate::envs::{
    evaluate_policy, solve_optimal, state_action_occupancy, Policy, Start, TabularMdp,
};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, quad_form_inv, spd_cholesky};
use crate::rng::rng_from_seed;
use crate::solver::SolverConfig;
use crate::weights::{iterate_weights, WeightVector};

/// `V*(x) - V_pi(x)` in the clean environment; never negative.
pub fn suboptimality(mdp: &TabularMdp, policy: &Policy, start: &Start) -> Result<f64> {
    let (pi_star, _) = solve_optimal(mdp);
    let v_star = evaluate_policy(mdp, &pi_star, start)?;
    let v_pi = evaluate_policy(mdp, policy, start)?;
    Ok((v_star - v_pi).max(0.0))
}

/// `f_h(s,a)` minus the true one-step backup of `f_{h+1}` at `(s,a)`.
/// `f` is a stack of Q-tables indexed `[h][s][a]`; steps past the end are zero.
pub fn bellman_residual(
    mdp: &TabularMdp,
    f: &[Vec<Vec<f64>>],
    h0: usize,
    s: usize,
    a: usize,
) -> f64 {
    let g: Vec<f64> = (0..mdp.s_count)
        .map(|sn| match f.get(h0 + 1) {
            Some(table) => table[sn].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        })
        .collect();
    f[h0][s][a] - mdp.backup(h0, s, a, &g)
}

/// Coverage of the optimal policy's state-actions by the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub cc_weighted: f64,
    pub cc_unweighted: f64,
    /// Per-step value of whichever coefficient was requested.
    pub per_h: Vec<f64>,
    pub mc_episodes: usize,
    pub min_eig_per_h: Vec<f64>,
    /// Lower bound on the mean-square-vs-sup-norm exploration constant.
    pub c_est: f64,
    /// Steps with fewer records than feature dimensions.
    pub rank_warning_steps: Vec<usize>,
}

/// Smallest per-step eigenvalues of the empirical feature second-moment
/// matrix, plus an exploration-constant estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellExplored {
    pub min_eig_per_h: Vec<f64>,
    pub c_est: f64,
    pub rank_warning_steps: Vec<usize>,
}

/// For linear backends: per-step `lambda_min((1/n) sum phi phi^T)` and the
/// induced exploration constant. The smallest eigenvalue lower-bounds the
/// ratio of data-average squared differences to sup-norm squared differences
/// because feature norms are capped at one.
pub fn well_explored_diagnostics(
    ds: &OfflineDataset,
    backend: &dyn FunctionClass,
) -> Result<WellExplored> {
    let lb = backend
        .as_linear()
        .ok_or_else(|| Error::Incompatible("eigenvalue diagnostics need a linear backend".into()))?;
    let mut min_eig = Vec::with_capacity(ds.horizon);
    let mut warnings = Vec::new();
    for h0 in 0..ds.horizon {
        let step = ds.records_at_step(h0);
        if step.len() < lb.d {
            warnings.push(h0);
        }
        let mut m = DMatrix::zeros(lb.d, lb.d);
        for (_, rec) in &step {
            let phi = lb.feature((rec.x, rec.a));
            m.ger(1.0, &phi, &phi, 1.0);
        }
        m /= step.len().max(1) as f64;
        min_eig.push(min_eigenvalue(&m).max(0.0));
    }
    let c_est = min_eig.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(WellExplored {
        min_eig_per_h: min_eig,
        c_est,
        rank_warning_steps: warnings,
    })
}

/// Exploration constant for a finite class: the smallest, over sampled
/// function pairs and steps, of the data-average squared difference divided
/// by the squared sup-norm difference.
fn finite_c_est(ds: &OfflineDataset, backend: &dyn FunctionClass, pairs: usize, seed: u64) -> f64 {
    let fb = match backend.as_finite() {
        Some(f) => f,
        None => return f64::NAN,
    };
    let m = fb.len();
    if m < 2 {
        return f64::NAN;
    }
    let mut rng = rng_from_seed(seed);
    let mut best = f64::INFINITY;
    for _ in 0..pairs {
        let i = (rng.random::<f64>() * m as f64) as usize % m;
        let mut j = (rng.random::<f64>() * m as f64) as usize % m;
        if i == j {
            j = (j + 1) % m;
        }
        let mut sup: f64 = 0.0;
        for s in 0..fb.tables[i].len() {
            for a in 0..fb.tables[i][s].len() {
                sup = sup.max((fb.value(i, (s, a)) - fb.value(j, (s, a))).abs());
            }
        }
        if sup == 0.0 {
            continue;
        }
        for h0 in 0..ds.horizon {
            let step = ds.records_at_step(h0);
            let mean_sq: f64 = step
                .iter()
                .map(|(_, rec)| {
                    let d = fb.value(i, (rec.x, rec.a)) - fb.value(j, (rec.x, rec.a));
                    d * d
                })
                .sum::<f64>()
                / step.len().max(1) as f64;
            best = best.min(mean_sq / (sup * sup));
        }
    }
    best
}

/// Query weight for the coverage expectation: `max(1, u(z)/alpha)`.
fn query_weight(u: f64, alpha: f64) -> f64 {
    (u / alpha).max(1.0)
}

/// Span check for a query feature against the step's data features:
/// returns true when the query is (numerically) outside the span, which makes
/// the ratio diverge as regularization vanishes.
fn outside_span(data: &[DVector<f64>], query: &DVector<f64>) -> bool {
    if data.is_empty() {
        return query.norm_squared() > 1e-18;
    }
    let d = query.len();
    let mut x = DMatrix::zeros(data.len(), d);
    for (i, phi) in data.iter().enumerate() {
        x.set_row(i, &phi.transpose());
    }
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let mut proj = DVector::zeros(d);
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            let row = v_t.row(k).transpose();
            proj.axpy(row.dot(query), &row, 1.0);
        }
    }
    (query - proj).norm_squared() > 1e-9 * query.norm_squared().max(1e-18)
}

/// The dataset-vs-optimal-policy coverage coefficient.
///
/// The optimal policy's state occupancy is propagated exactly in the clean
/// environment; per visited cell the squared uncertainty ratio against the
/// dataset is scaled by `n` and averaged, and the maximum over steps is
/// reported. The weighted variant divides by the query weight and uses the
/// dataset weights from the fixed-point iteration; the unweighted variant
/// uses unit weights throughout. Cells on the optimal path with no feature
/// support in the data yield an infinite coefficient.
///
/// `mc_episodes` is recorded for provenance; at this scale the expectation is
/// always exact, so no sampling happens and `seed` is unused.
pub fn coverage_coefficient(
    mdp: &TabularMdp,
    ds: &OfflineDataset,
    backend: &dyn FunctionClass,
    cfg: &SolverConfig,
    weighted: bool,
    mc_episodes: usize,
    _seed: u64,
) -> Result<CoverageReport> {
    cfg.validate()?;
    if ds.horizon != mdp.horizon {
        return Err(Error::dimension("dataset horizon differs from MDP"));
    }
    let (pi_star, _) = solve_optimal(mdp);
    let occ = state_action_occupancy(mdp, &pi_star, &Start::Default)?;

    let n = ds.n as f64;
    let mut cc_w: f64 = 0.0;
    let mut cc_u: f64 = 0.0;
    let mut per_h = Vec::with_capacity(mdp.horizon);
    for h0 in 0..mdp.horizon {
        let step = ds.records_at_step(h0);
        let points: Vec<Cell> = step.iter().map(|(_, r)| (r.x, r.a)).collect();
        let unit = vec![1.0; points.len()];
        let wv: WeightVector = if weighted {
            iterate_weights(&points, backend, cfg.alpha, cfg.lambda)?
        } else {
            WeightVector::unit(points.len(), cfg.alpha, cfg.lambda)
        };

        // cells the optimal policy actually visits
        let mut queries = Vec::new();
        let mut masses = Vec::new();
        for s in 0..mdp.s_count {
            for a in 0..mdp.a_count {
                if occ[h0][s][a] > 0.0 {
                    queries.push((s, a));
                    masses.push(occ[h0][s][a]);
                }
            }
        }

        // support check against the step's data
        if let Some(lb) = backend.as_linear() {
            let data_feats: Vec<DVector<f64>> = points.iter().map(|&c| lb.feature(c)).collect();
            for &q in &queries {
                if outside_span(&data_feats, &lb.feature(q)) {
                    return Ok(CoverageReport {
                        cc_weighted: f64::INFINITY,
                        cc_unweighted: f64::INFINITY,
                        per_h: vec![f64::INFINITY; mdp.horizon],
                        mc_episodes,
                        min_eig_per_h: vec![],
                        c_est: f64::NAN,
                        rank_warning_steps: vec![],
                    });
                }
            }
        }

        let u_w = backend.uncertainties(&queries, &points, &wv.sigma_sq, cfg.lambda)?;
        let u_u = backend.uncertainties(&queries, &points, &unit, cfg.lambda)?;

        let mut step_w = 0.0;
        let mut step_u = 0.0;
        for (i, &mass) in masses.iter().enumerate() {
            let qw = query_weight(u_w[i], cfg.alpha);
            step_w += mass * n * u_w[i] * u_w[i] / qw;
            step_u += mass * n * u_u[i] * u_u[i];
        }
        per_h.push(if weighted { step_w } else { step_u });
        cc_w = cc_w.max(step_w);
        cc_u = cc_u.max(step_u);
    }

    let (min_eig, c_est, warns) = match well_explored_diagnostics(ds, backend) {
        Ok(we) => (we.min_eig_per_h, we.c_est, we.rank_warning_steps),
        Err(_) => (
            vec![],
            finite_c_est(ds, backend, 200, 0x0C0FFEE),
            vec![],
        ),
    };

    Ok(CoverageReport {
        cc_weighted: cc_w,
        cc_unweighted: cc_u,
        per_h,
        mc_episodes,
        min_eig_per_h: min_eig,
        c_est,
        rank_warning_steps: warns,
    })
}

/// Largest constant `c` with `Gram_h >= I + c * n * M_h` (in the semidefinite
/// order) across steps, where `M_h` is the optimal policy's feature
/// second-moment matrix and `Gram_h = lambda*I + sum phi phi^T` over the
/// step's records. `None` when no positive constant works.
pub fn coverage_domination_constant(
    mdp: &TabularMdp,
    ds: &OfflineDataset,
    backend: &LinearBackend,
    lambda: f64,
) -> Result<Option<f64>> {
    let (pi_star, _) = solve_optimal(mdp);
    let occ = state_action_occupancy(mdp, &pi_star, &Start::Default)?;
    let n = ds.n as f64;
    let mut best: f64 = f64::INFINITY;
    for h0 in 0..mdp.horizon {
        let step = ds.records_at_step(h0);
        let unit = vec![1.0; step.len()];
        let points: Vec<Cell> = step.iter().map(|(_, r)| (r.x, r.a)).collect();
        let gram = backend.gram(&points, &unit, lambda);
        let d = backend.d;
        let mut m = DMatrix::zeros(d, d);
        for s in 0..mdp.s_count {
            for a in 0..mdp.a_count {
                if occ[h0][s][a] > 0.0 {
                    let phi = backend.feature((s, a));
                    m.ger(occ[h0][s][a], &phi, &phi, 1.0);
                }
            }
        }
        let gap = &gram - DMatrix::identity(d, d);
        // restrict the pencil to the range of M
        let eig = m.clone().symmetric_eigen();
        let tol = 1e-12 * eig.eigenvalues.amax().max(1e-18);
        let mut cols = Vec::new();
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > tol {
                cols.push(eig.eigenvectors.column(k) / ev.sqrt());
            }
        }
        if cols.is_empty() {
            continue;
        }
        let b = DMatrix::from_columns(&cols);
        let reduced = b.transpose() * (&gap / n) * &b;
        let c = min_eigenvalue(&reduced);
        best = best.min(c);
    }
    if !best.is_finite() || best <= 0.0 {
        return Ok(if best.is_finite() && best <= 0.0 { None } else { None });
    }
    Ok(Some(best))
}

/// Closed-form unweighted per-cell coverage quantity `n phi^T Gram^{-1} phi`,
/// exposed for cross-checks.
pub fn linear_coverage_quantity(
    backend: &LinearBackend,
    points: &[Cell],
    query: Cell,
    n: f64,
    lambda: f64,
) -> Result<f64> {
    let unit = vec![1.0; points.len()];
    let gram = backend.gram(points, &unit, lambda);
    let chol = spd_cholesky(&gram)?;
    Ok(n * quad_form_inv(&chol, &backend.feature(query)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect;
    use crate::envs::build_linear_mdp;

    #[test]
    fn optimal_policy_has_zero_suboptimality() {
        let mdp = build_linear_mdp(3, 5, 3, 3, 2).unwrap().base;
        let (pi, _) = solve_optimal(&mdp);
        let s = suboptimality(&mdp, &pi, &Start::Default).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn zero_reward_mdp_has_zero_suboptimality_for_anything() {
        let p_h = vec![vec![vec![0.25; 4]; 2]; 4];
        let mdp = TabularMdp::new(
            vec![p_h; 3],
            vec![vec![vec![0.0; 2]; 4]; 3],
            0.0,
            vec![0.25; 4],
        )
        .unwrap();
        let pi = Policy::uniform(3, 4, 2);
        assert_eq!(suboptimality(&mdp, &pi, &Start::Default).unwrap(), 0.0);
    }

    #[test]
    fn optimal_q_has_zero_residual() {
        let mdp = build_linear_mdp(2, 4, 2, 3, 9).unwrap().base;
        let (_, vt) = solve_optimal(&mdp);
        for h0 in 0..mdp.horizon {
            for s in 0..mdp.s_count {
                for a in 0..mdp.a_count {
                    let r = bellman_residual(&mdp, &vt.q, h0, s, a);
                    assert!(r.abs() < 1e-12, "residual {r} at {h0},{s},{a}");
                }
            }
        }
    }

    #[test]
    fn zero_tables_residual_is_minus_reward() {
        let mdp = build_linear_mdp(2, 3, 2, 2, 4).unwrap().base;
        let f = vec![vec![vec![0.0; mdp.a_count]; mdp.s_count]; mdp.horizon];
        for h0 in 0..mdp.horizon {
            for s in 0..mdp.s_count {
                for a in 0..mdp.a_count {
                    let r = bellman_residual(&mdp, &f, h0, s, a);
                    assert!((r + mdp.r[h0][s][a]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn unit_weights_make_both_coefficients_agree() {
        let lin = build_linear_mdp(3, 5, 2, 3, 21).unwrap();
        let behavior = Policy::uniform(3, 5, 2);
        let (ds, _) = collect(&lin.base, &behavior, 300, 5, None).unwrap();
        let backend = LinearBackend::from_linear_mdp(&lin);
        let mut cfg = SolverConfig::default();
        cfg.alpha = 1e300; // query weight pinned at 1, data weights stay 1
        let rep_w = coverage_coefficient(&lin.base, &ds, &backend, &cfg, true, 0, 0).unwrap();
        assert!(
            (rep_w.cc_weighted - rep_w.cc_unweighted).abs() < 1e-9,
            "{} vs {}",
            rep_w.cc_weighted,
            rep_w.cc_unweighted
        );
    }
}
