//! Weighted pessimistic value iteration and its configuration.
//!
//! The backward induction is shared by every registered algorithm; variants
//! differ only in how per-record weights are chosen (see [`algorithms`]).

pub mod algorithms;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{Cell, FitModel, FunctionClass, LinearBackend, LinearFit};
use crate::dataset::OfflineDataset;
use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::weights::{iterate_weights, iterate_weights_shifted, WeightVector};

pub use crate::backend::LinearFit as Fit;

/// How per-record regression weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weights from the uncertainty fixed-point iteration.
    Uncertainty,
    /// All weights one.
    Unit,
}

/// Solver parameters.
///
/// `alpha` is the uncertainty ratio; small alpha downweights informative
/// records aggressively. `beta_scale` multiplies the confidence radius; the
/// `theory_beta` switch replaces the scaled radius with the explicit
/// constant-laden recurrence (useful for containment checks, far too
/// conservative for policy quality).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub beta_scale: f64,
    pub delta: f64,
    /// Known per-step corruption budgets; zero when absent.
    pub zeta_per_h: Option<Vec<f64>>,
    pub weighting: Weighting,
    /// Per-record shift weights, dataset order. Presence selects the shifted
    /// weight iteration.
    pub rho: Option<Vec<f64>>,
    /// Covering resolution; defaults to `1/n` at solve time.
    pub gamma: Option<f64>,
    pub theory_beta: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 1.0,
            lambda: 1.0,
            beta_scale: 0.5,
            delta: 0.05,
            zeta_per_h: None,
            weighting: Weighting::Uncertainty,
            rho: None,
            gamma: None,
            theory_beta: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("beta_scale", self.beta_scale),
            ("delta", self.delta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid_argument(format!("{name} must be positive")));
            }
        }
        if let Some(z) = &self.zeta_per_h {
            if z.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid_argument("zeta budgets must be >= 0"));
            }
        }
        Ok(())
    }

    fn zeta_at(&self, h0: usize) -> f64 {
        self.zeta_per_h
            .as_ref()
            .and_then(|z| z.get(h0).copied())
            .unwrap_or(0.0)
    }

    /// The canonical parameter coupling: covering resolution tied to the
    /// radius, ridge strength to the covering number, and the uncertainty
    /// ratio to the known budget (falling back to `1/sqrt(n)` when the budget
    /// is zero). The circular `gamma` definition is resolved with a single
    /// fixed-point pass: compute radii at `gamma = 1/n`, then refresh `gamma`
    /// from them once.
    pub fn theorem_defaults(
        backend: &dyn FunctionClass,
        n: usize,
        horizon: usize,
        zeta_per_h: Option<Vec<f64>>,
        delta: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid_argument("n must be >= 1"));
        }
        let zeta_total: f64 = zeta_per_h.iter().flatten().sum();
        let mut gamma = 1.0 / n as f64;
        let mut cfg = SolverConfig {
            alpha: 1.0,
            lambda: 1.0,
            beta_scale: 1.0,
            delta,
            zeta_per_h: zeta_per_h.clone(),
            weighting: Weighting::Uncertainty,
            rho: None,
            gamma: Some(gamma),
            theory_beta: true,
        };
        for _ in 0..2 {
            let log_n = backend.log_covering(gamma);
            cfg.lambda = log_n.max(1e-6);
            cfg.alpha = if zeta_total > 0.0 {
                horizon as f64 * log_n.max(0.0).sqrt() / zeta_total
            } else {
                1.0 / (n as f64).sqrt()
            };
            cfg.gamma = Some(gamma);
            let betas = theory_radii(&cfg, horizon, n, log_n);
            let worst = (0..horizon)
                .map(|h| betas[h] * cfg.zeta_at(h))
                .fold(0.0, f64::max);
            if worst > 0.0 {
                gamma = 1.0 / (n as f64 * worst);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scaled confidence radius for step `h0` (0-based):
/// `beta_scale * (alpha * zeta_h + sqrt(ln H + logN + ln(1/delta)))`.
pub fn confidence_radius(h0: usize, horizon: usize, cfg: &SolverConfig, log_n: f64) -> f64 {
    let root = ((horizon as f64).ln() + log_n.max(0.0) + (1.0 / cfg.delta).ln())
        .max(0.0)
        .sqrt();
    cfg.beta_scale * (cfg.alpha * cfg.zeta_at(h0) + root)
}

/// The explicit-constant radii, computed backward (the step-(h+1) radius
/// enters through the covering resolution terms). Noise scale is taken as 1.
pub fn theory_radii(cfg: &SolverConfig, horizon: usize, n: usize, log_n: f64) -> Vec<f64> {
    let gamma = cfg.gamma.unwrap_or(1.0 / n as f64);
    let nf = n as f64;
    let log_term = (2.0 * horizon as f64 / cfg.delta).ln() + log_n.max(0.0);
    let mut betas = vec![0.0; horizon];
    let mut beta_next = 0.0;
    for h0 in (0..horizon).rev() {
        let zeta_h = cfg.zeta_at(h0);
        let c1 = 2.0 * (zeta_h * zeta_h + 2.0 * nf + 3.0 * (2.0 / cfg.delta).ln());
        let inner = 12.0 * cfg.lambda
            + 12.0 * log_term
            + 12.0 * (5.0 * beta_next * gamma).powi(2) * nf
            + 60.0 * beta_next * gamma * (nf * c1).sqrt();
        let beta = 24.0 * cfg.alpha * zeta_h + inner.max(0.0).sqrt();
        betas[h0] = beta;
        beta_next = beta;
    }
    betas
}

/// Pessimism bonus at a cell: identical to the uncertainty of the cell
/// against the weighted point set.
pub fn bonus(
    z: Cell,
    points: &[Cell],
    sigma_sq: &[f64],
    backend: &dyn FunctionClass,
    lambda: f64,
) -> Result<f64> {
    crate::weights::uncertainty(z, points, sigma_sq, backend, lambda)
}

/// Exact closed-form weighted ridge regression (linear backend).
pub fn weighted_ridge(
    points: &[Cell],
    targets: &[f64],
    sigma_sq: &[f64],
    backend: &LinearBackend,
    lambda: f64,
) -> Result<LinearFit> {
    backend.ridge(points, targets, sigma_sq, lambda)
}

/// Per-step summaries of one backward induction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// `sqrt(lambda + weighted SSE)` of the regression at each step.
    pub weighted_residual_norm: Vec<f64>,
    pub bonus_min: Vec<f64>,
    pub bonus_mean: Vec<f64>,
    pub bonus_max: Vec<f64>,
    pub log_n: f64,
    pub wall_time_ms: f64,
}

/// Everything one solve produces: the greedy policy, the clamped pessimistic
/// value tables, the per-step radii and weights, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub policy: Policy,
    /// `f[h][s][a]`, clamped to [0, 1].
    pub f: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<f64>,
    pub weights: Vec<WeightVector>,
    pub diagnostics: SolveDiagnostics,
}

/// Cell shape `(S, A)` implied by a dataset, for table allocation.
fn infer_shape(ds: &OfflineDataset, backend: &dyn FunctionClass) -> Result<(usize, usize)> {
    if let Some(lb) = backend.as_linear() {
        let s = lb.phi.len();
        let a = lb.phi.first().map_or(0, Vec::len);
        return Ok((s, a));
    }
    // finite backends carry tables shaped like the environment
    let mut s_max = 0;
    let mut a_max = 0;
    for rec in &ds.records {
        s_max = s_max.max(rec.x + 1).max(rec.x_next + 1);
        a_max = a_max.max(rec.a + 1);
    }
    Ok((s_max, a_max))
}

/// The weighted pessimistic backward induction.
///
/// Per step, from the last to the first: choose weights, regress the one-step
/// targets `r + f_next(x_next)`, subtract the scaled bonus, clamp into [0, 1],
/// and act greedily (ties to the smaller action index). Deterministic given
/// the dataset and configuration.
pub fn cr_pevi(
    ds: &OfflineDataset,
    backend: &dyn FunctionClass,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let start = Instant::now();
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid_argument("dataset is empty"));
    }
    ds.validate_grid()?;
    if let Some(rho) = &cfg.rho {
        if rho.len() != ds.len() {
            return Err(Error::dimension("rho length differs from record count"));
        }
    }
    let (s_count, a_count) = infer_shape(ds, backend)?;
    for rec in &ds.records {
        if rec.x >= s_count || rec.x_next >= s_count || rec.a >= a_count {
            return Err(Error::dimension(
                "dataset states or actions exceed the backend's cell shape",
            ));
        }
    }
    let horizon = ds.horizon;
    let n = ds.n;
    let gamma = cfg.gamma.unwrap_or(1.0 / n as f64);
    let log_n = backend.log_covering(gamma);
    let betas: Vec<f64> = if cfg.theory_beta {
        theory_radii(cfg, horizon, n, log_n)
    } else {
        (0..horizon)
            .map(|h0| confidence_radius(h0, horizon, cfg, log_n))
            .collect()
    };

    let all_cells: Vec<Cell> = (0..s_count)
        .flat_map(|s| (0..a_count).map(move |a| (s, a)))
        .collect();

    let mut f = vec![vec![vec![0.0; a_count]; s_count]; horizon];
    let mut policy = vec![vec![0usize; s_count]; horizon];
    let mut weights_out: Vec<Option<WeightVector>> = (0..horizon).map(|_| None).collect();
    let mut resid = vec![0.0; horizon];
    let mut b_min = vec![0.0; horizon];
    let mut b_mean = vec![0.0; horizon];
    let mut b_max = vec![0.0; horizon];

    // greedy state values of the step just solved; zero beyond the horizon
    let mut v_next = vec![0.0f64; s_count];
    for h0 in (0..horizon).rev() {
        let step = ds.records_at_step(h0);
        if step.is_empty() {
            return Err(Error::invalid_argument(format!(
                "no records at step {}",
                h0 + 1
            )));
        }
        let points: Vec<Cell> = step.iter().map(|(_, r)| (r.x, r.a)).collect();
        let targets: Vec<f64> = step
            .iter()
            .map(|(_, rec)| rec.r + v_next[rec.x_next])
            .collect();

        let wv = match cfg.weighting {
            Weighting::Unit => WeightVector::unit(points.len(), cfg.alpha, cfg.lambda),
            Weighting::Uncertainty => match &cfg.rho {
                Some(rho) => {
                    let rho_h: Vec<f64> = step.iter().map(|(i, _)| rho[*i]).collect();
                    iterate_weights_shifted(&points, &rho_h, backend, cfg.alpha, cfg.lambda)?
                }
                None => iterate_weights(&points, backend, cfg.alpha, cfg.lambda)?,
            },
        };

        let fit = backend.fit(&points, &targets, &wv.sigma_sq, cfg.lambda)?;
        let bonuses = backend.uncertainties(&all_cells, &points, &wv.sigma_sq, cfg.lambda)?;

        let beta = betas[h0];
        for (ci, &cell) in all_cells.iter().enumerate() {
            let raw = backend.eval_fit(&fit, cell) - beta * bonuses[ci];
            f[h0][cell.0][cell.1] = raw.clamp(0.0, 1.0);
        }
        for s in 0..s_count {
            let mut best_a = 0;
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_count {
                if f[h0][s][a] > best {
                    best = f[h0][s][a];
                    best_a = a;
                }
            }
            policy[h0][s] = best_a;
            v_next[s] = best;
        }

        let sse = match &fit {
            FitModel::Linear(lf) => lf.residual_norm * lf.residual_norm,
            FitModel::Finite { weighted_sse, .. } => *weighted_sse,
        };
        resid[h0] = (cfg.lambda + sse).sqrt();
        b_min[h0] = bonuses.iter().copied().fold(f64::INFINITY, f64::min);
        b_max[h0] = bonuses.iter().copied().fold(0.0, f64::max);
        b_mean[h0] = bonuses.iter().sum::<f64>() / bonuses.len() as f64;
        weights_out[h0] = Some(wv);
    }

    Ok(SolveReport {
        policy: Policy::Deterministic(policy),
        f,
        beta: betas,
        weights: weights_out.into_iter().map(Option::unwrap).collect(),
        diagnostics: SolveDiagnostics {
            weighted_residual_norm: resid,
            bonus_min: b_min,
            bonus_mean: b_mean,
            bonus_max: b_max,
            log_n,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}
