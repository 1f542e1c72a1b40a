//! Function-class backends: the uncertainty, bonus, regression and covering
//! primitives behind a common trait, so solvers and evaluators are generic
//! over how Q-functions are represented.
//!
//! Two strategies are registered: `linear` (a d-dimensional feature map,
//! closed forms throughout) and `finite` (an explicit list of Q-tables,
//! everything by pair enumeration). The finite backend is exact and doubles
//! as an oracle for the linear one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::LinearMdp;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, quad_form_inv, spd_cholesky, weighted_gram};

/// A state-action cell.
pub type Cell = (usize, usize);

/// Result of a weighted ridge regression in feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub w: Vec<f64>,
    /// The weighted Gram matrix `lambda*I + sum phi phi^T / sigma^2`, stored
    /// row-major.
    pub lambda_matrix: Vec<Vec<f64>>,
    /// Weighted residual norm `sqrt(sum (w.phi_i - y_i)^2 / sigma_i^2)`.
    pub residual_norm: f64,
}

/// A fitted Q-function, evaluated through the backend that produced it.
#[derive(Debug, Clone)]
pub enum FitModel {
    Linear(LinearFit),
    /// Index of the best table plus its weighted sum of squared errors.
    Finite { index: usize, weighted_sse: f64 },
}

pub trait FunctionClass: Send + Sync {
    fn name(&self) -> &'static str;

    /// Analytic log covering number at resolution `gamma`.
    fn log_covering(&self, gamma: f64) -> f64;

    /// Uncertainty of each query cell against the weighted point set:
    /// the largest ratio, over pairs of member functions, between the
    /// prediction gap at the query and the weighted training-set gap norm.
    fn uncertainties(
        &self,
        queries: &[Cell],
        points: &[Cell],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<Vec<f64>>;

    /// Weighted least-squares fit of `targets` at `points`.
    fn fit(&self, points: &[Cell], targets: &[f64], sigma_sq: &[f64], lambda: f64)
        -> Result<FitModel>;

    /// Value of a fitted model at a cell.
    fn eval_fit(&self, fit: &FitModel, cell: Cell) -> f64;

    fn as_linear(&self) -> Option<&LinearBackend> {
        None
    }

    fn as_finite(&self) -> Option<&FiniteBackend> {
        None
    }
}

fn check_weights(points: &[Cell], sigma_sq: &[f64], lambda: f64) -> Result<()> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::invalid_argument("lambda must be positive"));
    }
    if sigma_sq.len() != points.len() {
        return Err(Error::dimension("weights and points differ in length"));
    }
    if sigma_sq.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid_argument("weights must be positive"));
    }
    Ok(())
}

/// Feature-map backend of dimension `d`.
#[derive(Debug, Clone)]
pub struct LinearBackend {
    pub d: usize,
    /// `phi[s][a]`, norms at most 1.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Constant in front of `d^2 * ln(1 + 1/gamma)` in the covering bound.
    pub covering_const: f64,
}

impl LinearBackend {
    pub fn new(d: usize, phi: Vec<Vec<Vec<f64>>>) -> Self {
        LinearBackend {
            d,
            phi,
            covering_const: 1.0,
        }
    }

    pub fn from_linear_mdp(lin: &LinearMdp) -> Self {
        Self::new(lin.d, lin.phi.clone())
    }

    pub fn feature(&self, cell: Cell) -> DVector<f64> {
        DVector::from_column_slice(&self.phi[cell.0][cell.1])
    }

    fn features(&self, cells: &[Cell]) -> Vec<DVector<f64>> {
        cells.iter().map(|&c| self.feature(c)).collect()
    }

    /// The weighted Gram matrix for a point set.
    pub fn gram(&self, points: &[Cell], sigma_sq: &[f64], lambda: f64) -> DMatrix<f64> {
        weighted_gram(&self.features(points), sigma_sq, lambda, self.d)
    }

    /// Exact closed-form weighted ridge: `w = Gram^{-1} sum(phi_i y_i / sigma_i^2)`.
    pub fn ridge(
        &self,
        points: &[Cell],
        targets: &[f64],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<LinearFit> {
        check_weights(points, sigma_sq, lambda)?;
        if targets.len() != points.len() {
            return Err(Error::dimension("targets and points differ in length"));
        }
        let phis = self.features(points);
        let gram = weighted_gram(&phis, sigma_sq, lambda, self.d);
        let chol = spd_cholesky(&gram)?;
        let mut rhs = DVector::zeros(self.d);
        for ((phi, &y), &s2) in phis.iter().zip(targets).zip(sigma_sq) {
            rhs.axpy(y / s2, phi, 1.0);
        }
        let w = chol.solve(&rhs);
        let mut sse = 0.0;
        for ((phi, &y), &s2) in phis.iter().zip(targets).zip(sigma_sq) {
            let e = w.dot(phi) - y;
            sse += e * e / s2;
        }
        debug_assert!(min_eigenvalue(&gram) >= lambda - 1e-10);
        Ok(LinearFit {
            w: w.as_slice().to_vec(),
            lambda_matrix: (0..self.d)
                .map(|i| (0..self.d).map(|j| gram[(i, j)]).collect())
                .collect(),
            residual_norm: sse.sqrt(),
        })
    }
}

impl FunctionClass for LinearBackend {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn log_covering(&self, gamma: f64) -> f64 {
        let g = gamma.max(f64::MIN_POSITIVE);
        self.covering_const * (self.d * self.d) as f64 * (1.0 + 1.0 / g).ln()
    }

    fn uncertainties(
        &self,
        queries: &[Cell],
        points: &[Cell],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<Vec<f64>> {
        check_weights(points, sigma_sq, lambda)?;
        let gram = self.gram(points, sigma_sq, lambda);
        let chol = spd_cholesky(&gram)?;
        Ok(queries
            .iter()
            .map(|&q| {
                let phi = self.feature(q);
                quad_form_inv(&chol, &phi).max(0.0).sqrt()
            })
            .collect())
    }

    fn fit(
        &self,
        points: &[Cell],
        targets: &[f64],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<FitModel> {
        Ok(FitModel::Linear(self.ridge(points, targets, sigma_sq, lambda)?))
    }

    fn eval_fit(&self, fit: &FitModel, cell: Cell) -> f64 {
        match fit {
            FitModel::Linear(lf) => self
                .phi[cell.0][cell.1]
                .iter()
                .zip(&lf.w)
                .map(|(p, w)| p * w)
                .sum(),
            FitModel::Finite { .. } => panic!("finite fit evaluated against linear backend"),
        }
    }

    fn as_linear(&self) -> Option<&LinearBackend> {
        Some(self)
    }
}

/// Largest class size the pair-enumeration backend accepts.
pub const FINITE_CLASS_MAX: usize = 64;

/// An explicit finite set of Q-tables with values in [0, 1].
#[derive(Debug, Clone)]
pub struct FiniteBackend {
    /// `tables[f][s][a]`
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl FiniteBackend {
    pub fn new(tables: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::invalid_argument("finite class must be nonempty"));
        }
        if tables.len() > FINITE_CLASS_MAX {
            return Err(Error::invalid_argument(format!(
                "finite class size {} exceeds the supported {}",
                tables.len(),
                FINITE_CLASS_MAX
            )));
        }
        for t in &tables {
            for row in t {
                for &v in row {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::invalid_argument(
                            "finite-class values must lie in [0, 1]",
                        ));
                    }
                }
            }
        }
        Ok(FiniteBackend { tables })
    }

    pub fn value(&self, f: usize, cell: Cell) -> f64 {
        self.tables[f][cell.0][cell.1]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

impl FunctionClass for FiniteBackend {
    fn name(&self) -> &'static str {
        "finite"
    }

    fn log_covering(&self, _gamma: f64) -> f64 {
        (self.tables.len() as f64).ln().max(0.0)
    }

    fn uncertainties(
        &self,
        queries: &[Cell],
        points: &[Cell],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<Vec<f64>> {
        check_weights(points, sigma_sq, lambda)?;
        let m = self.tables.len();
        // One denominator per unordered pair; |f - f'| is symmetric.
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in (i + 1)..m {
                let mut acc = lambda;
                for (&p, &s2) in points.iter().zip(sigma_sq) {
                    let d = self.value(i, p) - self.value(j, p);
                    acc += d * d / s2;
                }
                pairs.push((i, j, acc.sqrt()));
            }
        }
        Ok(queries
            .iter()
            .map(|&q| {
                pairs
                    .iter()
                    .map(|&(i, j, denom)| (self.value(i, q) - self.value(j, q)).abs() / denom)
                    .fold(0.0, f64::max)
            })
            .collect())
    }

    fn fit(
        &self,
        points: &[Cell],
        targets: &[f64],
        sigma_sq: &[f64],
        lambda: f64,
    ) -> Result<FitModel> {
        check_weights(points, sigma_sq, lambda)?;
        if targets.len() != points.len() {
            return Err(Error::dimension("targets and points differ in length"));
        }
        let mut best = (0usize, f64::INFINITY);
        for f in 0..self.tables.len() {
            let mut sse = 0.0;
            for ((&p, &y), &s2) in points.iter().zip(targets).zip(sigma_sq) {
                let e = self.value(f, p) - y;
                sse += e * e / s2;
            }
            if sse < best.1 {
                best = (f, sse);
            }
        }
        Ok(FitModel::Finite {
            index: best.0,
            weighted_sse: best.1,
        })
    }

    fn eval_fit(&self, fit: &FitModel, cell: Cell) -> f64 {
        match fit {
            FitModel::Finite { index, .. } => self.value(*index, cell),
            FitModel::Linear(_) => panic!("linear fit evaluated against finite backend"),
        }
    }

    fn as_finite(&self) -> Option<&FiniteBackend> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_backend(cells: usize) -> LinearBackend {
        let mut phi = vec![vec![vec![0.0; cells]; 1]; cells];
        for (s, row) in phi.iter_mut().enumerate() {
            row[0][s] = 1.0;
        }
        LinearBackend::new(cells, phi)
    }

    #[test]
    fn singleton_finite_class_has_zero_uncertainty() {
        let fb = FiniteBackend::new(vec![vec![vec![0.3, 0.7]; 2]]).unwrap();
        let u = fb
            .uncertainties(&[(0, 0), (1, 1)], &[(0, 1)], &[1.0], 1.0)
            .unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn rank_one_uncertainty_closed_form() {
        let lb = one_hot_backend(2);
        // single point at e1, lambda=1, sigma^2=1: sqrt(1/2)
        let u = lb
            .uncertainties(&[(0, 0)], &[(0, 0)], &[1.0], 1.0)
            .unwrap();
        assert!((u[0] - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ridge_single_direction_shrinkage() {
        let lb = one_hot_backend(1);
        let pts = vec![(0, 0); 3];
        let fit = lb.ridge(&pts, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 1.0).unwrap();
        assert!((fit.w[0] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn finite_class_rejects_out_of_range_and_oversize() {
        assert!(FiniteBackend::new(vec![vec![vec![1.5]]]).is_err());
        let many = vec![vec![vec![0.5]]; FINITE_CLASS_MAX + 1];
        assert!(FiniteBackend::new(many).is_err());
    }
}
