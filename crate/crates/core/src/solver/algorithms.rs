//! Algorithm registry: each solver variant behind a common trait, looked up
//! by name at runtime. All variants share the backward induction in the
//! parent module and differ only in the weighting scheme they pin.

use crate::backend::FunctionClass;
use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};

use super::{cr_pevi, SolveReport, SolverConfig, Weighting};

pub trait Algorithm: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(
        &self,
        ds: &OfflineDataset,
        backend: &dyn FunctionClass,
        cfg: &SolverConfig,
    ) -> Result<SolveReport>;
}

/// Uncertainty-weighted pessimistic value iteration.
pub struct CrPevi;

impl Algorithm for CrPevi {
    fn name(&self) -> &'static str {
        "cr_pevi"
    }
    fn solve(
        &self,
        ds: &OfflineDataset,
        backend: &dyn FunctionClass,
        cfg: &SolverConfig,
    ) -> Result<SolveReport> {
        let mut cfg = cfg.clone();
        cfg.weighting = Weighting::Uncertainty;
        cfg.rho = None;
        cr_pevi(ds, backend, &cfg)
    }
}

/// The unit-weight baseline.
pub struct Pevi;

impl Algorithm for Pevi {
    fn name(&self) -> &'static str {
        "pevi"
    }
    fn solve(
        &self,
        ds: &OfflineDataset,
        backend: &dyn FunctionClass,
        cfg: &SolverConfig,
    ) -> Result<SolveReport> {
        let mut cfg = cfg.clone();
        cfg.weighting = Weighting::Unit;
        cfg.rho = None;
        cr_pevi(ds, backend, &cfg)
    }
}

/// The distribution-shift variant: per-record shift weights divide the
/// uncertainty inside the weight update. With all shift weights one it is
/// exactly [`CrPevi`].
pub struct CordsPevi;

impl Algorithm for CordsPevi {
    fn name(&self) -> &'static str {
        "cords_pevi"
    }
    fn solve(
        &self,
        ds: &OfflineDataset,
        backend: &dyn FunctionClass,
        cfg: &SolverConfig,
    ) -> Result<SolveReport> {
        let mut cfg = cfg.clone();
        cfg.weighting = Weighting::Uncertainty;
        if cfg.rho.is_none() {
            cfg.rho = Some(vec![1.0; ds.len()]);
        }
        cr_pevi(ds, backend, &cfg)
    }
}

static CR_PEVI: CrPevi = CrPevi;
static PEVI: Pevi = Pevi;
static CORDS_PEVI: CordsPevi = CordsPevi;

pub fn algorithms() -> [&'static dyn Algorithm; 3] {
    [&CR_PEVI, &PEVI, &CORDS_PEVI]
}

pub fn algorithm_by_name(name: &str) -> Result<&'static dyn Algorithm> {
    algorithms()
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| {
            Error::invalid_argument(format!(
                "unknown algorithm '{name}'; registered: {}",
                algorithm_names().join(", ")
            ))
        })
}

pub fn algorithm_names() -> Vec<&'static str> {
    algorithms().iter().map(|a| a.name()).collect()
}
