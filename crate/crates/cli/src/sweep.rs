//! Grid execution: every cell is generation, collection, corruption, one
//! solve per algorithm, and exact evaluation — a pure function of the config
//! and the master seed. Rows are buffered per cell and written in cell order,
//! so the CSV is byte-identical regardless of scheduling.

use std::fmt::Write as _;
use std::sync::Mutex;

use offrl_core::adversary::{self, AttackSpec, AttackTiming};
use offrl_core::backend::LinearBackend;
use offrl_core::dataset::{collect, OfflineDataset, TruthSidecar};
use offrl_core::envs::{
    build_linear_mdp, build_uneven_coverage_mdp, fmt_real, solve_optimal, uneven_coverage_behavior,
    LinearMdp, Policy, Start,
};
use offrl_core::error::Error as CoreError;
use offrl_core::eval::{coverage_coefficient, suboptimality};
use offrl_core::rng::derive_seed;
use offrl_core::solver::algorithms::algorithm_by_name;
use offrl_core::solver::SolverConfig;

use crate::config::{BehaviorKind, MdpKind, SweepConfig, ZetaSource};

/// One grid point: an instance/attack/solver configuration plus the derived
/// seed that makes it reproducible in isolation.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub cell_id: usize,
    pub n: usize,
    pub rate: f64,
    pub scale: f64,
    pub replica: usize,
    /// `derive_seed(master_seed, cell_id)`.
    pub derived_seed: u64,
}

/// One CSV row: one (cell, algorithm) outcome.
#[derive(Debug, Clone)]
pub struct ResultsRow {
    pub seed: u64,
    pub n: usize,
    pub horizon: usize,
    pub d: usize,
    pub s: usize,
    pub a: usize,
    pub attack_mode: String,
    pub c: f64,
    pub eps: f64,
    pub zeta_exact: f64,
    pub zeta_approx: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub beta_scale: f64,
    pub weighting: String,
    pub algorithm: String,
    pub suboptimality: f64,
    pub cc_weighted: f64,
    pub cc_unweighted: f64,
    pub min_eig: f64,
    pub wall_time_ms: f64,
}

pub const CSV_HEADER: &str = "seed,n,H,d,S,A,attack_mode,c,eps,zeta_exact,zeta_approx,alpha,lambda,beta_scale,weighting,algorithm,suboptimality,cc_weighted,cc_unweighted,min_eig,wall_time_ms";

impl ResultsRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.horizon,
            self.d,
            self.s,
            self.a,
            self.attack_mode,
            fmt_real(self.c),
            fmt_real(self.eps),
            fmt_real(self.zeta_exact),
            fmt_real(self.zeta_approx),
            fmt_real(self.alpha),
            fmt_real(self.lambda),
            fmt_real(self.beta_scale),
            self.weighting,
            self.algorithm,
            fmt_real(self.suboptimality),
            fmt_real(self.cc_weighted),
            fmt_real(self.cc_unweighted),
            fmt_real(self.min_eig),
            fmt_real(self.wall_time_ms),
        );
        s
    }
}

/// Expands the grid in a fixed nesting order (n, rate, scale, replica), so
/// cell ids are stable for a given config.
pub fn expand_cells(cfg: &SweepConfig, master_seed: u64) -> Vec<ExperimentCell> {
    let mut cells = Vec::new();
    let mut cell_id = 0;
    for &n in &cfg.ns {
        for &rate in &cfg.rates {
            for &scale in &cfg.scales {
                for replica in 0..cfg.replicas {
                    cells.push(ExperimentCell {
                        cell_id,
                        n,
                        rate,
                        scale,
                        replica,
                        derived_seed: derive_seed(master_seed, cell_id as u64),
                    });
                    cell_id += 1;
                }
            }
        }
    }
    cells
}

fn build_instance(cfg: &SweepConfig, seed: u64) -> Result<(LinearMdp, Policy), CoreError> {
    match cfg.mdp_kind {
        MdpKind::Linear => {
            let lin = build_linear_mdp(cfg.d, cfg.states, cfg.actions, cfg.horizon, seed)?;
            let behavior = match cfg.behavior {
                BehaviorKind::Uniform => {
                    Policy::uniform(lin.base.horizon, lin.base.s_count, lin.base.a_count)
                }
                BehaviorKind::Skewed => {
                    return Err(CoreError::Incompatible(
                        "skewed behavior needs the uneven family".into(),
                    ))
                }
            };
            Ok((lin, behavior))
        }
        MdpKind::Uneven => {
            let lin = build_uneven_coverage_mdp(seed)?;
            let behavior = match cfg.behavior {
                BehaviorKind::Uniform => {
                    Policy::uniform(lin.base.horizon, lin.base.s_count, lin.base.a_count)
                }
                BehaviorKind::Skewed => uneven_coverage_behavior(&lin.base),
            };
            Ok((lin, behavior))
        }
    }
}

/// Dataset production for one cell: collection plus the configured attack.
fn produce_data(
    cfg: &SweepConfig,
    cell: &ExperimentCell,
    lin: &LinearMdp,
    behavior: &Policy,
) -> Result<(OfflineDataset, TruthSidecar), CoreError> {
    let data_seed = derive_seed(cell.derived_seed, 2);
    let attack_seed = derive_seed(cell.derived_seed, 3);
    let attack = cfg.attack_mode.map(|mode| AttackSpec {
        mode,
        c: cell.rate,
        eps: cell.scale,
        timing: cfg.timing,
        seed: attack_seed,
    });
    match attack {
        Some(spec) if spec.timing == AttackTiming::OnTheFly => {
            collect(&lin.base, behavior, cell.n, data_seed, Some(&spec))
        }
        Some(spec) => {
            let (ds, sc) = collect(&lin.base, behavior, cell.n, data_seed, None)?;
            let oracle = if spec.mode.needs_value_oracle() {
                Some(solve_optimal(&lin.base).1)
            } else {
                None
            };
            let (ds, sc, _) = adversary::corrupt(&ds, &sc, &spec, &lin.base, oracle.as_ref())?;
            Ok((ds, sc))
        }
        None => collect(&lin.base, behavior, cell.n, data_seed, None),
    }
}

/// Runs one cell and emits one row per configured algorithm.
pub fn run_cell(
    cfg: &SweepConfig,
    cell: &ExperimentCell,
    measure_time: bool,
) -> Result<Vec<ResultsRow>, CoreError> {
    let instance_seed = derive_seed(cell.derived_seed, 1);
    let (lin, behavior) = build_instance(cfg, instance_seed)?;
    let (ds, sc) = produce_data(cfg, cell, &lin, &behavior)?;
    let report = adversary::account_corruption(&lin.base, &ds, &sc)?;
    let zeta_exact_per_h = report.zeta_exact_per_h.clone().unwrap_or_default();
    let zeta_exact: f64 = zeta_exact_per_h.iter().sum();

    let backend = LinearBackend::from_linear_mdp(&lin);
    let alpha = cfg.alpha.resolve(cell.n);
    let zeta_per_h = match cfg.zeta_source {
        ZetaSource::None => None,
        ZetaSource::Approx => {
            Some(vec![report.zeta_approx / lin.base.horizon as f64; lin.base.horizon])
        }
        ZetaSource::Exact => Some(zeta_exact_per_h.clone()),
    };
    let solver_cfg = SolverConfig {
        alpha,
        lambda: cfg.lambda,
        beta_scale: cfg.beta_scale,
        delta: cfg.delta,
        zeta_per_h,
        ..SolverConfig::default()
    };

    // coverage describes the dataset, shared across algorithm rows
    let coverage = coverage_coefficient(&lin.base, &ds, &backend, &solver_cfg, true, 0, 0)?;
    let min_eig = coverage
        .min_eig_per_h
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let mut rows = Vec::with_capacity(cfg.algorithms.len());
    for name in &cfg.algorithms {
        let algo = algorithm_by_name(name)?;
        let start = std::time::Instant::now();
        let solve = algo.solve(&ds, &backend, &solver_cfg)?;
        let wall = if measure_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let subopt = suboptimality(&lin.base, &solve.policy, &Start::Default)?;
        rows.push(ResultsRow {
            seed: cell.derived_seed,
            n: cell.n,
            horizon: lin.base.horizon,
            d: lin.d,
            s: lin.base.s_count,
            a: lin.base.a_count,
            attack_mode: cfg
                .attack_mode
                .map(|m| m.name().to_string())
                .unwrap_or_else(|| "none".into()),
            c: if cfg.attack_mode.is_some() { cell.rate } else { 0.0 },
            eps: if cfg.attack_mode.is_some() { cell.scale } else { 0.0 },
            zeta_exact,
            zeta_approx: report.zeta_approx,
            alpha,
            lambda: cfg.lambda,
            beta_scale: cfg.beta_scale,
            weighting: match name.as_str() {
                "pevi" => "unit".into(),
                _ => "uncertainty".into(),
            },
            algorithm: name.clone(),
            suboptimality: subopt,
            cc_weighted: coverage.cc_weighted,
            cc_unweighted: coverage.cc_unweighted,
            min_eig,
            wall_time_ms: wall,
        });
    }
    Ok(rows)
}

/// Outcome of a sweep: the CSV text plus any per-cell failures. Failed cells
/// contribute no rows and never disturb other cells.
pub struct SweepOutcome {
    pub csv: String,
    pub failures: Vec<(usize, String)>,
}

/// Executes every cell, on up to `jobs` threads, and assembles the CSV in
/// cell order. By default rows carry `wall_time_ms = 0` so reruns are
/// byte-identical; `measure_time` trades that determinism for real timings.
pub fn run_sweep(cfg: &SweepConfig, master_seed: u64, jobs: usize, measure_time: bool) -> SweepOutcome {
    let cells = expand_cells(cfg, master_seed);
    let jobs = jobs.max(1).min(cells.len().max(1));

    type CellResult = (usize, Result<Vec<ResultsRow>, CoreError>);
    let results: Mutex<Vec<CellResult>> = Mutex::new(Vec::with_capacity(cells.len()));
    let next = std::sync::atomic::AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = run_cell(cfg, &cells[i], measure_time);
                results.lock().unwrap().push((cells[i].cell_id, out));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(id, _)| *id);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut failures = Vec::new();
    for (cell_id, outcome) in results {
        match outcome {
            Ok(rows) => {
                for row in rows {
                    csv.push_str(&row.to_csv_line());
                    csv.push('\n');
                }
            }
            Err(e) => failures.push((cell_id, e.to_string())),
        }
    }
    SweepOutcome { csv, failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seeds_are_distinct() {
        let cfg = SweepConfig::parse("collect.n = 10 20\nsweep.replicas = 4\n").unwrap();
        let cells = expand_cells(&cfg, 7);
        assert_eq!(cells.len(), 8);
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.derived_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn cell_order_is_the_nesting_order() {
        let cfg =
            SweepConfig::parse("collect.n = 10 20\nattack.mode = random_reward\nattack.rate = 0.1 0.2\n")
                .unwrap();
        let cells = expand_cells(&cfg, 0);
        let key: Vec<(usize, f64)> = cells.iter().map(|c| (c.n, c.rate)).collect();
        assert_eq!(
            key,
            vec![(10, 0.1), (10, 0.2), (20, 0.1), (20, 0.2)]
        );
    }
}
