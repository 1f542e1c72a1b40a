use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use offrl_cli::config::SweepConfig;
use offrl_cli::plot::{render_chart, XAxis};
use offrl_cli::sweep::run_sweep;

use offrl_core::adversary::{self, AttackMode, AttackSpec, AttackTiming};
use offrl_core::backend::LinearBackend;
use offrl_core::dataset::{collect, load_dataset, serialize_dataset};
use offrl_core::envs::{
    build_linear_mdp, build_uneven_coverage_mdp, linear_to_json, linearity_residual, mdp_from_json,
    solve_optimal, uneven_coverage_behavior, LinearMdp, Policy, Start,
};
use offrl_core::eval::{coverage_coefficient, suboptimality};
use offrl_core::rng::derive_seed;
use offrl_core::solver::algorithms::{algorithm_by_name, algorithm_names};
use offrl_core::solver::{SolveReport, SolverConfig};

/// Offline RL testbed: generate environments, collect and corrupt datasets,
/// solve them pessimistically, and evaluate the result exactly.
#[derive(Parser)]
#[command(name = "offrl", version, about)]
struct Cli {
    /// Master seed for anything random downstream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory (subcommand-dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Sweep configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct AttackArgs {
    /// Corruption operator (random_reward | random_dynamics |
    /// adversarial_reward | adversarial_dynamics).
    #[arg(long)]
    attack_mode: Option<String>,
    /// Fraction of records to corrupt.
    #[arg(long, default_value_t = 0.0)]
    attack_rate: f64,
    /// Corruption scale.
    #[arg(long, default_value_t = 1.0)]
    attack_scale: f64,
}

impl AttackArgs {
    fn spec(&self, timing: AttackTiming, seed: u64) -> Result<Option<AttackSpec>, String> {
        match &self.attack_mode {
            None => Ok(None),
            Some(name) => {
                let mode: AttackMode = name.parse().map_err(|e| format!("{e}"))?;
                Ok(Some(AttackSpec {
                    mode,
                    c: self.attack_rate,
                    eps: self.attack_scale,
                    timing,
                    seed,
                }))
            }
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "cr_pevi")]
    algorithm: String,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    beta_scale: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment and write its JSON document.
    GenMdp {
        /// linear | uneven
        #[arg(long, default_value = "linear")]
        kind: String,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        /// Also report the feature-span certificate residual to stderr.
        #[arg(long)]
        check: bool,
    },
    /// Simulate episodes under a behavior policy, optionally with an
    /// on-the-fly attack, and write dataset plus truth sidecar.
    Collect {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// uniform | skewed (skewed fits the uneven family's action count)
        #[arg(long, default_value = "uniform")]
        behavior: String,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Apply a post-hoc attack to a saved dataset.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Run one algorithm on a dataset file and write its report JSON.
    Solve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Evaluate a solve report against the clean environment.
    Eval {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Dataset prefix for coverage diagnostics.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Execute a config-driven grid and write results.csv.
    Sweep {
        /// Record real per-solve wall time (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
    },
    /// Render SVG charts from a results CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        /// n | zeta | both
        #[arg(long, default_value = "both")]
        axis: String,
    },
}

fn load_mdp_with_backend(path: &Path) -> Result<(LinearMdp, LinearBackend), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (mdp, phi) = mdp_from_json(&text).map_err(|e| e.to_string())?;
    let lin = match phi {
        Some(phi) => {
            let d = phi.first().and_then(|s| s.first()).map_or(0, Vec::len);
            LinearMdp::new(mdp, d, phi).map_err(|e| e.to_string())?
        }
        None => LinearMdp::one_hot(mdp),
    };
    let backend = LinearBackend::from_linear_mdp(&lin);
    Ok((lin, backend))
}

fn write_or_print(out: &Option<PathBuf>, content: &str, what: &str) -> Result<(), String> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                }
            }
            fs::write(path, content).map_err(|e| e.to_string())?;
            eprintln!("{what} written to {}", path.display());
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn behavior_policy(name: &str, lin: &LinearMdp) -> Result<Policy, String> {
    match name {
        "uniform" => Ok(Policy::uniform(
            lin.base.horizon,
            lin.base.s_count,
            lin.base.a_count,
        )),
        "skewed" => {
            if lin.base.a_count != 3 {
                return Err("skewed behavior expects the uneven family's 3 actions".into());
            }
            Ok(uneven_coverage_behavior(&lin.base))
        }
        other => Err(format!("unknown behavior '{other}'")),
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::GenMdp {
            kind,
            d,
            states,
            actions,
            horizon,
            check,
        } => {
            let lin = match kind.as_str() {
                "linear" => build_linear_mdp(d, states, actions, horizon, cli.seed)
                    .map_err(|e| e.to_string())?,
                "uneven" => build_uneven_coverage_mdp(cli.seed).map_err(|e| e.to_string())?,
                other => return Err(format!("unknown mdp kind '{other}'")),
            };
            if check {
                eprintln!(
                    "feature-span certificate residual: {:.3e}",
                    linearity_residual(&lin, 50, cli.seed)
                );
            }
            write_or_print(&cli.out, &linear_to_json(&lin), "mdp")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Collect {
            mdp,
            episodes,
            behavior,
            attack,
        } => {
            let (lin, _) = load_mdp_with_backend(&mdp)?;
            let pi = behavior_policy(&behavior, &lin)?;
            let spec = attack.spec(AttackTiming::OnTheFly, derive_seed(cli.seed, 0xA))?;
            let (ds, sc) = collect(&lin.base, &pi, episodes, cli.seed, spec.as_ref())
                .map_err(|e| e.to_string())?;
            let prefix = cli.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
            if let Some(dir) = prefix.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                }
            }
            serialize_dataset(&ds, Some(&sc), &prefix).map_err(|e| e.to_string())?;
            eprintln!(
                "{} records written to {}.dataset.jsonl (+ sidecar)",
                ds.len(),
                prefix.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Corrupt { data, mdp, attack } => {
            let (lin, _) = load_mdp_with_backend(&mdp)?;
            let (ds, sc) = load_dataset(&data).map_err(|e| e.to_string())?;
            let sc = sc.ok_or("corrupting requires the truth sidecar next to the dataset")?;
            let spec = attack
                .spec(AttackTiming::PostHoc, derive_seed(cli.seed, 0xC))?
                .ok_or("--attack-mode is required")?;
            let oracle = if spec.mode.needs_value_oracle() {
                Some(solve_optimal(&lin.base).1)
            } else {
                None
            };
            let (out_ds, out_sc, report) =
                adversary::corrupt(&ds, &sc, &spec, &lin.base, oracle.as_ref())
                    .map_err(|e| e.to_string())?;
            let prefix = cli.out.clone().unwrap_or_else(|| PathBuf::from("corrupted"));
            serialize_dataset(&out_ds, Some(&out_sc), &prefix).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { data, mdp, solver } => {
            let (_, backend) = load_mdp_with_backend(&mdp)?;
            let (ds, _) = load_dataset(&data).map_err(|e| e.to_string())?;
            let algo = algorithm_by_name(&solver.algorithm).map_err(|e| e.to_string())?;
            let cfg = SolverConfig {
                alpha: solver.alpha,
                lambda: solver.lambda,
                beta_scale: solver.beta_scale,
                delta: solver.delta,
                ..SolverConfig::default()
            };
            let report = algo.solve(&ds, &backend, &cfg).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).unwrap();
            write_or_print(&cli.out, &json, "solve report")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { mdp, report, data } => {
            let (lin, backend) = load_mdp_with_backend(&mdp)?;
            let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
            let solve: SolveReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let sub = suboptimality(&lin.base, &solve.policy, &Start::Default)
                .map_err(|e| e.to_string())?;
            let mut doc = serde_json::json!({ "suboptimality": sub });
            if let Some(prefix) = data {
                let (ds, _) = load_dataset(&prefix).map_err(|e| e.to_string())?;
                let cfg = SolverConfig::default();
                let cov = coverage_coefficient(&lin.base, &ds, &backend, &cfg, true, 0, 0)
                    .map_err(|e| e.to_string())?;
                doc["coverage"] = serde_json::to_value(&cov).unwrap();
            }
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { timing } => {
            let config_path = cli.config.as_ref().ok_or("sweep needs --config")?;
            let text = fs::read_to_string(config_path).map_err(|e| e.to_string())?;
            let cfg = SweepConfig::parse(&text).map_err(|e| e.to_string())?;
            let master = if cli.seed != 0 { cli.seed } else { cfg.master_seed };
            let outcome = run_sweep(&cfg, master, cli.jobs, timing);
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            let csv_path = out_dir.join("results.csv");
            fs::write(&csv_path, &outcome.csv).map_err(|e| e.to_string())?;
            eprintln!("results written to {}", csv_path.display());
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for (cell, err) in &outcome.failures {
                    eprintln!("cell {cell} failed: {err}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Command::Plot { csv, axis } => {
            let text = fs::read_to_string(&csv).map_err(|e| e.to_string())?;
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            let mut wrote = Vec::new();
            if axis == "n" || axis == "both" {
                let svg = render_chart(&text, XAxis::EpisodeCount).map_err(|e| e.to_string())?;
                let p = out_dir.join("subopt_vs_n.svg");
                fs::write(&p, svg).map_err(|e| e.to_string())?;
                wrote.push(p);
            }
            if axis == "zeta" || axis == "both" {
                let svg =
                    render_chart(&text, XAxis::CorruptionBudget).map_err(|e| e.to_string())?;
                let p = out_dir.join("subopt_vs_zeta.svg");
                fs::write(&p, svg).map_err(|e| e.to_string())?;
                wrote.push(p);
            }
            if wrote.is_empty() {
                return Err(format!("unknown axis '{axis}' (n | zeta | both)"));
            }
            for p in wrote {
                eprintln!("chart written to {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("registered algorithms: {}", algorithm_names().join(", "));
            ExitCode::FAILURE
        }
    }
}
