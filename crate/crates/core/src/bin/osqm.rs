//! Command-line front end.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use osqm::config::parse_config;
use osqm::regress::{self, RegressOptions, Thresholds};
use osqm::scenario::{run_scenario, RunOptions, Scenario};
use osqm::transition::Backend;
use osqm::Error;

#[derive(Parser)]
#[command(name = "osqm", version, about = "Phase-space quantum mechanics with coarse-grained transitions")]
struct Cli {
    /// Base seed of the trajectory ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Keep a state snapshot every K steps.
    #[arg(long, global = true, value_name = "K")]
    snapshots: Option<usize>,
    /// Dynamics backend.
    #[arg(long, global = true)]
    backend: Option<Backend>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config.
    Run { config: PathBuf },
    /// Run the numbered regression criteria and write report.json.
    Regress {
        /// JSON file overriding pass thresholds.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Comma-separated criterion numbers.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        /// Trajectories per measurement ensemble.
        #[arg(long)]
        born_seeds: Option<usize>,
    },
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        kind: Sweep,
    },
}

#[derive(Subcommand)]
enum Sweep {
    /// Half-plane quasiprojector defect against hbar.
    Defect {
        /// Comma-separated hbar values.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.25, 0.0625])]
        hbar: Vec<f64>,
        /// Grid points per hbar value.
        #[arg(long, value_delimiter = ',', default_values_t = vec![20, 64, 256])]
        points: Vec<usize>,
    },
    /// Misprojection probability against projection interval.
    Zeno {
        /// Scenario with a zeno block; the double-well fixture by default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated projection intervals replacing the config's.
        #[arg(long, value_delimiter = ',')]
        dt: Vec<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn execute(cli: Cli) -> osqm::Result<u8> {
    let out = |default: &str| cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.command {
        Command::Run { ref config } => {
            let cfg = parse_config(config)?;
            let opts = RunOptions {
                seed: cli.seed,
                out_dir: cli.out_dir.clone(),
                snapshot_stride: cli.snapshots,
                backend: cli.backend,
            };
            let s = run_scenario(&cfg, &opts)?;
            println!("{}: {} trajectories", s.name, s.ensemble.runs);
            for (i, l) in s.ensemble.labels.iter().enumerate() {
                let (lo, hi) = s.ensemble.intervals[i];
                println!("  {l:<12} {:.4}  [{lo:.4}, {hi:.4}]", s.ensemble.frequencies[i]);
            }
            if let Some(e) = &s.expected {
                for (l, p) in e {
                    println!("  expected {l}: {p:.4}");
                }
            }
            if let Some(z) = &s.zeno {
                println!("  zeno slope {:?}", z.slope);
            }
            Ok(0)
        }
        Command::Regress { ref thresholds, ref only, born_seeds } => {
            let t: Thresholds = match thresholds {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?,
                None => Thresholds::default(),
            };
            let opts = RegressOptions { only: only.clone(), born_seeds, seed: cli.seed, backend: cli.backend };
            let dir = out("regress-out");
            let report = regress::run_regression(&t, &opts, &dir)?;
            for c in &report.criteria {
                println!("{}", c.line());
            }
            println!("report written to {}", dir.join("report.json").display());
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Sweep { kind: Sweep::Defect { ref hbar, ref points } } => {
            if hbar.len() != points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} hbar values but {} grid sizes",
                    hbar.len(),
                    points.len()
                )));
            }
            let cases: Vec<(f64, usize)> = hbar.iter().copied().zip(points.iter().copied()).collect();
            let sweep = regress::defect_sweep(&cases)?;
            let dir = out("sweep-defect");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("defect_sweep.csv"), regress::defect_csv(&sweep))?;
            osqm::io::write_json(&dir.join("defect_sweep.json"), &sweep)?;
            print!("{}", regress::defect_csv(&sweep));
            Ok(0)
        }
        Command::Sweep { kind: Sweep::Zeno { ref config, ref dt } } => {
            let mut cfg = match config {
                Some(p) => parse_config(p)?,
                None => osqm::config::parse_config_str(regress::ZENO_DOUBLE_WELL)?,
            };
            cfg = RunOptions { backend: cli.backend, ..Default::default() }.apply(&cfg);
            let Some(z) = cfg.zeno.as_mut() else {
                return Err(Error::Config(vec!["zeno: the sweep needs a zeno block".into()]));
            };
            if !dt.is_empty() {
                z.dt_proj = dt.clone();
            }
            let report = Scenario::build(&cfg)?.zeno()?.expect("zeno block");
            let dir = out("sweep-zeno");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("zeno.csv"), osqm::io::zeno_csv(&report))?;
            osqm::io::write_json(&dir.join("zeno.json"), &report)?;
            print!("{}", osqm::io::zeno_csv(&report));
            println!("slope {:?}, unmonitored survival {}", report.slope, report.unmonitored_survival);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
