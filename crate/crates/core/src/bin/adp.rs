use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adp_core::error::AdpError;
use adp_core::experiments::{run_experiment, ExperimentConfig, Pairing};
use adp_core::finite_oracle::run_property_suite;
use adp_core::lp_builder::LpProblem;
use adp_core::lp_solver::{solve_lp, SolverSettings};

/// Learns q-functions for stochastic control problems from sampled linear programs.
#[derive(Parser)]
#[command(name = "adp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed two-state LTI system, constraint-count sweep.
    Exp1(ExpArgs),
    /// Random LTI systems of growing state dimension.
    Exp2(ExpArgs),
    /// Cart-pole swing stabilisation against the LQR baseline.
    Exp3(ExpArgs),
    /// Checks the operator properties on random finite MDPs.
    VerifyOperators {
        #[arg(long, default_value_t = 100)]
        mdps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solves an LP stored in the text exchange format.
    Solve {
        #[arg(long)]
        lp: PathBuf,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// JSON file overriding the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constraint count or comma-separated sweep, e.g. `1000,5000`.
    #[arg(long, value_delimiter = ',')]
    constraints: Option<Vec<usize>>,
    /// Monte Carlo next-state draws per constraint.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    pairing: Option<Pairing>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave solve times blank so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
}

impl ExpArgs {
    fn config(&self, experiment: u8) -> Result<ExperimentConfig, AdpError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(experiment, path)?,
            None => ExperimentConfig::defaults(experiment)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.constraints {
            cfg.n_constraints = c.clone();
        }
        if let Some(m) = self.mc {
            cfg.mc_draws = m;
        }
        if let Some(r) = self.reps {
            cfg.repetitions = r;
        }
        if let Some(p) = self.pairing {
            cfg.pairing = p;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if self.no_timing {
            cfg.timing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Config(AdpError),
    Run(AdpError),
    Check,
}

fn run_exp(experiment: u8, args: &ExpArgs) -> Result<(), Failure> {
    let cfg = args.config(experiment).map_err(Failure::Config)?;
    let written = run_experiment(&cfg).map_err(Failure::Run)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Exp1(a) => run_exp(1, &a),
        Command::Exp2(a) => run_exp(2, &a),
        Command::Exp3(a) => run_exp(3, &a),
        Command::VerifyOperators { mdps, seed, out } => {
            if mdps == 0 {
                return Err(Failure::Config(AdpError::Config("--mdps must be positive".into())));
            }
            let report = run_property_suite(mdps, seed).map_err(Failure::Run)?;
            report.write_text(io::stdout().lock()).map_err(Failure::Run)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.into()))?;
                let path = dir.join("operators.csv");
                let f = File::create(&path).map_err(|e| Failure::Run(e.into()))?;
                report.write_csv(f).map_err(Failure::Run)?;
                println!("wrote {}", path.display());
            }
            if report.all_passed() {
                Ok(())
            } else {
                Err(Failure::Check)
            }
        }
        Command::Solve { lp } => {
            let f = File::open(&lp).map_err(|e| {
                Failure::Config(AdpError::Config(format!("cannot read {}: {e}", lp.display())))
            })?;
            let problem = LpProblem::parse_text(BufReader::new(f)).map_err(Failure::Config)?;
            let sol = solve_lp(&problem, &SolverSettings::default());
            let mut out = io::stdout().lock();
            let mut emit = || -> io::Result<()> {
                writeln!(out, "status {}", sol.status)?;
                writeln!(out, "iterations {}", sol.iterations)?;
                if let Some(theta) = sol.theta.as_ref().filter(|_| sol.is_optimal()) {
                    writeln!(out, "objective {:e}", sol.objective)?;
                    for (i, v) in theta.iter().enumerate() {
                        writeln!(out, "x{i} {v:e}")?;
                    }
                }
                if let Some(d) = &sol.diagnostic {
                    writeln!(out, "note {d}")?;
                }
                Ok(())
            };
            emit().map_err(|e| Failure::Run(e.into()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("adp: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("adp: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check) => ExitCode::from(1),
    }
}
