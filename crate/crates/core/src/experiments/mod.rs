//! Reproduction of the three benchmark studies.
//!
//! * Experiment 1 sweeps the number of sampled constraints on a fixed
//!   two-state plant and compares both programs against the Riccati solution.
//! * Experiment 2 repeats the comparison on random sparse plants with
//!   `n_x = 2, …, 10` states.
//! * Experiment 3 learns cart-pole controllers from data and compares their
//!   closed-loop cost with the LQR of the linearised plant.
//!
//! The optimality gap is `‖Q − Q*‖_F / ‖Q*‖_F` on the quadratic kernel; the
//! constant offset is reported separately as `e_error`.

mod config;
mod rollout;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    truncation_horizon, BoxSpec, CartPoleSpec, ExperimentConfig, MatrixSpec, Pairing, SystemSpec,
    EXP2_INPUT_DIM, MAX_DIM,
};
pub use rollout::{rollout_cost, RolloutSummary, Trajectory, DIVERGENCE_NORM};

use crate::dynamics::{random_lti, LtiSystem, Plant};
use crate::error::{AdpError, Result};
use crate::lp_builder::{build_lp, build_rlp, LpProblem, ObjectiveMoments};
use crate::lp_solver::{solve_lp, LpStatus, SolverSettings};
use crate::lq_oracle::{linearize_cartpole, lqr, RiccatiSolution};
use crate::qbasis::{LinearPolicy, QuadraticQ};
use crate::sampling::{sample_dataset, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Lp,
    Rlp,
    Lqr,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lp => "LP",
            Method::Rlp => "RLP",
            Method::Lqr => "LQR",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub run: usize,
    pub n_constraints: usize,
    pub n_x: usize,
    pub gap: Option<f64>,
    /// `|e − e_target|` with target `e* + Δe` for the relaxed program and
    /// `e*` for the classical one.
    pub e_error: Option<f64>,
    pub solve_time_s: f64,
    /// Solver status, or `non_extractable` when the learned `Q_uu` is not PD.
    pub status: String,
    pub gain: Option<DMatrix<f64>>,
    pub e: Option<f64>,
    pub n_vars: usize,
    pub n_rows: usize,
}

/// `‖Q − Q*‖_F / ‖Q*‖_F`; the offset `e` is ignored.
pub fn optimality_gap(q: &QuadraticQ, truth: &RiccatiSolution) -> Result<f64> {
    let qs = &truth.qstar;
    if q.qmat.shape() != qs.shape() {
        return Err(AdpError::dim("optimality gap kernel", qs.nrows(), q.qmat.nrows()));
    }
    Ok((&q.qmat - qs).norm() / qs.norm())
}

/// Per-run seed: stream `index` of the master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// A solved program together with its decoded q-function.
#[derive(Debug, Clone)]
pub struct LearnedQ {
    pub method: Method,
    pub status: LpStatus,
    pub q: Option<QuadraticQ>,
    pub solve_time_s: f64,
    pub n_vars: usize,
    pub n_rows: usize,
    pub diagnostic: Option<String>,
}

impl LearnedQ {
    pub fn policy(&self) -> Option<LinearPolicy> {
        self.q.as_ref().and_then(|q| q.extract_policy().ok())
    }
}

/// Builds the requested program from `data` and solves it.
pub fn learn_q(
    method: Method,
    data: &Dataset,
    gamma: f64,
    moments: &ObjectiveMoments,
    settings: &SolverSettings,
) -> Result<LearnedQ> {
    let problem: LpProblem = match method {
        Method::Rlp => build_rlp(data, gamma, moments)?,
        Method::Lp => build_lp(data, gamma, moments)?,
        Method::Lqr => {
            return Err(AdpError::InvalidArgument("LQR is not learned from data".into()));
        }
    };
    let sol = solve_lp(&problem, settings);
    let q = match (&sol.theta, &problem.layout) {
        (Some(theta), Some(layout)) => Some(layout.decode(theta)?.0),
        _ => None,
    };
    Ok(LearnedQ {
        method,
        status: sol.status,
        q,
        solve_time_s: sol.solve_time.as_secs_f64(),
        n_vars: problem.n_vars(),
        n_rows: problem.n_rows(),
        diagnostic: sol.diagnostic,
    })
}

fn record(learned: &LearnedQ, run: usize, n_constraints: usize, truth: &RiccatiSolution) -> Result<RunRecord> {
    let (gap, e, e_error, gain, status) = match &learned.q {
        Some(q) => {
            let target = match learned.method {
                Method::Rlp => truth.e_star + truth.delta_e,
                _ => truth.e_star,
            };
            let policy = q.extract_policy();
            let status = if policy.is_ok() {
                learned.status.as_str().to_string()
            } else {
                "non_extractable".to_string()
            };
            (
                Some(optimality_gap(q, truth)?),
                Some(q.e),
                Some((q.e - target).abs()),
                policy.ok().map(|p| p.k),
                status,
            )
        }
        None => (None, None, None, None, learned.status.as_str().to_string()),
    };
    Ok(RunRecord {
        method: learned.method,
        run,
        n_constraints,
        n_x: truth.n_x,
        gap,
        e_error,
        solve_time_s: learned.solve_time_s,
        status,
        gain,
        e,
        n_vars: learned.n_vars,
        n_rows: learned.n_rows,
    })
}

/// Dataset each method sees for a nominal constraint count `n`.
fn program_data(data: &Dataset, method: Method, n: usize, pairing: Pairing) -> Result<Dataset> {
    let n_samples = match (method, pairing) {
        (Method::Lp, Pairing::EqualRows) => (n / 2).max(1),
        _ => n,
    };
    data.prefix(n_samples)
}

fn compare_programs(
    cfg: &ExperimentConfig,
    data: &Dataset,
    moments: &ObjectiveMoments,
    truth: &RiccatiSolution,
    run: usize,
    n: usize,
) -> Result<Vec<RunRecord>> {
    let settings = SolverSettings::default();
    let mut out = Vec::with_capacity(2);
    for method in [Method::Lp, Method::Rlp] {
        let d = program_data(data, method, n, cfg.pairing)?;
        let learned = learn_q(method, &d, cfg.gamma, moments, &settings)?;
        out.push(record(&learned, run, n, truth)?);
    }
    Ok(out)
}

fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (a.n_x, a.run, a.n_constraints, a.method).cmp(&(b.n_x, b.run, b.n_constraints, b.method))
    });
}

/// Constraint-count sweep on the fixed plant. Each repetition draws one
/// dataset of the largest size; smaller counts use its prefixes.
pub fn run_exp1(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let (a, b) = cfg
        .system
        .as_ref()
        .ok_or_else(|| AdpError::Config("experiment 1 needs `system`".into()))?
        .matrices()?;
    let (n_x, n_u) = (a.nrows(), b.ncols());
    let cost = cfg.stage_cost_for(n_x, n_u)?;
    let moments = cfg.objective_for(n_x, n_u)?;
    let sys = LtiSystem::new(a, b, cfg.noise_for(n_x)?)?;
    let truth = lqr(&sys, &cost, cfg.gamma)?;
    let plant = Plant::new(sys, cost)?;
    let state_dist = cfg.state_dist.resolve(n_x)?;
    let input_dist = cfg.input_dist.resolve(n_u)?;
    let n_max = *cfg.n_constraints.iter().max().expect("validated nonempty");

    let mut records = Vec::new();
    for run in 0..cfg.repetitions {
        let seed = derive_seed(cfg.seed, run as u64);
        let data = sample_dataset(&plant, &state_dist, &input_dist, n_max, cfg.mc_draws, seed)?;
        for &n in &cfg.n_constraints {
            records.extend(compare_programs(cfg, &data, &moments, &truth, run, n)?);
        }
    }
    sort_records(&mut records);
    Ok(records)
}

/// Random sparse plants of growing state dimension, largest constraint count.
pub fn run_exp2(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let n = *cfg.n_constraints.iter().max().expect("validated nonempty");
    let mut records = Vec::new();
    for (n_x, n_u) in cfg.dims()? {
        let cost = cfg.stage_cost_for(n_x, n_u)?;
        let moments = cfg.objective_for(n_x, n_u)?;
        let noise = cfg.noise_for(n_x)?;
        let state_dist = cfg.state_dist.resolve(n_x)?;
        let input_dist = cfg.input_dist.resolve(n_u)?;
        for run in 0..cfg.repetitions {
            let key = ((n_x as u64) << 32) | ((run as u64) << 1);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, key));
            let sys = random_lti(n_x, noise.clone(), cfg.gamma, &mut rng)?;
            let truth = lqr(&sys, &cost, cfg.gamma)?;
            let plant = Plant::new(sys, cost.clone())?;
            let seed = derive_seed(cfg.seed, key | 1);
            let data = sample_dataset(&plant, &state_dist, &input_dist, n, cfg.mc_draws, seed)?;
            records.extend(compare_programs(cfg, &data, &moments, &truth, run, n)?);
        }
    }
    sort_records(&mut records);
    Ok(records)
}

/// Closed-loop evaluation of one cart-pole controller.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub method: Method,
    /// Status of the program, or of the policy extraction.
    pub status: String,
    pub gain: Option<DMatrix<f64>>,
    pub rollouts: Option<RolloutSummary>,
    pub solve_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Exp3Output {
    pub evaluations: Vec<PolicyEvaluation>,
    /// Records of the learned programs, gaps measured against the LQR of the
    /// linearised plant.
    pub records: Vec<RunRecord>,
    pub horizon: usize,
}

/// Cart-pole: LP and RLP controllers from sampled data plus the linearised LQR.
pub fn run_exp3(cfg: &ExperimentConfig) -> Result<Exp3Output> {
    cfg.validate()?;
    if cfg.repetitions != 1 {
        return Err(AdpError::Config("experiment 3 runs a single repetition".into()));
    }
    let (n_x, n_u) = (4, 1);
    let cost = cfg.stage_cost_for(n_x, n_u)?;
    let moments = cfg.objective_for(n_x, n_u)?;
    let cart = cfg.cartpole.expect("validated").build(cfg.noise_for(n_x)?)?;
    let state_dist = cfg.state_dist.resolve(n_x)?;
    let input_dist = cfg.input_dist.resolve(n_u)?;
    let init = cfg.initial_dist.as_ref().expect("validated").resolve(n_x)?;
    let horizon = cfg.rollout_horizon();
    let n = *cfg.n_constraints.iter().max().expect("validated nonempty");

    let t0 = Instant::now();
    let linear = linearize_cartpole(&cart);
    let truth = lqr(&linear, &cost, cfg.gamma)?;
    let lqr_time = t0.elapsed().as_secs_f64();
    let plant = Plant::new(cart, cost)?;
    let data = sample_dataset(&plant, &state_dist, &input_dist, n, cfg.mc_draws, derive_seed(cfg.seed, 0))?;
    let rollout_seed = derive_seed(cfg.seed, 1);

    let settings = SolverSettings::default();
    let mut evaluations = Vec::new();
    let mut records = Vec::new();
    for method in [Method::Lp, Method::Rlp] {
        let d = program_data(&data, method, n, cfg.pairing)?;
        let learned = learn_q(method, &d, cfg.gamma, &moments, &settings)?;
        let rec = record(&learned, 0, n, &truth)?;
        let policy = learned.policy();
        let rollouts = match &policy {
            Some(p) => Some(rollout_cost(&plant, p, &init, cfg.gamma, horizon, cfg.n_rollouts, rollout_seed)?),
            None => None,
        };
        evaluations.push(PolicyEvaluation {
            method,
            status: rec.status.clone(),
            gain: policy.map(|p| p.k),
            rollouts,
            solve_time_s: learned.solve_time_s,
        });
        records.push(rec);
    }
    let policy = truth.policy();
    let rollouts = rollout_cost(&plant, &policy, &init, cfg.gamma, horizon, cfg.n_rollouts, rollout_seed)?;
    evaluations.push(PolicyEvaluation {
        method: Method::Lqr,
        status: LpStatus::Optimal.as_str().to_string(),
        gain: Some(policy.k),
        rollouts: Some(rollouts),
        solve_time_s: lqr_time,
    });
    Ok(Exp3Output {
        evaluations,
        records,
        horizon,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn time_field(t: f64, timing: bool) -> String {
    if timing {
        t.to_string()
    } else {
        String::new()
    }
}

/// Writes `exp1.csv` (`size_column = "n_constraints"`) or `exp2.csv` (`"n_x"`).
pub fn write_records_csv<W: Write>(w: W, records: &[RunRecord], size_column: &str, timing: bool) -> Result<()> {
    let by_nx = match size_column {
        "n_constraints" => false,
        "n_x" => true,
        other => return Err(AdpError::InvalidArgument(format!("unknown size column {other}"))),
    };
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "run", size_column, "gap", "e_error", "solve_time_s", "status"])?;
    for r in records {
        let size = if by_nx { r.n_x } else { r.n_constraints };
        wr.write_record([
            r.method.as_str().to_string(),
            r.run.to_string(),
            size.to_string(),
            opt(r.gap),
            opt(r.e_error),
            time_field(r.solve_time_s, timing),
            r.status.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_exp3_summary<W: Write>(w: W, out: &Exp3Output, timing: bool) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "mean_cost", "std_err", "n_diverged", "solve_time_s"])?;
    for ev in &out.evaluations {
        let (mean, se, nd) = match &ev.rollouts {
            Some(r) => (r.mean_cost.to_string(), r.std_err.to_string(), r.n_diverged.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        wr.write_record([
            ev.method.as_str().to_string(),
            mean,
            se,
            nd,
            time_field(ev.solve_time_s, timing),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_exp3_trajectories<W: Write>(w: W, out: &Exp3Output) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "rollout", "t", "p", "pdot", "theta", "thetadot", "u"])?;
    for ev in &out.evaluations {
        let Some(r) = &ev.rollouts else { continue };
        for (k, traj) in r.trajectories.iter().enumerate() {
            for (t, x) in traj.states.iter().enumerate() {
                let u = traj.inputs.get(t).map(|u| u[0].to_string()).unwrap_or_default();
                wr.write_record([
                    ev.method.as_str().to_string(),
                    k.to_string(),
                    t.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    x[2].to_string(),
                    x[3].to_string(),
                    u,
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    config: &'a ExperimentConfig,
    gap_metric: &'static str,
    e_error_target: &'static str,
    rollout_horizon: Option<usize>,
    version: &'static str,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs the configured experiment and writes its CSV files plus a
/// `expN_meta.json` with the resolved configuration; returns the paths.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    let mut written = Vec::new();
    let mut horizon = None;
    match cfg.experiment {
        1 | 2 => {
            let (records, name, col) = if cfg.experiment == 1 {
                (run_exp1(cfg)?, "exp1.csv", "n_constraints")
            } else {
                (run_exp2(cfg)?, "exp2.csv", "n_x")
            };
            let path = dir.join(name);
            write_records_csv(create(&path)?, &records, col, cfg.timing)?;
            written.push(path);
        }
        3 => {
            let out = run_exp3(cfg)?;
            horizon = Some(out.horizon);
            let summary = dir.join("exp3_summary.csv");
            write_exp3_summary(create(&summary)?, &out, cfg.timing)?;
            let traj = dir.join("exp3_traj.csv");
            write_exp3_trajectories(create(&traj)?, &out)?;
            written.extend([summary, traj]);
        }
        other => return Err(AdpError::Config(format!("unknown experiment {other}"))),
    }
    let meta = Metadata {
        config: cfg,
        gap_metric: "relative Frobenius error of the quadratic kernel, offset excluded",
        e_error_target: "e* + delta_e for RLP, e* for LP",
        rollout_horizon: horizon,
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = dir.join(format!("exp{}_meta.json", cfg.experiment));
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    f.flush()?;
    written.push(path);
    Ok(written)
}
