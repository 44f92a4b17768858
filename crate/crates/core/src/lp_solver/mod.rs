//! Dense LP solver for `maximize cᵀθ s.t. Gθ ≤ h` with free θ.
//!
//! Homogeneous self-dual interior-point method with Mehrotra
//! predictor-corrector steps. The embedding yields either an optimal
//! primal-dual pair or a certificate: a ray `d` with `Gd ≤ 0, cᵀd > 0`
//! (unbounded) or multipliers `y ≥ 0` with `Gᵀy = 0, hᵀy < 0` (infeasible).
//! Newton systems are reduced to `n_vars × n_vars` normal equations, so a
//! tall dense problem costs `O(n_rows · n_vars²)` per iteration.

mod equilibrate;
mod hsde;

use std::time::{Duration, Instant};

use crate::lp_builder::LpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Bound on `‖θ‖∞` past which a still dual-infeasible iterate is taken
    /// as evidence of unboundedness.
    pub divergence_threshold: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            divergence_threshold: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationLimit,
}

impl LpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Unbounded => "unbounded",
            LpStatus::Infeasible => "infeasible",
            LpStatus::IterationLimit => "iteration_limit",
        }
    }
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal solution, present iff `Optimal`.
    pub theta: Option<Vec<f64>>,
    /// `cᵀθ` when optimal, `+∞` when unbounded, `−∞` when infeasible, NaN otherwise.
    pub objective: f64,
    /// Multipliers `y ≥ 0` with `Gᵀy = c`, present iff `Optimal`.
    pub duals: Option<Vec<f64>>,
    /// Improving ray, normalised to `‖d‖∞ = 1`, present iff `Unbounded`.
    pub ray: Option<Vec<f64>>,
    /// Farkas multipliers, present iff `Infeasible`.
    pub farkas: Option<Vec<f64>>,
    pub iterations: usize,
    pub solve_time: Duration,
    pub diagnostic: Option<String>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Optimality residuals of a candidate primal-dual pair on the original data.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `max(Gθ − h)⁺ / (1 + ‖h‖∞)`.
    pub primal: f64,
    /// `‖Gᵀy − c‖∞ / (1 + ‖c‖∞)`.
    pub dual: f64,
    /// `max(−y)⁺`.
    pub dual_sign: f64,
    /// `|cᵀθ − hᵀy| / (1 + |cᵀθ|)`.
    pub gap: f64,
    /// `yᵀ(h − Gθ) / (1 + |cᵀθ|)`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn compute(p: &LpProblem, theta: &[f64], y: &[f64]) -> KktResiduals {
        let (m, n) = p.g.shape();
        let mut slack = p.h.clone();
        for j in 0..n {
            let t = theta[j];
            for (i, s) in slack.iter_mut().enumerate() {
                *s -= p.g[(i, j)] * t;
            }
        }
        let h_norm = equilibrate::inf_norm(&p.h);
        let c_norm = equilibrate::inf_norm(&p.objective);
        let primal = slack.iter().fold(0.0f64, |a, s| a.max(-s)) / (1.0 + h_norm);
        let mut dual = 0.0f64;
        for j in 0..n {
            let mut acc = -p.objective[j];
            for i in 0..m {
                acc += p.g[(i, j)] * y[i];
            }
            dual = dual.max(acc.abs());
        }
        let dual = dual / (1.0 + c_norm);
        let dual_sign = y.iter().fold(0.0f64, |a, v| a.max(-v));
        let pobj: f64 = p.objective.iter().zip(theta).map(|(c, t)| c * t).sum();
        let dobj: f64 = p.h.iter().zip(y).map(|(h, v)| h * v).sum();
        let compl: f64 = slack.iter().zip(y).map(|(s, v)| s * v).sum();
        KktResiduals {
            primal,
            dual,
            dual_sign,
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
            complementarity: compl.abs() / (1.0 + pobj.abs()),
        }
    }

    pub fn satisfied(&self, s: &SolverSettings) -> bool {
        self.primal <= s.feas_tol
            && self.dual <= s.feas_tol
            && self.dual_sign <= s.feas_tol
            && self.gap <= s.gap_tol
            && self.complementarity <= s.gap_tol
    }
}

/// Solves `maximize cᵀθ s.t. Gθ ≤ h`.
pub fn solve_lp(p: &LpProblem, settings: &SolverSettings) -> LpSolution {
    let start = Instant::now();
    let finite = p.objective.iter().chain(p.h.iter()).chain(p.g.iter()).all(|v| v.is_finite());
    let mut sol = if !finite {
        LpSolution {
            status: LpStatus::IterationLimit,
            theta: None,
            objective: f64::NAN,
            duals: None,
            ray: None,
            farkas: None,
            iterations: 0,
            solve_time: Duration::ZERO,
            diagnostic: Some("non-finite problem data".into()),
        }
    } else {
        hsde::solve(p, settings)
    };
    sol.solve_time = start.elapsed();
    sol
}
