//! Exact Bellman and relaxed Bellman operators on finite MDPs.
//!
//! With tabular `q` both operators can be evaluated exactly:
//!
//! ```text
//! (F q)[s,a] = ℓ[s,a] + γ Σ_{s'} P[s,a,s'] min_b q[s',b]
//! (F̂ q)[s,a] = ℓ[s,a] + γ min_b Σ_{s'} P[s,a,s'] q[s',b]
//! ```
//!
//! [`run_property_suite`] checks monotonicity, contraction, the ordering
//! `F q ≤ F̂ q` and the resulting ordering of fixed points on random MDPs.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{AdpError, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FiniteMdp {
    n_s: usize,
    n_a: usize,
    cost: DMatrix<f64>,
    /// `P[s,a,s']` at `(s * n_a + a) * n_s + s'`.
    trans: Vec<f64>,
    gamma: f64,
}

impl FiniteMdp {
    /// `cost` is `n_s × n_a`; `trans` is flattened `[s][a][s']`.
    pub fn new(cost: DMatrix<f64>, trans: Vec<f64>, gamma: f64) -> Result<Self> {
        let (n_s, n_a) = cost.shape();
        if n_s == 0 || n_a == 0 {
            return Err(AdpError::InvalidArgument("MDP needs at least one state and action".into()));
        }
        if trans.len() != n_s * n_a * n_s {
            return Err(AdpError::dim("transition tensor", n_s * n_a * n_s, trans.len()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(AdpError::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(AdpError::InvalidArgument("costs must be finite and nonnegative".into()));
        }
        for (k, row) in trans.chunks(n_s).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(AdpError::InvalidArgument(format!("negative probability in row {k}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(AdpError::InvalidArgument(format!("row {k} sums to {total}")));
            }
        }
        Ok(FiniteMdp {
            n_s,
            n_a,
            cost,
            trans,
            gamma,
        })
    }

    /// Dirichlet(1, …, 1) transition rows and `U[0, 1]` costs.
    pub fn random<R: Rng + ?Sized>(n_s: usize, n_a: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let cost = DMatrix::from_fn(n_s, n_a, |_, _| rng.random::<f64>());
        let mut trans = Vec::with_capacity(n_s * n_a * n_s);
        for _ in 0..n_s * n_a {
            let row: Vec<f64> = (0..n_s).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = row.iter().sum();
            trans.extend(row.iter().map(|v| v / total));
        }
        // renormalise so the row sum is exact to rounding
        for row in trans.chunks_mut(n_s.max(1)) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        FiniteMdp::new(cost, trans, gamma)
    }

    /// One-hot transitions: `(s, a)` moves to `next[s * n_a + a]`.
    pub fn deterministic(cost: DMatrix<f64>, next: &[usize], gamma: f64) -> Result<Self> {
        let (n_s, n_a) = cost.shape();
        if next.len() != n_s * n_a {
            return Err(AdpError::dim("successor table", n_s * n_a, next.len()));
        }
        let mut trans = vec![0.0; n_s * n_a * n_s];
        for (k, &sp) in next.iter().enumerate() {
            if sp >= n_s {
                return Err(AdpError::InvalidArgument(format!("successor {sp} out of range")));
            }
            trans[k * n_s + sp] = 1.0;
        }
        FiniteMdp::new(cost, trans, gamma)
    }

    pub fn random_deterministic<R: Rng + ?Sized>(
        n_s: usize,
        n_a: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let cost = DMatrix::from_fn(n_s, n_a, |_, _| rng.random::<f64>());
        let next: Vec<usize> = (0..n_s * n_a).map(|_| rng.random_range(0..n_s)).collect();
        FiniteMdp::deterministic(cost, &next, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_s
    }

    pub fn n_actions(&self) -> usize {
        self.n_a
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    /// `P[s, a, ·]`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_a + a) * self.n_s;
        &self.trans[k..k + self.n_s]
    }

    fn check(&self, q: &QTable) -> Result<()> {
        if q.q.shape() != (self.n_s, self.n_a) {
            return Err(AdpError::InvalidArgument(format!(
                "q table is {:?}, MDP is {}x{}",
                q.q.shape(),
                self.n_s,
                self.n_a
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: DMatrix<f64>,
}

impl QTable {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::InvalidArgument("q table has non-finite entries".into()));
        }
        Ok(QTable { q })
    }

    pub fn constant(n_s: usize, n_a: usize, v: f64) -> Self {
        QTable {
            q: DMatrix::from_element(n_s, n_a, v),
        }
    }

    pub fn zeros(n_s: usize, n_a: usize) -> Self {
        QTable::constant(n_s, n_a, 0.0)
    }

    pub fn random<R: Rng + ?Sized>(n_s: usize, n_a: usize, scale: f64, rng: &mut R) -> Self {
        QTable {
            q: DMatrix::from_fn(n_s, n_a, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0)),
        }
    }

    /// `‖self − other‖∞`.
    pub fn dist(&self, other: &QTable) -> f64 {
        (&self.q - &other.q).amax()
    }

    /// Largest `self − other`; nonpositive iff `self ≤ other` elementwise.
    pub fn max_excess(&self, other: &QTable) -> f64 {
        (&self.q - &other.q).max()
    }

    /// First minimising action in each state.
    pub fn greedy(&self) -> Vec<usize> {
        self.q
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for (a, v) in r.iter().enumerate() {
                    if *v < r[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    fn state_min(&self) -> Vec<f64> {
        self.q.row_iter().map(|r| r.min()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Bellman,
    Relaxed,
}

impl Operator {
    pub fn apply(&self, m: &FiniteMdp, q: &QTable) -> Result<QTable> {
        match self {
            Operator::Bellman => op_f(m, q),
            Operator::Relaxed => op_f_hat(m, q),
        }
    }
}

/// Bellman operator: minimise at the successor, then average.
pub fn op_f(m: &FiniteMdp, q: &QTable) -> Result<QTable> {
    m.check(q)?;
    let vmin = q.state_min();
    let out = DMatrix::from_fn(m.n_s, m.n_a, |s, a| {
        let ev: f64 = m.row(s, a).iter().zip(&vmin).map(|(p, v)| p * v).sum();
        m.cost[(s, a)] + m.gamma * ev
    });
    Ok(QTable { q: out })
}

/// Relaxed operator: average, then minimise over a single action for all successors.
pub fn op_f_hat(m: &FiniteMdp, q: &QTable) -> Result<QTable> {
    m.check(q)?;
    let out = DMatrix::from_fn(m.n_s, m.n_a, |s, a| {
        let row = m.row(s, a);
        let best = (0..m.n_a)
            .map(|b| row.iter().enumerate().map(|(sp, p)| p * q.q[(sp, b)]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        m.cost[(s, a)] + m.gamma * best
    });
    Ok(QTable { q: out })
}

/// Value iteration until `‖Δq‖∞ ≤ tol (1−γ)/γ`, which bounds the distance
/// to the fixed point by `tol`.
pub fn fixed_point(
    m: &FiniteMdp,
    op: Operator,
    q0: &QTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    m.check(q0)?;
    if !(tol > 0.0) {
        return Err(AdpError::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let stop = if m.gamma > 0.0 {
        tol * (1.0 - m.gamma) / m.gamma
    } else {
        f64::INFINITY
    };
    let mut q = q0.clone();
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let next = op.apply(m, &q)?;
        change = next.dist(&q);
        q = next;
        if change <= stop {
            return Ok(q);
        }
    }
    Err(AdpError::Divergence {
        iterations: max_iter,
        last_change: change,
    })
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
}

impl PropertyCheck {
    fn new(name: &'static str, bound: f64) -> Self {
        PropertyCheck {
            name,
            instances: 0,
            failures: 0,
            worst: f64::NEG_INFINITY,
            bound,
        }
    }

    fn record(&mut self, value: f64) {
        self.instances += 1;
        self.worst = self.worst.max(value);
        if !(value <= self.bound) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    /// Fraction of states where the greedy actions of both fixed points agree.
    pub greedy_agreement: f64,
    pub n_mdps: usize,
    pub seed: u64,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(PropertyCheck::passed)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "operator property suite: {} MDPs, seed {}", self.n_mdps, self.seed)?;
        for c in &self.checks {
            writeln!(
                w,
                "{} {:<28} instances={:<6} worst={:.3e} bound={:.1e}",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.instances,
                c.worst,
                c.bound
            )?;
        }
        writeln!(w, "INFO greedy agreement rate {:.4} (not asserted)", self.greedy_agreement)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["property", "instances", "failures", "worst", "bound", "status"])?;
        for c in &self.checks {
            wr.write_record([
                c.name.to_string(),
                c.instances.to_string(),
                c.failures.to_string(),
                format!("{:e}", c.worst),
                format!("{:e}", c.bound),
                if c.passed() { "pass" } else { "fail" }.to_string(),
            ])?;
        }
        wr.write_record([
            "greedy_agreement".to_string(),
            self.n_mdps.to_string(),
            String::new(),
            format!("{}", self.greedy_agreement),
            String::new(),
            "info".to_string(),
        ])?;
        wr.flush()?;
        Ok(())
    }
}

/// Random pair `q₁ ≤ q₂`.
fn ordered_pair<R: Rng + ?Sized>(n_s: usize, n_a: usize, rng: &mut R) -> (QTable, QTable) {
    let q1 = QTable::random(n_s, n_a, 10.0, rng);
    let bump = DMatrix::from_fn(n_s, n_a, |_, _| 5.0 * rng.random::<f64>());
    let q2 = QTable { q: &q1.q + bump };
    (q1, q2)
}

/// Exhaustive operator checks on `n_mdps` random MDPs.
pub fn run_property_suite(n_mdps: usize, seed: u64) -> Result<PropertyReport> {
    const PAIRS: usize = 100;
    let tol = DEFAULT_TOL;
    let mut mono = PropertyCheck::new("monotonicity", 1e-12);
    let mut contraction = PropertyCheck::new("contraction_ratio_minus_gamma", 1e-12);
    let mut ordering = PropertyCheck::new("bellman_le_relaxed", 1e-12);
    let mut fixed_order = PropertyCheck::new("qstar_le_qhat", 1e-10);
    let mut unique = PropertyCheck::new("fixed_point_uniqueness", 2.0 * tol);
    let mut collapse = PropertyCheck::new("deterministic_collapse", 2.0 * tol);
    let mut single = PropertyCheck::new("single_action_collapse", 1e-12);
    let mut agree = 0usize;
    let mut states = 0usize;

    for k in 0..n_mdps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let n_s = rng.random_range(2..=8);
        let n_a = rng.random_range(2..=4);
        let gamma = rng.random_range(0.5..0.95);
        let m = FiniteMdp::random(n_s, n_a, gamma, &mut rng)?;

        for op in [Operator::Bellman, Operator::Relaxed] {
            for _ in 0..PAIRS {
                let (q1, q2) = ordered_pair(n_s, n_a, &mut rng);
                let f1 = op.apply(&m, &q1)?;
                let f2 = op.apply(&m, &q2)?;
                mono.record(f1.max_excess(&f2));
                let d = q1.dist(&q2);
                let q3 = QTable::random(n_s, n_a, 10.0, &mut rng);
                let d13 = q1.dist(&q3);
                if d13 > 0.0 {
                    let f3 = op.apply(&m, &q3)?;
                    contraction.record(f1.dist(&f3) / d13 - gamma);
                }
                if d > 0.0 {
                    contraction.record(f1.dist(&f2) / d - gamma);
                }
            }
        }
        for _ in 0..PAIRS {
            let q = QTable::random(n_s, n_a, 10.0, &mut rng);
            ordering.record(op_f(&m, &q)?.max_excess(&op_f_hat(&m, &q)?));
        }

        let zero = QTable::zeros(n_s, n_a);
        let qstar = fixed_point(&m, Operator::Bellman, &zero, tol, DEFAULT_MAX_ITER)?;
        let qhat = fixed_point(&m, Operator::Relaxed, &zero, tol, DEFAULT_MAX_ITER)?;
        fixed_order.record(qstar.max_excess(&qhat));
        let high = QTable::constant(n_s, n_a, 1e6);
        for (op, base) in [(Operator::Bellman, &qstar), (Operator::Relaxed, &qhat)] {
            let from_high = fixed_point(&m, op, &high, tol, DEFAULT_MAX_ITER)?;
            unique.record(from_high.dist(base));
        }
        let g1 = qstar.greedy();
        let g2 = qhat.greedy();
        agree += g1.iter().zip(&g2).filter(|(a, b)| a == b).count();
        states += n_s;

        let det = FiniteMdp::random_deterministic(n_s, n_a, gamma, &mut rng)?;
        let a = fixed_point(&det, Operator::Bellman, &zero, tol, DEFAULT_MAX_ITER)?;
        let b = fixed_point(&det, Operator::Relaxed, &zero, tol, DEFAULT_MAX_ITER)?;
        collapse.record(a.dist(&b));

        let one = FiniteMdp::random(n_s, 1, gamma, &mut rng)?;
        let q = QTable::random(n_s, 1, 10.0, &mut rng);
        single.record(op_f(&one, &q)?.dist(&op_f_hat(&one, &q)?));
    }

    Ok(PropertyReport {
        checks: vec![mono, contraction, ordering, fixed_order, unique, collapse, single],
        greedy_agreement: if states > 0 {
            agree as f64 / states as f64
        } else {
            f64::NAN
        },
        n_mdps,
        seed,
    })
}
