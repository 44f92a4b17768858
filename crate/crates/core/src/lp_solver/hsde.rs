//! Homogeneous self-dual embedding for `min qᵀx s.t. Gx + s = h, s ≥ 0`.
//!
//! Residuals of an iterate `(x, y, s, τ, κ)`:
//!
//! ```text
//! r_x = Gᵀy + qτ
//! r_s = Gx + s − hτ
//! r_τ = κ + qᵀx + hᵀy
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::equilibrate::{inf_norm, Scaled};
use super::{KktResiduals, LpSolution, LpStatus, SolverSettings};
use crate::lp_builder::LpProblem;

const STEP_FRACTION: f64 = 0.99;
const CHUNK: usize = 2048;
const REFINE_STEPS: usize = 3;
/// Iterations without a 5% gain in the worst KKT residual before giving up.
const STALL_LIMIT: usize = 20;
/// Relative ray/certificate quality accepted on the unscaled data.
const CERT_TOL: f64 = 1e-6;

struct Scaling<'a> {
    gt: DMatrix<f64>,
    h: DVector<f64>,
    q: DVector<f64>,
    sc: &'a Scaled,
}

impl Scaling<'_> {
    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gt.tr_mul(x)
    }

    fn gt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gt * y
    }

    fn normal_matrix(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = self.gt.shape();
        let mut nm = DMatrix::<f64>::zeros(n, n);
        let mut start = 0;
        while start < m {
            let cols = CHUNK.min(m - start);
            let mut b = self.gt.columns(start, cols).clone_owned();
            for k in 0..cols {
                let w = d[start + k].sqrt();
                b.column_mut(k).scale_mut(w);
            }
            let bt = b.transpose();
            nm.gemm(1.0, &b, &bt, 1.0);
            start += cols;
        }
        nm
    }
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
}

impl Factor {
    /// Cholesky of `N + diag(δ_i)` with `δ_i` proportional to `N_ii`,
    /// growing until the factorisation succeeds.
    fn new(nm: DMatrix<f64>) -> Option<Factor> {
        let n = nm.nrows();
        let mut rel = 1e-14;
        for _ in 0..6 {
            let mut reg = nm.clone();
            for i in 0..n {
                reg[(i, i)] += rel * nm[(i, i)].abs() + 1e-30;
            }
            if let Some(chol) = Cholesky::new(reg) {
                return Some(Factor { chol });
            }
            rel *= 1e2;
        }
        None
    }
}

/// Solves the augmented system
///
/// ```text
/// Gᵀ dy          = r1
/// G dx − D⁻¹ dy  = r2
/// ```
///
/// through the normal equations `GᵀDG dx = r1 + GᵀD r2`, refining against
/// the augmented residuals.
fn reduced_solve(
    sys: &Scaling<'_>,
    f: &Factor,
    d: &DVector<f64>,
    w: &DVector<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let solve = |r1: &DVector<f64>, r2: &DVector<f64>| {
        let rhs = r1 + sys.gt_mul(&d.component_mul(r2));
        let dx = f.chol.solve(&rhs);
        let dy = d.component_mul(&(sys.g_mul(&dx) - r2));
        (dx, dy)
    };
    let (mut dx, mut dy) = solve(r1, r2);
    let scale = 1.0 + inf_norm(r1.as_slice()).max(inf_norm(r2.as_slice()));
    let mut best = f64::INFINITY;
    for _ in 0..REFINE_STEPS {
        let e1 = r1 - sys.gt_mul(&dy);
        let e2 = r2 - (sys.g_mul(&dx) - w.component_mul(&dy));
        let err = inf_norm(e1.as_slice()).max(inf_norm(e2.as_slice()));
        if err <= 1e-15 * scale || err >= best {
            break;
        }
        best = err;
        let (cx, cy) = solve(&e1, &e2);
        dx += cx;
        dy += cy;
    }
    (dx, dy)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (x, dx) in v.iter().zip(dv.iter()) {
        if *dx < 0.0 {
            a = a.min(-x / dx);
        }
    }
    a
}

fn scalar_step(v: f64, dv: f64) -> f64 {
    if dv < 0.0 {
        -v / dv
    } else {
        f64::INFINITY
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

fn shift_positive(v: &mut DVector<f64>) {
    let lo = v.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if lo <= 0.0 {
        v.add_scalar_mut(1.0 - lo);
    }
}

fn initial_point(sys: &Scaling<'_>) -> Option<Iterate> {
    let m = sys.h.len();
    let ones = DVector::from_element(m, 1.0);
    let f = Factor::new(sys.normal_matrix(&ones))?;
    let zero_n = DVector::zeros(sys.q.len());
    // least-squares primal point and minimum-norm dual point
    let (x, _) = reduced_solve(sys, &f, &ones, &ones, &zero_n, &sys.h);
    let mut s = &sys.h - sys.g_mul(&x);
    let (_, mut y) = reduced_solve(sys, &f, &ones, &ones, &(-&sys.q), &DVector::zeros(m));
    shift_positive(&mut s);
    shift_positive(&mut y);

    Some(Iterate { x, y, s, tau: 1.0, kappa: 1.0 })
}

fn failure(status: LpStatus, iterations: usize, msg: impl Into<String>) -> LpSolution {
    LpSolution {
        status,
        theta: None,
        objective: f64::NAN,
        duals: None,
        ray: None,
        farkas: None,
        iterations,
        solve_time: Default::default(),
        diagnostic: Some(msg.into()),
    }
}

fn original_g_mul(p: &LpProblem, x: &[f64]) -> Vec<f64> {
    let v = &p.g * DVector::from_column_slice(x);
    v.as_slice().to_vec()
}

fn original_gt_mul(p: &LpProblem, y: &[f64]) -> Vec<f64> {
    let v = p.g.tr_mul(&DVector::from_column_slice(y));
    v.as_slice().to_vec()
}

/// Checks `Gd ≤ 0, cᵀd > 0` on the original data; returns `d` with `‖d‖∞ = 1`.
fn verify_ray(p: &LpProblem, d: &[f64]) -> Option<Vec<f64>> {
    let nd = inf_norm(d);
    if !(nd > 0.0 && nd.is_finite()) {
        return None;
    }
    let d: Vec<f64> = d.iter().map(|v| v / nd).collect();
    let cd: f64 = p.objective.iter().zip(&d).map(|(c, v)| c * v).sum();
    if cd <= 0.0 {
        return None;
    }
    let gd = original_g_mul(p, &d);
    let g_norm = inf_norm(p.g.as_slice()).max(1.0);
    let viol = gd.iter().fold(0.0f64, |a, v| a.max(*v));
    (viol <= CERT_TOL * g_norm && viol <= cd).then_some(d)
}

/// Checks `y ≥ 0, Gᵀy = 0, hᵀy < 0`; returns `y` scaled to `hᵀy = −1`.
fn verify_farkas(p: &LpProblem, y: &[f64]) -> Option<Vec<f64>> {
    let hy: f64 = p.h.iter().zip(y).map(|(h, v)| h * v).sum();
    if !(hy < 0.0 && hy.is_finite()) {
        return None;
    }
    let y: Vec<f64> = y.iter().map(|v| (v / -hy).max(0.0)).collect();
    let gty = original_gt_mul(p, &y);
    let g_norm = inf_norm(p.g.as_slice()).max(1.0);
    (inf_norm(&gty) <= CERT_TOL * g_norm * inf_norm(&y).max(1.0)).then_some(y)
}

pub(super) fn solve(p: &LpProblem, settings: &SolverSettings) -> LpSolution {
    let (m, n) = p.g.shape();
    if n == 0 {
        return failure(LpStatus::IterationLimit, 0, "problem has no variables");
    }
    if m == 0 {
        return if p.objective.iter().all(|c| *c == 0.0) {
            LpSolution {
                status: LpStatus::Optimal,
                theta: Some(vec![0.0; n]),
                objective: 0.0,
                duals: Some(Vec::new()),
                ray: None,
                farkas: None,
                iterations: 0,
                solve_time: Default::default(),
                diagnostic: None,
            }
        } else {
            let ray = p.objective.clone();
            let nd = inf_norm(&ray);
            LpSolution {
                status: LpStatus::Unbounded,
                theta: None,
                objective: f64::INFINITY,
                duals: None,
                ray: Some(ray.iter().map(|v| v / nd).collect()),
                farkas: None,
                iterations: 0,
                solve_time: Default::default(),
                diagnostic: None,
            }
        };
    }

    let q: Vec<f64> = p.objective.iter().map(|c| -c).collect();
    let mut sc = Scaled::new(&p.g, &p.h, &q);
    let gt = std::mem::replace(&mut sc.g, DMatrix::zeros(0, 0)).transpose();
    let sys = Scaling {
        gt,
        h: DVector::from_column_slice(&sc.h),
        q: DVector::from_column_slice(&sc.q),
        sc: &sc,
    };

    let Some(mut it) = initial_point(&sys) else {
        return failure(LpStatus::IterationLimit, 0, "normal matrix factorisation failed at start");
    };

    let mut best_merit = f64::INFINITY;
    let mut stalled = 0usize;
    for iter in 0..=settings.max_iter {
        let mu = (it.s.dot(&it.y) + it.tau * it.kappa) / (m as f64 + 1.0);
        let r_x = sys.gt_mul(&it.y) + &sys.q * it.tau;
        let r_s = sys.g_mul(&it.x) + &it.s - &sys.h * it.tau;
        let qx = sys.q.dot(&it.x);
        let hy = sys.h.dot(&it.y);
        let r_tau = it.kappa + qx + hy;

        // optimality on the original data
        let theta = sys.sc.unscale_x((&it.x / it.tau).as_slice());
        let duals = sys.sc.unscale_y((&it.y / it.tau).as_slice());
        let kkt = KktResiduals::compute(p, &theta, &duals);
        if kkt.satisfied(settings) {
            let objective = p.objective.iter().zip(&theta).map(|(c, t)| c * t).sum();
            return LpSolution {
                status: LpStatus::Optimal,
                theta: Some(theta),
                objective,
                duals: Some(duals.iter().map(|v| v.max(0.0)).collect()),
                ray: None,
                farkas: None,
                iterations: iter,
                solve_time: Default::default(),
                diagnostic: None,
            };
        }

        // infeasibility certificate
        if hy < 0.0 && inf_norm(sys.gt_mul(&it.y).as_slice()) <= settings.feas_tol * -hy {
            if let Some(y) = verify_farkas(p, &sys.sc.unscale_y(it.y.as_slice())) {
                return LpSolution {
                    status: LpStatus::Infeasible,
                    theta: None,
                    objective: f64::NEG_INFINITY,
                    duals: None,
                    ray: None,
                    farkas: Some(y),
                    iterations: iter,
                    solve_time: Default::default(),
                    diagnostic: None,
                };
            }
        }

        // unboundedness certificate
        let diverging = inf_norm(&theta) > settings.divergence_threshold && kkt.dual > settings.feas_tol;
        let gxs = sys.g_mul(&it.x) + &it.s;
        if qx < 0.0 && (inf_norm(gxs.as_slice()) <= settings.feas_tol * -qx || diverging) {
            if let Some(d) = verify_ray(p, &sys.sc.unscale_x(it.x.as_slice())) {
                return LpSolution {
                    status: LpStatus::Unbounded,
                    theta: None,
                    objective: f64::INFINITY,
                    duals: None,
                    ray: Some(d),
                    farkas: None,
                    iterations: iter,
                    solve_time: Default::default(),
                    diagnostic: None,
                };
            }
        }

        if iter == settings.max_iter {
            break;
        }
        if !mu.is_finite() {
            return failure(LpStatus::IterationLimit, iter, "iterates became non-finite");
        }
        let merit = kkt.primal.max(kkt.dual).max(kkt.gap);
        if merit < 0.95 * best_merit {
            best_merit = merit;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                return failure(
                    LpStatus::IterationLimit,
                    iter,
                    format!(
                        "progress stalled (primal {:.2e}, dual {:.2e}, gap {:.2e})",
                        kkt.primal, kkt.dual, kkt.gap
                    ),
                );
            }
        }

        let d = it.y.component_div(&it.s);
        let w = it.s.component_div(&it.y);
        let Some(f) = Factor::new(sys.normal_matrix(&d)) else {
            return failure(LpStatus::IterationLimit, iter, "normal matrix factorisation failed");
        };
        let (dx_a, dy_a) = reduced_solve(&sys, &f, &d, &w, &(-&sys.q), &sys.h);
        let denom_a = sys.q.dot(&dx_a) + sys.h.dot(&dy_a) - it.kappa / it.tau;

        let direction = |eta: f64, d_s: &DVector<f64>, d_kappa: f64| -> Direction {
            let r1 = &r_x * -eta;
            let r2 = &r_s * -eta + d_s.component_div(&it.y);
            let (dx_b, dy_b) = reduced_solve(&sys, &f, &d, &w, &r1, &r2);
            let num = -eta * r_tau - sys.q.dot(&dx_b) - sys.h.dot(&dy_b) + d_kappa / it.tau;
            let dtau = num / denom_a;
            let dx = dx_b + &dx_a * dtau;
            let dy = dy_b + &dy_a * dtau;
            let ds = -(d_s + it.s.component_mul(&dy)).component_div(&it.y);
            let dkappa = -(d_kappa + it.kappa * dtau) / it.tau;
            Direction { dx, dy, ds, dtau, dkappa }
        };
        let step_len = |dir: &Direction| -> f64 {
            max_step(&it.s, &dir.ds)
                .min(max_step(&it.y, &dir.dy))
                .min(scalar_step(it.tau, dir.dtau))
                .min(scalar_step(it.kappa, dir.dkappa))
        };

        // predictor
        let sy = it.s.component_mul(&it.y);
        let aff = direction(1.0, &sy, it.tau * it.kappa);
        let alpha_aff = step_len(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector
        let d_s = sy.add_scalar(-sigma * mu) + aff.ds.component_mul(&aff.dy);
        let d_kappa = it.tau * it.kappa - sigma * mu + aff.dtau * aff.dkappa;
        let dir = direction(1.0 - sigma, &d_s, d_kappa);
        let alpha = (STEP_FRACTION * step_len(&dir)).min(1.0);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return failure(LpStatus::IterationLimit, iter, "zero step length");
        }

        it.x += &dir.dx * alpha;
        it.y += &dir.dy * alpha;
        it.s += &dir.ds * alpha;
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;

        // keep the embedding well-scaled while a certificate develops
        let norm = it.tau + it.kappa + inf_norm(it.y.as_slice()) + inf_norm(it.x.as_slice());
        if !(1e-8..=1e8).contains(&norm) {
            let f = 1.0 / norm;
            it.x *= f;
            it.y *= f;
            it.s *= f;
            it.tau *= f;
            it.kappa *= f;
        }
    }
    failure(
        LpStatus::IterationLimit,
        settings.max_iter,
        format!("iteration limit {} reached", settings.max_iter),
    )
}
