//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Classification of `max cᵀx s.t. Gx ≤ h` by exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Optimal(f64),
    Unbounded,
    Infeasible,
}

fn subsets(m: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Best objective over the basic feasible points, `None` without any.
fn best_vertex(c: &[f64], g: &DMatrix<f64>, h: &[f64], tol: f64) -> Option<f64> {
    let (m, n) = g.shape();
    let mut best: Option<f64> = None;
    subsets(m, n, |rows| {
        let a = DMatrix::from_fn(n, n, |i, j| g[(rows[i], j)]);
        let b = DVector::from_fn(n, |i, _| h[rows[i]]);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
            return;
        }
        let Some(x) = a.lu().solve(&b) else { return };
        let slack = g * &x - DVector::from_column_slice(h);
        let scale = 1.0 + x.amax();
        if slack.max() > tol * scale {
            return;
        }
        let v: f64 = c.iter().zip(x.iter()).map(|(ci, xi)| ci * xi).sum();
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    });
    best
}

/// Reference answer for `max cᵀx s.t. Gx ≤ h` when `G` has full column rank.
///
/// Feasibility is decided by the existence of a vertex. Boundedness is
/// decided on the recession cone `{d : Gd ≤ 0, ‖d‖_∞ ≤ 1}`, which is itself
/// a polytope, so enumeration applies again.
pub fn vertex_enumeration(c: &[f64], g: &DMatrix<f64>, h: &[f64]) -> Reference {
    let (m, n) = g.shape();
    let Some(best) = best_vertex(c, g, h, 1e-9) else {
        return Reference::Infeasible;
    };
    let mut cone = DMatrix::zeros(m + 2 * n, n);
    cone.rows_mut(0, m).copy_from(g);
    for j in 0..n {
        cone[(m + 2 * j, j)] = 1.0;
        cone[(m + 2 * j + 1, j)] = -1.0;
    }
    let mut rhs = vec![0.0; m];
    rhs.extend(std::iter::repeat_n(1.0, 2 * n));
    let ray = best_vertex(c, &cone, &rhs, 1e-12).expect("the origin is a vertex of the cone");
    if ray > 1e-9 {
        Reference::Unbounded
    } else {
        Reference::Optimal(best)
    }
}

/// Random LP with Gaussian `G`, mixing bounded, unbounded and infeasible
/// instances.
pub fn random_lp<R: Rng>(rng: &mut R) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let n = rng.random_range(2..=5);
    let m = rng.random_range(n + 1..=12);
    let mut g = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let kind = rng.random_range(0..4);
    let mut h: Vec<f64> = match kind {
        // strictly feasible at x0
        0 | 1 => (&g * &x0).iter().map(|v| v + rng.random_range(0.1..1.0)).collect(),
        _ => (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    };
    if kind == 2 {
        // last row is minus a nonnegative combination of the others with a
        // right-hand side that makes (w, 1) a Farkas certificate
        let w: Vec<f64> = (0..m - 1).map(|_| rng.random_range(0.0..1.0)).collect();
        for j in 0..n {
            g[(m - 1, j)] = -(0..m - 1).map(|i| w[i] * g[(i, j)]).sum::<f64>();
        }
        h[m - 1] = -(0..m - 1).map(|i| w[i] * h[i]).sum::<f64>() - rng.random_range(0.1..1.0);
    }
    let c: Vec<f64> = if kind == 1 {
        // a nonnegative combination of rows: bounded whenever feasible
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        (0..n).map(|j| (0..m).map(|i| w[i] * g[(i, j)]).sum()).collect()
    } else {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    (c, g, h)
}

/// Sample mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Symmetric block `[[qxx, qxu], [qxuᵀ, quu]]` evaluated at `(x, u)`.
pub fn quad(qmat: &DMatrix<f64>, e: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let z = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
    (z.transpose() * qmat * &z)[(0, 0)] + e
}

/// Monte Carlo relaxed backup `ℓ(x,u) + γ min_w mean_i q(Ax + Bu + ξ_i, w)`
/// of the quadratic `q = (qmat, e)` under Gaussian noise with factor `chol`
/// (`Σ = chol cholᵀ`). Returns the estimate and its standard error: the
/// minimiser `w*` of the sample average is fixed, and the error is that
/// of the per-draw values `q(x⁺_i, w*)`.
#[allow(clippy::too_many_arguments)]
pub fn relaxed_backup_mc<R: Rng>(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    chol: &DMatrix<f64>,
    lmat: &DMatrix<f64>,
    qmat: &DMatrix<f64>,
    e: f64,
    gamma: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n_x = a.nrows();
    let n_u = b.ncols();
    let mean_next = a * x + b * u;
    let next: Vec<DVector<f64>> = (0..draws)
        .map(|_| {
            let z = DVector::from_fn(n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            &mean_next + chol * z
        })
        .collect();
    let xbar = next.iter().fold(DVector::zeros(n_x), |acc, v| acc + v) / draws as f64;
    let quu = qmat.view((n_x, n_x), (n_u, n_u)).clone_owned();
    let qux = qmat.view((n_x, 0), (n_u, n_x)).clone_owned();
    // the sample average is quadratic in w with Hessian 2 quu
    let w = -quu.lu().solve(&(qux * xbar)).expect("quu is invertible");
    let vals: Vec<f64> = next.iter().map(|xp| quad(qmat, e, xp, &w)).collect();
    let (m, se) = mean_se(&vals);
    let cost = quad(lmat, 0.0, x, u);
    (cost + gamma * m, gamma * se)
}
