//! Ground truth for the linear-quadratic case.
//!
//! For `x⁺ = A x + B u + ξ` with quadratic stage cost the optimal q-function
//! is quadratic, `q*(x,u) = [x;u]ᵀ Q* [x;u] + e*`, where `Q*` is built from
//! the discounted Riccati solution `P`. The fixed point of the relaxed
//! operator is the same quadratic shifted up by a constant `Δe ≥ 0`.

use nalgebra::DMatrix;

use crate::dynamics::{is_stabilizable, CartPole, LtiSystem, StageCost};
use crate::error::{AdpError, Result};
use crate::linalg::{max_abs, min_eigenvalue, symmetrize, PD_TOL};
use crate::qbasis::{LinearPolicy, QuadraticQ};

#[derive(Debug, Clone, Copy)]
pub struct DareSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareSettings {
    fn default() -> Self {
        DareSettings {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Riccati solution together with the optimal q-kernel and offsets.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// Optimal kernel `Q*` over the joint vector `[x; u]`.
    pub qstar: DMatrix<f64>,
    /// `γ Tr(P Σ) / (1 - γ)`.
    pub e_star: f64,
    /// Optimal gain, `u = K x`.
    pub k: DMatrix<f64>,
    /// Constant up-shift of the relaxed fixed point over `q*`.
    pub delta_e: f64,
    pub n_x: usize,
}

impl RiccatiSolution {
    pub fn n_u(&self) -> usize {
        self.qstar.nrows() - self.n_x
    }

    pub fn qxx(&self) -> DMatrix<f64> {
        self.qstar.view((0, 0), (self.n_x, self.n_x)).into_owned()
    }

    pub fn qxu(&self) -> DMatrix<f64> {
        self.qstar.view((0, self.n_x), (self.n_x, self.n_u())).into_owned()
    }

    pub fn quu(&self) -> DMatrix<f64> {
        let n_u = self.n_u();
        self.qstar.view((self.n_x, self.n_x), (n_u, n_u)).into_owned()
    }

    /// `‖P − Q*/q*_uu‖` in max-norm.
    pub fn dare_residual(&self) -> f64 {
        let qxu = self.qxu();
        let schur = self.qxx()
            - &qxu
                * self
                    .quu()
                    .try_inverse()
                    .expect("q*_uu was checked positive definite")
                * qxu.transpose();
        max_abs(&(&self.p - schur))
    }

    /// The optimal q-function `(Q*, e*)`.
    pub fn q_star(&self) -> QuadraticQ {
        QuadraticQ::new(self.qstar.clone(), self.e_star, self.n_x)
            .expect("Q* is symmetric by construction")
    }

    /// The relaxed fixed point `(Q*, e* + Δe)`.
    pub fn q_hat(&self) -> QuadraticQ {
        QuadraticQ::new(self.qstar.clone(), self.e_star + self.delta_e, self.n_x)
            .expect("Q* is symmetric by construction")
    }

    pub fn policy(&self) -> LinearPolicy {
        LinearPolicy::new(self.k.clone())
    }
}

/// Solves `P = L_xx + γAᵀPA − (L_xu + γAᵀPB)(L_uu + γBᵀPB)⁻¹(L_xu + γAᵀPB)ᵀ`
/// by fixed-point iteration from `P₀ = L_xx`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: &StageCost,
    gamma: f64,
    settings: DareSettings,
) -> Result<DMatrix<f64>> {
    check_lq_dims(a, b, cost)?;
    check_gamma(gamma)?;
    if !is_stabilizable(a, b, gamma) {
        return Err(AdpError::IllPosed(
            "(√γ A, √γ B) is not stabilizable".into(),
        ));
    }
    let (lxx, lxu, luu) = (cost.lxx(), cost.lxu(), cost.luu());
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = lxx.clone();
    let mut last_change = f64::INFINITY;
    for _ in 0..settings.max_iter {
        let pa = &p * a;
        let pb = &p * b;
        let cross = &lxu + (&at * &pb) * gamma;
        let inner = &luu + (&bt * &pb) * gamma;
        let chol = inner.clone().cholesky().filter(|_| min_eigenvalue(&inner) > PD_TOL);
        let Some(chol) = chol else {
            return Err(AdpError::IllPosed(
                "L_uu + γBᵀPB lost positive definiteness".into(),
            ));
        };
        let next = &lxx + (&at * &pa) * gamma - &cross * chol.solve(&cross.transpose());
        let next = symmetrize(&next);
        last_change = max_abs(&(&next - &p));
        p = next;
        if last_change <= settings.tol {
            return Ok(p);
        }
    }
    Err(AdpError::Divergence {
        iterations: settings.max_iter,
        last_change,
    })
}

/// Assembles `Q*`, `e*`, `K` and `Δe` from a Riccati solution `P`.
pub fn build_qstar(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: &StageCost,
    gamma: f64,
    p: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    check_lq_dims(a, b, cost)?;
    check_gamma(gamma)?;
    let n_x = a.nrows();
    let n_u = b.ncols();
    if p.shape() != (n_x, n_x) {
        return Err(AdpError::dim("build_qstar P", n_x, p.nrows()));
    }
    if noise_cov.shape() != (n_x, n_x) {
        return Err(AdpError::dim("build_qstar Σ", n_x, noise_cov.nrows()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let qxx = symmetrize(&(cost.lxx() + (&at * p * a) * gamma));
    let qxu = cost.lxu() + (&at * p * b) * gamma;
    let quu = symmetrize(&(cost.luu() + (&bt * p * b) * gamma));
    let lam = min_eigenvalue(&quu);
    if lam <= PD_TOL {
        return Err(AdpError::IllPosed(format!(
            "q*_uu is not positive definite (smallest eigenvalue {lam:e})"
        )));
    }
    let quu_inv = quu.clone().cholesky().expect("checked PD").inverse();
    let k = -(&quu_inv * qxu.transpose());

    let mut qstar = DMatrix::zeros(n_x + n_u, n_x + n_u);
    qstar.view_mut((0, 0), (n_x, n_x)).copy_from(&qxx);
    qstar.view_mut((0, n_x), (n_x, n_u)).copy_from(&qxu);
    qstar.view_mut((n_x, 0), (n_u, n_x)).copy_from(&qxu.transpose());
    qstar.view_mut((n_x, n_x), (n_u, n_u)).copy_from(&quu);

    let scale = gamma / (1.0 - gamma);
    let e_star = scale * (p * noise_cov).trace();
    let shift = &qxu * &quu_inv * qxu.transpose();
    // a PSD product's trace; clamp round-off so the shift stays nonnegative
    let delta_e = (scale * (shift * noise_cov).trace()).max(0.0);

    Ok(RiccatiSolution {
        p: p.clone(),
        qstar,
        e_star,
        k,
        delta_e,
        n_x,
    })
}

/// Riccati solve plus q-function assembly for an LTI system.
pub fn lqr(sys: &LtiSystem, cost: &StageCost, gamma: f64) -> Result<RiccatiSolution> {
    let p = solve_dare(&sys.a, &sys.b, cost, gamma, DareSettings::default())?;
    build_qstar(&sys.a, &sys.b, cost, gamma, &p, sys.noise.cov())
}

/// Small-angle linearisation of the cart-pole about the upright equilibrium,
/// discretised with the plant's own Euler step.
pub fn linearize_cartpole(cp: &CartPole) -> LtiSystem {
    let (m_c, m_p, l, g, dt) = (
        cp.cart_mass,
        cp.pole_mass,
        cp.pole_length,
        cp.gravity,
        cp.dt,
    );
    let mut ac = DMatrix::zeros(4, 4);
    ac[(0, 1)] = 1.0;
    ac[(1, 2)] = m_p * g / m_c;
    ac[(2, 3)] = 1.0;
    ac[(3, 2)] = (m_c + m_p) * g / (m_c * l);
    let bc = DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / m_c, 0.0, 1.0 / (m_c * l)]);
    let a = DMatrix::identity(4, 4) + ac * dt;
    let b = bc * dt;
    LtiSystem::new(a, b, cp.noise.clone()).expect("cart-pole linearisation is 4x4")
}

fn check_lq_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, cost: &StageCost) -> Result<()> {
    if !a.is_square() {
        return Err(AdpError::InvalidArgument("A must be square".into()));
    }
    if b.nrows() != a.nrows() {
        return Err(AdpError::dim("B rows", a.nrows(), b.nrows()));
    }
    if cost.n_x() != a.nrows() {
        return Err(AdpError::dim("stage cost state dim", a.nrows(), cost.n_x()));
    }
    if cost.n_u() != b.ncols() {
        return Err(AdpError::dim("stage cost input dim", b.ncols(), cost.n_u()));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AdpError::InvalidArgument(format!(
            "discount factor must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}
