//! Simulated plants and stage costs behind a sampled-transition interface.
//!
//! Downstream code only sees [`TransitionSource::query`], which returns the
//! measured stage cost and one random successor state; the closed forms of
//! the dynamics and cost stay inside this module.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{AdpError, Result};
use crate::linalg::{self, is_psd, is_symmetric, min_eigenvalue, psd_factor, quad_form};

/// Rank tolerance on singular values in the PBH test.
const PBH_RANK_TOL: f64 = 1e-9;

/// Maximum number of draws in [`random_lti`] before giving up.
pub const RANDOM_LTI_MAX_ATTEMPTS: usize = 1000;

/// Zero-mean Gaussian disturbance `ξ ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    degenerate: bool,
}

impl GaussianNoise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&cov, 1e-12) {
            return Err(AdpError::InvalidArgument(
                "noise covariance must be square and symmetric".into(),
            ));
        }
        if !is_psd(&cov) {
            return Err(AdpError::InvalidArgument(
                "noise covariance must be positive semidefinite".into(),
            ));
        }
        let factor = psd_factor(&cov);
        let degenerate = factor.iter().all(|v| *v == 0.0);
        Ok(GaussianNoise {
            cov,
            factor,
            degenerate,
        })
    }

    pub fn zero(dim: usize) -> Self {
        GaussianNoise {
            cov: DMatrix::zeros(dim, dim),
            factor: DMatrix::zeros(dim, dim),
            degenerate: true,
        }
    }

    /// Isotropic noise `σ² I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Adds one draw to `x` in place. A zero covariance consumes no randomness.
    pub fn perturb<R: Rng + ?Sized>(&self, x: &mut DVector<f64>, rng: &mut R) {
        if self.degenerate {
            return;
        }
        let n = self.dim();
        let z: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        x.gemv(1.0, &self.factor, &z, 1.0);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        self.perturb(&mut x, rng);
        x
    }
}

/// Discrete-time dynamics `x⁺ = f(x, u, ξ)`.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>>;
}

/// `x⁺ = A x + B u + ξ` with Gaussian `ξ`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise: GaussianNoise,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, noise: GaussianNoise) -> Result<Self> {
        if !a.is_square() {
            return Err(AdpError::InvalidArgument("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(AdpError::dim("LtiSystem B rows", a.nrows(), b.nrows()));
        }
        if noise.dim() != a.nrows() {
            return Err(AdpError::dim("LtiSystem noise", a.nrows(), noise.dim()));
        }
        Ok(LtiSystem { a, b, noise })
    }

    /// Noise-free successor `A x + B u`.
    pub fn mean_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("lti_step state", self.a.nrows(), x.len())?;
        check_len("lti_step input", self.b.ncols(), u.len())?;
        Ok(&self.a * x + &self.b * u)
    }
}

impl Dynamics for LtiSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mut next = self.mean_step(x, u)?;
        self.noise.perturb(&mut next, rng);
        Ok(next)
    }
}

/// Inverted pendulum on a cart, forward-Euler discretised.
///
/// State layout is `(p, ṗ, θ, θ̇)` with `θ = 0` upright; the single input is
/// the horizontal force on the cart.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub noise: GaussianNoise,
}

impl CartPole {
    pub fn new(
        cart_mass: f64,
        pole_mass: f64,
        pole_length: f64,
        gravity: f64,
        dt: f64,
        noise: GaussianNoise,
    ) -> Result<Self> {
        for (name, v) in [
            ("cart_mass", cart_mass),
            ("pole_mass", pole_mass),
            ("pole_length", pole_length),
            ("dt", dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AdpError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if noise.dim() != 4 {
            return Err(AdpError::dim("CartPole noise", 4, noise.dim()));
        }
        Ok(CartPole {
            cart_mass,
            pole_mass,
            pole_length,
            gravity,
            dt,
            noise,
        })
    }

    /// The benchmark plant: 4 kg cart, 2 kg pole of 1 m, 1 ms Euler step.
    pub fn standard(noise: GaussianNoise) -> Result<Self> {
        Self::new(4.0, 2.0, 1.0, 9.8, 1e-3, noise)
    }

    /// Cart and pole accelerations `(p̈, θ̈)` at `(θ, θ̇)` under force `u`.
    pub fn accelerations(&self, theta: f64, theta_dot: f64, u: f64) -> (f64, f64) {
        let (m_c, m_p, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (s, c) = theta.sin_cos();
        let p_acc = (m_p * g * s * c - m_p * l * theta_dot * theta_dot * s + u) / (m_c + m_p * s * s);
        let theta_acc = (g * s + p_acc * c) / l;
        (p_acc, theta_acc)
    }

    /// One Euler step plus one additive noise draw on the discrete update.
    pub fn step_state<R: Rng + ?Sized>(
        &self,
        state: &DVector<f64>,
        u: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_len("cartpole_step state", 4, state.len())?;
        let (p, p_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let (p_acc, theta_acc) = self.accelerations(theta, theta_dot, u);
        let dt = self.dt;
        let mut next = DVector::from_column_slice(&[
            p + dt * p_dot,
            p_dot + dt * p_acc,
            theta + dt * theta_dot,
            theta_dot + dt * theta_acc,
        ]);
        self.noise.perturb(&mut next, rng);
        Ok(next)
    }
}

impl Dynamics for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_len("cartpole_step input", 1, u.len())?;
        self.step_state(x, u[0], rng)
    }
}

/// Quadratic stage cost `ℓ(x, u) = [x; u]ᵀ L [x; u]`.
#[derive(Debug, Clone)]
pub struct StageCost {
    l: DMatrix<f64>,
    n_x: usize,
}

impl StageCost {
    /// Validates `L` symmetric PSD with a positive definite `L_uu` block.
    pub fn new(l: DMatrix<f64>, n_x: usize) -> Result<Self> {
        if !is_symmetric(&l, 1e-12) {
            return Err(AdpError::InvalidArgument(
                "stage cost matrix must be square and symmetric".into(),
            ));
        }
        if n_x >= l.nrows() {
            return Err(AdpError::InvalidArgument(
                "stage cost needs at least one input coordinate".into(),
            ));
        }
        if !is_psd(&l) {
            return Err(AdpError::InvalidArgument(
                "stage cost matrix must be positive semidefinite".into(),
            ));
        }
        let n_u = l.nrows() - n_x;
        let luu = l.view((n_x, n_x), (n_u, n_u)).into_owned();
        let lam = min_eigenvalue(&luu);
        if lam <= 0.0 {
            return Err(AdpError::IllPosed(format!(
                "L_uu must be positive definite (smallest eigenvalue {lam:e})"
            )));
        }
        Ok(StageCost { l, n_x })
    }

    /// Diagonal cost `diag(entries)` with the first `n_x` entries on the state.
    pub fn diagonal(entries: &[f64], n_x: usize) -> Result<Self> {
        Self::new(linalg::diag(entries), n_x)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.l.nrows() - self.n_x
    }

    pub fn lxx(&self) -> DMatrix<f64> {
        self.l.view((0, 0), (self.n_x, self.n_x)).into_owned()
    }

    pub fn lxu(&self) -> DMatrix<f64> {
        self.l.view((0, self.n_x), (self.n_x, self.n_u())).into_owned()
    }

    pub fn luu(&self) -> DMatrix<f64> {
        let n_u = self.n_u();
        self.l.view((self.n_x, self.n_x), (n_u, n_u)).into_owned()
    }

    /// `[x; u]ᵀ L [x; u]`, clamped at zero against round-off.
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        check_len("stage_cost state", self.n_x, x.len())?;
        check_len("stage_cost input", self.n_u(), u.len())?;
        let z = linalg::stack(x, u);
        Ok(quad_form(&self.l, &z).max(0.0))
    }
}

/// Measured transition `(ℓ(x,u), x⁺)`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub cost: f64,
    pub next_state: DVector<f64>,
}

/// Black-box access to a stochastic system: the only view that sampling and
/// rollouts get of the plant.
pub trait TransitionSource {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Stage cost at `(x, u)`; deterministic and nonnegative.
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64>;

    /// One random successor of `(x, u)`.
    fn sample_next<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>>;

    fn query<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<Transition> {
        Ok(Transition {
            cost: self.cost(x, u)?,
            next_state: self.sample_next(x, u, rng)?,
        })
    }
}

/// Dynamics paired with a quadratic stage cost.
#[derive(Debug, Clone)]
pub struct Plant<D> {
    pub dynamics: D,
    pub cost: StageCost,
}

impl<D: Dynamics> Plant<D> {
    pub fn new(dynamics: D, cost: StageCost) -> Result<Self> {
        if cost.n_x() != dynamics.state_dim() {
            return Err(AdpError::dim("Plant cost state dim", dynamics.state_dim(), cost.n_x()));
        }
        if cost.n_u() != dynamics.input_dim() {
            return Err(AdpError::dim("Plant cost input dim", dynamics.input_dim(), cost.n_u()));
        }
        Ok(Plant { dynamics, cost })
    }
}

impl<D: Dynamics> TransitionSource for Plant<D> {
    fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        self.cost.eval(x, u)
    }

    fn sample_next<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        self.dynamics.step(x, u, rng)
    }
}

/// Random sparse LTI system with `n_x` states and two inputs.
///
/// `A` has 0.5 on the diagonal; every off-diagonal entry of `A` and every
/// entry of `B` is zero with probability 0.1 and uniform on `[-0.1, 0.1]`
/// otherwise. Draws are repeated until `(√γ A, √γ B)` is stabilizable.
pub fn random_lti<R: Rng + ?Sized>(
    n_x: usize,
    noise: GaussianNoise,
    gamma: f64,
    rng: &mut R,
) -> Result<LtiSystem> {
    const N_U: usize = 2;
    if n_x < 2 {
        return Err(AdpError::InvalidArgument("random_lti needs n_x >= 2".into()));
    }
    if noise.dim() != n_x {
        return Err(AdpError::dim("random_lti noise", n_x, noise.dim()));
    }
    let coin = Uniform::new(0.0, 1.0).expect("valid range");
    let entry = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
    let sparse_entry = |rng: &mut R| {
        if coin.sample(rng) < 0.1 {
            0.0
        } else {
            entry.sample(rng)
        }
    };
    for _ in 0..RANDOM_LTI_MAX_ATTEMPTS {
        let mut a = DMatrix::zeros(n_x, n_x);
        for i in 0..n_x {
            for j in 0..n_x {
                a[(i, j)] = if i == j { 0.5 } else { sparse_entry(rng) };
            }
        }
        let mut b = DMatrix::zeros(n_x, N_U);
        for v in b.iter_mut() {
            *v = sparse_entry(rng);
        }
        if is_stabilizable(&a, &b, gamma) {
            return LtiSystem::new(a, b, noise);
        }
    }
    Err(AdpError::GenerationFailure {
        attempts: RANDOM_LTI_MAX_ATTEMPTS,
    })
}

/// PBH test for stabilizability of `(√γ A, √γ B)`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let s = gamma.sqrt();
    let a_s = a * s;
    let b_s = b * s;
    for lambda in a_s.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { *lambda } else { Complex::new(0.0, 0.0) };
                pbh[(i, j)] = diag - Complex::new(a_s[(i, j)], 0.0);
            }
            for j in 0..m {
                pbh[(i, n + j)] = Complex::new(b_s[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let rank = sv.iter().filter(|v| **v > PBH_RANK_TOL).count();
        if rank < n {
            return false;
        }
    }
    true
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(AdpError::dim(context, expected, got));
    }
    Ok(())
}
