//! Closed-loop Monte Carlo evaluation of linear policies.

use nalgebra::DVector;

use crate::dynamics::TransitionSource;
use crate::error::{AdpError, Result};
use crate::qbasis::LinearPolicy;
use crate::sampling::{sample_stream, BoxDistribution};

/// State norm past which a rollout is abandoned as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x_0, …, x_T` (`T = H` unless the rollout diverged).
    pub states: Vec<DVector<f64>>,
    /// `u_0, …, u_{T−1}`.
    pub inputs: Vec<DVector<f64>>,
    /// `Σ_k γ^k ℓ(x_k, u_k)` over the simulated steps.
    pub cost: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutSummary {
    /// Mean discounted cost over the rollouts that did not diverge.
    pub mean_cost: f64,
    /// Standard error of `mean_cost`; NaN with fewer than two finished rollouts.
    pub std_err: f64,
    pub n_diverged: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Simulates `n_rollouts` closed-loop runs of `u = Kx` for `horizon` steps
/// from `x_0 ~ init`. Rollout `k` draws from random stream `k` of `seed`,
/// so different policies evaluated with the same seed share initial states.
pub fn rollout_cost<S: TransitionSource>(
    source: &S,
    policy: &LinearPolicy,
    init: &BoxDistribution,
    gamma: f64,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<RolloutSummary> {
    if n_rollouts == 0 || horizon == 0 {
        return Err(AdpError::InvalidArgument("need at least one rollout of one step".into()));
    }
    if policy.state_dim() != source.state_dim() || policy.input_dim() != source.input_dim() {
        return Err(AdpError::dim("rollout policy", source.state_dim(), policy.state_dim()));
    }
    if init.dim() != source.state_dim() {
        return Err(AdpError::dim("rollout initial distribution", source.state_dim(), init.dim()));
    }
    let mut trajectories = Vec::with_capacity(n_rollouts);
    for k in 0..n_rollouts {
        let mut rng = sample_stream(seed, k as u64);
        let mut x = init.sample(&mut rng);
        let mut states = vec![x.clone()];
        let mut inputs = Vec::with_capacity(horizon);
        let mut cost = 0.0;
        let mut discount = 1.0;
        let mut diverged = false;
        for _ in 0..horizon {
            let u = policy.action(&x);
            cost += discount * source.cost(&x, &u)?;
            discount *= gamma;
            x = source.sample_next(&x, &u, &mut rng)?;
            inputs.push(u);
            states.push(x.clone());
            if !(x.norm() <= DIVERGENCE_NORM) {
                diverged = true;
                break;
            }
        }
        trajectories.push(Trajectory {
            states,
            inputs,
            cost,
            diverged,
        });
    }
    let finished: Vec<f64> = trajectories.iter().filter(|t| !t.diverged).map(|t| t.cost).collect();
    let n = finished.len() as f64;
    let mean_cost = if finished.is_empty() {
        f64::NAN
    } else {
        finished.iter().sum::<f64>() / n
    };
    let std_err = if finished.len() < 2 {
        f64::NAN
    } else {
        let var = finished.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(RolloutSummary {
        mean_cost,
        std_err,
        n_diverged: n_rollouts - finished.len(),
        trajectories,
    })
}
