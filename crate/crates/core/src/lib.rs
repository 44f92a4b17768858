//! Data-driven optimal control through sampled linear programs over
//! quadratic q-functions.
//!
//! The crate learns q-functions (and the linear policies they induce) for
//! unknown discrete-time stochastic systems from roll-out data. Two programs
//! are built from the same samples:
//!
//! * the classical q-function LP, with a q-family and a v-family of
//!   Bellman inequalities over `(q, v)`;
//! * the relaxed LP, a single family of inequalities in `q` alone obtained by
//!   swapping the expectation and the minimisation in the Bellman operator.
//!
//! Around them sit the ground-truth machinery used to check the results:
//! a discounted Riccati solver for linear-quadratic problems
//! ([`lq_oracle`]) and exact tabular operators on finite MDPs
//! ([`finite_oracle`]).
//!
//! Module map:
//!
//! | module | role |
//! |---|---|
//! | [`dynamics`] | simulated plants, stage costs, sampled transitions |
//! | [`lq_oracle`] | DARE, optimal q-kernel, relaxed offset, LQR baselines |
//! | [`sampling`] | constraint datasets with Monte Carlo next-state draws |
//! | [`qbasis`] | quadratic parameterisation, features, policy extraction |
//! | [`lp_builder`] | relaxed and classical LP assembly, text export |
//! | [`lp_solver`] | dense homogeneous interior-point LP solver |
//! | [`finite_oracle`] | tabular `F` / relaxed `F` operators and property suite |
//! | [`experiments`] | experiment configs, runners, CSV outputs |

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod finite_oracle;
pub mod linalg;
pub mod lp_builder;
pub mod lp_solver;
pub mod lq_oracle;
pub mod qbasis;
pub mod sampling;

pub use error::{AdpError, Result};
