//! Experiment configuration: per-experiment defaults, JSON overlay, validation.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CartPole, GaussianNoise, StageCost};
use crate::error::{AdpError, Result};
use crate::linalg::{block_diag, diag, is_psd, is_symmetric};
use crate::lp_builder::ObjectiveMoments;
use crate::sampling::BoxDistribution;

/// Inputs of every generated system in the scaling experiment.
/// Largest state or input dimension a configuration may request.
pub const MAX_DIM: usize = 32;

pub const EXP2_INPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Both programs see the same `N` samples (LP gets `2N` rows).
    EqualSamples,
    /// Both programs get `N` rows (LP built from `N/2` samples).
    EqualRows,
}

impl std::str::FromStr for Pairing {
    type Err = AdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-samples" => Ok(Pairing::EqualSamples),
            "equal-rows" => Ok(Pairing::EqualRows),
            _ => Err(AdpError::Config(format!(
                "unknown pairing {s:?}, expected equal-samples or equal-rows"
            ))),
        }
    }
}

/// Square matrix given in full, by its diagonal, as a multiple of the
/// identity, or as `diag(state · I_nx, input · I_nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Full(Vec<Vec<f64>>),
    Diagonal { diag: Vec<f64> },
    Isotropic { isotropic: f64 },
    Blocks { state: f64, input: f64 },
}

impl MatrixSpec {
    /// Resolves to a `dim × dim` matrix; `n_x` splits the `Blocks` form.
    pub fn resolve(&self, dim: usize, n_x: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(AdpError::Config(format!("matrix must be {dim}x{dim}")));
                }
                DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
            }
            MatrixSpec::Diagonal { diag: d } => {
                if d.len() != dim {
                    return Err(AdpError::Config(format!(
                        "diagonal has {} entries, need {dim}",
                        d.len()
                    )));
                }
                diag(d)
            }
            MatrixSpec::Isotropic { isotropic } => DMatrix::identity(dim, dim) * *isotropic,
            MatrixSpec::Blocks { state, input } => {
                if n_x > dim {
                    return Err(AdpError::Config("state block larger than matrix".into()));
                }
                block_diag(&[
                    DMatrix::identity(n_x, n_x) * *state,
                    DMatrix::identity(dim - n_x, dim - n_x) * *input,
                ])
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::Config("matrix has non-finite entries".into()));
        }
        Ok(m)
    }
}

/// Axis-aligned box given by its corners, a common half-width or one
/// half-width per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    Corners { lower: Vec<f64>, upper: Vec<f64> },
    HalfWidth { half_width: f64 },
    HalfWidths { half_widths: Vec<f64> },
}

impl BoxSpec {
    pub fn resolve(&self, dim: usize) -> Result<BoxDistribution> {
        let b = match self {
            BoxSpec::Corners { lower, upper } => BoxDistribution::new(lower.clone(), upper.clone()),
            BoxSpec::HalfWidth { half_width } => BoxDistribution::symmetric(&vec![*half_width; dim]),
            BoxSpec::HalfWidths { half_widths } => BoxDistribution::symmetric(half_widths),
        }
        .map_err(|e| AdpError::Config(e.to_string()))?;
        if b.dim() != dim {
            return Err(AdpError::Config(format!("box has dimension {}, need {dim}", b.dim())));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl SystemSpec {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let to_mat = |rows: &Vec<Vec<f64>>, name: &str| -> Result<DMatrix<f64>> {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                return Err(AdpError::Config(format!("system matrix {name} is ragged or empty")));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        let a = to_mat(&self.a, "a")?;
        let b = to_mat(&self.b, "b")?;
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
            return Err(AdpError::Config("system matrices have inconsistent shapes".into()));
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleSpec {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPoleSpec {
    fn default() -> Self {
        CartPoleSpec {
            cart_mass: 4.0,
            pole_mass: 2.0,
            pole_length: 1.0,
            gravity: 9.8,
            dt: 1e-3,
        }
    }
}

impl CartPoleSpec {
    pub fn build(&self, noise: GaussianNoise) -> Result<CartPole> {
        CartPole::new(
            self.cart_mass,
            self.pole_mass,
            self.pole_length,
            self.gravity,
            self.dt,
            noise,
        )
        .map_err(|e| AdpError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: u8,
    pub gamma: f64,
    /// Fixed plant of the first experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    /// State dimensions swept by the second experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<CartPoleSpec>,
    pub stage_cost: MatrixSpec,
    pub objective: MatrixSpec,
    pub state_dist: BoxSpec,
    pub input_dist: BoxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dist: Option<BoxSpec>,
    pub noise: MatrixSpec,
    pub n_constraints: Vec<usize>,
    pub mc_draws: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub pairing: Pairing,
    pub n_rollouts: usize,
    /// Rollout length; derived from `γ^H ≤ 1e-6` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Record wall-clock solve times; disabling makes output byte-reproducible.
    pub timing: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(experiment: u8) -> Result<Self> {
        let base = |experiment: u8| ExperimentConfig {
            experiment,
            gamma: 0.95,
            system: None,
            state_dims: None,
            cartpole: None,
            stage_cost: MatrixSpec::Diagonal {
                diag: vec![1.0, 1.0, 1e-2],
            },
            objective: MatrixSpec::Diagonal {
                diag: vec![1.0, 1.0, 0.1],
            },
            state_dist: BoxSpec::HalfWidth { half_width: 3.0 },
            input_dist: BoxSpec::HalfWidth { half_width: 1.0 },
            initial_dist: None,
            noise: MatrixSpec::Isotropic { isotropic: 1e-6 },
            n_constraints: vec![1_000, 2_000, 5_000, 10_000, 20_000],
            mc_draws: 100,
            repetitions: 10,
            seed: 0,
            pairing: Pairing::EqualSamples,
            n_rollouts: 10,
            horizon: None,
            timing: true,
            out_dir: PathBuf::from("results"),
        };
        match experiment {
            1 => Ok(ExperimentConfig {
                system: Some(SystemSpec {
                    a: vec![vec![1.0, 0.1], vec![0.5, -0.5]],
                    b: vec![vec![1.0], vec![0.5]],
                }),
                ..base(1)
            }),
            2 => Ok(ExperimentConfig {
                state_dims: Some((2..=10).collect()),
                stage_cost: MatrixSpec::Blocks {
                    state: 1.0,
                    input: 1e-4,
                },
                objective: MatrixSpec::Blocks {
                    state: 1.0,
                    input: 0.8,
                },
                state_dist: BoxSpec::HalfWidth { half_width: 0.5 },
                input_dist: BoxSpec::HalfWidth { half_width: 3.0 },
                noise: MatrixSpec::Isotropic { isotropic: 1e-4 },
                n_constraints: vec![50_000],
                ..base(2)
            }),
            3 => Ok(ExperimentConfig {
                gamma: 0.99,
                cartpole: Some(CartPoleSpec::default()),
                stage_cost: MatrixSpec::Diagonal {
                    diag: vec![1.0, 1.0, 100.0, 10.0, 1e-3],
                },
                objective: MatrixSpec::Diagonal {
                    diag: vec![1.0, 1.0, 1.0, 1.0, 0.8],
                },
                state_dist: BoxSpec::HalfWidths {
                    half_widths: vec![3.0, 3.0, 1.0, 1.0],
                },
                input_dist: BoxSpec::HalfWidth { half_width: 100.0 },
                initial_dist: Some(BoxSpec::HalfWidths {
                    half_widths: vec![1.0, 1.0, 0.5, 0.5],
                }),
                n_constraints: vec![10_000],
                mc_draws: 1,
                repetitions: 1,
                ..base(3)
            }),
            other => Err(AdpError::Config(format!("unknown experiment {other}"))),
        }
    }

    /// Defaults for `experiment` overlaid with the top-level keys of `json`.
    pub fn from_json_overlay(experiment: u8, json: &str) -> Result<Self> {
        let defaults = ExperimentConfig::defaults(experiment)?;
        let overlay: serde_json::Value = serde_json::from_str(json)
            .map_err(|e| AdpError::Config(format!("config is not valid JSON: {e}")))?;
        let serde_json::Value::Object(fields) = overlay else {
            return Err(AdpError::Config("config must be a JSON object".into()));
        };
        let mut merged = serde_json::to_value(&defaults)?;
        let target = merged.as_object_mut().expect("config serialises to an object");
        for (k, v) in fields {
            target.insert(k, v);
        }
        let cfg: ExperimentConfig = serde_json::from_value(merged)
            .map_err(|e| AdpError::Config(format!("invalid config: {e}")))?;
        if cfg.experiment != experiment {
            return Err(AdpError::Config(format!(
                "config is for experiment {}, command runs experiment {experiment}",
                cfg.experiment
            )));
        }
        Ok(cfg)
    }

    pub fn from_file(experiment: u8, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AdpError::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json_overlay(experiment, &text)
    }

    /// `H` with `γ^H ≤ 1e-6` unless set explicitly.
    pub fn rollout_horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| truncation_horizon(self.gamma, 1e-6))
    }

    /// State dimensions this configuration runs at.
    pub fn dims(&self) -> Result<Vec<(usize, usize)>> {
        match self.experiment {
            1 => {
                let (a, b) = self
                    .system
                    .as_ref()
                    .ok_or_else(|| AdpError::Config("experiment 1 needs `system`".into()))?
                    .matrices()?;
                if a.nrows() > MAX_DIM || b.ncols() > MAX_DIM {
                    return Err(AdpError::Config(format!("system dimensions above {MAX_DIM}")));
                }
                Ok(vec![(a.nrows(), b.ncols())])
            }
            2 => {
                let dims = self
                    .state_dims
                    .as_ref()
                    .ok_or_else(|| AdpError::Config("experiment 2 needs `state_dims`".into()))?;
                if dims.is_empty() || dims.iter().any(|d| !(2..=MAX_DIM).contains(d)) {
                    return Err(AdpError::Config(format!("state_dims entries must lie in 2..={MAX_DIM}")));
                }
                Ok(dims.iter().map(|d| (*d, EXP2_INPUT_DIM)).collect())
            }
            3 => Ok(vec![(4, 1)]),
            other => Err(AdpError::Config(format!("unknown experiment {other}"))),
        }
    }

    pub fn stage_cost_for(&self, n_x: usize, n_u: usize) -> Result<StageCost> {
        let l = self.stage_cost.resolve(n_x + n_u, n_x)?;
        StageCost::new(l, n_x).map_err(|e| AdpError::Config(format!("stage_cost: {e}")))
    }

    pub fn objective_for(&self, n_x: usize, n_u: usize) -> Result<ObjectiveMoments> {
        let c = self.objective.resolve(n_x + n_u, n_x)?;
        ObjectiveMoments::new(c).map_err(|e| AdpError::Config(format!("objective: {e}")))
    }

    pub fn noise_for(&self, n_x: usize) -> Result<GaussianNoise> {
        let cov = self.noise.resolve(n_x, n_x)?;
        if !is_symmetric(&cov, 1e-12) || !is_psd(&cov) {
            return Err(AdpError::Config("noise covariance must be symmetric PSD".into()));
        }
        GaussianNoise::new(cov).map_err(|e| AdpError::Config(format!("noise: {e}")))
    }

    /// Checks every field against every dimension the run will use.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AdpError::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_constraints.is_empty() || self.n_constraints.contains(&0) {
            return Err(AdpError::Config("n_constraints must be a nonempty list of positive counts".into()));
        }
        if self.mc_draws == 0 || self.repetitions == 0 {
            return Err(AdpError::Config("mc_draws and repetitions must be positive".into()));
        }
        if self.pairing == Pairing::EqualRows && self.n_constraints.iter().any(|n| *n < 2) {
            return Err(AdpError::Config("equal-rows pairing needs at least 2 constraints".into()));
        }
        for (n_x, n_u) in self.dims()? {
            self.stage_cost_for(n_x, n_u)?;
            self.objective_for(n_x, n_u)?;
            self.noise_for(n_x)?;
            self.state_dist.resolve(n_x)?;
            self.input_dist.resolve(n_u)?;
        }
        if self.experiment == 3 {
            if self.cartpole.is_none() {
                return Err(AdpError::Config("experiment 3 needs `cartpole`".into()));
            }
            let init = self
                .initial_dist
                .as_ref()
                .ok_or_else(|| AdpError::Config("experiment 3 needs `initial_dist`".into()))?;
            init.resolve(4)?;
            if self.n_rollouts == 0 {
                return Err(AdpError::Config("n_rollouts must be positive".into()));
            }
            if self.horizon == Some(0) {
                return Err(AdpError::Config("horizon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Smallest `H` with `γ^H ≤ eps`.
pub fn truncation_horizon(gamma: f64, eps: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let mut h = (eps.ln() / gamma.ln()).ceil().max(1.0) as usize;
    while h > 1 && gamma.powi(h as i32 - 1) <= eps {
        h -= 1;
    }
    while gamma.powi(h as i32) > eps {
        h += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_one_defaults() {
        let c = ExperimentConfig::defaults(1).unwrap();
        c.validate().unwrap();
        assert_eq!(c.gamma, 0.95);
        assert_eq!(c.stage_cost_for(2, 1).unwrap().matrix(), &diag(&[1.0, 1.0, 1e-2]));
        assert_eq!(c.objective_for(2, 1).unwrap().matrix(), &diag(&[1.0, 1.0, 0.1]));
        let sd = c.state_dist.resolve(2).unwrap();
        assert_eq!((sd.lower.clone(), sd.upper.clone()), (vec![-3.0; 2], vec![3.0; 2]));
        let ud = c.input_dist.resolve(1).unwrap();
        assert_eq!((ud.lower.clone(), ud.upper.clone()), (vec![-1.0], vec![1.0]));
        assert_eq!(c.noise_for(2).unwrap().cov(), &(DMatrix::identity(2, 2) * 1e-6));
        assert_eq!(c.mc_draws, 100);
        assert_eq!(*c.n_constraints.iter().max().unwrap(), 20_000);
        let (a, b) = c.system.unwrap().matrices().unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.5, -0.5]));
        assert_eq!(b, DMatrix::from_row_slice(2, 1, &[1.0, 0.5]));
    }

    #[test]
    fn experiment_two_defaults() {
        let c = ExperimentConfig::defaults(2).unwrap();
        c.validate().unwrap();
        assert_eq!(c.state_dims.clone().unwrap(), (2..=10).collect::<Vec<_>>());
        assert_eq!(
            c.stage_cost_for(3, 2).unwrap().matrix(),
            &diag(&[1.0, 1.0, 1.0, 1e-4, 1e-4])
        );
        assert_eq!(c.objective_for(3, 2).unwrap().matrix(), &diag(&[1.0, 1.0, 1.0, 0.8, 0.8]));
        assert_eq!(c.n_constraints, vec![50_000]);
        assert_eq!(c.noise_for(4).unwrap().cov(), &(DMatrix::identity(4, 4) * 1e-4));
    }

    #[test]
    fn experiment_three_defaults() {
        let c = ExperimentConfig::defaults(3).unwrap();
        c.validate().unwrap();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(
            c.stage_cost_for(4, 1).unwrap().matrix(),
            &diag(&[1.0, 1.0, 100.0, 10.0, 1e-3])
        );
        assert_eq!(c.objective_for(4, 1).unwrap().matrix(), &diag(&[1.0, 1.0, 1.0, 1.0, 0.8]));
        let ud = c.input_dist.resolve(1).unwrap();
        assert_eq!(ud.upper, vec![100.0]);
        assert_eq!(c.n_constraints, vec![10_000]);
        assert_eq!(c.mc_draws, 1);
        let init = c.initial_dist.as_ref().unwrap().resolve(4).unwrap();
        assert_eq!(init.upper, vec![1.0, 1.0, 0.5, 0.5]);
        assert_eq!(c.rollout_horizon(), 1375);
    }

    #[test]
    fn horizons() {
        assert_eq!(truncation_horizon(0.99, 1e-6), 1375);
        let h = truncation_horizon(0.95, 1e-6);
        assert!(0.95f64.powi(h as i32) <= 1e-6 && 0.95f64.powi(h as i32 - 1) > 1e-6);
    }

    #[test]
    fn overlay_and_errors() {
        let c = ExperimentConfig::from_json_overlay(1, r#"{"seed": 7, "mc_draws": 5}"#).unwrap();
        assert_eq!((c.seed, c.mc_draws, c.gamma), (7, 5, 0.95));
        let c = ExperimentConfig::from_json_overlay(
            1,
            r#"{"noise": {"diag": [1e-3, 2e-3]}, "state_dist": {"lower": [-1, -2], "upper": [1, 2]}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.noise_for(2).unwrap().cov(), &diag(&[1e-3, 2e-3]));
        for bad in [
            r#"{"bogus": 1}"#,
            r#"[1, 2]"#,
            r#"{"experiment": 2}"#,
            r#"{"pairing": "sideways"}"#,
            "not json",
        ] {
            assert!(ExperimentConfig::from_json_overlay(1, bad).is_err(), "{bad}");
        }
        for bad in [r#"{"gamma": 1.0}"#, r#"{"n_constraints": []}"#, r#"{"noise": {"diag": [1]}}"#] {
            let c = ExperimentConfig::from_json_overlay(1, bad).unwrap();
            assert!(c.validate().is_err(), "{bad}");
        }
    }

    #[test]
    fn defaults_round_trip_through_json() {
        for id in 1..=3 {
            let c = ExperimentConfig::defaults(id).unwrap();
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(ExperimentConfig::from_json_overlay(id, &text).unwrap(), c);
        }
    }
}
