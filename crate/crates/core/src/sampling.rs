//! Constraint sampling: i.i.d. `(x, u, w)` draws, each paired with the
//! measured cost and `M` Monte Carlo successor states.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::TransitionSource;
use crate::error::{AdpError, Result};

/// Independent uniform coordinates on `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDistribution {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDistribution {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxDistribution { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `[-half_width, half_width]` in every coordinate.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(
            half_widths.iter().map(|h| -h).collect(),
            half_widths.to_vec(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(AdpError::dim("BoxDistribution bounds", self.lower.len(), self.upper.len()));
        }
        if self.lower.is_empty() {
            return Err(AdpError::InvalidArgument("box distribution has no coordinates".into()));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(AdpError::InvalidArgument(format!(
                    "invalid box bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
        )
    }
}

/// One sampled constraint: `(x, u)`, its cost, `M` successor draws and the
/// comparison input `w` used by the relaxed program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub cost: f64,
    /// Successor draws, one column per draw (`n_x × M`).
    pub next_states: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl ConstraintSample {
    /// Monte Carlo mean of the successor draws.
    pub fn mean_next_state(&self) -> DVector<f64> {
        self.next_states.column_mean()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub state_dist: BoxDistribution,
    pub input_dist: BoxDistribution,
    pub mc_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<ConstraintSample>,
    n_x: usize,
    n_u: usize,
    /// Present when the dataset was generated (not read back from CSV).
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    pub fn new(samples: Vec<ConstraintSample>, meta: Option<DatasetMeta>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| AdpError::InvalidArgument("empty dataset".into()))?;
        let (n_x, n_u) = (first.x.len(), first.u.len());
        for s in &samples {
            if s.x.len() != n_x {
                return Err(AdpError::dim("dataset state", n_x, s.x.len()));
            }
            if s.u.len() != n_u || s.w.len() != n_u {
                return Err(AdpError::dim("dataset input", n_u, s.u.len().max(s.w.len())));
            }
            if s.next_states.ncols() == 0 {
                return Err(AdpError::InvalidArgument("sample without successor draws".into()));
            }
            if s.next_states.nrows() != n_x {
                return Err(AdpError::dim("dataset successor", n_x, s.next_states.nrows()));
            }
            if !(s.cost >= 0.0) {
                return Err(AdpError::InvalidArgument(format!("negative cost {}", s.cost)));
            }
        }
        Ok(Dataset {
            samples,
            n_x,
            n_u,
            meta,
        })
    }

    pub fn samples(&self) -> &[ConstraintSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    /// The first `n` samples. Because every sample draws from its own
    /// stream, this equals a freshly generated dataset of size `n`.
    pub fn prefix(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(AdpError::InvalidArgument(format!(
                "prefix of {n} samples from a dataset of {}",
                self.len()
            )));
        }
        Ok(Dataset {
            samples: self.samples[..n].to_vec(),
            n_x: self.n_x,
            n_u: self.n_u,
            meta: self.meta.clone(),
        })
    }

    /// CSV with one row per Monte Carlo draw:
    /// `x_0..x_{nx-1},u_0..u_{nu-1},w_0..w_{nu-1},cost,mc_index,xp_0..xp_{nx-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(csv_header(self.n_x, self.n_u))?;
        let mut rec: Vec<String> = Vec::with_capacity(2 * self.n_x + 2 * self.n_u + 2);
        for s in &self.samples {
            for (k, xp) in s.next_states.column_iter().enumerate() {
                rec.clear();
                rec.extend(s.x.iter().map(f64::to_string));
                rec.extend(s.u.iter().map(f64::to_string));
                rec.extend(s.w.iter().map(f64::to_string));
                rec.push(s.cost.to_string());
                rec.push(k.to_string());
                rec.extend(xp.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Dataset::write_csv`]. Rows with `mc_index = 0` open a new
    /// sample; later draws must repeat its `x, u, w, cost` exactly.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let n_x = count("x_");
        let n_u = count("u_");
        let expect = csv_header(n_x, n_u);
        if n_x == 0 || n_u == 0 || header.iter().ne(expect.iter().map(String::as_str)) {
            return Err(AdpError::parse(1, "unexpected dataset header"));
        }
        // samples with their draws flattened column by column
        let mut samples: Vec<(ConstraintSample, Vec<f64>)> = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let line = row + 2;
            let rec = rec?;
            if rec.len() != expect.len() {
                return Err(AdpError::parse(line, "field count differs from header"));
            }
            let num = |i: usize| -> Result<f64> {
                let v: f64 = rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| AdpError::parse(line, format!("bad number {:?}", &rec[i])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(AdpError::parse(line, "non-finite value"))
                }
            };
            let vec_at = |start: usize, len: usize| -> Result<DVector<f64>> {
                let vals = (start..start + len).map(num).collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(vals))
            };
            let x = vec_at(0, n_x)?;
            let u = vec_at(n_x, n_u)?;
            let w = vec_at(n_x + n_u, n_u)?;
            let cost = num(n_x + 2 * n_u)?;
            let mc_index: usize = rec[n_x + 2 * n_u + 1]
                .trim()
                .parse()
                .map_err(|_| AdpError::parse(line, "bad mc_index"))?;
            let xp = vec_at(n_x + 2 * n_u + 2, n_x)?;
            if mc_index == 0 {
                if cost < 0.0 {
                    return Err(AdpError::parse(line, "negative cost"));
                }
                let sample = ConstraintSample {
                    x,
                    u,
                    cost,
                    next_states: DMatrix::zeros(n_x, 0),
                    w,
                };
                samples.push((sample, xp.as_slice().to_vec()));
                continue;
            }
            let Some((cur, draws)) = samples.last_mut() else {
                return Err(AdpError::parse(line, "first row must have mc_index 0"));
            };
            if mc_index != draws.len() / n_x {
                return Err(AdpError::parse(line, "mc_index out of sequence"));
            }
            if cur.x != x || cur.u != u || cur.w != w || cur.cost != cost {
                return Err(AdpError::parse(line, "draw does not match its sample"));
            }
            draws.extend_from_slice(xp.as_slice());
        }
        if samples.is_empty() {
            return Err(AdpError::parse(1, "dataset has no rows"));
        }
        let samples = samples
            .into_iter()
            .map(|(mut s, draws)| {
                let m = draws.len() / n_x;
                s.next_states = DMatrix::from_vec(n_x, m, draws);
                s
            })
            .collect();
        Dataset::new(samples, None)
    }
}

fn csv_header(n_x: usize, n_u: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..n_x).map(|i| format!("x_{i}")).collect();
    h.extend((0..n_u).map(|i| format!("u_{i}")));
    h.extend((0..n_u).map(|i| format!("w_{i}")));
    h.push("cost".into());
    h.push("mc_index".into());
    h.extend((0..n_x).map(|i| format!("xp_{i}")));
    h
}

/// Random stream for sample `index` under `seed`; samples never share a stream.
pub fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n_constraints` samples. For each: `x ~ state_dist`, `u ~ input_dist`,
/// `w ~ input_dist` independently, one cost measurement and `mc_draws`
/// successor queries at `(x, u)`.
pub fn sample_dataset<S: TransitionSource>(
    source: &S,
    state_dist: &BoxDistribution,
    input_dist: &BoxDistribution,
    n_constraints: usize,
    mc_draws: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_constraints == 0 || mc_draws == 0 {
        return Err(AdpError::InvalidArgument(
            "need at least one constraint and one Monte Carlo draw".into(),
        ));
    }
    state_dist.validate()?;
    input_dist.validate()?;
    if state_dist.dim() != source.state_dim() {
        return Err(AdpError::dim("state distribution", source.state_dim(), state_dist.dim()));
    }
    if input_dist.dim() != source.input_dim() {
        return Err(AdpError::dim("input distribution", source.input_dim(), input_dist.dim()));
    }
    let samples = (0..n_constraints)
        .map(|i| {
            let mut rng = sample_stream(seed, i as u64);
            let x = state_dist.sample(&mut rng);
            let u = input_dist.sample(&mut rng);
            let w = input_dist.sample(&mut rng);
            let cost = source.cost(&x, &u)?;
            let mut next_states = DMatrix::zeros(x.len(), mc_draws);
            for mut col in next_states.column_iter_mut() {
                col.copy_from(&source.sample_next(&x, &u, &mut rng)?);
            }
            Ok(ConstraintSample {
                x,
                u,
                cost,
                next_states,
                w,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        Some(DatasetMeta {
            state_dist: state_dist.clone(),
            input_dist: input_dist.clone(),
            mc_draws,
            seed,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{GaussianNoise, LtiSystem, Plant, StageCost};
    use nalgebra::DMatrix;

    fn exp1_plant(var: f64) -> Plant<LtiSystem> {
        let noise = if var == 0.0 {
            GaussianNoise::zero(2)
        } else {
            GaussianNoise::isotropic(2, var).unwrap()
        };
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.5, -0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            noise,
        )
        .unwrap();
        Plant::new(sys, StageCost::diagonal(&[1.0, 1.0, 1e-2], 2).unwrap()).unwrap()
    }

    fn dists() -> (BoxDistribution, BoxDistribution) {
        (
            BoxDistribution::symmetric(&[3.0, 3.0]).unwrap(),
            BoxDistribution::symmetric(&[1.0]).unwrap(),
        )
    }

    #[test]
    fn experiment_one_sizes() {
        let (sd, id) = dists();
        let data = sample_dataset(&exp1_plant(1e-6), &sd, &id, 20_000, 100, 1).unwrap();
        assert_eq!(data.len(), 20_000);
        assert!(data.samples().iter().all(|s| s.next_states.ncols() == 100));
    }

    #[test]
    fn deterministic_successor() {
        let (sd, id) = dists();
        let plant = exp1_plant(0.0);
        let data = sample_dataset(&plant, &sd, &id, 50, 1, 3).unwrap();
        for s in data.samples() {
            let expect = plant.dynamics.mean_step(&s.x, &s.u).unwrap();
            assert_eq!(s.next_states, DMatrix::from_columns(&[expect]));
            assert_eq!(s.cost, plant.cost.eval(&s.x, &s.u).unwrap());
        }
    }

    #[test]
    fn seeded_determinism_and_prefix() {
        let (sd, id) = dists();
        let plant = exp1_plant(1e-6);
        let a = sample_dataset(&plant, &sd, &id, 40, 5, 9).unwrap();
        let b = sample_dataset(&plant, &sd, &id, 40, 5, 9).unwrap();
        assert_eq!(a, b);
        let small = sample_dataset(&plant, &sd, &id, 10, 5, 9).unwrap();
        assert_eq!(a.prefix(10).unwrap().samples(), small.samples());
        let other = sample_dataset(&plant, &sd, &id, 40, 5, 10).unwrap();
        assert_ne!(a.samples(), other.samples());
    }

    #[test]
    fn box_samples_cover_bounds() {
        let bx = BoxDistribution::new(vec![-3.0, 0.0], vec![3.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let draws: Vec<_> = (0..n).map(|_| bx.sample(&mut rng)).collect();
        for d in 0..2 {
            let vals: Vec<f64> = draws.iter().map(|v| v[d]).collect();
            let (lo, hi) = (bx.lower[d], bx.upper[d]);
            assert!(vals.iter().all(|v| *v >= lo && *v <= hi));
            let mean = vals.iter().sum::<f64>() / n as f64;
            let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * se);
        }
    }

    #[test]
    fn mc_mean_converges_to_linear_successor() {
        let plant = exp1_plant(1e-2);
        let (sd, id) = dists();
        let data = sample_dataset(&plant, &sd, &id, 20, 4000, 21).unwrap();
        let se = 0.1 / (4000f64).sqrt();
        let mut worst: f64 = 0.0;
        for s in data.samples() {
            let mean = s.mean_next_state();
            let expect = plant.dynamics.mean_step(&s.x, &s.u).unwrap();
            worst = worst.max((mean - expect).amax() / se);
        }
        // 40 coordinates; a 4.5σ excursion has probability ~3e-4 overall
        assert!(worst < 4.5, "worst deviation {worst} standard errors");
    }

    #[test]
    fn invalid_requests() {
        let (sd, id) = dists();
        let plant = exp1_plant(0.0);
        assert!(sample_dataset(&plant, &sd, &id, 0, 1, 0).is_err());
        assert!(sample_dataset(&plant, &sd, &id, 1, 0, 0).is_err());
        assert!(sample_dataset(&plant, &id, &id, 1, 1, 0).is_err());
        assert!(BoxDistribution::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (sd, id) = dists();
        let data = sample_dataset(&exp1_plant(1e-6), &sd, &id, 7, 3, 2).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,u_0,w_0,cost,mc_index,xp_0,xp_1\n"));
        assert_eq!(text.lines().count(), 1 + 7 * 3);
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples(), data.samples());
    }

    #[test]
    fn csv_rejects_inconsistent_draws() {
        let bad = "x_0,u_0,w_0,cost,mc_index,xp_0\n1,2,3,4,0,5\n1,2,3,9,1,5\n";
        assert!(Dataset::read_csv(bad.as_bytes()).is_err());
        let bad = "x_0,u_0,w_0,cost,mc_index,xp_0\n1,2,3,4,1,5\n";
        assert!(Dataset::read_csv(bad.as_bytes()).is_err());
        let ok = "x_0,u_0,w_0,cost,mc_index,xp_0\n1,2,3,4,0,5\n1,2,3,4,1,6\n";
        let d = Dataset::read_csv(ok.as_bytes()).unwrap();
        assert_eq!(d.samples()[0].next_states.ncols(), 2);
    }
}
