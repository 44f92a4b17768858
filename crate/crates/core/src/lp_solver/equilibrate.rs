//! Ruiz equilibration of the constraint matrix plus scalar normalisation of
//! the right-hand side and cost.

use nalgebra::DMatrix;

const RUIZ_PASSES: usize = 15;

/// Scaled problem `min q̂ᵀx̂ s.t. Ĝx̂ + ŝ = ĥ` with `Ĝ = E G D`,
/// `ĥ = β E h`, `q̂ = ρ D q`.
pub(super) struct Scaled {
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    /// Row scaling `E`.
    pub row: Vec<f64>,
    /// Column scaling `D`.
    pub col: Vec<f64>,
    /// Right-hand side factor `β`.
    pub h_scale: f64,
    /// Cost factor `ρ`.
    pub q_scale: f64,
}

impl Scaled {
    pub fn new(g: &DMatrix<f64>, h: &[f64], q: &[f64]) -> Scaled {
        let (m, n) = g.shape();
        let mut gs = g.clone();
        let mut row = vec![1.0; m];
        let mut col = vec![1.0; n];
        for _ in 0..RUIZ_PASSES {
            let mut rmax = vec![0.0f64; m];
            let mut cmax = vec![0.0f64; n];
            for j in 0..n {
                for i in 0..m {
                    let a = gs[(i, j)].abs();
                    rmax[i] = rmax[i].max(a);
                    cmax[j] = cmax[j].max(a);
                }
            }
            let rfac: Vec<f64> = rmax.iter().map(|v| inv_sqrt_or_one(*v)).collect();
            let cfac: Vec<f64> = cmax.iter().map(|v| inv_sqrt_or_one(*v)).collect();
            for j in 0..n {
                for i in 0..m {
                    gs[(i, j)] *= rfac[i] * cfac[j];
                }
            }
            for (r, f) in row.iter_mut().zip(&rfac) {
                *r *= f;
            }
            for (c, f) in col.iter_mut().zip(&cfac) {
                *c *= f;
            }
        }
        let hs: Vec<f64> = h.iter().zip(&row).map(|(v, e)| v * e).collect();
        let qs: Vec<f64> = q.iter().zip(&col).map(|(v, d)| v * d).collect();
        let h_scale = 1.0 / inf_norm(&hs).max(1.0);
        let q_scale = 1.0 / inf_norm(&qs).max(1.0);
        Scaled {
            g: gs,
            h: hs.iter().map(|v| v * h_scale).collect(),
            q: qs.iter().map(|v| v * q_scale).collect(),
            row,
            col,
            h_scale,
            q_scale,
        }
    }

    /// Original-space primal point `x = D x̂ / β`.
    pub fn unscale_x(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.col).map(|(v, d)| v * d / self.h_scale).collect()
    }

    /// Original-space multipliers `y = E ŷ / ρ`.
    pub fn unscale_y(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().zip(&self.row).map(|(v, e)| v * e / self.q_scale).collect()
    }
}

fn inv_sqrt_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        1.0 / v.sqrt()
    } else {
        1.0
    }
}

pub(super) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
