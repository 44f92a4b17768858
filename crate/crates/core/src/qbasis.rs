//! Quadratic q-functions `q(x,u) = [x;u]ᵀ Q [x;u] + e`, their flat
//! coefficient layout and policy extraction.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{AdpError, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, quad_form, stack, PD_TOL};

/// Slot order for a symmetric `dim × dim` matrix: the diagonal first, then
/// the strict upper triangle row by row. Each off-diagonal pair is stored once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymLayout {
    pub dim: usize,
}

impl SymLayout {
    pub fn new(dim: usize) -> Self {
        SymLayout { dim }
    }

    pub fn n_slots(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// `(i, j)` index of every slot, in slot order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.dim;
        (0..n)
            .map(|i| (i, i))
            .chain((0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn to_flat(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.pairs().map(|(i, j)| m[(i, j)]).collect()
    }

    pub fn from_flat(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for ((i, j), v) in self.pairs().zip(coeffs) {
            m[(i, j)] = *v;
            m[(j, i)] = *v;
        }
        m
    }

    /// Writes `φ(z)` into `out`: `z_i²` on diagonal slots and `2 z_i z_j` on
    /// off-diagonal slots, so that `zᵀ Q z = φ(z) · to_flat(Q)`.
    pub fn features_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            out[i] = z[i] * z[i];
        }
        let mut k = n;
        for i in 0..n {
            let zi2 = 2.0 * z[i];
            for zj in &z[i + 1..n] {
                out[k] = zi2 * zj;
                k += 1;
            }
        }
    }
}

/// Quadratic feature map of a joint vector, ordered per [`SymLayout`].
pub fn features(z: &[f64], dim: usize) -> Result<Vec<f64>> {
    if z.len() != dim {
        return Err(AdpError::dim("features", dim, z.len()));
    }
    let layout = SymLayout::new(dim);
    let mut out = vec![0.0; layout.n_slots()];
    layout.features_into(z, &mut out);
    Ok(out)
}

/// Decision-vector layout of the two programs.
///
/// Relaxed: `[Q-slots, e]`. Classical: `[Q-slots, e, V-slots, e_v]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaLayout {
    Relaxed { n_x: usize, n_u: usize },
    Classical { n_x: usize, n_u: usize },
}

impl ThetaLayout {
    pub fn n_x(&self) -> usize {
        match *self {
            ThetaLayout::Relaxed { n_x, .. } | ThetaLayout::Classical { n_x, .. } => n_x,
        }
    }

    pub fn n_u(&self) -> usize {
        match *self {
            ThetaLayout::Relaxed { n_u, .. } | ThetaLayout::Classical { n_u, .. } => n_u,
        }
    }

    pub fn q_layout(&self) -> SymLayout {
        SymLayout::new(self.n_x() + self.n_u())
    }

    pub fn v_layout(&self) -> Option<SymLayout> {
        match self {
            ThetaLayout::Relaxed { .. } => None,
            ThetaLayout::Classical { n_x, .. } => Some(SymLayout::new(*n_x)),
        }
    }

    /// Index of the q offset `e`.
    pub fn e_index(&self) -> usize {
        self.q_layout().n_slots()
    }

    /// First V-slot; `None` for the relaxed layout.
    pub fn v_offset(&self) -> Option<usize> {
        self.v_layout().map(|_| self.e_index() + 1)
    }

    /// Index of the v offset `e_v`; `None` for the relaxed layout.
    pub fn ev_index(&self) -> Option<usize> {
        self.v_layout().map(|v| self.e_index() + 1 + v.n_slots())
    }

    pub fn n_vars(&self) -> usize {
        let q = self.q_layout().n_slots() + 1;
        q + self.v_layout().map_or(0, |v| v.n_slots() + 1)
    }

    pub fn encode(&self, q: &QuadraticQ, v: Option<&QuadraticV>) -> Result<Vec<f64>> {
        if q.n_x() != self.n_x() || q.n_u() != self.n_u() {
            return Err(AdpError::dim("ThetaLayout::encode q", self.n_x() + self.n_u(), q.dim()));
        }
        let mut theta = self.q_layout().to_flat(&q.qmat);
        theta.push(q.e);
        match (self.v_layout(), v) {
            (None, None) => {}
            (Some(vl), Some(v)) => {
                if v.vmat.nrows() != vl.dim {
                    return Err(AdpError::dim("ThetaLayout::encode v", vl.dim, v.vmat.nrows()));
                }
                theta.extend(vl.to_flat(&v.vmat));
                theta.push(v.e);
            }
            _ => {
                return Err(AdpError::InvalidArgument(
                    "value function part must be given iff the layout is classical".into(),
                ))
            }
        }
        Ok(theta)
    }

    pub fn decode(&self, theta: &[f64]) -> Result<(QuadraticQ, Option<QuadraticV>)> {
        if theta.len() != self.n_vars() {
            return Err(AdpError::dim("ThetaLayout::decode", self.n_vars(), theta.len()));
        }
        let ql = self.q_layout();
        let e_idx = self.e_index();
        let q = QuadraticQ {
            qmat: ql.from_flat(&theta[..e_idx]),
            e: theta[e_idx],
            n_x: self.n_x(),
        };
        let v = self.v_layout().map(|vl| {
            let off = e_idx + 1;
            QuadraticV {
                vmat: vl.from_flat(&theta[off..off + vl.n_slots()]),
                e: theta[off + vl.n_slots()],
            }
        });
        Ok((q, v))
    }
}

/// `q(x,u) = [x;u]ᵀ Q [x;u] + e` with symmetric `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticQ {
    pub qmat: DMatrix<f64>,
    pub e: f64,
    n_x: usize,
}

impl QuadraticQ {
    pub fn new(qmat: DMatrix<f64>, e: f64, n_x: usize) -> Result<Self> {
        if !is_symmetric(&qmat, 1e-12) {
            return Err(AdpError::InvalidArgument(
                "q kernel must be square and symmetric".into(),
            ));
        }
        if n_x == 0 || n_x >= qmat.nrows() {
            return Err(AdpError::InvalidArgument(format!(
                "state dimension {n_x} incompatible with kernel of size {}",
                qmat.nrows()
            )));
        }
        Ok(QuadraticQ { qmat, e, n_x })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.qmat.nrows() - self.n_x
    }

    pub fn dim(&self) -> usize {
        self.qmat.nrows()
    }

    pub fn qxx(&self) -> DMatrix<f64> {
        self.qmat.view((0, 0), (self.n_x, self.n_x)).into_owned()
    }

    pub fn qxu(&self) -> DMatrix<f64> {
        self.qmat.view((0, self.n_x), (self.n_x, self.n_u())).into_owned()
    }

    pub fn quu(&self) -> DMatrix<f64> {
        let n_u = self.n_u();
        self.qmat.view((self.n_x, self.n_x), (n_u, n_u)).into_owned()
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        if x.len() != self.n_x {
            return Err(AdpError::dim("eval_q state", self.n_x, x.len()));
        }
        if u.len() != self.n_u() {
            return Err(AdpError::dim("eval_q input", self.n_u(), u.len()));
        }
        Ok(quad_form(&self.qmat, &stack(x, u)) + self.e)
    }

    /// Greedy linear policy `K = −q_uu⁻¹ q_xuᵀ`. Never reads `e`.
    pub fn extract_policy(&self) -> Result<LinearPolicy> {
        let quu = self.quu();
        let lam = min_eigenvalue(&quu);
        if !(lam > PD_TOL) {
            return Err(AdpError::NonExtractable {
                min_eigenvalue: lam,
            });
        }
        let chol = quu.cholesky().ok_or(AdpError::NonExtractable {
            min_eigenvalue: lam,
        })?;
        let k = -chol.solve(&self.qxu().transpose());
        Ok(LinearPolicy::new(k))
    }
}

/// `v(x) = xᵀ V x + e_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticV {
    pub vmat: DMatrix<f64>,
    pub e: f64,
}

impl QuadraticV {
    pub fn new(vmat: DMatrix<f64>, e: f64) -> Result<Self> {
        if !is_symmetric(&vmat, 1e-12) {
            return Err(AdpError::InvalidArgument(
                "v kernel must be square and symmetric".into(),
            ));
        }
        Ok(QuadraticV { vmat, e })
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.vmat.nrows() {
            return Err(AdpError::dim("eval_v", self.vmat.nrows(), x.len()));
        }
        Ok(quad_form(&self.vmat, x) + self.e)
    }
}

/// State feedback `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub k: DMatrix<f64>,
}

impl LinearPolicy {
    pub fn new(k: DMatrix<f64>) -> Self {
        LinearPolicy { k }
    }

    pub fn state_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn action(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }
}

/// Writes q-functions as CSV, one per row:
/// `label,n_x,n_u,<slot columns per SymLayout>,e`. Slot columns are named
/// `q_i_j`. All rows must share dimensions.
pub fn write_q_csv<W: Write>(writer: W, rows: &[(String, QuadraticQ)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some((_, first)) = rows.first() else {
        w.flush()?;
        return Ok(());
    };
    let layout = SymLayout::new(first.dim());
    let mut header = vec!["label".to_string(), "n_x".into(), "n_u".into()];
    header.extend(layout.pairs().map(|(i, j)| format!("q_{i}_{j}")));
    header.push("e".into());
    w.write_record(&header)?;
    for (label, q) in rows {
        if q.dim() != first.dim() || q.n_x() != first.n_x() {
            return Err(AdpError::InvalidArgument(
                "all q-functions in one CSV must share dimensions".into(),
            ));
        }
        let mut rec = vec![label.clone(), q.n_x().to_string(), q.n_u().to_string()];
        rec.extend(layout.to_flat(&q.qmat).iter().map(|v| v.to_string()));
        rec.push(q.e.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_q_csv`].
pub fn read_q_csv<R: Read>(reader: R) -> Result<Vec<(String, QuadraticQ)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < 5 || &header[0] != "label" || &header[1] != "n_x" || &header[2] != "n_u" {
        return Err(AdpError::parse(1, "expected header label,n_x,n_u,..."));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(AdpError::parse(line, "field count differs from header"));
        }
        let n_x: usize = parse_field(&rec[1], line)?;
        let n_u: usize = parse_field(&rec[2], line)?;
        let dim = n_x
            .checked_add(n_u)
            .ok_or_else(|| AdpError::parse(line, "dimension overflow"))?;
        let layout = SymLayout::new(dim);
        if n_x == 0 || n_u == 0 || dim > 4096 || layout.n_slots() + 4 != header.len() {
            return Err(AdpError::parse(line, "dimensions inconsistent with header"));
        }
        let coeffs = (3..header.len())
            .map(|i| parse_field::<f64>(&rec[i], line))
            .collect::<Result<Vec<_>>>()?;
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::parse(line, "non-finite coefficient"));
        }
        let (slots, e) = coeffs.split_at(layout.n_slots());
        let q = QuadraticQ::new(layout.from_flat(slots), e[0], n_x)
            .map_err(|err| AdpError::parse(line, err.to_string()))?;
        out.push((rec[0].to_string(), q));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| AdpError::parse(line, format!("cannot parse field {s:?}")))
}
