//! Assembly of the sampled relaxed and classical programs.
//!
//! Both are dense inequality-form LPs `maximize cᵀθ s.t. Gθ ≤ h` over the
//! flat coefficient vector described by [`ThetaLayout`].

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{AdpError, Result};
use crate::linalg::{is_psd, is_symmetric};
use crate::qbasis::{SymLayout, ThetaLayout};
use crate::sampling::Dataset;

/// Covariance `C` of the zero-mean objective measure, so that
/// `E_c q = Tr(Q C) + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveMoments {
    c: DMatrix<f64>,
}

impl ObjectiveMoments {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&c, 1e-12) || !is_psd(&c) {
            return Err(AdpError::InvalidArgument(
                "objective covariance must be symmetric PSD".into(),
            ));
        }
        Ok(ObjectiveMoments { c })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }
}

/// `maximize objectiveᵀθ s.t. g θ ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// Dense `n_rows × n_vars` constraint matrix.
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
    /// How θ maps back to quadratic functions; `None` for generic LPs.
    pub layout: Option<ThetaLayout>,
}

impl LpProblem {
    pub fn new(
        objective: Vec<f64>,
        g: DMatrix<f64>,
        h: Vec<f64>,
        layout: Option<ThetaLayout>,
    ) -> Result<Self> {
        if g.ncols() != objective.len() {
            return Err(AdpError::dim("LpProblem columns", objective.len(), g.ncols()));
        }
        if g.nrows() != h.len() {
            return Err(AdpError::dim("LpProblem rows", h.len(), g.nrows()));
        }
        if let Some(l) = layout {
            if l.n_vars() != objective.len() {
                return Err(AdpError::dim("LpProblem layout", l.n_vars(), objective.len()));
            }
        }
        Ok(LpProblem {
            objective,
            g,
            h,
            layout,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.h.len()
    }

    /// Writes the plain-text interchange format:
    ///
    /// ```text
    /// # comment lines start with '#'
    /// layout relaxed <n_x> <n_u>      (or: classical <n_x> <n_u> / none)
    /// vars <n>
    /// rows <m>
    /// obj c_0 ... c_{n-1}
    /// row h_i g_i0 ... g_i(n-1)        (m lines)
    /// end
    /// ```
    ///
    /// The program is `maximize objᵀθ` subject to every row
    /// `Σ_j g_ij θ_j ≤ h_i`; θ is free.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# maximize obj'theta subject to g_i'theta <= h_i, theta free")?;
        match self.layout {
            Some(ThetaLayout::Relaxed { n_x, n_u }) => writeln!(w, "layout relaxed {n_x} {n_u}")?,
            Some(ThetaLayout::Classical { n_x, n_u }) => {
                writeln!(w, "layout classical {n_x} {n_u}")?
            }
            None => writeln!(w, "layout none")?,
        }
        writeln!(w, "vars {}", self.n_vars())?;
        writeln!(w, "rows {}", self.n_rows())?;
        write!(w, "obj")?;
        for c in &self.objective {
            write!(w, " {c}")?;
        }
        writeln!(w)?;
        for (i, h) in self.h.iter().enumerate() {
            write!(w, "row {h}")?;
            for j in 0..self.n_vars() {
                write!(w, " {}", self.g[(i, j)])?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    /// Parses the format written by [`LpProblem::write_text`].
    pub fn parse_text<R: BufRead>(reader: R) -> Result<LpProblem> {
        const MAX_VARS: usize = 1 << 16;

        let mut layout: Option<Option<ThetaLayout>> = None;
        let mut n_vars: Option<usize> = None;
        let mut n_rows: Option<usize> = None;
        let mut objective: Option<Vec<f64>> = None;
        let mut h = Vec::new();
        let mut entries = Vec::new();
        let mut ended = false;
        let mut last = 1;

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            last = lineno;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if ended {
                return Err(AdpError::parse(lineno, "content after 'end'"));
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap_or_default();
            match keyword {
                "layout" => {
                    if layout.is_some() {
                        return Err(AdpError::parse(lineno, "duplicate layout"));
                    }
                    let kind = tokens.next().unwrap_or_default();
                    let parsed = match kind {
                        "none" => None,
                        "relaxed" | "classical" => {
                            let n_x = parse_usize(tokens.next(), lineno)?;
                            let n_u = parse_usize(tokens.next(), lineno)?;
                            if n_x == 0 || n_u == 0 || n_x > 1024 || n_u > 1024 {
                                return Err(AdpError::parse(lineno, "layout dimensions out of range"));
                            }
                            Some(if kind == "relaxed" {
                                ThetaLayout::Relaxed { n_x, n_u }
                            } else {
                                ThetaLayout::Classical { n_x, n_u }
                            })
                        }
                        _ => return Err(AdpError::parse(lineno, format!("unknown layout {kind:?}"))),
                    };
                    if tokens.next().is_some() {
                        return Err(AdpError::parse(lineno, "trailing tokens"));
                    }
                    layout = Some(parsed);
                }
                "vars" | "rows" => {
                    let v = parse_usize(tokens.next(), lineno)?;
                    if tokens.next().is_some() {
                        return Err(AdpError::parse(lineno, "trailing tokens"));
                    }
                    let slot = if keyword == "vars" { &mut n_vars } else { &mut n_rows };
                    if slot.is_some() {
                        return Err(AdpError::parse(lineno, format!("duplicate {keyword}")));
                    }
                    if keyword == "vars" && (v == 0 || v > MAX_VARS) {
                        return Err(AdpError::parse(lineno, "variable count out of range"));
                    }
                    *slot = Some(v);
                }
                "obj" => {
                    let n = n_vars.ok_or_else(|| AdpError::parse(lineno, "'vars' must precede 'obj'"))?;
                    if objective.is_some() {
                        return Err(AdpError::parse(lineno, "duplicate obj"));
                    }
                    let vals = parse_numbers(tokens, lineno)?;
                    if vals.len() != n {
                        return Err(AdpError::parse(lineno, format!("expected {n} objective coefficients")));
                    }
                    objective = Some(vals);
                }
                "row" => {
                    let n = n_vars.ok_or_else(|| AdpError::parse(lineno, "'vars' must precede rows"))?;
                    let m = n_rows.ok_or_else(|| AdpError::parse(lineno, "'rows' must precede rows"))?;
                    if h.len() >= m {
                        return Err(AdpError::parse(lineno, "more rows than declared"));
                    }
                    let vals = parse_numbers(tokens, lineno)?;
                    if vals.len() != n + 1 {
                        return Err(AdpError::parse(lineno, format!("expected rhs plus {n} coefficients")));
                    }
                    h.push(vals[0]);
                    entries.extend_from_slice(&vals[1..]);
                }
                "end" => ended = true,
                other => return Err(AdpError::parse(lineno, format!("unknown keyword {other:?}"))),
            }
        }
        if !ended {
            return Err(AdpError::parse(last, "missing 'end'"));
        }
        let n = n_vars.ok_or_else(|| AdpError::parse(last, "missing 'vars'"))?;
        let m = n_rows.ok_or_else(|| AdpError::parse(last, "missing 'rows'"))?;
        let objective = objective.ok_or_else(|| AdpError::parse(last, "missing 'obj'"))?;
        if h.len() != m {
            return Err(AdpError::parse(last, format!("declared {m} rows, found {}", h.len())));
        }
        let g = DMatrix::from_row_slice(m, n, &entries);
        LpProblem::new(objective, g, h, layout.flatten()).map_err(|e| AdpError::parse(last, e.to_string()))
    }
}

fn parse_usize(tok: Option<&str>, line: usize) -> Result<usize> {
    tok.ok_or_else(|| AdpError::parse(line, "missing integer"))?
        .parse()
        .map_err(|_| AdpError::parse(line, "invalid integer"))
}

fn parse_numbers<'a>(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    tokens
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(AdpError::parse(line, format!("invalid number {t:?}"))),
        })
        .collect()
}

/// Objective coefficients with `cᵀθ = Tr(Q C) + e`: `C_ii` on diagonal
/// slots, `2 C_ij` on off-diagonal slots, 1 on `e`, 0 on any v-variables.
pub fn objective_vector(moments: &ObjectiveMoments, layout: &ThetaLayout) -> Result<Vec<f64>> {
    let ql = layout.q_layout();
    let c = moments.matrix();
    if c.nrows() != ql.dim {
        return Err(AdpError::dim("objective covariance", ql.dim, c.nrows()));
    }
    let mut obj = vec![0.0; layout.n_vars()];
    for (k, (i, j)) in ql.pairs().enumerate() {
        obj[k] = if i == j { c[(i, i)] } else { 2.0 * c[(i, j)] };
    }
    obj[layout.e_index()] = 1.0;
    Ok(obj)
}

fn check_build(data: &Dataset, gamma: f64) -> Result<()> {
    if data.is_empty() {
        return Err(AdpError::InvalidArgument("empty dataset".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) && gamma != 0.0 {
        return Err(AdpError::InvalidArgument(format!(
            "discount factor must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Relaxed program: one row per sample encoding
/// `q(x,u) ≤ ℓ(x,u) + γ · mean_i q(x⁺_i, w)`.
pub fn build_rlp(data: &Dataset, gamma: f64, moments: &ObjectiveMoments) -> Result<LpProblem> {
    check_build(data, gamma)?;
    let (n_x, n_u) = (data.n_x(), data.n_u());
    let layout = ThetaLayout::Relaxed { n_x, n_u };
    let objective = objective_vector(moments, &layout)?;
    let ql = layout.q_layout();
    let n_slots = ql.n_slots();
    let n_rows = data.len();
    let mut g = DMatrix::zeros(n_rows, layout.n_vars());
    let mut h = Vec::with_capacity(n_rows);

    let mut z = vec![0.0; n_x + n_u];
    let mut phi = vec![0.0; n_slots];
    let mut row = vec![0.0; n_slots];
    for (r, s) in data.samples().iter().enumerate() {
        row.fill(0.0);
        let scale = gamma / s.next_states.ncols() as f64;
        z[n_x..].copy_from_slice(s.w.as_slice());
        for xp in s.next_states.column_iter() {
            z[..n_x].copy_from_slice(xp.as_slice());
            ql.features_into(&z, &mut phi);
            for (acc, p) in row.iter_mut().zip(&phi) {
                *acc -= scale * p;
            }
        }
        z[..n_x].copy_from_slice(s.x.as_slice());
        z[n_x..].copy_from_slice(s.u.as_slice());
        ql.features_into(&z, &mut phi);
        for (k, (acc, p)) in row.iter().zip(&phi).enumerate() {
            g[(r, k)] = p + acc;
        }
        g[(r, layout.e_index())] = 1.0 - gamma;
        h.push(s.cost);
    }
    LpProblem::new(objective, g, h, Some(layout))
}

/// Classical program over `(q, v)`, two rows per sample:
/// family A `q(x,u) − γ · mean_i v(x⁺_i) ≤ ℓ(x,u)` (rows `0..N`) and
/// family B `v(x) − q(x,u) ≤ 0` (rows `N..2N`).
pub fn build_lp(data: &Dataset, gamma: f64, moments: &ObjectiveMoments) -> Result<LpProblem> {
    check_build(data, gamma)?;
    let (n_x, n_u) = (data.n_x(), data.n_u());
    let layout = ThetaLayout::Classical { n_x, n_u };
    let objective = objective_vector(moments, &layout)?;
    let ql = layout.q_layout();
    let vl = SymLayout::new(n_x);
    let v_off = layout.v_offset().expect("classical layout");
    let ev = layout.ev_index().expect("classical layout");
    let e = layout.e_index();
    let n = data.len();
    let mut g = DMatrix::zeros(2 * n, layout.n_vars());
    let mut h = vec![0.0; 2 * n];

    let mut z = vec![0.0; n_x + n_u];
    let mut phi_q = vec![0.0; ql.n_slots()];
    let mut phi_v = vec![0.0; vl.n_slots()];
    let mut mean_v = vec![0.0; vl.n_slots()];
    for (r, s) in data.samples().iter().enumerate() {
        z[..n_x].copy_from_slice(s.x.as_slice());
        z[n_x..].copy_from_slice(s.u.as_slice());
        ql.features_into(&z, &mut phi_q);

        mean_v.fill(0.0);
        let scale = 1.0 / s.next_states.ncols() as f64;
        for xp in s.next_states.column_iter() {
            vl.features_into(xp.as_slice(), &mut phi_v);
            for (acc, p) in mean_v.iter_mut().zip(&phi_v) {
                *acc += scale * p;
            }
        }

        // family A
        for (k, p) in phi_q.iter().enumerate() {
            g[(r, k)] = *p;
        }
        g[(r, e)] = 1.0;
        for (k, p) in mean_v.iter().enumerate() {
            g[(r, v_off + k)] = -gamma * p;
        }
        g[(r, ev)] = -gamma;
        h[r] = s.cost;

        // family B
        let rb = n + r;
        for (k, p) in phi_q.iter().enumerate() {
            g[(rb, k)] = -p;
        }
        g[(rb, e)] = -1.0;
        vl.features_into(s.x.as_slice(), &mut phi_v);
        for (k, p) in phi_v.iter().enumerate() {
            g[(rb, v_off + k)] = *p;
        }
        g[(rb, ev)] = 1.0;
    }
    LpProblem::new(objective, g, h, Some(layout))
}
