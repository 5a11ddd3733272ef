//! B-spline bases, curvature penalties, and sum-to-zero centering.
//!
//! A smooth term contributes a block of design columns evaluated from a
//! clamped B-spline basis, a symmetric positive-semidefinite penalty
//! matrix penalizing the integrated squared second derivative, and a
//! centering reparameterization that removes the confounding with the
//! intercept by forcing the fitted curve to average zero over the
//! sample.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::num::GaussLegendre;

/// Evaluate all B-spline basis functions at `x` for the given full knot
/// vector (length = basis dimension + degree + 1) and degree. Returns a
/// dense row of length `knots.len() - degree - 1`.
///
/// Uses the Cox-de Boor recursion on the knot span containing `x`; at
/// the right boundary the last nonempty span is used so the closed
/// interval is covered.
pub fn bspline_row(knots: &[f64], degree: usize, x: f64) -> Result<Vec<f64>, Error> {
    let dim = knots
        .len()
        .checked_sub(degree + 1)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::spec("knot vector too short for the requested degree"))?;
    let lo = knots[degree];
    let hi = knots[knots.len() - degree - 1];
    if !(x >= lo && x <= hi) {
        return Err(Error::data(format!(
            "value {x} outside the spline domain [{lo}, {hi}]"
        )));
    }
    let mut row = vec![0.0; dim];
    let span = find_span(knots, degree, x);
    // Nonzero entries are b_{span-degree}, …, b_{span}.
    let vals = nonzero_basis(knots, degree, span, x);
    for (j, v) in vals.iter().enumerate() {
        row[span - degree + j] = *v;
    }
    Ok(row)
}

/// Index of the knot span [t_i, t_{i+1}) containing x, clamped so the
/// right boundary maps to the last nonempty span.
fn find_span(knots: &[f64], degree: usize, x: f64) -> usize {
    let n = knots.len() - degree - 2; // highest valid span index
    let hi = knots.len() - degree - 1;
    if x >= knots[hi] {
        // Right boundary: back up over any repeated end knots.
        let mut i = n;
        while i > degree && knots[i] >= knots[hi] {
            i -= 1;
        }
        return i;
    }
    let mut i = degree;
    while i < n && x >= knots[i + 1] {
        i += 1;
    }
    i
}

/// The degree+1 possibly-nonzero basis values at x on span `span`
/// (standard triangular Cox-de Boor scheme).
fn nonzero_basis(knots: &[f64], degree: usize, span: usize, x: f64) -> Vec<f64> {
    let mut vals = vec![0.0; degree + 1];
    vals[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom > 0.0 { vals[r] / denom } else { 0.0 };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    vals
}

/// A B-spline basis over a clamped knot vector.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    /// Build from strictly increasing breakpoints; the first and last
    /// breakpoints are repeated degree+1 times (clamped ends).
    pub fn from_breakpoints(breaks: &[f64], degree: usize) -> Result<Self, Error> {
        if breaks.len() < 2 {
            return Err(Error::spec("need at least two breakpoints"));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::spec("breakpoints must be strictly increasing"));
        }
        let mut knots = Vec::with_capacity(breaks.len() + 2 * degree);
        for _ in 0..degree {
            knots.push(breaks[0]);
        }
        knots.extend_from_slice(breaks);
        for _ in 0..degree {
            knots.push(*breaks.last().unwrap());
        }
        Ok(BSplineBasis { knots, degree })
    }

    /// Basis with `basis_dim` functions, interior breakpoints at the
    /// empirical quantiles of `values`, boundary breakpoints at the data
    /// range.
    pub fn from_quantiles(values: &[f64], basis_dim: usize, degree: usize) -> Result<Self, Error> {
        if basis_dim < degree + 1 {
            return Err(Error::spec(format!(
                "basis_dim {basis_dim} too small for degree {degree}"
            )));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("smooth covariate contains non-finite values"));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        if n < 2 || sorted[0] == sorted[n - 1] {
            return Err(Error::data(
                "smooth covariate is constant; cannot place knots",
            ));
        }
        // basis_dim functions need basis_dim − degree + 1 breakpoints.
        let nbreaks = basis_dim - degree + 1;
        let mut breaks = Vec::with_capacity(nbreaks);
        breaks.push(sorted[0]);
        for i in 1..nbreaks - 1 {
            let q = i as f64 / (nbreaks - 1) as f64;
            breaks.push(quantile_type7(&sorted, q));
        }
        breaks.push(sorted[n - 1]);
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::data(
                "smooth covariate has too few distinct values for the requested basis dimension",
            ));
        }
        Self::from_breakpoints(&breaks, degree)
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The full (clamped) knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Domain covered by the basis.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.knots.len() - self.degree - 1],
        )
    }

    /// Basis row b(x).
    pub fn row(&self, x: f64) -> Result<Vec<f64>, Error> {
        bspline_row(&self.knots, self.degree, x)
    }

    /// Row of `order`-th derivatives of the basis functions at x, via
    /// the knot-difference recursion on lower-degree bases.
    pub fn deriv_row(&self, x: f64, order: usize) -> Result<Vec<f64>, Error> {
        if order == 0 {
            return self.row(x);
        }
        if order > self.degree {
            return Ok(vec![0.0; self.dim()]);
        }
        // d/dx b_{i,d}(x) = d·[ b_{i,d-1}(x)/(t_{i+d}−t_i) − b_{i+1,d-1}(x)/(t_{i+d+1}−t_{i+1}) ]
        // applied recursively on the same knot vector with the degree
        // lowered: trim one knot from each end per differentiation.
        let lower = BSplineBasis {
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            degree: self.degree - 1,
        };
        let low = lower.deriv_row(x.clamp(lower.domain().0, lower.domain().1), order - 1)?;
        let d = self.degree as f64;
        let mut out = vec![0.0; self.dim()];
        for (i, o) in out.iter_mut().enumerate() {
            // b_{i,d-1} on the trimmed vector is entry i−1; entry -1 is 0.
            let left = if i > 0 {
                let denom = self.knots[i + self.degree] - self.knots[i];
                if denom > 0.0 {
                    low[i - 1] / denom
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let right = if i < low.len() {
                let denom = self.knots[i + self.degree + 1] - self.knots[i + 1];
                if denom > 0.0 {
                    low[i] / denom
                } else {
                    0.0
                }
            } else {
                0.0
            };
            *o = d * (left - right);
        }
        Ok(out)
    }

    /// Curvature penalty S̄ = ∫ b''(v) b''(v)ᵀ dv over the basis domain,
    /// integrated exactly by per-span Gauss-Legendre.
    pub fn curvature_penalty(&self) -> Result<DMatrix<f64>, Error> {
        if self.degree < 2 {
            return Err(Error::spec(
                "curvature penalty needs spline degree at least 2",
            ));
        }
        let q = self.dim();
        let mut s = DMatrix::zeros(q, q);
        // b'' is piecewise polynomial of degree d−2 per span, so the
        // integrand has degree 2d−4; ⌈(2d−3)/2⌉+1 nodes integrate up to
        // degree 2·nodes−1 ≥ 2d−4 exactly.
        let nodes = (2 * self.degree - 3).div_ceil(2) + 1;
        let rule = GaussLegendre::new(nodes);
        let lo_idx = self.degree;
        let hi_idx = self.knots.len() - self.degree - 1;
        for span in lo_idx..hi_idx {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if !(a < b) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let row = self.deriv_row(mid + half * x, 2)?;
                let wt = w * half;
                for i in 0..q {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..q {
                        s[(i, j)] += wt * row[i] * row[j];
                    }
                }
            }
        }
        // Symmetrize exactly against accumulation-order asymmetry.
        for i in 0..q {
            for j in 0..i {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        Ok(s)
    }
}

/// Linear-interpolation sample quantile (type 7) of pre-sorted data.
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// What a design block is made of; parametric blocks carry no penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Parametric,
    Smooth,
    Mrf,
    Random,
}

/// One term's design columns and (optional) penalty.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    pub columns: DMatrix<f64>,
    /// Penalty matrix matching the column count; `None` for parametric
    /// terms (equivalent to a zero matrix).
    pub penalty: Option<DMatrix<f64>>,
    pub kind: BlockKind,
}

/// The reparameterization produced by [`center_block`]: the q-column
/// block is replaced by q−1 columns spanning the same function space
/// intersected with "columns sum to zero over the sample".
///
/// Coefficients map back by β = M β̃ with M = (I − 1 x̄ᵀ) U, where x̄ is
/// the vector of column means and U an orthonormal basis of the
/// complement of the constant vector (Householder construction, data
/// independent). Prediction rows transform as b̃(x) = Uᵀ(b(x) − x̄).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Centering {
    /// Column means of the uncentered block.
    pub col_means: Vec<f64>,
}

impl Centering {
    /// Uncentered dimension q.
    pub fn input_dim(&self) -> usize {
        self.col_means.len()
    }

    /// Householder matrix columns 2..q: an orthonormal basis U of the
    /// orthogonal complement of 1_q.
    fn complement_of_ones(q: usize) -> DMatrix<f64> {
        // Householder vector w = v − e1 with v = 1/√q · 1.
        let v = 1.0 / (q as f64).sqrt();
        let mut w = DVector::from_element(q, v);
        w[0] -= 1.0;
        let wtw = w.dot(&w);
        let mut h = DMatrix::identity(q, q);
        if wtw > 0.0 {
            h -= (&w * w.transpose()) * (2.0 / wtw);
        }
        h.columns(1, q - 1).into_owned()
    }

    /// Map an uncentered basis row to the centered coordinates.
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        let q = self.input_dim();
        assert_eq!(row.len(), q, "basis row length mismatch");
        let u = Self::complement_of_ones(q);
        let shifted = DVector::from_iterator(q, row.iter().zip(&self.col_means).map(|(b, m)| b - m));
        (u.transpose() * shifted).as_slice().to_vec()
    }

    /// The q×(q−1) coefficient-space map M = (I − 1 x̄ᵀ) U.
    pub fn coef_map(&self) -> DMatrix<f64> {
        let q = self.input_dim();
        let u = Self::complement_of_ones(q);
        let ones = DVector::from_element(q, 1.0);
        let xbar = DVector::from_column_slice(&self.col_means);
        let proj = DMatrix::identity(q, q) - ones * xbar.transpose();
        proj * u
    }
}

/// Apply the sum-to-zero reparameterization to a block: columns get
/// their sample means subtracted and one dimension is dropped along the
/// constant direction; the penalty transforms congruently.
pub fn center_block(block: &DesignBlock) -> Result<(DesignBlock, Centering), Error> {
    let q = block.columns.ncols();
    if q < 2 {
        return Err(Error::spec(
            "centering needs at least two columns; a single column is absorbed by the constraint",
        ));
    }
    let n = block.columns.nrows();
    if n == 0 {
        return Err(Error::data("cannot center an empty design block"));
    }
    let col_means: Vec<f64> = (0..q)
        .map(|j| block.columns.column(j).sum() / n as f64)
        .collect();
    let centering = Centering { col_means };
    let m = centering.coef_map();
    // Columns: subtract means, then rotate onto the constraint null
    // space. (X − 1 x̄ᵀ) U equals X·M when rows of X sum to one, but the
    // subtraction form enforces exact zero column sums for any X.
    let u = Centering::complement_of_ones(q);
    let mut shifted = block.columns.clone();
    for j in 0..q {
        shifted.column_mut(j).add_scalar_mut(-centering.col_means[j]);
    }
    let columns = shifted * &u;
    let penalty = match &block.penalty {
        Some(s) => {
            let st = m.transpose() * s * &m;
            Some(symmetrized(st))
        }
        None => None,
    };
    Ok((
        DesignBlock {
            columns,
            penalty,
            kind: block.kind,
        },
        centering,
    ))
}

fn symmetrized(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = s.shape();
    debug_assert_eq!(r, c);
    for i in 0..r {
        for j in 0..i {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    s
}

/// Design block for a smooth term: evaluate the basis at every value and
/// attach the curvature penalty (uncentered; callers center afterwards).
pub fn smooth_block(basis: &BSplineBasis, values: &[f64]) -> Result<DesignBlock, Error> {
    let q = basis.dim();
    let mut columns = DMatrix::zeros(values.len(), q);
    for (i, &v) in values.iter().enumerate() {
        let row = basis.row(v)?;
        for j in 0..q {
            columns[(i, j)] = row[j];
        }
    }
    Ok(DesignBlock {
        columns,
        penalty: Some(basis.curvature_penalty()?),
        kind: BlockKind::Smooth,
    })
}
