//! Coefficient layout and design-matrix assembly.
//!
//! The global coefficient vector θ is laid out equation by equation:
//! margin 1, margin 2, then the association block (an association
//! predictor for the binary kinds, the scalar association for the
//! Gaussian-latent kind, or the structural pair (ψ, ρ*) for the
//! triangular kind). Within a margin equation the order is: cut
//! parameters (ordinal margins) or intercept (binary margins), then
//! parametric, smooth, spatial, and random-effect blocks in the order
//! declared.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{center_block, smooth_block, BSplineBasis, Centering};
use crate::copula::CopulaSpec;
use crate::data::DataTable;
use crate::error::Error;
use crate::penalty::{incidence_block, random_effect_block, PenaltyAssembly, PenaltyTerm};

use super::{EquationSpec, Model, ModelKind, ModelSpec, ResponseKind, ResponseSpec, TermSpec};

/// Cut values c_1 ≤ … ≤ c_{K−1} from the parameter block
/// [c_1, ξ_2, …, ξ_{K−1}]: c_k = c_1 + Σ_{m=2..k} exp(ξ_m). The
/// exponential gaps make the sequence non-decreasing for any real
/// parameters, keeping the optimizer unconstrained.
pub fn cut_values(params: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    if params.is_empty() {
        return out;
    }
    let mut c = params[0];
    out.push(c);
    for &xi in &params[1..] {
        c += xi.exp();
        out.push(c);
    }
    out
}

/// Value, gradient, and diagonal second derivative of c_k (1-based cut
/// index) with respect to the cut parameter block.
pub fn cut_chain(params: &[f64], k: usize) -> (f64, Vec<f64>, Vec<f64>) {
    assert!(k >= 1 && k <= params.len(), "cut index out of range");
    let mut value = params[0];
    let mut grad = vec![0.0; params.len()];
    let mut hess_diag = vec![0.0; params.len()];
    grad[0] = 1.0;
    for m in 1..k {
        let e = params[m].exp();
        value += e;
        grad[m] = e;
        hess_diag[m] = e;
    }
    (value, grad, hess_diag)
}

/// Serializable description of one coefficient block, carrying enough
/// metadata (knots, centering means, level counts) to rebuild design
/// rows at new covariate values without the training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TermShape {
    /// Ordinal cut parameters [c1, ξ2, …]; occupies the first slots of
    /// its equation.
    Cuts { levels: usize },
    Intercept,
    Linear { column: String },
    Smooth {
        column: String,
        basis: BSplineBasis,
        centering: Centering,
    },
    Mrf {
        column: String,
        n_regions: usize,
        /// Present when the block is centered (equations without an
        /// intercept to drop, i.e. ordinal margins).
        centering: Option<Centering>,
    },
    Random { column: String, levels: usize },
    /// Structural coefficient of the triangular kind.
    Psi,
    /// Unconstrained latent correlation atanh(ρ) of the triangular
    /// kind.
    RhoStar,
}

/// One block's placement in the coefficient vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInfo {
    /// Equation index: 0, 1 for the margins, 2 for the association
    /// block.
    pub equation: usize,
    /// Global offset of the first coefficient.
    pub offset: usize,
    pub width: usize,
    pub label: String,
    pub shape: TermShape,
    /// Index into the penalty assembly for penalized blocks.
    pub penalty_index: Option<usize>,
}

/// The full coefficient layout of a built model. Serializable so fitted
/// models can be stored and used for prediction without the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layout {
    pub kind: ModelKind,
    pub copula: CopulaSpec,
    pub responses: [ResponseSpec; 2],
    pub response_columns: [String; 2],
    /// Total coefficient count.
    pub p: usize,
    pub eq_offset: [usize; 3],
    pub eq_width: [usize; 3],
    pub blocks: Vec<BlockInfo>,
    /// One name per coefficient.
    pub names: Vec<String>,
    pub psi_index: Option<usize>,
    pub rho_index: Option<usize>,
}

impl Layout {
    /// Number of latent-predictor slots per observation: one per finite
    /// threshold of each margin plus one association slot.
    pub fn slot_count(&self) -> usize {
        (self.responses[0].levels - 1) + (self.responses[1].levels - 1) + 1
    }

    /// The cut-parameter block of a margin, if it has one.
    pub fn cut_block(&self, margin: usize) -> Option<&BlockInfo> {
        self.blocks
            .iter()
            .find(|b| b.equation == margin && matches!(b.shape, TermShape::Cuts { .. }))
    }

    /// Global coefficient range of a margin's cut parameters.
    pub fn cut_range(&self, margin: usize) -> Option<std::ops::Range<usize>> {
        self.cut_block(margin).map(|b| b.offset..b.offset + b.width)
    }

    /// The finite threshold values of a margin (binary margins have the
    /// single pinned threshold at 0).
    pub fn margin_cuts(&self, margin: usize, theta: &DVector<f64>) -> Vec<f64> {
        match self.cut_range(margin) {
            Some(r) => cut_values(&theta.as_slice()[r]),
            None => vec![0.0],
        }
    }

    /// Build the additive-predictor row of an equation at new covariate
    /// values; cut-parameter columns (which are not part of the
    /// additive predictor) are left at zero. `get` supplies covariate
    /// values by column name.
    pub fn equation_row(
        &self,
        eq: usize,
        get: &dyn Fn(&str) -> Option<f64>,
    ) -> Result<DVector<f64>, Error> {
        let mut row = DVector::zeros(self.eq_width[eq]);
        for block in self.blocks.iter().filter(|b| b.equation == eq) {
            let local = block.offset - self.eq_offset[eq];
            match &block.shape {
                TermShape::Cuts { .. } | TermShape::Psi | TermShape::RhoStar => {}
                TermShape::Intercept => row[local] = 1.0,
                TermShape::Linear { column } => {
                    row[local] = fetch(get, column)?;
                }
                TermShape::Smooth {
                    column,
                    basis,
                    centering,
                } => {
                    let x = fetch(get, column)?;
                    let b = basis.row(x)?;
                    for (j, v) in centering.apply_row(&b).into_iter().enumerate() {
                        row[local + j] = v;
                    }
                }
                TermShape::Mrf {
                    column,
                    n_regions,
                    centering,
                } => {
                    let r = integer_label(fetch(get, column)?, *n_regions, column)?;
                    let mut ind = vec![0.0; *n_regions];
                    ind[r - 1] = 1.0;
                    match centering {
                        Some(c) => {
                            for (j, v) in c.apply_row(&ind).into_iter().enumerate() {
                                row[local + j] = v;
                            }
                        }
                        None => row[local + r - 1] = 1.0,
                    }
                }
                TermShape::Random { column, levels } => {
                    let l = integer_label(fetch(get, column)?, *levels, column)?;
                    row[local + l - 1] = 1.0;
                }
            }
        }
        Ok(row)
    }
}

fn fetch(get: &dyn Fn(&str) -> Option<f64>, column: &str) -> Result<f64, Error> {
    get(column).ok_or_else(|| Error::data(format!("prediction requires a value for {column:?}")))
}

fn integer_label(value: f64, max: usize, column: &str) -> Result<usize, Error> {
    if !value.is_finite() || value.fract() != 0.0 || value < 1.0 || value > max as f64 {
        return Err(Error::data(format!(
            "label {value} for {column:?} outside 1..={max}"
        )));
    }
    Ok(value as usize)
}

/// Responses and design matrices bound to one data set.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub n: usize,
    /// Margin-1 category codes, 1-based.
    pub y1: Vec<usize>,
    /// Margin-2 category codes; `None` only for unselected rows of the
    /// selection kind.
    pub y2: Vec<Option<usize>>,
    /// Per-equation design matrices at full equation width; cut and
    /// (ψ, ρ*) columns are identically zero. For the selection kind,
    /// margin-2 rows of unselected observations are zero and never
    /// read.
    pub z: [DMatrix<f64>; 3],
}

/// Internal builder state for one equation.
struct EquationBuild {
    blocks: Vec<BlockInfo>,
    names: Vec<String>,
    columns: Vec<DVector<f64>>,
    penalties: Vec<(usize, DMatrix<f64>, String)>, // local offset, matrix, label
    width: usize,
}

impl EquationBuild {
    fn new() -> Self {
        EquationBuild {
            blocks: Vec::new(),
            names: Vec::new(),
            columns: Vec::new(),
            penalties: Vec::new(),
            width: 0,
        }
    }

    fn push_block(
        &mut self,
        eq: usize,
        label: String,
        shape: TermShape,
        columns: DMatrix<f64>,
        names: Vec<String>,
        penalty: Option<DMatrix<f64>>,
    ) {
        let width = columns.ncols();
        debug_assert_eq!(names.len(), width);
        if let Some(s) = penalty {
            self.penalties.push((self.width, s, label.clone()));
        }
        self.blocks.push(BlockInfo {
            equation: eq,
            offset: self.width, // local for now; shifted to global later
            width,
            label,
            shape,
            penalty_index: None, // assigned when assembling globally
        });
        for j in 0..width {
            self.columns.push(columns.column(j).into_owned());
        }
        self.names.extend(names);
        self.width += width;
    }
}

/// Equation name prefixes used in coefficient names and labels.
fn eq_prefix(eq: usize) -> &'static str {
    match eq {
        0 => "eq1",
        1 => "eq2",
        _ => "assoc",
    }
}

pub(super) fn build(spec: &ModelSpec, table: &DataTable) -> Result<Model, Error> {
    let n = table.nrows();
    if n == 0 {
        return Err(Error::data("data table has no rows"));
    }
    let (y1, y2) = extract_responses(spec, table)?;
    // Active rows per equation: margin 2 of the selection kind uses
    // only selected rows; everything else uses all rows.
    let all_rows: Vec<usize> = (0..n).collect();
    let selected_rows: Vec<usize> = if spec.kind == ModelKind::SelectionBinary {
        (0..n).filter(|&i| y1[i] == 2).collect()
    } else {
        all_rows.clone()
    };
    if spec.kind == ModelKind::SelectionBinary && selected_rows.is_empty() {
        return Err(Error::data("selection model has no selected rows"));
    }

    let mut equations: Vec<EquationBuild> = Vec::with_capacity(3);
    for eq in 0..2 {
        let rows = if eq == 1 { &selected_rows } else { &all_rows };
        let mut b = EquationBuild::new();
        let prefix = eq_prefix(eq);
        let response = spec.responses[eq];
        match response.kind {
            ResponseKind::Ordinal => {
                let k = response.levels;
                let mut names = vec![format!("{prefix}.c1")];
                for m in 2..k {
                    names.push(format!("{prefix}.xi{m}"));
                }
                b.push_block(
                    eq,
                    format!("{prefix}.cuts"),
                    TermShape::Cuts { levels: k },
                    DMatrix::zeros(n, k - 1),
                    names,
                    None,
                );
            }
            ResponseKind::Binary => {
                if !has_mrf(&spec.equations[eq]) {
                    push_intercept(&mut b, eq, prefix, n, rows);
                }
            }
        }
        for term in &spec.equations[eq].terms {
            push_term(&mut b, eq, prefix, term, table, rows, n)?;
        }
        equations.push(b);
    }

    // Association block.
    let mut assoc = EquationBuild::new();
    match spec.kind {
        ModelKind::BivBinaryCopula | ModelKind::SelectionBinary => {
            let eq_spec = spec.assoc_equation.clone().unwrap_or_default();
            if !has_mrf(&eq_spec) {
                push_intercept(&mut assoc, 2, "assoc", n, &all_rows);
            }
            for term in &eq_spec.terms {
                push_term(&mut assoc, 2, "assoc", term, table, &all_rows, n)?;
            }
        }
        ModelKind::BivOrdinalGaussian => {
            push_intercept(&mut assoc, 2, "assoc", n, &all_rows);
        }
        ModelKind::TriangularOrdinal => {
            assoc.push_block(
                2,
                "psi".to_string(),
                TermShape::Psi,
                DMatrix::zeros(n, 1),
                vec!["psi".to_string()],
                None,
            );
            assoc.push_block(
                2,
                "rho_star".to_string(),
                TermShape::RhoStar,
                DMatrix::zeros(n, 1),
                vec!["rho_star".to_string()],
                None,
            );
        }
    }
    equations.push(assoc);

    // Assemble the global layout.
    let mut eq_offset = [0usize; 3];
    let mut eq_width = [0usize; 3];
    let mut offset = 0;
    for (eq, b) in equations.iter().enumerate() {
        eq_offset[eq] = offset;
        eq_width[eq] = b.width;
        offset += b.width;
    }
    let p = offset;
    if p == 0 {
        return Err(Error::spec("model has no coefficients"));
    }

    let mut blocks = Vec::new();
    let mut names = Vec::with_capacity(p);
    let mut penalty_terms = Vec::new();
    let mut penalty_labels = Vec::new();
    let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(3);
    for (eq, b) in equations.into_iter().enumerate() {
        let base = eq_offset[eq];
        let mut zm = DMatrix::zeros(n, b.width);
        for (j, col) in b.columns.iter().enumerate() {
            zm.set_column(j, col);
        }
        z.push(zm);
        for (local, matrix, label) in b.penalties {
            penalty_terms.push(PenaltyTerm {
                offset: base + local,
                matrix,
            });
            penalty_labels.push(label);
        }
        for mut block in b.blocks {
            block.offset += base;
            if block.penalty_index.is_none() {
                // Find this block's penalty by offset match.
                block.penalty_index = penalty_terms
                    .iter()
                    .position(|t| t.offset == block.offset && t.matrix.nrows() == block.width);
            }
            blocks.push(block);
        }
        names.extend(b.names);
    }

    let psi_index = blocks
        .iter()
        .find(|b| matches!(b.shape, TermShape::Psi))
        .map(|b| b.offset);
    let rho_index = blocks
        .iter()
        .find(|b| matches!(b.shape, TermShape::RhoStar))
        .map(|b| b.offset);

    let layout = Layout {
        kind: spec.kind,
        copula: spec.copula,
        responses: spec.responses,
        response_columns: spec.response_columns.clone(),
        p,
        eq_offset,
        eq_width,
        blocks,
        names,
        psi_index,
        rho_index,
    };
    let penalties = PenaltyAssembly {
        terms: penalty_terms,
        dim: p,
    };
    Ok(Model {
        layout,
        data: ModelData {
            n,
            y1,
            y2,
            z: [z[0].clone(), z[1].clone(), z[2].clone()],
        },
        penalties,
        penalty_labels,
    })
}

fn has_mrf(eq: &EquationSpec) -> bool {
    eq.terms.iter().any(|t| matches!(t, TermSpec::Mrf { .. }))
}

fn push_intercept(b: &mut EquationBuild, eq: usize, prefix: &str, n: usize, rows: &[usize]) {
    let mut col = DMatrix::zeros(n, 1);
    for &i in rows {
        col[(i, 0)] = 1.0;
    }
    b.push_block(
        eq,
        format!("{prefix}.(Intercept)"),
        TermShape::Intercept,
        col,
        vec![format!("{prefix}.(Intercept)")],
        None,
    );
}

/// Covariate values over the active rows; missing or non-finite values
/// there are data errors.
fn active_values(
    table: &DataTable,
    column: &str,
    rows: &[usize],
    eq_desc: &str,
) -> Result<Vec<f64>, Error> {
    let col = table.column(column)?;
    let mut out = Vec::with_capacity(rows.len());
    for &i in rows {
        match col[i] {
            Some(v) if v.is_finite() => out.push(v),
            Some(v) => {
                return Err(Error::data(format!(
                    "non-finite value {v} in column {column:?} at row {} ({eq_desc})",
                    i + 1
                )))
            }
            None => {
                return Err(Error::data(format!(
                    "missing value in column {column:?} at row {} ({eq_desc})",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Scatter a subset-row matrix back to full height, zero elsewhere.
fn scatter(n: usize, rows: &[usize], sub: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, sub.ncols());
    for (sr, &i) in rows.iter().enumerate() {
        for j in 0..sub.ncols() {
            out[(i, j)] = sub[(sr, j)];
        }
    }
    out
}

fn push_term(
    b: &mut EquationBuild,
    eq: usize,
    prefix: &str,
    term: &TermSpec,
    table: &DataTable,
    rows: &[usize],
    n: usize,
) -> Result<(), Error> {
    let eq_desc = format!("equation {prefix}");
    match term {
        TermSpec::Linear { column } => {
            let vals = active_values(table, column, rows, &eq_desc)?;
            let mut col = DMatrix::zeros(n, 1);
            for (s, &i) in rows.iter().enumerate() {
                col[(i, 0)] = vals[s];
            }
            b.push_block(
                eq,
                format!("{prefix}.{column}"),
                TermShape::Linear {
                    column: column.clone(),
                },
                col,
                vec![format!("{prefix}.{column}")],
                None,
            );
        }
        TermSpec::Smooth {
            column,
            basis_dim,
            degree,
        } => {
            let vals = active_values(table, column, rows, &eq_desc)?;
            let basis = BSplineBasis::from_quantiles(&vals, *basis_dim, *degree)?;
            let raw = smooth_block(&basis, &vals)?;
            let (centered, centering) = center_block(&raw)?;
            let label = format!("{prefix}.s({column})");
            let names = (1..=centered.columns.ncols())
                .map(|j| format!("{label}.{j}"))
                .collect();
            b.push_block(
                eq,
                label,
                TermShape::Smooth {
                    column: column.clone(),
                    basis,
                    centering,
                },
                scatter(n, rows, &centered.columns),
                names,
                centered.penalty,
            );
        }
        TermSpec::Mrf { column, adjacency } => {
            let vals = active_values(table, column, rows, &eq_desc)?;
            let raw = incidence_block(adjacency, &vals)?;
            let label = format!("{prefix}.mrf({column})");
            // Equations with an intercept drop it instead (handled by
            // the caller); intercept-free (ordinal) equations center the
            // block so it cannot absorb the level set by the cuts.
            if !eq_has_intercept_room(b) {
                let (centered, centering) = center_block(&raw)?;
                let names = (1..=centered.columns.ncols())
                    .map(|j| format!("{label}.{j}"))
                    .collect();
                b.push_block(
                    eq,
                    label,
                    TermShape::Mrf {
                        column: column.clone(),
                        n_regions: adjacency.n_regions(),
                        centering: Some(centering),
                    },
                    scatter(n, rows, &centered.columns),
                    names,
                    centered.penalty,
                );
            } else {
                let names = (1..=raw.columns.ncols())
                    .map(|j| format!("{label}.{j}"))
                    .collect();
                b.push_block(
                    eq,
                    label,
                    TermShape::Mrf {
                        column: column.clone(),
                        n_regions: adjacency.n_regions(),
                        centering: None,
                    },
                    scatter(n, rows, &raw.columns),
                    names,
                    raw.penalty,
                );
            }
        }
        TermSpec::Random { column, levels } => {
            let vals = active_values(table, column, rows, &eq_desc)?;
            let raw = random_effect_block(*levels, &vals)?;
            let label = format!("{prefix}.re({column})");
            let names = (1..=*levels).map(|j| format!("{label}.{j}")).collect();
            b.push_block(
                eq,
                label,
                TermShape::Random {
                    column: column.clone(),
                    levels: *levels,
                },
                scatter(n, rows, &raw.columns),
                names,
                raw.penalty,
            );
        }
    }
    Ok(())
}

/// Whether this equation carries (or would carry) an intercept — i.e.
/// the first block pushed was not a cut block. Binary margins and the
/// association equation have intercept room; ordinal margins do not.
fn eq_has_intercept_room(b: &EquationBuild) -> bool {
    !b.blocks
        .iter()
        .any(|blk| matches!(blk.shape, TermShape::Cuts { .. }))
}

fn extract_responses(
    spec: &ModelSpec,
    table: &DataTable,
) -> Result<(Vec<usize>, Vec<Option<usize>>), Error> {
    let code = |v: f64, r: ResponseSpec, col: &str, row: usize| -> Result<usize, Error> {
        if !v.is_finite() || v.fract() != 0.0 {
            return Err(Error::data(format!(
                "response {col:?} at row {row} is {v}, expected an integer code"
            )));
        }
        match r.kind {
            ResponseKind::Binary => {
                if v == 0.0 || v == 1.0 {
                    Ok(v as usize + 1)
                } else {
                    Err(Error::data(format!(
                        "binary response {col:?} at row {row} is {v}, expected 0 or 1"
                    )))
                }
            }
            ResponseKind::Ordinal => {
                if v >= 1.0 && v <= r.levels as f64 {
                    Ok(v as usize)
                } else {
                    Err(Error::data(format!(
                        "ordinal response {col:?} at row {row} is {v}, expected 1..={}",
                        r.levels
                    )))
                }
            }
        }
    };

    let c1 = &spec.response_columns[0];
    let y1_raw = table.column(c1)?;
    let mut y1 = Vec::with_capacity(table.nrows());
    for (i, v) in y1_raw.iter().enumerate() {
        match v {
            Some(v) => y1.push(code(*v, spec.responses[0], c1, i + 1)?),
            None => {
                return Err(Error::data(format!(
                    "missing value in response {c1:?} at row {}",
                    i + 1
                )))
            }
        }
    }

    let c2 = &spec.response_columns[1];
    let y2_raw = table.column(c2)?;
    let mut y2 = Vec::with_capacity(table.nrows());
    for (i, v) in y2_raw.iter().enumerate() {
        match (v, spec.kind) {
            (Some(v), _) => y2.push(Some(code(*v, spec.responses[1], c2, i + 1)?)),
            (None, ModelKind::SelectionBinary) => {
                if y1[i] == 2 {
                    return Err(Error::data(format!(
                        "outcome {c2:?} missing at selected row {}",
                        i + 1
                    )));
                }
                y2.push(None);
            }
            (None, _) => {
                return Err(Error::data(format!(
                    "missing value in response {c2:?} at row {}",
                    i + 1
                )))
            }
        }
    }
    Ok((y1, y2))
}
