//! Model specification and likelihood machinery for bivariate
//! discrete-response additive models.
//!
//! A model couples two discrete margins (binary or ordinal, each with
//! its own additive predictor) through either a parametric copula or a
//! Gaussian latent structure. Four kinds are supported:
//!
//! * `biv_binary_copula` — two binary margins joined by any of the
//!   supported copula families, with an optional predictor on the
//!   association parameter;
//! * `biv_ordinal_gaussian` — ordinal (or mixed binary/ordinal) margins
//!   joined by a bivariate Gaussian latent pair with scalar
//!   association;
//! * `selection_binary` — a binary outcome observed only where a binary
//!   selection indicator equals one, joined by any copula;
//! * `triangular_ordinal` — ordinal margins where the first latent
//!   response enters the second equation structurally with coefficient
//!   ψ, on top of latent error correlation ρ.
//!
//! This module owns the coefficient layout (cuts, intercepts,
//! parametric/smooth/spatial/random blocks per equation), the
//! per-observation cell probabilities, and the score/Hessian
//! contributions consumed by the fitting loop.

mod design;
mod prob;

pub use design::{cut_chain, cut_values, BlockInfo, Layout, ModelData, TermShape};
pub use prob::{
    predicted_cells, response_map, triangular_transform, Accum, LogLik, ObsContrib,
    TriangularTransform, Wants,
};

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaSpec, Rotation};
use crate::data::DataTable;
use crate::error::Error;
use crate::penalty::{Adjacency, PenaltyAssembly};

/// Whether a margin is dichotomous or ordered-categorical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Binary,
    Ordinal,
}

/// One response margin: its kind and number of categories.
///
/// Binary margins have two categories, a threshold pinned at zero, and
/// a free intercept in their equation. Ordinal margins with K
/// categories estimate K−1 ordered cut points and carry no intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSpec {
    pub kind: ResponseKind,
    pub levels: usize,
}

impl ResponseSpec {
    pub fn binary() -> Self {
        ResponseSpec {
            kind: ResponseKind::Binary,
            levels: 2,
        }
    }

    pub fn ordinal(levels: usize) -> Result<Self, Error> {
        if levels < 2 {
            return Err(Error::spec(format!(
                "ordinal margin needs at least 2 levels, got {levels}"
            )));
        }
        Ok(ResponseSpec {
            kind: ResponseKind::Ordinal,
            levels,
        })
    }

    /// Number of free cut-point parameters contributed to θ.
    pub fn n_cut_params(&self) -> usize {
        match self.kind {
            ResponseKind::Binary => 0,
            ResponseKind::Ordinal => self.levels - 1,
        }
    }
}

/// The four supported joint structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BivBinaryCopula,
    BivOrdinalGaussian,
    SelectionBinary,
    TriangularOrdinal,
}

impl ModelKind {
    /// Kinds whose cell probabilities are rectangle volumes of the
    /// bivariate Gaussian over cut intervals (as opposed to the
    /// four/three-cell copula systems of the binary kinds).
    pub fn uses_cut_rectangles(&self) -> bool {
        matches!(
            self,
            ModelKind::BivOrdinalGaussian | ModelKind::TriangularOrdinal
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::BivBinaryCopula => "biv_binary_copula",
            ModelKind::BivOrdinalGaussian => "biv_ordinal_gaussian",
            ModelKind::SelectionBinary => "selection_binary",
            ModelKind::TriangularOrdinal => "triangular_ordinal",
        }
    }
}

/// One additive term of an equation.
#[derive(Debug, Clone)]
pub enum TermSpec {
    /// A raw numeric column entering linearly.
    Linear { column: String },
    /// A penalized B-spline smooth of a numeric column.
    Smooth {
        column: String,
        basis_dim: usize,
        degree: usize,
    },
    /// A discrete spatial effect over regions with a graph-Laplacian
    /// penalty; the column holds 1-based region labels.
    Mrf {
        column: String,
        adjacency: Adjacency,
    },
    /// An i.i.d. random effect over factor levels (identity penalty);
    /// the column holds 1-based level labels.
    Random { column: String, levels: usize },
}

impl TermSpec {
    pub fn smooth(column: &str, basis_dim: usize) -> Self {
        TermSpec::Smooth {
            column: column.to_string(),
            basis_dim,
            degree: 3,
        }
    }

    pub fn linear(column: &str) -> Self {
        TermSpec::Linear {
            column: column.to_string(),
        }
    }
}

/// The additive terms of one equation (intercept/cuts are implicit).
#[derive(Debug, Clone, Default)]
pub struct EquationSpec {
    pub terms: Vec<TermSpec>,
}

impl EquationSpec {
    pub fn new(terms: Vec<TermSpec>) -> Self {
        EquationSpec { terms }
    }
}

/// Complete declarative description of a model to be fitted.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub response_columns: [String; 2],
    pub responses: [ResponseSpec; 2],
    /// Predictor terms for the two margins.
    pub equations: [EquationSpec; 2],
    /// Terms for the association predictor; only the binary kinds admit
    /// one, and it defaults to intercept-only when absent.
    pub assoc_equation: Option<EquationSpec>,
    pub copula: CopulaSpec,
}

impl ModelSpec {
    /// Validate cross-field constraints that individual types cannot
    /// express.
    pub fn validate(&self) -> Result<(), Error> {
        let [r1, r2] = self.responses;
        match self.kind {
            ModelKind::BivBinaryCopula | ModelKind::SelectionBinary => {
                if r1.kind != ResponseKind::Binary || r2.kind != ResponseKind::Binary {
                    return Err(Error::spec(format!(
                        "{} requires two binary margins; use an ordinal kind for ordered responses",
                        self.kind.name()
                    )));
                }
            }
            ModelKind::BivOrdinalGaussian | ModelKind::TriangularOrdinal => {
                if r1.kind != ResponseKind::Ordinal && r2.kind != ResponseKind::Ordinal {
                    return Err(Error::spec(format!(
                        "{} requires at least one ordinal margin; use biv_binary_copula for two \
                         binary responses",
                        self.kind.name()
                    )));
                }
                let gaussian = CopulaSpec::new(CopulaFamily::Gaussian, Rotation::R0);
                if self.copula != gaussian {
                    return Err(Error::spec(format!(
                        "{} uses the bivariate Gaussian latent structure; copula must be \
                         \"gaussian\", got {:?}",
                        self.kind.name(),
                        self.copula.name()
                    )));
                }
                if self.assoc_equation.is_some() {
                    return Err(Error::spec(format!(
                        "{} does not admit an association predictor equation",
                        self.kind.name()
                    )));
                }
            }
        }
        for (j, r) in self.responses.iter().enumerate() {
            if r.kind == ResponseKind::Binary && r.levels != 2 {
                return Err(Error::spec(format!(
                    "binary margin {} must have 2 levels, got {}",
                    j + 1,
                    r.levels
                )));
            }
        }
        Ok(())
    }
}

/// A model bound to data: coefficient layout, response codes, design
/// matrices, and penalty blocks, ready for likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Model {
    pub layout: Layout,
    pub data: ModelData,
    pub penalties: PenaltyAssembly,
    /// Human-readable label per penalized term, aligned with
    /// `penalties.terms` (and hence with the smoothing-parameter
    /// vector λ).
    pub penalty_labels: Vec<String>,
}

impl Model {
    /// Assemble designs, penalties, and response codes from a data
    /// table.
    pub fn build(spec: &ModelSpec, table: &DataTable) -> Result<Model, Error> {
        spec.validate()?;
        design::build(spec, table)
    }

    pub fn n_obs(&self) -> usize {
        self.data.n
    }

    pub fn n_coef(&self) -> usize {
        self.layout.p
    }
}
