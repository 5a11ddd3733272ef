//! The JSON model configuration: a declarative description of the
//! model to fit, mapped onto the core model specification.
//!
//! Every struct rejects unknown fields so config typos surface as
//! configuration errors instead of being silently ignored. Optional
//! fields materialize their defaults at parse time, so echoing a
//! parsed config back into an output document shows the fully
//! resolved settings.

use serde::{Deserialize, Serialize};

use bigam_core::copula::CopulaSpec;
use bigam_core::fit::FitOptions;
use bigam_core::model::{
    EquationSpec, ModelKind, ModelSpec, ResponseKind, ResponseSpec, TermSpec,
};
use bigam_core::penalty::Adjacency;
use bigam_core::Error;

/// Top-level model configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Exactly two response margins, in equation order.
    pub responses: Vec<ResponseConfig>,
    /// Exactly two equations of additive terms, matching the margins.
    pub equations: Vec<EquationConfig>,
    /// Terms of the association predictor; only the binary kinds admit
    /// one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assoc: Option<EquationConfig>,
    /// Copula name such as "gaussian", "frank", "clayton90", "joe270".
    #[serde(default = "default_copula")]
    pub copula: String,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_copula() -> String {
    "gaussian".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseConfig {
    pub column: String,
    pub kind: ResponseKind,
    /// Category count; required for ordinal margins, optional (and
    /// fixed at 2) for binary ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationConfig {
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

/// One additive term of an equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermConfig {
    Linear {
        column: String,
    },
    Smooth {
        column: String,
        #[serde(default = "default_basis_dim")]
        basis_dim: usize,
        #[serde(default = "default_degree")]
        degree: usize,
    },
    /// Markov random field over region labels 1..=regions with the
    /// given undirected edges (1-based region pairs).
    Mrf {
        column: String,
        regions: usize,
        edges: Vec<(usize, usize)>,
    },
    Random {
        column: String,
        levels: usize,
    },
}

fn default_basis_dim() -> usize {
    10
}

fn default_degree() -> usize {
    3
}

/// Optimizer settings; defaults mirror the core fitting defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub kappa: f64,
    /// Fix the smoothing parameters instead of selecting them; one
    /// entry per penalized term.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        FitConfig {
            max_outer: o.max_outer,
            max_inner: o.max_inner,
            tol: o.tol,
            kappa: o.kappa,
            fixed_lambda: None,
        }
    }
}

impl ModelConfig {
    /// Parse a config document, reporting schema problems as
    /// configuration errors.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::spec(format!("config: {e}")))
    }

    /// Lower the configuration to the core model specification.
    pub fn model_spec(&self) -> Result<ModelSpec, Error> {
        if self.responses.len() != 2 {
            return Err(Error::spec(format!(
                "exactly 2 response margins are required, got {}",
                self.responses.len()
            )));
        }
        if self.equations.len() != 2 {
            return Err(Error::spec(format!(
                "exactly 2 equations are required, got {}",
                self.equations.len()
            )));
        }
        let responses = [
            response_spec(&self.responses[0])?,
            response_spec(&self.responses[1])?,
        ];
        let spec = ModelSpec {
            kind: self.kind,
            response_columns: [
                self.responses[0].column.clone(),
                self.responses[1].column.clone(),
            ],
            responses,
            equations: [
                equation_spec(&self.equations[0])?,
                equation_spec(&self.equations[1])?,
            ],
            assoc_equation: self.assoc.as_ref().map(equation_spec).transpose()?,
            copula: CopulaSpec::parse_name(&self.copula)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_outer: self.fit.max_outer,
            max_inner: self.fit.max_inner,
            tol: self.fit.tol,
            kappa: self.fit.kappa,
            fixed_lambda: self.fit.fixed_lambda.clone(),
        }
    }

    /// Every data column the configuration references.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.responses.iter().map(|r| r.column.as_str()).collect();
        let eqs = self.equations.iter().chain(&self.assoc);
        for eq in eqs {
            for term in &eq.terms {
                let c = match term {
                    TermConfig::Linear { column }
                    | TermConfig::Smooth { column, .. }
                    | TermConfig::Mrf { column, .. }
                    | TermConfig::Random { column, .. } => column,
                };
                cols.push(c);
            }
        }
        cols
    }
}

fn response_spec(r: &ResponseConfig) -> Result<ResponseSpec, Error> {
    match r.kind {
        ResponseKind::Binary => match r.levels {
            None | Some(2) => Ok(ResponseSpec::binary()),
            Some(l) => Err(Error::spec(format!(
                "binary response {:?} cannot have {l} levels",
                r.column
            ))),
        },
        ResponseKind::Ordinal => {
            let levels = r.levels.ok_or_else(|| {
                Error::spec(format!(
                    "ordinal response {:?} needs a \"levels\" field",
                    r.column
                ))
            })?;
            ResponseSpec::ordinal(levels)
        }
    }
}

fn equation_spec(eq: &EquationConfig) -> Result<EquationSpec, Error> {
    let terms = eq.terms.iter().map(term_spec).collect::<Result<_, _>>()?;
    Ok(EquationSpec::new(terms))
}

fn term_spec(t: &TermConfig) -> Result<TermSpec, Error> {
    Ok(match t {
        TermConfig::Linear { column } => TermSpec::Linear {
            column: column.clone(),
        },
        TermConfig::Smooth {
            column,
            basis_dim,
            degree,
        } => TermSpec::Smooth {
            column: column.clone(),
            basis_dim: *basis_dim,
            degree: *degree,
        },
        TermConfig::Mrf {
            column,
            regions,
            edges,
        } => {
            // Reuse the core adjacency parser and its validation.
            let mut text = format!("{regions}\n");
            for (a, b) in edges {
                text.push_str(&format!("{a} {b}\n"));
            }
            TermSpec::Mrf {
                column: column.clone(),
                adjacency: Adjacency::parse(&text)?,
            }
        }
        TermConfig::Random { column, levels } => TermSpec::Random {
            column: column.clone(),
            levels: *levels,
        },
    })
}
