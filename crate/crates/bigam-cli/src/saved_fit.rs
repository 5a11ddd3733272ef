//! The saved-fit document: a single JSON file carrying everything a
//! later inference run needs — the resolved configuration, the
//! coefficient estimates with readable names, smoothing parameters and
//! effective dimensions, and the full posterior covariance together
//! with the design layout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use bigam_core::fit::FitResult;
use bigam_core::infer::InformationCriteria;
use bigam_core::model::{Layout, Model, ModelKind, TermShape};
use bigam_core::Error;

use crate::config::ModelConfig;

pub const FIT_SCHEMA: &str = "bigam-fit/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedFit {
    pub schema_version: String,
    /// The fully resolved model configuration that produced this fit.
    pub config: ModelConfig,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Absent when the fit failed outright.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Estimates>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimates {
    pub n_obs: usize,
    pub coefficients: Vec<Coefficient>,
    /// Finite thresholds of each margin on the latent scale.
    pub cuts: [Vec<f64>; 2],
    /// Interpretable association summary, when the association is a
    /// single scalar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub association: Option<Association>,
    pub lambda: Vec<LambdaEntry>,
    pub edf: EdfSummary,
    pub log_lik: f64,
    pub ubre: f64,
    pub aic: f64,
    pub iterations: Iterations,
    pub flooring: Flooring,
    /// Design layout for evaluating predictors at new covariates.
    pub layout: Layout,
    pub theta: Vec<f64>,
    /// Posterior covariance of the coefficients, row-major.
    pub v_theta: MatrixJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Association {
    /// Copula dependence parameter on its natural scale.
    Gamma { gamma: f64 },
    /// Structural coefficient and latent error correlation of the
    /// triangular system.
    Triangular { psi: f64, rho: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdfSummary {
    pub total: f64,
    pub terms: Vec<LambdaEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Iterations {
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flooring {
    pub lambda_floored: usize,
    pub fisher_fallbacks: usize,
}

/// Dense square matrix stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let data = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        MatrixJson { dim, data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, Error> {
        if self.data.len() != self.dim * self.dim {
            return Err(Error::spec(format!(
                "matrix of dimension {} needs {} entries, got {}",
                self.dim,
                self.dim * self.dim,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }
}

impl SavedFit {
    /// Document for a fit that produced no usable estimate.
    pub fn failure(config: ModelConfig, error: &Error) -> Self {
        SavedFit {
            schema_version: FIT_SCHEMA.to_string(),
            config,
            converged: false,
            error: Some(error.to_string()),
            estimates: None,
        }
    }

    /// Document for a completed fit (converged or not).
    pub fn from_fit(
        config: ModelConfig,
        model: &Model,
        fit: &FitResult,
        v_theta: &DMatrix<f64>,
        criteria: &InformationCriteria,
    ) -> Self {
        let layout = &model.layout;
        let coefficients = layout
            .names
            .iter()
            .zip(fit.theta.iter())
            .map(|(name, &value)| Coefficient {
                name: name.clone(),
                value,
            })
            .collect();
        let cuts = [
            layout.margin_cuts(0, &fit.theta),
            layout.margin_cuts(1, &fit.theta),
        ];
        let error = if fit.diagnostics.converged {
            None
        } else {
            Some("fit stopped before meeting the convergence tolerance".to_string())
        };
        SavedFit {
            schema_version: FIT_SCHEMA.to_string(),
            config,
            converged: fit.diagnostics.converged,
            error,
            estimates: Some(Estimates {
                n_obs: model.n_obs(),
                coefficients,
                cuts,
                association: association_summary(layout, &fit.theta),
                lambda: lambda_entries(layout, &fit.lambda),
                edf: EdfSummary {
                    total: criteria.edf_total,
                    terms: criteria
                        .edf_terms
                        .iter()
                        .map(|t| LambdaEntry {
                            label: t.label.clone(),
                            value: t.edf,
                        })
                        .collect(),
                },
                log_lik: fit.log_lik,
                ubre: fit.ubre,
                aic: criteria.aic,
                iterations: Iterations {
                    outer: fit.diagnostics.outer_iters,
                    inner: fit.diagnostics.inner_iters,
                },
                flooring: Flooring {
                    lambda_floored: fit.diagnostics.floored,
                    fisher_fallbacks: fit.diagnostics.fisher_fallbacks,
                },
                layout: layout.clone(),
                theta: fit.theta.iter().copied().collect(),
                v_theta: MatrixJson::from_matrix(v_theta),
            }),
        }
    }
}

/// Scalar association summary: ψ and ρ for the triangular kind, the
/// copula parameter γ when the association predictor is intercept-only.
pub fn association_summary(layout: &Layout, theta: &DVector<f64>) -> Option<Association> {
    if layout.kind == ModelKind::TriangularOrdinal {
        let psi = theta[layout.psi_index?];
        let rho = theta[layout.rho_index?].tanh();
        return Some(Association::Triangular { psi, rho });
    }
    let assoc_blocks: Vec<_> = layout.blocks.iter().filter(|b| b.equation == 2).collect();
    match assoc_blocks.as_slice() {
        [block] if matches!(block.shape, TermShape::Intercept) => Some(Association::Gamma {
            gamma: layout.copula.link(theta[block.offset]).value,
        }),
        _ => None,
    }
}

fn lambda_entries(layout: &Layout, lambda: &[f64]) -> Vec<LambdaEntry> {
    let mut labels: Vec<String> = (0..lambda.len()).map(|k| format!("term{k}")).collect();
    for block in &layout.blocks {
        if let Some(k) = block.penalty_index {
            labels[k] = format!("eq{}.{}", block.equation + 1, block.label);
        }
    }
    labels
        .into_iter()
        .zip(lambda)
        .map(|(label, &value)| LambdaEntry { label, value })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrices_round_trip_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let json = MatrixJson::from_matrix(&m);
        assert_eq!(json.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(json.to_matrix().unwrap(), m);

        let bad = MatrixJson {
            dim: 3,
            data: vec![0.0; 4],
        };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn association_variants_serialize_distinctly() {
        let g = serde_json::to_string(&Association::Gamma { gamma: 0.4 }).unwrap();
        assert_eq!(g, r#"{"gamma":0.4}"#);
        let t = serde_json::to_string(&Association::Triangular {
            psi: -0.3,
            rho: 0.9,
        })
        .unwrap();
        assert_eq!(t, r#"{"psi":-0.3,"rho":0.9}"#);
        // And parse back into the right variant.
        match serde_json::from_str::<Association>(&g).unwrap() {
            Association::Gamma { gamma } => assert_eq!(gamma, 0.4),
            other => panic!("wrong variant: {other:?}"),
        }
    }
}
