//! The `ci` command: a simulation-based confidence interval for a
//! scalar functional of the fitted coefficients, computed entirely
//! from a saved fit (no data file needed).
//!
//! The functional is described by a small JSON document; supported
//! functionals are a named coefficient, a smooth-term value at a
//! point, the scalar association parameters, and a predicted cell
//! probability at supplied covariate values.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use bigam_core::infer;
use bigam_core::model::{predicted_cells, Layout, ModelKind, TermShape};
use bigam_core::Error;

use crate::saved_fit::SavedFit;
use crate::table_io;

pub const CI_SCHEMA: &str = "bigam-ci/1";

/// A scalar functional of the coefficient vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// One coefficient, by its reported name (for example "eq1.x1").
    Coefficient { name: String },
    /// The centered smooth on `column` in `equation` (1-based),
    /// evaluated at `x`.
    SmoothAt {
        equation: usize,
        column: String,
        x: f64,
    },
    /// The copula dependence parameter on its natural scale.
    Gamma,
    /// The structural coefficient of the triangular system.
    Psi,
    /// The latent error correlation of the triangular system.
    Rho,
    /// The probability of the joint response cell `cell` at the given
    /// covariate values.
    CellProbability {
        cell: String,
        #[serde(default)]
        covariates: BTreeMap<String, f64>,
    },
}

type Functional = Box<dyn Fn(&DVector<f64>) -> f64 + Sync>;

/// Turn the functional description into a closure over θ, validating
/// it against the fit's layout and estimate up front.
fn build_functional(
    spec: &FunctionalSpec,
    layout: &Layout,
    theta_hat: &DVector<f64>,
) -> Result<Functional, Error> {
    match spec {
        FunctionalSpec::Coefficient { name } => {
            let index = layout
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    Error::spec(format!(
                        "unknown coefficient {name:?}; this fit has: {}",
                        layout.names.join(", ")
                    ))
                })?;
            Ok(Box::new(move |theta: &DVector<f64>| theta[index]))
        }
        FunctionalSpec::SmoothAt {
            equation,
            column,
            x,
        } => {
            if !(1..=3).contains(equation) {
                return Err(Error::spec(format!(
                    "equation must be 1, 2, or 3, got {equation}"
                )));
            }
            let block = layout
                .blocks
                .iter()
                .find(|b| {
                    b.equation == equation - 1
                        && matches!(&b.shape, TermShape::Smooth { column: c, .. } if c == column)
                })
                .ok_or_else(|| {
                    Error::spec(format!(
                        "equation {equation} has no smooth term on column {column:?}"
                    ))
                })?;
            let TermShape::Smooth {
                basis, centering, ..
            } = &block.shape
            else {
                unreachable!("the block was selected as a smooth");
            };
            let (lo, hi) = basis.domain();
            if !(*x >= lo && *x <= hi) {
                return Err(Error::spec(format!(
                    "x = {x} lies outside the smooth's domain [{lo}, {hi}]"
                )));
            }
            let b = centering.apply_row(&basis.row(*x)?);
            let offset = block.offset;
            Ok(Box::new(move |theta: &DVector<f64>| {
                b.iter()
                    .enumerate()
                    .map(|(j, &bj)| bj * theta[offset + j])
                    .sum()
            }))
        }
        FunctionalSpec::Gamma => {
            if layout.kind == ModelKind::TriangularOrdinal {
                return Err(Error::spec(
                    "the triangular kind has psi and rho instead of gamma",
                ));
            }
            let assoc: Vec<_> = layout.blocks.iter().filter(|b| b.equation == 2).collect();
            match assoc.as_slice() {
                [block] if matches!(block.shape, TermShape::Intercept) => {
                    let offset = block.offset;
                    let copula = layout.copula;
                    Ok(Box::new(move |theta: &DVector<f64>| {
                        copula.link(theta[offset]).value
                    }))
                }
                _ => Err(Error::spec(
                    "the association predictor is not a single intercept, so gamma is \
                     not a scalar; request a coefficient or a cell probability instead",
                )),
            }
        }
        FunctionalSpec::Psi => {
            let index = layout
                .psi_index
                .ok_or_else(|| Error::spec("psi is only defined for the triangular kind"))?;
            Ok(Box::new(move |theta: &DVector<f64>| theta[index]))
        }
        FunctionalSpec::Rho => {
            let index = layout
                .rho_index
                .ok_or_else(|| Error::spec("rho is only defined for the triangular kind"))?;
            Ok(Box::new(move |theta: &DVector<f64>| theta[index].tanh()))
        }
        FunctionalSpec::CellProbability { cell, covariates } => {
            let values = covariates.clone();
            let get_hat = |name: &str| values.get(name).copied();
            let cells = predicted_cells(layout, theta_hat, &get_hat)
                .map_err(|e| Error::spec(format!("cell functional: {e}")))?;
            if !cells.iter().any(|(label, _)| label == cell) {
                let labels: Vec<&str> = cells.iter().map(|(l, _)| l.as_str()).collect();
                return Err(Error::spec(format!(
                    "unknown cell {cell:?}; this model has cells: {}",
                    labels.join(", ")
                )));
            }
            let layout = layout.clone();
            let cell = cell.clone();
            Ok(Box::new(move |theta: &DVector<f64>| {
                let get = |name: &str| values.get(name).copied();
                match predicted_cells(&layout, theta, &get) {
                    Ok(cells) => cells
                        .into_iter()
                        .find(|(label, _)| label == &cell)
                        .map(|(_, p)| p)
                        .unwrap_or(f64::NAN),
                    // A draw that wanders outside the valid parameter
                    // region counts as unusable, like a non-finite one.
                    Err(_) => f64::NAN,
                }
            }))
        }
    }
}

#[derive(Serialize)]
struct CiDoc<'a> {
    schema_version: &'a str,
    functional: &'a FunctionalSpec,
    n_sim: usize,
    alpha: f64,
    seed: u64,
    estimate: f64,
    lower: f64,
    upper: f64,
    /// Number of simulation draws that produced a usable value.
    n_used: usize,
}

pub fn run(
    fit_path: &Path,
    functional_path: &Path,
    n_sim: usize,
    alpha: f64,
    seed: u64,
) -> Result<(), Error> {
    let saved: SavedFit = serde_json::from_str(&table_io::read_spec_text(fit_path)?)
        .map_err(|e| Error::spec(format!("saved fit: {e}")))?;
    let estimates = saved.estimates.as_ref().ok_or_else(|| {
        Error::spec("the saved fit contains no estimates (the fit failed); re-run the fit")
    })?;
    let layout = &estimates.layout;
    if estimates.theta.len() != layout.p {
        return Err(Error::spec(format!(
            "saved fit is inconsistent: {} coefficients for a layout of dimension {}",
            estimates.theta.len(),
            layout.p
        )));
    }
    let theta = DVector::from_vec(estimates.theta.clone());
    let v_theta = estimates.v_theta.to_matrix()?;
    if v_theta.nrows() != layout.p {
        return Err(Error::spec(format!(
            "saved fit is inconsistent: covariance of dimension {} for {} coefficients",
            v_theta.nrows(),
            layout.p
        )));
    }

    let functional_spec: FunctionalSpec =
        serde_json::from_str(&table_io::read_spec_text(functional_path)?)
            .map_err(|e| Error::spec(format!("functional: {e}")))?;
    let functional = build_functional(&functional_spec, layout, &theta)?;
    let estimate = functional(&theta);
    if !estimate.is_finite() {
        return Err(Error::spec(format!(
            "the functional is not finite at the estimate (got {estimate})"
        )));
    }

    let interval =
        infer::simulate_ci_from_cov(&theta, &v_theta, functional.as_ref(), n_sim, alpha, seed)?;
    let doc = CiDoc {
        schema_version: CI_SCHEMA,
        functional: &functional_spec,
        n_sim,
        alpha,
        seed,
        estimate,
        lower: interval.lower,
        upper: interval.upper,
        n_used: interval.n_used,
    };
    print!("{}", table_io::to_json_text(&doc)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bigam_core::fit::FitOptions;
    use bigam_core::model::Model;
    use bigam_core::sim::{DgpSpec, TriangularDgp};

    /// The closure type has no Debug impl, so unwrap_err does not
    /// apply; unpack the error by hand.
    fn expect_err(result: Result<Functional, Error>) -> Error {
        match result {
            Ok(_) => panic!("expected the functional to be rejected"),
            Err(e) => e,
        }
    }

    /// A fitted small triangular model for exercising the functionals.
    fn small_fit() -> (Layout, DVector<f64>) {
        let dgp = TriangularDgp {
            n: 250,
            seed: 2,
            ..TriangularDgp::default()
        };
        let spec = DgpSpec::TriangularOrdinal(dgp);
        let table = spec.generate().unwrap();
        let model = Model::build(&spec.model_spec().unwrap(), &table).unwrap();
        let options = FitOptions {
            fixed_lambda: Some(vec![5.0; 3]),
            ..FitOptions::default()
        };
        let fit = bigam_core::fit::fit(&model, &options).unwrap();
        (model.layout.clone(), fit.theta)
    }

    #[test]
    fn functionals_evaluate_and_reject_per_kind() {
        let (layout, theta) = small_fit();

        let psi = build_functional(&FunctionalSpec::Psi, &layout, &theta).unwrap();
        assert_eq!(psi(&theta), theta[layout.psi_index.unwrap()]);

        let rho = build_functional(&FunctionalSpec::Rho, &layout, &theta).unwrap();
        assert_eq!(rho(&theta), theta[layout.rho_index.unwrap()].tanh());

        let err = expect_err(build_functional(&FunctionalSpec::Gamma, &layout, &theta));
        assert!(err.to_string().contains("psi and rho"), "{err}");

        let coef = build_functional(
            &FunctionalSpec::Coefficient {
                name: "eq1.x1".to_string(),
            },
            &layout,
            &theta,
        )
        .unwrap();
        let index = layout.names.iter().position(|n| n == "eq1.x1").unwrap();
        assert_eq!(coef(&theta), theta[index]);

        let err = expect_err(build_functional(
            &FunctionalSpec::Coefficient {
                name: "eq1.bogus".to_string(),
            },
            &layout,
            &theta,
        ));
        assert!(err.to_string().contains("eq1.bogus"), "{err}");
    }

    #[test]
    fn smooth_at_respects_the_domain() {
        let (layout, theta) = small_fit();
        let ok = build_functional(
            &FunctionalSpec::SmoothAt {
                equation: 1,
                column: "v1".to_string(),
                x: 0.5,
            },
            &layout,
            &theta,
        )
        .unwrap();
        assert!(ok(&theta).is_finite());

        let err = expect_err(build_functional(
            &FunctionalSpec::SmoothAt {
                equation: 1,
                column: "v1".to_string(),
                x: 7.0,
            },
            &layout,
            &theta,
        ));
        assert!(err.to_string().contains("domain"), "{err}");

        let err = expect_err(build_functional(
            &FunctionalSpec::SmoothAt {
                equation: 2,
                column: "v2".to_string(),
                x: 0.5,
            },
            &layout,
            &theta,
        ));
        assert!(err.to_string().contains("no smooth term"), "{err}");
    }

    #[test]
    fn cell_probabilities_validate_their_label_and_sum_to_one() {
        let (layout, theta) = small_fit();
        let covariates: BTreeMap<String, f64> = [
            ("x1", 0.5),
            ("x2", -0.5),
            ("x3", 0.5),
            ("v1", 0.4),
            ("v2", 0.6),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

        let err = expect_err(build_functional(
            &FunctionalSpec::CellProbability {
                cell: "p9,9".to_string(),
                covariates: covariates.clone(),
            },
            &layout,
            &theta,
        ));
        assert!(err.to_string().contains("p9,9"), "{err}");

        let (k1, k2) = (5, 6);
        let mut total = 0.0;
        for c1 in 1..=k1 {
            for c2 in 1..=k2 {
                let f = build_functional(
                    &FunctionalSpec::CellProbability {
                        cell: format!("p{c1},{c2}"),
                        covariates: covariates.clone(),
                    },
                    &layout,
                    &theta,
                )
                .unwrap();
                let p = f(&theta);
                assert!((0.0..=1.0).contains(&p), "cell p{c1},{c2} = {p}");
                total += p;
            }
        }
        assert!((total - 1.0).abs() < 1e-8, "cells sum to {total}");
    }
}
