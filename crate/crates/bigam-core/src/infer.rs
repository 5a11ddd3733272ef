//! Inference for fitted models: covariance matrices, simulation-based
//! confidence intervals for arbitrary functionals of the coefficients,
//! pointwise bands for smooth terms, and information criteria.
//!
//! Two covariance matrices are available at the optimum. The posterior
//! covariance V_θ = (DᵀW̄D + S_λ)⁻¹ treats the penalty as a Gaussian
//! prior and is the default for interval construction: it carries both
//! a bias and a variance component, which is what gives smooth-term
//! bands close-to-nominal across-the-function coverage. The frequentist
//! sandwich V_θ̂ = H_p⁻¹ H H_p⁻¹ (penalized outside, unpenalized
//! inside) is reported for comparison; the two estimators converge to
//! the same matrix as n grows.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Error;
use crate::fit::FitResult;
use crate::model::{Layout, TermShape};
use crate::num::normal;
use crate::rng;

/// RNG stream namespace for confidence-interval draws, so CI streams
/// never collide with data-generation streams under the same seed.
const CI_STREAM_BASE: u64 = 1 << 40;

/// Number of grid points for smooth-term curve export.
pub const BAND_GRID_POINTS: usize = 200;

/// Posterior and frequentist covariance matrices of the coefficient
/// estimator.
#[derive(Debug, Clone)]
pub struct PosteriorCov {
    /// Bayesian posterior covariance (DᵀW̄D + S_λ)⁻¹ at θ̂.
    pub v_theta: DMatrix<f64>,
    /// Frequentist sandwich (DᵀW̄D + S_λ)⁻¹ DᵀW̄D (DᵀW̄D + S_λ)⁻¹.
    pub v_theta_freq: DMatrix<f64>,
}

/// Both covariance estimators at the optimum.
///
/// Fails when the penalized information matrix is not positive
/// definite, which indicates the fit stopped short of a proper optimum.
pub fn posterior_cov(fit: &FitResult) -> Result<PosteriorCov, Error> {
    let a_pen = &fit.h_unpen + &fit.s_lambda;
    let chol = Cholesky::new(a_pen).ok_or_else(|| {
        Error::NoConvergence(
            "penalized information is indefinite at the reported estimate; \
             interval construction needs a converged fit"
            .into(),
        )
    })?;
    let v_theta = symmetrize(chol.inverse());
    let v_theta_freq = symmetrize(&v_theta * &fit.h_unpen * &v_theta);
    Ok(PosteriorCov {
        v_theta,
        v_theta_freq,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// An empirical confidence interval from posterior simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Draws whose functional value was finite and entered the order
    /// statistics.
    pub n_used: usize,
}

/// Simulation-based (1−α) confidence interval for a functional T(θ).
///
/// Draws θ*_r ~ N(θ̂, V_θ) via the Cholesky factor of the posterior
/// covariance, evaluates T on every draw in parallel (one deterministic
/// RNG stream per draw), sorts the finite values, and returns the
/// empirical α/2 and 1−α/2 order statistics: the smallest ⌈N·q⌉-th
/// value for quantile q. Errors if more than 1% of draws produce a
/// non-finite functional value.
pub fn simulate_ci(
    fit: &FitResult,
    functional: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    n_sim: usize,
    alpha: f64,
    seed: u64,
) -> Result<Interval, Error> {
    let cov = posterior_cov(fit)?;
    simulate_ci_from_cov(&fit.theta, &cov.v_theta, functional, n_sim, alpha, seed)
}

/// [`simulate_ci`] driven by an explicit mean and covariance, e.g. from
/// a saved fit.
pub fn simulate_ci_from_cov(
    theta: &DVector<f64>,
    v_theta: &DMatrix<f64>,
    functional: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    n_sim: usize,
    alpha: f64,
    seed: u64,
) -> Result<Interval, Error> {
    if n_sim < 100 {
        return Err(Error::spec(format!(
            "interval simulation needs at least 100 draws, got {n_sim}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::spec(format!(
            "interval level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let factor = Cholesky::new(v_theta.clone())
        .ok_or_else(|| {
            Error::Singular("posterior covariance lost positive definiteness".into())
        })?
        .l();
    let p = theta.len();

    let values: Vec<f64> = (0..n_sim)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream_rng(seed, CI_STREAM_BASE + r as u64);
            let eps = DVector::from_fn(p, |_, _| rng::normal(&mut rng));
            let draw = theta + &factor * eps;
            functional(&draw)
        })
        .collect();

    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let bad = n_sim - finite.len();
    if bad * 100 > n_sim {
        return Err(Error::NoConvergence(format!(
            "confidence-interval functional was non-finite on {bad} of {n_sim} posterior draws"
        )));
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    Ok(Interval {
        lower: finite[order_index(n, alpha / 2.0)],
        upper: finite[order_index(n, 1.0 - alpha / 2.0)],
        n_used: n,
    })
}

/// Zero-based index of the smallest ⌈n·q⌉-th order statistic.
fn order_index(n: usize, q: f64) -> usize {
    let k = (q * n as f64).ceil() as usize;
    k.clamp(1, n) - 1
}

/// One evaluation point of a smooth-term band.
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub x: f64,
    /// Fitted centered smooth value ŝ(x).
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Equispaced evaluation grid over a smooth term's domain.
pub fn default_band_grid(layout: &Layout, equation: usize, column: &str) -> Result<Vec<f64>, Error> {
    let block = find_smooth(layout, equation, column)?;
    let TermShape::Smooth { basis, .. } = &block.shape else {
        unreachable!("find_smooth returns smooth blocks only");
    };
    let (lo, hi) = basis.domain();
    // Clamp against 1-ulp overshoot of the arithmetic at the endpoints.
    Ok((0..BAND_GRID_POINTS)
        .map(|k| (lo + (hi - lo) * k as f64 / (BAND_GRID_POINTS - 1) as f64).clamp(lo, hi))
        .collect())
}

/// Pointwise (1−α) intervals for one smooth term on an evaluation grid,
/// from the normal approximation ŝ(x) ± z·√(b(x)ᵀ V_block b(x)) with
/// the centered basis row b(x) and the posterior covariance block of
/// the term's coefficients.
pub fn smooth_bands(
    layout: &Layout,
    fit: &FitResult,
    equation: usize,
    column: &str,
    grid: &[f64],
    alpha: f64,
) -> Result<Vec<BandPoint>, Error> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::spec(format!(
            "band level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let block = find_smooth(layout, equation, column)?;
    let TermShape::Smooth {
        basis, centering, ..
    } = &block.shape
    else {
        unreachable!("find_smooth returns smooth blocks only");
    };
    let cov = posterior_cov(fit)?;
    let v_block = cov
        .v_theta
        .view((block.offset, block.offset), (block.width, block.width))
        .clone_owned();
    let theta_block = fit.theta.rows(block.offset, block.width).clone_owned();
    let z = normal::quantile(1.0 - alpha / 2.0)?;

    grid.iter()
        .map(|&x| {
            let raw = basis.row(x)?;
            let b = DVector::from_vec(centering.apply_row(&raw));
            Ok(band_at(x, &b, &theta_block, &v_block, z))
        })
        .collect()
}

/// Band at one point given the centered basis row.
fn band_at(
    x: f64,
    b: &DVector<f64>,
    theta_block: &DVector<f64>,
    v_block: &DMatrix<f64>,
    z: f64,
) -> BandPoint {
    let fit = b.dot(theta_block);
    let var = (b.transpose() * v_block * b)[(0, 0)].max(0.0);
    let half = z * var.sqrt();
    BandPoint {
        x,
        fit,
        lower: fit - half,
        upper: fit + half,
    }
}

fn find_smooth<'a>(
    layout: &'a Layout,
    equation: usize,
    column: &str,
) -> Result<&'a crate::model::BlockInfo, Error> {
    layout
        .blocks
        .iter()
        .find(|b| {
            b.equation == equation
                && matches!(&b.shape, TermShape::Smooth { column: c, .. } if c == column)
        })
        .ok_or_else(|| {
            Error::spec(format!(
                "equation {} has no smooth term on column {column:?}",
                equation + 1
            ))
        })
}

/// Effective dimension of one penalized term.
#[derive(Debug, Clone)]
pub struct TermEdf {
    pub label: String,
    pub edf: f64,
}

/// Model-selection summary of a fit.
#[derive(Debug, Clone)]
pub struct InformationCriteria {
    /// 2·tr(P) − 2·ℓ(θ̂) with tr(P) the total effective dimension.
    pub aic: f64,
    /// The risk-criterion value at the selected smoothing parameters.
    pub ubre: f64,
    pub edf_total: f64,
    /// Per-term effective dimensions: the trace of the term's diagonal
    /// block of (DᵀW̄D + S_λ)⁻¹ DᵀW̄D.
    pub edf_terms: Vec<TermEdf>,
}

/// AIC, criterion value, and effective dimensions (total and per
/// penalized term).
pub fn information_criteria(
    layout: &Layout,
    fit: &FitResult,
) -> Result<InformationCriteria, Error> {
    let a_pen = &fit.h_unpen + &fit.s_lambda;
    let chol = Cholesky::new(a_pen).ok_or_else(|| {
        Error::NoConvergence(
            "penalized information is indefinite at the reported estimate".into(),
        )
    })?;
    // F = (A + S_λ)⁻¹A maps unpenalized to penalized estimates; its
    // trace is the total effective dimension and each diagonal block
    // traces out one term's share.
    let f = chol.solve(&fit.h_unpen);
    let edf_terms = layout
        .blocks
        .iter()
        .filter(|b| b.penalty_index.is_some())
        .map(|b| TermEdf {
            label: b.label.clone(),
            edf: (0..b.width).map(|j| f[(b.offset + j, b.offset + j)]).sum(),
        })
        .collect();
    Ok(InformationCriteria {
        aic: 2.0 * fit.edf_total - 2.0 * fit.log_lik,
        ubre: fit.ubre,
        edf_total: fit.edf_total,
        edf_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::data::DataTable;
    use crate::fit::{fit, FitOptions};
    use crate::model::{
        EquationSpec, Model, ModelKind, ModelSpec, ResponseSpec, TermSpec,
    };
    use crate::penalty::Adjacency;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn col(values: Vec<f64>) -> Vec<Option<f64>> {
        values.into_iter().map(Some).collect()
    }

    /// Bivariate binary data: probit margins with a latent Gaussian
    /// association of 0.5, one shared covariate, one smooth-shaped
    /// covariate.
    fn binary_table(n: usize, seed: u64) -> DataTable {
        let mut rng = stream_rng(4242, seed);
        let mut y1 = Vec::with_capacity(n);
        let mut y2 = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = rng.gen::<f64>() * 2.0 - 1.0;
            let vi = rng.gen::<f64>();
            let e1: f64 = crate::rng::normal(&mut rng);
            let e2 = 0.5 * e1 + (1.0f64 - 0.25).sqrt() * crate::rng::normal(&mut rng);
            let eta1 = 0.2 + 0.7 * xi + (vi * vi - 0.4);
            let eta2 = -0.3 + 0.5 * xi;
            y1.push(if e1 < eta1 { 1.0 } else { 0.0 });
            y2.push(if e2 < eta2 { 1.0 } else { 0.0 });
            x.push(xi);
            v.push(vi);
        }
        DataTable::new(
            vec!["y1".into(), "y2".into(), "x".into(), "v".into()],
            vec![col(y1), col(y2), col(x), col(v)],
        )
        .unwrap()
    }

    fn binary_spec(with_smooth: bool) -> ModelSpec {
        let terms1 = if with_smooth {
            vec![TermSpec::linear("x"), TermSpec::smooth("v", 8)]
        } else {
            vec![TermSpec::linear("x")]
        };
        ModelSpec {
            kind: ModelKind::BivBinaryCopula,
            response_columns: ["y1".into(), "y2".into()],
            responses: [ResponseSpec::binary(), ResponseSpec::binary()],
            equations: [
                EquationSpec::new(terms1),
                EquationSpec::new(vec![TermSpec::linear("x")]),
            ],
            assoc_equation: None,
            copula: CopulaSpec::parse_name("gaussian").unwrap(),
        }
    }

    fn fitted(n: usize, seed: u64, with_smooth: bool) -> (Model, FitResult) {
        let table = binary_table(n, seed);
        let model = Model::build(&binary_spec(with_smooth), &table).unwrap();
        let result = fit(&model, &FitOptions::default()).unwrap();
        assert!(result.diagnostics.converged);
        (model, result)
    }

    #[test]
    fn unpenalized_posterior_matches_inverse_information() {
        let (_, result) = fitted(300, 1, false);
        assert_eq!(result.s_lambda.amax(), 0.0, "no penalized terms");
        let cov = posterior_cov(&result).unwrap();
        let inv_info = Cholesky::new(result.h_unpen.clone()).unwrap().inverse();
        let rel = (&cov.v_theta - &inv_info).norm() / inv_info.norm();
        assert!(rel < 1e-10, "V_θ vs inverse information: rel {rel:.3e}");
        // Without a penalty the sandwich collapses onto the same matrix.
        let rel_freq = (&cov.v_theta_freq - &inv_info).norm() / inv_info.norm();
        assert!(rel_freq < 1e-10, "sandwich: rel {rel_freq:.3e}");
    }

    #[test]
    fn covariances_are_symmetric_with_positive_diagonals() {
        let (_, result) = fitted(250, 2, true);
        let cov = posterior_cov(&result).unwrap();
        for m in [&cov.v_theta, &cov.v_theta_freq] {
            assert!((m - m.transpose()).amax() < 1e-10);
            for j in 0..m.nrows() {
                assert!(m[(j, j)] > 0.0, "nonpositive variance at {j}");
            }
        }
    }

    #[test]
    fn covariance_gap_is_exactly_the_penalty_sandwich() {
        // The two estimators differ by V_θ − V_θ̂ = (A+S)⁻¹S(A+S)⁻¹,
        // which is the mechanism behind their large-sample agreement:
        // the gap is controlled entirely by the penalty's share of the
        // penalized information.
        let table = binary_table(300, 3);
        let model = Model::build(&binary_spec(true), &table).unwrap();
        let result = fit(
            &model,
            &FitOptions {
                fixed_lambda: Some(vec![1.0]),
                ..FitOptions::default()
            },
        )
        .unwrap();
        let cov = posterior_cov(&result).unwrap();
        let p = &result.h_unpen + &result.s_lambda;
        let pinv = Cholesky::new(p).unwrap().inverse();
        let psp = &pinv * &result.s_lambda * &pinv;
        let gap = &cov.v_theta - &cov.v_theta_freq;
        let rel = (&gap - &psp).norm() / psp.norm();
        assert!(rel < 1e-8, "identity violated: rel {rel:.3e}");
    }

    #[test]
    fn covariance_gap_vanishes_with_the_penalty() {
        let table = binary_table(300, 3);
        let model = Model::build(&binary_spec(true), &table).unwrap();
        let gap_at = |lambda: f64| {
            let result = fit(
                &model,
                &FitOptions {
                    fixed_lambda: Some(vec![lambda]),
                    ..FitOptions::default()
                },
            )
            .unwrap();
            let cov = posterior_cov(&result).unwrap();
            (&cov.v_theta - &cov.v_theta_freq).norm() / cov.v_theta_freq.norm()
        };
        let heavy = gap_at(1.0);
        let light = gap_at(1e-8);
        assert!(light < 1e-4, "gap should vanish as λ → 0: {light:.3e}");
        assert!(
            light < 1e-2 * heavy,
            "gap should scale down with λ: {heavy:.3e} -> {light:.3e}"
        );
        assert!(heavy > 1e-3, "penalty should separate the estimators");
    }

    #[test]
    fn linear_functional_interval_matches_gaussian_closed_form() {
        let (_, result) = fitted(300, 4, false);
        let cov = posterior_cov(&result).unwrap();
        let p = result.theta.len();
        let c = DVector::from_fn(p, |j, _| 0.3 + 0.1 * j as f64);

        let center = c.dot(&result.theta);
        let sd = (c.transpose() * &cov.v_theta * &c)[(0, 0)].sqrt();
        let z = normal::quantile(0.975).unwrap();
        let (lo_cf, hi_cf) = (center - z * sd, center + z * sd);

        let cc = c.clone();
        let interval = simulate_ci(
            &result,
            &move |theta: &DVector<f64>| cc.dot(theta),
            100_000,
            0.05,
            99,
        )
        .unwrap();
        let width = hi_cf - lo_cf;
        assert!(
            (interval.lower - lo_cf).abs() < 0.02 * width,
            "lower {:.4} vs {:.4}",
            interval.lower,
            lo_cf
        );
        assert!(
            (interval.upper - hi_cf).abs() < 0.02 * width,
            "upper {:.4} vs {:.4}",
            interval.upper,
            hi_cf
        );
    }

    #[test]
    fn constant_functional_gives_degenerate_interval() {
        let (_, result) = fitted(150, 5, false);
        let interval = simulate_ci(&result, &|_: &DVector<f64>| 2.5, 200, 0.05, 7).unwrap();
        assert_eq!(interval.lower, 2.5);
        assert_eq!(interval.upper, 2.5);
        assert_eq!(interval.n_used, 200);
    }

    #[test]
    fn seeded_intervals_reproduce_bit_exactly() {
        let (_, result) = fitted(150, 6, false);
        let t = |theta: &DVector<f64>| theta[0].tanh() + theta[1];
        let a = simulate_ci(&result, &t, 500, 0.10, 11).unwrap();
        let b = simulate_ci(&result, &t, 500, 0.10, 11).unwrap();
        assert_eq!(a.lower.to_bits(), b.lower.to_bits());
        assert_eq!(a.upper.to_bits(), b.upper.to_bits());
        let c = simulate_ci(&result, &t, 500, 0.10, 12).unwrap();
        assert_ne!(a.lower.to_bits(), c.lower.to_bits());
    }

    #[test]
    fn interval_bounds_are_ordered_for_nonlinear_functionals() {
        let (_, result) = fitted(150, 7, false);
        let functionals: Vec<Box<dyn Fn(&DVector<f64>) -> f64 + Sync>> = vec![
            Box::new(|t: &DVector<f64>| t[0]),
            Box::new(|t: &DVector<f64>| t.iter().map(|v| v.tanh()).sum()),
            Box::new(|t: &DVector<f64>| (t[0] - t[1]).abs()),
        ];
        for f in &functionals {
            let iv = simulate_ci(&result, f.as_ref(), 300, 0.05, 3).unwrap();
            assert!(iv.lower <= iv.upper);
        }
    }

    #[test]
    fn mostly_nonfinite_functional_is_rejected_with_diagnostics() {
        let (_, result) = fitted(150, 8, false);
        let center = result.theta[0];
        // NaN on roughly half of the draws: far beyond the 1% budget.
        let err = simulate_ci(
            &result,
            &move |t: &DVector<f64>| {
                if t[0] > center {
                    f64::NAN
                } else {
                    t[0]
                }
            },
            400,
            0.05,
            5,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "unexpected message: {msg}");
        assert!(msg.contains("of 400"), "message lacks counts: {msg}");
    }

    #[test]
    fn ci_input_validation() {
        let (_, result) = fitted(150, 9, false);
        let t = |theta: &DVector<f64>| theta[0];
        assert!(matches!(
            simulate_ci(&result, &t, 99, 0.05, 1),
            Err(Error::Spec(_))
        ));
        assert!(matches!(
            simulate_ci(&result, &t, 500, 0.0, 1),
            Err(Error::Spec(_))
        ));
        assert!(matches!(
            simulate_ci(&result, &t, 500, 1.0, 1),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn smooth_bands_cover_the_fit_symmetrically() {
        let (model, result) = fitted(250, 10, true);
        let grid = default_band_grid(&model.layout, 0, "v").unwrap();
        assert_eq!(grid.len(), BAND_GRID_POINTS);
        let bands = smooth_bands(&model.layout, &result, 0, "v", &grid, 0.05).unwrap();
        assert_eq!(bands.len(), grid.len());
        for pt in &bands {
            assert!(pt.lower <= pt.fit && pt.fit <= pt.upper);
            let asym = (pt.upper - pt.fit) - (pt.fit - pt.lower);
            assert!(asym.abs() < 1e-12, "band must be symmetric around fit");
        }
        // The band must not be degenerate everywhere.
        assert!(bands.iter().any(|pt| pt.upper - pt.lower > 1e-4));
    }

    #[test]
    fn band_collapses_when_the_basis_row_vanishes() {
        let b = DVector::zeros(4);
        let theta = DVector::from_column_slice(&[1.0, -2.0, 0.5, 0.3]);
        let v = DMatrix::identity(4, 4);
        let pt = band_at(0.5, &b, &theta, &v, 1.96);
        assert_eq!(pt.fit, 0.0);
        assert_eq!(pt.lower, 0.0);
        assert_eq!(pt.upper, 0.0);
    }

    #[test]
    fn bands_reject_points_outside_the_domain() {
        let (model, result) = fitted(200, 11, true);
        let err = smooth_bands(&model.layout, &result, 0, "v", &[1.5], 0.05).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err}");
        let err = smooth_bands(&model.layout, &result, 0, "nope", &[0.5], 0.05).unwrap_err();
        assert!(matches!(err, Error::Spec(_)), "got {err}");
    }

    #[test]
    fn aic_reduces_to_classic_form_without_penalties() {
        let (model, result) = fitted(200, 12, false);
        let ic = information_criteria(&model.layout, &result).unwrap();
        let p = model.n_coef() as f64;
        assert_abs_diff_eq!(ic.edf_total, p, epsilon = 1e-6);
        assert_abs_diff_eq!(ic.aic, 2.0 * p - 2.0 * result.log_lik, epsilon = 1e-5);
        assert!(ic.edf_terms.is_empty());
    }

    #[test]
    fn per_term_and_residual_edf_partition_the_total() {
        let (model, result) = fitted(250, 13, true);
        let ic = information_criteria(&model.layout, &result).unwrap();
        assert_eq!(ic.edf_terms.len(), 1);
        let smooth_edf = ic.edf_terms[0].edf;
        assert!(smooth_edf > 0.0);

        // The diagonal of F = (A+S)⁻¹A over all coefficients sums to
        // the reported total.
        let a_pen = &result.h_unpen + &result.s_lambda;
        let f = Cholesky::new(a_pen).unwrap().solve(&result.h_unpen);
        assert_abs_diff_eq!(f.trace(), ic.edf_total, epsilon = 1e-6);

        // The penalized block cannot exceed its own width.
        let block = model
            .layout
            .blocks
            .iter()
            .find(|b| b.penalty_index.is_some())
            .unwrap();
        assert!(smooth_edf <= block.width as f64 + 1e-9);
    }

    #[test]
    fn aic_barely_moves_when_a_fully_smoothed_term_is_added() {
        // An ordinal model where a spatial term over a connected graph
        // is pushed to zero effective dimension by a huge fixed
        // smoothing parameter: the likelihood and AIC must match the
        // model without the term.
        let n = 240;
        let mut rng = stream_rng(888, 0);
        let mut y1 = Vec::new();
        let mut y2 = Vec::new();
        let mut x = Vec::new();
        let mut region = Vec::new();
        for _ in 0..n {
            let xi = rng.gen::<f64>() * 2.0 - 1.0;
            let e1: f64 = crate::rng::normal(&mut rng);
            let e2 = 0.4 * e1 + (1.0f64 - 0.16).sqrt() * crate::rng::normal(&mut rng);
            let z1 = 0.8 * xi + e1;
            let z2 = -0.5 * xi + e2;
            y1.push(if z1 < -0.5 {
                1.0
            } else if z1 < 0.7 {
                2.0
            } else {
                3.0
            });
            y2.push(if z2 < 0.0 { 1.0 } else { 2.0 });
            x.push(xi);
            region.push((rng.gen_range(0..4) + 1) as f64);
        }
        let table = DataTable::new(
            vec!["y1".into(), "y2".into(), "x".into(), "region".into()],
            vec![col(y1), col(y2), col(x), col(region)],
        )
        .unwrap();
        let adjacency = Adjacency::parse("4\n1 2\n2 3\n3 4\n").unwrap();

        let spec_of = |with_mrf: bool| ModelSpec {
            kind: ModelKind::BivOrdinalGaussian,
            response_columns: ["y1".into(), "y2".into()],
            responses: [
                ResponseSpec::ordinal(3).unwrap(),
                ResponseSpec::ordinal(2).unwrap(),
            ],
            equations: [
                EquationSpec::new(if with_mrf {
                    vec![
                        TermSpec::linear("x"),
                        TermSpec::Mrf {
                            column: "region".into(),
                            adjacency: adjacency.clone(),
                        },
                    ]
                } else {
                    vec![TermSpec::linear("x")]
                }),
                EquationSpec::new(vec![TermSpec::linear("x")]),
            ],
            assoc_equation: None,
            copula: CopulaSpec::parse_name("gaussian").unwrap(),
        };

        let base_model = Model::build(&spec_of(false), &table).unwrap();
        let base = fit(&base_model, &FitOptions::default()).unwrap();
        let base_ic = information_criteria(&base_model.layout, &base).unwrap();

        let aug_model = Model::build(&spec_of(true), &table).unwrap();
        let aug = fit(
            &aug_model,
            &FitOptions {
                fixed_lambda: Some(vec![1e10]),
                ..FitOptions::default()
            },
        )
        .unwrap();
        let aug_ic = information_criteria(&aug_model.layout, &aug).unwrap();

        // The centered spatial block over a connected graph has no
        // penalty null space, so λ → ∞ removes all of its freedom.
        let mrf_edf = aug_ic
            .edf_terms
            .iter()
            .find(|t| t.label.contains("region"))
            .unwrap()
            .edf;
        assert!(mrf_edf < 1e-3, "spatial term not smoothed out: {mrf_edf}");
        assert!(
            (aug_ic.aic - base_ic.aic).abs() < 0.1,
            "AIC moved: {} vs {}",
            aug_ic.aic,
            base_ic.aic
        );
    }
}
