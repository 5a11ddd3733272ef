//! Penalized maximum-likelihood fitting.
//!
//! Estimation alternates two loops. The inner loop maximizes the
//! penalized log-likelihood ℓ(θ) − ½θᵀS_λθ at fixed smoothing
//! parameters λ by Newton steps with step halving, using the observed
//! curvature where it is positive definite and the expected (Fisher)
//! curvature otherwise. The outer loop freezes the working model at the
//! current estimate — the expected information A = Σ DᵀW̄D, the working
//! right-hand side b, and the residual constant — and minimizes an
//! unbiased-risk criterion over log λ on that frozen quadratic, which
//! makes criterion evaluations cheap (one Cholesky per trial λ). The
//! new λ re-enters the inner loop through a generalized least-squares
//! warm start, and the alternation stops when log λ moves less than a
//! tolerance.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::Error;
use crate::model::{Accum, Model, ModelKind, TermShape, Wants};
use crate::num::normal;

/// Hard bounds on each log-smoothing parameter during selection.
const LOG_LAMBDA_BOUND: f64 = 18.0;
/// Convergence tolerance for the outer search, in log λ.
const OUTER_TOL: f64 = 1e-3;
/// Central finite-difference step for criterion gradients in log λ.
const FD_STEP: f64 = 1e-4;
/// Maximum step halvings in the inner line search.
const MAX_HALVINGS: u32 = 30;
/// Ridge escalation ladder for near-singular Newton systems.
const RIDGE_MAX: f64 = 1e-3;
const RIDGE_START: f64 = 1e-7;

/// Tuning knobs for [`fit`]; the defaults match the reference
/// algorithm.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Maximum smoothing-parameter updates.
    pub max_outer: usize,
    /// Maximum Newton iterations per inner solve.
    pub max_inner: usize,
    /// Inner convergence tolerance on max |Δθ|.
    pub tol: f64,
    /// Weight on the effective-dimension term of the risk criterion;
    /// larger values smooth more.
    pub kappa: f64,
    /// Skip smoothing-parameter selection and fit at these λ values
    /// (one per penalized term).
    pub fixed_lambda: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_outer: 50,
            max_inner: 100,
            tol: 1e-6,
            kappa: 1.0,
            fixed_lambda: None,
        }
    }
}

/// Convergence bookkeeping for a completed fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// True when the inner solve met its tolerance, the outer search
    /// stabilized, and no cell probability was floored at the optimum.
    pub converged: bool,
    pub outer_iters: usize,
    /// Newton iterations summed over all inner solves.
    pub inner_iters: usize,
    /// Observations with floored cell probabilities at the final θ.
    pub floored: usize,
    /// Observations whose Newton weight fell back to the Fisher weight
    /// at the final θ.
    pub fisher_fallbacks: usize,
}

/// A fitted model: coefficients, smoothing parameters, and the
/// curvature pieces downstream inference needs.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: DVector<f64>,
    /// Selected (or fixed) smoothing parameters, one per penalized
    /// term, in `model.penalty_labels` order.
    pub lambda: Vec<f64>,
    pub log_lik: f64,
    /// Risk criterion value at the selected λ.
    pub ubre: f64,
    /// Total effective dimension tr(P) = p − tr((A + S_λ)⁻¹S_λ).
    pub edf_total: f64,
    /// Unpenalized expected information Σ DᵀW̄D at θ̂.
    pub h_unpen: DMatrix<f64>,
    /// Penalty matrix S_λ at the selected λ.
    pub s_lambda: DMatrix<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Fit a model by penalized maximum likelihood with automatic
/// smoothing-parameter selection.
pub fn fit(model: &Model, options: &FitOptions) -> Result<FitResult, Error> {
    let p = model.n_coef();
    let q = model.penalties.n_terms();
    let n_tilde = (model.layout.slot_count() * model.n_obs() + p) as f64;

    if let Some(fixed) = options.fixed_lambda.as_ref() {
        if fixed.len() != q {
            return Err(Error::spec(format!(
                "{} fixed smoothing parameters for {} penalized terms",
                fixed.len(),
                q
            )));
        }
    }

    let mut theta = starting_values(model)?;
    let mut log_lambda = DVector::zeros(q);
    if let Some(fixed) = options.fixed_lambda.as_ref() {
        for (j, l) in fixed.iter().enumerate() {
            if !(*l > 0.0) {
                return Err(Error::spec(format!(
                    "fixed smoothing parameters must be positive, got {l}"
                )));
            }
            log_lambda[j] = l.ln();
        }
    }

    let select = options.fixed_lambda.is_none() && q > 0;
    let mut outer_iters = 0usize;

    // First inner solve at the starting λ.
    let lambda_of = |eta: &DVector<f64>| -> Vec<f64> { eta.iter().map(|e| e.exp()).collect() };
    let mut s = model.penalties.assemble(&lambda_of(&log_lambda))?;
    let solved = pirls(model, &theta, &s, options)?;
    theta = solved.theta;
    let mut inner_iters = solved.iters;
    let mut inner_ok = solved.converged;

    if select {
        for _ in 0..options.max_outer {
            outer_iters += 1;
            // Freeze the working model at the current estimate and
            // search log λ on the frozen criterion.
            let frozen = FrozenState::new(model, &theta)?;
            let crit = |eta: &DVector<f64>| -> f64 {
                frozen
                    .criterion(model, eta, options.kappa, n_tilde)
                    .map_or(f64::INFINITY, |c| c.value)
            };
            let eta_new = minimize(&crit, &log_lambda);
            let moved = (&eta_new - &log_lambda).amax();
            log_lambda = eta_new;
            s = model.penalties.assemble(&lambda_of(&log_lambda))?;

            // Warm-start the next inner solve from the frozen
            // generalized least-squares solution at the new λ.
            let warm = frozen
                .criterion(model, &log_lambda, options.kappa, n_tilde)
                .and_then(|c| c.theta_star);
            let start = warm.unwrap_or_else(|| theta.clone());
            let solved = pirls(model, &start, &s, options)?;
            theta = solved.theta;
            inner_iters += solved.iters;
            inner_ok = solved.converged;

            if moved < OUTER_TOL {
                break;
            }
        }
    }

    // Final diagnostics pass at θ̂: score/curvature diagnostics plus
    // the frozen pieces for the reported criterion value.
    let wants = Wants {
        grad: true,
        newton: true,
        fisher: true,
        freeze: true,
        observed: false,
    };
    let acc = model.accumulate(&theta, wants)?;
    let h_unpen = acc.fisher.clone().expect("fisher requested");
    let frozen = FrozenState::from_accum(&acc, &theta);
    let (ubre, edf_total) = frozen
        .criterion(model, &log_lambda, options.kappa, n_tilde)
        .map_or((f64::NAN, f64::NAN), |c| (c.value, c.edf));
    let converged = inner_ok
        && acc.floored == 0
        && (!select || outer_iters < options.max_outer)
        && edf_total.is_finite();

    Ok(FitResult {
        theta,
        lambda: lambda_of(&log_lambda),
        log_lik: acc.loglik,
        ubre,
        edf_total,
        h_unpen,
        s_lambda: s,
        diagnostics: FitDiagnostics {
            converged,
            outer_iters,
            inner_iters,
            floored: acc.floored,
            fisher_fallbacks: acc.fisher_fallbacks,
        },
    })
}

/// Result of one inner Newton solve.
struct InnerSolve {
    theta: DVector<f64>,
    converged: bool,
    iters: usize,
}

/// Maximize ℓ(θ) − ½θᵀSθ at fixed penalty by damped Newton iterations.
fn pirls(
    model: &Model,
    theta0: &DVector<f64>,
    s: &DMatrix<f64>,
    options: &FitOptions,
) -> Result<InnerSolve, Error> {
    let mut theta = theta0.clone();
    let mut pen_ll = penalized_loglik(model, &theta, s)?;
    let mut converged = false;
    let mut iters = 0usize;

    for _ in 0..options.max_inner {
        iters += 1;
        let acc = model.accumulate(&theta, Wants::newton_step())?;
        let grad_pen = acc.grad.expect("newton pass carries the score") - s * &theta;
        let a = acc.newton.expect("newton pass carries curvature") + s;
        let delta = solve_ridged(a, &grad_pen)?;

        // Step halving on the penalized objective.
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + alpha * &delta;
            let cand_ll = penalized_loglik(model, &cand, s)?;
            if cand_ll.is_finite() && cand_ll > pen_ll {
                theta = cand;
                pen_ll = cand_ll;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No ascent left along the Newton direction: converged if
            // the full step is already negligible, stuck otherwise.
            converged = delta.amax() < options.tol;
            break;
        }
        if (alpha * delta.amax()) < options.tol {
            converged = true;
            break;
        }
    }
    Ok(InnerSolve {
        theta,
        converged,
        iters,
    })
}

fn penalized_loglik(model: &Model, theta: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64, Error> {
    let ll = model.log_likelihood(theta)?;
    Ok(ll.value - 0.5 * (theta.transpose() * s * theta)[(0, 0)])
}

/// Solve Ax = b, escalating a diagonal ridge when the Cholesky
/// factorization fails.
fn solve_ridged(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, Error> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    let p = a.nrows();
    let mean_diag = (0..p).map(|i| a[(i, i)].abs()).sum::<f64>() / p.max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut ridge = RIDGE_START;
    while ridge <= RIDGE_MAX {
        let mut ar = a.clone();
        for i in 0..p {
            let d = a[(i, i)].abs().max(scale);
            ar[(i, i)] += ridge * d;
        }
        if let Some(chol) = Cholesky::new(ar) {
            return Ok(chol.solve(b));
        }
        ridge *= 10.0;
    }
    Err(Error::Singular(
        "penalized curvature is singular even after ridge escalation".into(),
    ))
}

/// The frozen working model at an estimate θ̄: a quadratic surrogate
/// RSS(θ) = θᵀAθ − 2θᵀb + c for the weighted residual sum of squares,
/// valid for any trial λ without touching the data again.
pub(crate) struct FrozenState {
    afish: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

/// Criterion evaluation at one trial λ.
pub(crate) struct CriterionEval {
    pub value: f64,
    pub edf: f64,
    /// The generalized least-squares minimizer at this λ, for warm
    /// starting.
    pub theta_star: Option<DVector<f64>>,
}

impl FrozenState {
    pub(crate) fn new(model: &Model, theta_bar: &DVector<f64>) -> Result<FrozenState, Error> {
        let acc = model.accumulate(theta_bar, Wants::freeze_state())?;
        Ok(FrozenState::from_accum(&acc, theta_bar))
    }

    /// Build the frozen quadratic from an accumulation that already
    /// carried the freeze pieces.
    pub(crate) fn from_accum(acc: &Accum, theta_bar: &DVector<f64>) -> FrozenState {
        let afish = acc.fisher.clone().expect("freeze pass carries A");
        let pu = acc
            .freeze_pu
            .clone()
            .expect("freeze pass carries Dᵀ(W̄W̄⁺u)");
        let c0 = acc.freeze_c0.expect("freeze pass carries uᵀW̄⁺u");
        let b = &afish * theta_bar + &pu;
        let c = (theta_bar.transpose() * &afish * theta_bar)[(0, 0)]
            + 2.0 * theta_bar.dot(&pu)
            + c0;
        FrozenState { afish, b, c }
    }

    pub(crate) fn rss_at(&self, theta: &DVector<f64>) -> f64 {
        (theta.transpose() * &self.afish * theta)[(0, 0)] - 2.0 * theta.dot(&self.b) + self.c
    }

    /// Unbiased-risk criterion at log λ = η on the frozen quadratic;
    /// `None` when the penalized system is not positive definite.
    pub(crate) fn criterion(
        &self,
        model: &Model,
        eta: &DVector<f64>,
        kappa: f64,
        n_tilde: f64,
    ) -> Option<CriterionEval> {
        let lambda: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let s = model.penalties.assemble(&lambda).ok()?;
        let p = self.afish.nrows();
        let a_pen = &self.afish + &s;
        let chol = Cholesky::new(a_pen)?;
        let theta_star = chol.solve(&self.b);
        let rss = self.rss_at(&theta_star);
        let edf = p as f64 - chol.solve(&s).trace();
        let value = rss / n_tilde - 1.0 + 2.0 * kappa * edf / n_tilde;
        Some(CriterionEval {
            value,
            edf,
            theta_star: Some(theta_star),
        })
    }
}

/// Minimize a criterion over log λ with box bounds: BFGS with central
/// finite-difference gradients and Armijo backtracking, falling back to
/// coordinate-wise golden-section sweeps when no descent is found.
fn minimize(f: &dyn Fn(&DVector<f64>) -> f64, eta0: &DVector<f64>) -> DVector<f64> {
    let q = eta0.len();
    if q == 0 {
        return eta0.clone();
    }
    let clamp = |eta: &mut DVector<f64>| {
        for e in eta.iter_mut() {
            *e = e.clamp(-LOG_LAMBDA_BOUND, LOG_LAMBDA_BOUND);
        }
    };
    let capped = |v: f64| if v.is_finite() { v } else { 1e12 };

    let mut eta = eta0.clone();
    clamp(&mut eta);
    let mut fval = capped(f(&eta));
    let mut hinv = DMatrix::identity(q, q);
    let mut grad = fd_gradient(f, &eta);

    for _ in 0..100 {
        if grad.amax() < 1e-9 {
            break;
        }
        let mut dir = -(&hinv * &grad);
        if dir.dot(&grad) >= 0.0 {
            // Reset a corrupted curvature estimate.
            hinv = DMatrix::identity(q, q);
            dir = -grad.clone();
        }

        // Armijo backtracking.
        let slope = dir.dot(&grad);
        let mut alpha = 1.0f64;
        let mut next: Option<(DVector<f64>, f64)> = None;
        for _ in 0..30 {
            let mut cand = &eta + alpha * &dir;
            clamp(&mut cand);
            let cand_f = capped(f(&cand));
            if cand_f <= fval + 1e-4 * alpha * slope {
                next = Some((cand, cand_f));
                break;
            }
            alpha *= 0.5;
        }

        let (eta_new, f_new) = match next {
            Some(pair) => pair,
            None => {
                // Coordinate-wise golden-section sweep as a fallback.
                let mut cand = eta.clone();
                for j in 0..q {
                    let fj = |x: f64| {
                        let mut e = cand.clone();
                        e[j] = x;
                        capped(f(&e))
                    };
                    cand[j] = golden_min(&fj, -LOG_LAMBDA_BOUND, LOG_LAMBDA_BOUND, 1e-3);
                }
                let cand_f = capped(f(&cand));
                if cand_f >= fval - 1e-12 {
                    break; // no further progress anywhere
                }
                (cand, cand_f)
            }
        };

        let step = &eta_new - &eta;
        if step.amax() < OUTER_TOL {
            eta = eta_new;
            break;
        }
        let grad_new = fd_gradient(f, &eta_new);
        let y = &grad_new - &grad;
        let sy = step.dot(&y);
        if sy > 1e-12 {
            // BFGS inverse update.
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            let ss = &step * step.transpose();
            let hys = &hy * step.transpose();
            hinv = hinv - (&hys + hys.transpose()) * rho + ss * (rho * rho * yhy + rho);
        }
        eta = eta_new;
        fval = f_new;
        grad = grad_new;
    }
    eta
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, eta: &DVector<f64>) -> DVector<f64> {
    let q = eta.len();
    let mut g = DVector::zeros(q);
    for j in 0..q {
        let mut up = eta.clone();
        up[j] += FD_STEP;
        let mut dn = eta.clone();
        dn[j] -= FD_STEP;
        let fu = f(&up);
        let fd = f(&dn);
        let (fu, fd) = (
            if fu.is_finite() { fu } else { 1e12 },
            if fd.is_finite() { fd } else { 1e12 },
        );
        g[j] = (fu - fd) / (2.0 * FD_STEP);
    }
    g
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Starting values: independent univariate fits per margin, empirical
/// thresholds, and an independence start for the association.
pub(crate) fn starting_values(model: &Model) -> Result<DVector<f64>, Error> {
    let lay = &model.layout;
    let mut theta = DVector::zeros(lay.p);

    for margin in 0..2 {
        let slice = margin_prefit(model, margin)?;
        let off = lay.eq_offset[margin];
        for (j, v) in slice.iter().enumerate() {
            theta[off + j] = *v;
        }
    }

    match lay.kind {
        ModelKind::BivBinaryCopula | ModelKind::SelectionBinary => {
            // Independence start on the association intercept, when the
            // equation has one.
            let start = lay.copula.independence_start();
            if let Some(block) = lay
                .blocks
                .iter()
                .find(|b| b.equation == 2 && matches!(b.shape, TermShape::Intercept))
            {
                theta[block.offset] = start;
            }
        }
        ModelKind::BivOrdinalGaussian => {
            // Association intercept starts at zero correlation.
        }
        ModelKind::TriangularOrdinal => {
            // ψ = 0, ρ* = 0 — already zeros.
        }
    }
    Ok(theta)
}

/// Penalized univariate fit of one margin (probit for binary margins,
/// cumulative probit for ordinal), by Fisher scoring with step halving.
/// Returns the coefficient slice for that margin's equation. For the
/// selection kind, the outcome margin is fitted on selected rows only.
fn margin_prefit(model: &Model, margin: usize) -> Result<DVector<f64>, Error> {
    let lay = &model.layout;
    let w = lay.eq_width[margin];
    let off = lay.eq_offset[margin];
    let resp = lay.responses[margin];
    let mj = resp.levels - 1;
    let n_cut = resp.n_cut_params();
    let z = &model.data.z[margin];

    // Rows entering this margin's likelihood, with 1-based codes.
    let rows: Vec<(usize, usize)> = match margin {
        0 => model.data.y1.iter().enumerate().map(|(i, &y)| (i, y)).collect(),
        _ => model
            .data
            .y2
            .iter()
            .enumerate()
            .filter_map(|(i, y)| y.map(|y| (i, y)))
            .collect(),
    };
    if rows.is_empty() {
        return Err(Error::data("margin has no observed responses"));
    }
    let n_used = rows.len() as f64;

    // Starting values: thresholds from the empirical cumulative
    // distribution, the intercept (if any) from the success rate.
    let mut theta = DVector::zeros(w);
    if n_cut > 0 {
        let mut counts = vec![0usize; resp.levels];
        for &(_, y) in &rows {
            counts[y - 1] += 1;
        }
        let mut cum = 0usize;
        let mut cuts = Vec::with_capacity(n_cut);
        for count in counts.iter().take(n_cut) {
            cum += count;
            let f_hat = (cum as f64 / n_used).clamp(1e-3, 1.0 - 1e-3);
            cuts.push(normal::quantile(f_hat)?);
        }
        let local = lay
            .cut_range(margin)
            .expect("ordinal margin has a threshold block")
            .start
            - off;
        theta[local] = cuts[0];
        for k in 1..n_cut {
            let gap = (cuts[k] - cuts[k - 1]).max(1e-3);
            theta[local + k] = gap.ln();
        }
    } else {
        let successes = rows.iter().filter(|&&(_, y)| y == 2).count() as f64;
        let p_hat = (successes / n_used).clamp(1e-3, 1.0 - 1e-3);
        if let Some(block) = lay
            .blocks
            .iter()
            .find(|b| b.equation == margin && matches!(b.shape, TermShape::Intercept))
        {
            theta[block.offset - off] = normal::quantile(p_hat)?;
        }
    }

    // Unit-λ penalty restricted to this equation's blocks.
    let lambda: Vec<f64> = (0..model.penalties.n_terms())
        .map(|t| {
            let owned = lay
                .blocks
                .iter()
                .any(|b| b.equation == margin && b.penalty_index == Some(t));
            if owned {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let s_full = model.penalties.assemble(&lambda)?;
    let s = s_full.view((off, off), (w, w)).clone_owned();

    // Univariate likelihood pieces at the current θ.
    let eval = |theta: &DVector<f64>,
                with_derivs: bool|
     -> (f64, Option<(DVector<f64>, DMatrix<f64>)>) {
        let cut_params = &theta.as_slice()[..n_cut];
        let cuts = super::model::cut_values(cut_params);
        let cut_at = |k: usize| -> f64 {
            if n_cut == 0 {
                0.0
            } else {
                cuts[k - 1]
            }
        };
        let mut loglik = 0.0;
        let mut score = with_derivs.then(|| DVector::zeros(w));
        let mut curv = with_derivs.then(|| DMatrix::zeros(w, w));
        for &(i, y) in &rows {
            let g: f64 = z.row(i).iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let bound = |k: usize| -> f64 {
                if k == 0 {
                    f64::NEG_INFINITY
                } else if k > mj {
                    f64::INFINITY
                } else {
                    cut_at(k) - g
                }
            };
            let cell = |k: usize| normal::cdf(bound(k)) - normal::cdf(bound(k - 1));
            let pi = cell(y).max(1e-300);
            loglik += pi.ln();
            if let (Some(score), Some(curv)) = (score.as_mut(), curv.as_mut()) {
                // Slot rows of D for this observation (mj × w).
                let mut d = DMatrix::zeros(mj, w);
                for k in 1..=mj {
                    for (jj, zv) in z.row(i).iter().enumerate() {
                        d[(k - 1, jj)] = -zv;
                    }
                    if n_cut > 0 {
                        let (_, grad, _) = super::model::cut_chain(cut_params, k);
                        for (jj, gval) in grad.iter().enumerate() {
                            d[(k - 1, jj)] += gval;
                        }
                    }
                }
                // Observed-cell slot gradient and the expected weight.
                let mut u = DVector::zeros(mj);
                if y <= mj {
                    u[y - 1] += normal::pdf(bound(y)) / pi;
                }
                if y >= 2 {
                    u[y - 2] -= normal::pdf(bound(y - 1)) / pi;
                }
                let mut wbar = DMatrix::zeros(mj, mj);
                for k in 1..=resp.levels {
                    let pk = cell(k);
                    let mut gk = DVector::zeros(mj);
                    if k <= mj {
                        gk[k - 1] += normal::pdf(bound(k));
                    }
                    if k >= 2 {
                        gk[k - 2] -= normal::pdf(bound(k - 1));
                    }
                    let wk = if pk > 0.0 { (1.0 / pk).min(1e12) } else { 1e12 };
                    wbar.ger(wk, &gk, &gk, 1.0);
                }
                score.gemv_tr(1.0, &d, &u, 1.0);
                let tmp = &wbar * &d;
                curv.gemm_tr(1.0, &d, &tmp, 1.0);
            }
        }
        (loglik, score.zip(curv))
    };

    let pen = |theta: &DVector<f64>, ll: f64| ll - 0.5 * (theta.transpose() * &s * theta)[(0, 0)];
    let mut pll = {
        let (ll, _) = eval(&theta, false);
        pen(&theta, ll)
    };
    for _ in 0..100 {
        let (_, derivs) = eval(&theta, true);
        let (score, curv) = derivs.expect("derivatives requested");
        let grad_pen = score - &s * &theta;
        let a = curv + &s;
        let delta = solve_ridged(a, &grad_pen)?;
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + alpha * &delta;
            let (ll, _) = eval(&cand, false);
            let cand_pll = pen(&cand, ll);
            if cand_pll.is_finite() && cand_pll > pll {
                theta = cand;
                pll = cand_pll;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || (alpha * delta.amax()) < 1e-6 {
            break;
        }
    }
    Ok(theta)
}
