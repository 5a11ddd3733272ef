//! Data generation for benchmark designs and a Monte Carlo replication
//! harness.
//!
//! Two generators are provided: a triangular ordinal design in which
//! the first latent response enters the second equation structurally,
//! and a binary sample-selection design whose latent pair is drawn
//! from an arbitrary copula with Gaussian margins. [`monte_carlo`]
//! repeatedly generates, fits, and aggregates: per-curve pointwise mean
//! estimates with RMSE against the centered truth, across-the-function
//! band coverage, and a parameter estimate table.
//!
//! Covariate laws are part of the design contract: continuous
//! covariates are independent Uniform(0,1), discrete ones independent
//! Bernoulli(0.5) centered to ±1/2. All randomness flows through
//! counter-based streams keyed by (seed, replication index), so results
//! are bit-identical across runs and thread counts.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaSpec, Rotation};
use crate::data::DataTable;
use crate::error::Error;
use crate::fit::{fit, FitOptions, FitResult};
use crate::infer;
use crate::model::{
    EquationSpec, Layout, Model, ModelKind, ModelSpec, ResponseSpec, TermShape, TermSpec,
};
use crate::num::normal;
use crate::rng;

/// Points in the common evaluation grid used by [`monte_carlo`].
pub const MC_GRID_POINTS: usize = 200;

/// Band level for the across-the-function coverage summary (95%).
const BAND_ALPHA: f64 = 0.05;

/// Basis dimension for every smooth term of the harness fit models.
const FIT_BASIS_DIM: usize = 10;

// ---------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------

/// Evaluate one of the named benchmark smooth effects on [0, 1].
///
/// * `s11`: `1 − v + 1.6 v² − sin(5v)`
/// * `s12`: `4v`
/// * `s21`: `0.08 { v¹¹ [10(1−v)]⁶ + 10 (10v)³ (1−v)¹⁰ }`
///
/// Unknown identifiers are an error.
pub fn test_function(id: &str, v: f64) -> Result<f64, Error> {
    match id {
        "s11" => Ok(1.0 - v + 1.6 * v * v - (5.0 * v).sin()),
        "s12" => Ok(4.0 * v),
        "s21" => Ok(0.08
            * (v.powi(11) * (10.0 * (1.0 - v)).powi(6)
                + 10.0 * (10.0 * v).powi(3) * (1.0 - v).powi(10))),
        _ => Err(Error::spec(format!(
            "unknown test function {id:?}; known functions are s11, s12, s21"
        ))),
    }
}

// ---------------------------------------------------------------------
// Generating-process specifications
// ---------------------------------------------------------------------

/// Triangular ordinal design: two latent regressions with correlated
/// Gaussian errors, the first latent response feeding the second
/// equation with coefficient ψ, each latent value discretized against
/// a fixed non-decreasing cut vector.
///
/// Missing JSON fields fall back to the benchmark defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TriangularDgp {
    pub n: usize,
    pub seed: u64,
    /// Structural coefficient on the first latent response.
    pub psi: f64,
    /// Latent error correlation, in (−1, 1).
    pub rho: f64,
    /// Coefficients on (x1, x2, x3) in equation 1.
    pub beta1: [f64; 3],
    /// Coefficients on (x1, x2) in equation 2.
    pub beta2: [f64; 2],
    /// Cut points for the first margin; K₁ = len + 1 categories.
    pub cuts1: Vec<f64>,
    /// Cut points for the second margin; K₂ = len + 1 categories.
    pub cuts2: Vec<f64>,
    /// Smooth-effect identifiers for (eq 1 on v1, eq 1 on v2, eq 2 on
    /// v1); see [`test_function`].
    pub functions: [String; 3],
}

impl Default for TriangularDgp {
    fn default() -> Self {
        TriangularDgp {
            n: 2000,
            seed: 1,
            psi: -0.3,
            rho: 0.9,
            beta1: [1.0, 2.0, 1.0],
            beta2: [1.0, -2.0],
            cuts1: vec![-2.0, -1.0, 0.0, 2.0],
            cuts2: vec![-1.4, -0.7, -0.2, 0.7, 3.0],
            functions: ["s11".to_string(), "s12".to_string(), "s21".to_string()],
        }
    }
}

impl TriangularDgp {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n == 0 {
            return Err(Error::spec("sample size must be at least 1"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::spec(format!(
                "latent correlation {} outside (-1, 1)",
                self.rho
            )));
        }
        for (label, cuts) in [("cuts1", &self.cuts1), ("cuts2", &self.cuts2)] {
            if cuts.is_empty() {
                return Err(Error::spec(format!("{label} must contain at least one cut")));
            }
            if cuts.iter().any(|c| !c.is_finite()) {
                return Err(Error::spec(format!("{label} contains a non-finite cut")));
            }
            if cuts.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::spec(format!("{label} must be non-decreasing")));
            }
        }
        for id in &self.functions {
            test_function(id, 0.5)?;
        }
        Ok(())
    }

    /// Category counts (K₁, K₂) implied by the cut vectors.
    pub fn levels(&self) -> (usize, usize) {
        (self.cuts1.len() + 1, self.cuts2.len() + 1)
    }
}

/// Binary sample-selection design: a latent uniform pair from the
/// given copula drives selection (margin 1) and outcome (margin 2)
/// through Gaussian margins; the outcome is recorded only on selected
/// rows and missing elsewhere.
///
/// The selection predictor is `β₁·(1, x1, v1)` and the outcome
/// predictor `β₂·(1, x1)` — the continuous covariate is excluded from
/// the outcome equation, giving the usual exclusion restriction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionDgp {
    pub n: usize,
    pub seed: u64,
    pub copula: CopulaSpec,
    /// Association on the natural dependence scale of the base family.
    pub gamma: f64,
    /// Selection-equation coefficients on (1, x1, v1).
    pub beta1: [f64; 3],
    /// Outcome-equation coefficients on (1, x1).
    pub beta2: [f64; 2],
}

impl Default for SelectionDgp {
    fn default() -> Self {
        SelectionDgp {
            n: 2000,
            seed: 1,
            copula: CopulaSpec::new(CopulaFamily::Gaussian, Rotation::R0),
            gamma: 0.5,
            beta1: [0.7, 0.6, -1.0],
            beta2: [-0.3, 0.8],
        }
    }
}

impl SelectionDgp {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n == 0 {
            return Err(Error::spec("sample size must be at least 1"));
        }
        if self.beta1.iter().chain(&self.beta2).any(|b| !b.is_finite()) {
            return Err(Error::spec("coefficients must be finite"));
        }
        // Delegates the family-specific admissible range for γ.
        self.copula.link_inverse(self.gamma)?;
        Ok(())
    }
}

/// A generating process of either supported kind, tagged for JSON
/// configs the same way model kinds are.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    TriangularOrdinal(TriangularDgp),
    SelectionBinary(SelectionDgp),
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), Error> {
        match self {
            DgpSpec::TriangularOrdinal(s) => s.validate(),
            DgpSpec::SelectionBinary(s) => s.validate(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DgpSpec::TriangularOrdinal(s) => s.n,
            DgpSpec::SelectionBinary(s) => s.n,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DgpSpec::TriangularOrdinal(s) => s.seed,
            DgpSpec::SelectionBinary(s) => s.seed,
        }
    }

    /// Draw one data set on the base replication stream.
    pub fn generate(&self) -> Result<DataTable, Error> {
        self.generate_stream(0)
    }

    /// Draw one data set on the RNG stream of replication `rep`.
    pub fn generate_stream(&self, rep: u64) -> Result<DataTable, Error> {
        match self {
            DgpSpec::TriangularOrdinal(s) => gen_triangular_stream(s, rep),
            DgpSpec::SelectionBinary(s) => gen_selection_stream(s, rep),
        }
    }

    /// The estimation model matching this design's structure.
    pub fn model_spec(&self) -> Result<ModelSpec, Error> {
        match self {
            DgpSpec::TriangularOrdinal(s) => {
                let (k1, k2) = s.levels();
                Ok(ModelSpec {
                    kind: ModelKind::TriangularOrdinal,
                    response_columns: ["y1".to_string(), "y2".to_string()],
                    responses: [ResponseSpec::ordinal(k1)?, ResponseSpec::ordinal(k2)?],
                    equations: [
                        EquationSpec::new(vec![
                            TermSpec::linear("x1"),
                            TermSpec::linear("x2"),
                            TermSpec::linear("x3"),
                            TermSpec::smooth("v1", FIT_BASIS_DIM),
                            TermSpec::smooth("v2", FIT_BASIS_DIM),
                        ]),
                        EquationSpec::new(vec![
                            TermSpec::linear("x1"),
                            TermSpec::linear("x2"),
                            TermSpec::smooth("v1", FIT_BASIS_DIM),
                        ]),
                    ],
                    assoc_equation: None,
                    copula: CopulaSpec::new(CopulaFamily::Gaussian, Rotation::R0),
                })
            }
            DgpSpec::SelectionBinary(s) => Ok(ModelSpec {
                kind: ModelKind::SelectionBinary,
                response_columns: ["y1".to_string(), "y2".to_string()],
                responses: [ResponseSpec::binary(), ResponseSpec::binary()],
                equations: [
                    EquationSpec::new(vec![TermSpec::linear("x1"), TermSpec::linear("v1")]),
                    EquationSpec::new(vec![TermSpec::linear("x1")]),
                ],
                assoc_equation: None,
                copula: s.copula,
            }),
        }
    }

    /// The smooth effects this design defines, as (function id,
    /// equation, covariate column) triples.
    fn curves(&self) -> Vec<CurveId> {
        match self {
            DgpSpec::TriangularOrdinal(s) => vec![
                CurveId::new(&s.functions[0], 0, "v1"),
                CurveId::new(&s.functions[1], 0, "v2"),
                CurveId::new(&s.functions[2], 1, "v1"),
            ],
            DgpSpec::SelectionBinary(_) => Vec::new(),
        }
    }

    /// Names and true values of the scalar parameters the harness
    /// tracks for this design.
    fn params(&self) -> Vec<(String, f64)> {
        match self {
            DgpSpec::TriangularOrdinal(s) => vec![
                ("psi".to_string(), s.psi),
                ("rho".to_string(), s.rho),
            ],
            DgpSpec::SelectionBinary(s) => vec![("gamma".to_string(), s.gamma)],
        }
    }
}

// ---------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------

/// Discretize a latent value against a non-decreasing cut vector into
/// a 1-based category over left-open, right-closed intervals: values
/// equal to a cut fall in the lower category.
fn categorize(y_star: f64, cuts: &[f64]) -> usize {
    1 + cuts.iter().filter(|&&c| y_star > c).count()
}

/// One Bernoulli(1/2) covariate centered to ±1/2.
fn centered_bernoulli(rng: &mut ChaCha8Rng) -> f64 {
    if rng::open_unit(rng) < 0.5 {
        -0.5
    } else {
        0.5
    }
}

/// A standard normal pair with correlation ρ, as used for the latent
/// errors of the triangular design.
fn correlated_normal_pair(rng: &mut ChaCha8Rng, rho: f64) -> (f64, f64) {
    let (z1, z2) = rng::normal_pair(rng);
    (z1, rho * z1 + (1.0 - rho * rho).sqrt() * z2)
}

/// Generate one triangular ordinal data set on the base stream.
pub fn gen_triangular_ordinal(spec: &TriangularDgp) -> Result<DataTable, Error> {
    gen_triangular_stream(spec, 0)
}

fn gen_triangular_stream(spec: &TriangularDgp, rep: u64) -> Result<DataTable, Error> {
    spec.validate()?;
    let mut rng = rng::stream_rng(spec.seed, rep);
    let mut table = DataTable::with_header(
        ["y1", "y2", "x1", "x2", "x3", "v1", "v2"]
            .map(String::from)
            .to_vec(),
    );
    for _ in 0..spec.n {
        let v1 = rng::open_unit(&mut rng);
        let v2 = rng::open_unit(&mut rng);
        let x1 = centered_bernoulli(&mut rng);
        let x2 = centered_bernoulli(&mut rng);
        let x3 = centered_bernoulli(&mut rng);
        let (e1, e2) = correlated_normal_pair(&mut rng, spec.rho);
        let y1_star = spec.beta1[0] * x1
            + spec.beta1[1] * x2
            + spec.beta1[2] * x3
            + test_function(&spec.functions[0], v1)?
            + test_function(&spec.functions[1], v2)?
            + e1;
        let y2_star = spec.psi * y1_star
            + spec.beta2[0] * x1
            + spec.beta2[1] * x2
            + test_function(&spec.functions[2], v1)?
            + e2;
        table.push_row(&[
            Some(categorize(y1_star, &spec.cuts1) as f64),
            Some(categorize(y2_star, &spec.cuts2) as f64),
            Some(x1),
            Some(x2),
            Some(x3),
            Some(v1),
            Some(v2),
        ]);
    }
    Ok(table)
}

/// Generate one binary sample-selection data set on the base stream.
/// Unselected rows carry a missing outcome, never a missing selection
/// indicator.
pub fn gen_selection_binary(spec: &SelectionDgp) -> Result<DataTable, Error> {
    gen_selection_stream(spec, 0)
}

fn gen_selection_stream(spec: &SelectionDgp, rep: u64) -> Result<DataTable, Error> {
    spec.validate()?;
    let gamma_star = spec.copula.link_inverse(spec.gamma)?;
    let mut rng = rng::stream_rng(spec.seed, rep);
    let mut table =
        DataTable::with_header(["y1", "y2", "x1", "v1"].map(String::from).to_vec());
    for _ in 0..spec.n {
        let x1 = centered_bernoulli(&mut rng);
        let v1 = rng::open_unit(&mut rng);
        let (u, w) = copula_pair(&spec.copula, gamma_star, &mut rng);
        let eta1 = spec.beta1[0] + spec.beta1[1] * x1 + spec.beta1[2] * v1;
        let eta2 = spec.beta2[0] + spec.beta2[1] * x1;
        // Success on a margin is the lower copula tail: the joint
        // success cell then carries probability C(Φ(η₁), Φ(η₂)).
        let selected = u <= normal::cdf(eta1);
        let outcome = if selected {
            Some(if w <= normal::cdf(eta2) { 1.0 } else { 0.0 })
        } else {
            None
        };
        table.push_row(&[
            Some(if selected { 1.0 } else { 0.0 }),
            outcome,
            Some(x1),
            Some(v1),
        ]);
    }
    Ok(table)
}

/// Draw one pair with uniform margins from the copula. The Gaussian
/// unrotated family uses its latent-normal construction; every other
/// family draws the second coordinate by inverting the conditional
/// distribution ∂C/∂u with bisection.
fn copula_pair(spec: &CopulaSpec, gamma_star: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if spec.family == CopulaFamily::Gaussian && spec.rotation == Rotation::R0 {
        let g = spec.link(gamma_star).value;
        let (z1, z2) = rng::normal_pair(rng);
        let e2 = g * z1 + (1.0 - g * g).sqrt() * z2;
        (normal::cdf(z1), normal::cdf(e2))
    } else {
        let u = rng::open_unit(rng);
        let w = rng::open_unit(rng);
        (u, conditional_quantile(spec, u, w, gamma_star))
    }
}

/// Solve ∂C(u, v)/∂u = w for v by bisection; the conditional CDF is
/// nondecreasing in v, so 60 halvings pin v far below sampling noise.
fn conditional_quantile(spec: &CopulaSpec, u: f64, w: f64, gamma_star: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if spec.derivs(u, mid, gamma_star).du < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------

/// A smooth effect tracked by the harness.
#[derive(Debug, Clone)]
struct CurveId {
    function: String,
    equation: usize,
    column: String,
}

impl CurveId {
    fn new(function: &str, equation: usize, column: &str) -> Self {
        CurveId {
            function: function.to_string(),
            equation,
            column: column.to_string(),
        }
    }
}

/// Aggregated estimate of one smooth effect across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSummary {
    /// Function identifier of the truth (see [`test_function`]).
    pub function: String,
    /// Equation index (0-based) holding the smooth.
    pub equation: usize,
    /// Covariate column of the smooth.
    pub column: String,
    /// Common evaluation grid.
    pub grid: Vec<f64>,
    /// Centered truth averaged over successful replications.
    pub truth: Vec<f64>,
    /// Mean of the centered estimated curves.
    pub mean: Vec<f64>,
    /// Per-replication centered estimates (successful replications, in
    /// replication order), one vector per replication.
    pub replicates: Vec<Vec<f64>>,
    /// Root mean squared deviation of the mean estimate from the
    /// centered truth over the grid.
    pub rmse: f64,
    /// Across-the-function 95% band coverage: the fraction of grid
    /// points whose pointwise band covers the truth, averaged over
    /// replications.
    pub coverage: f64,
}

/// Replication summary of one scalar parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    /// Mean over successful replications.
    pub mean: f64,
    /// Sample standard deviation over successful replications; zero
    /// with fewer than two.
    pub sd: f64,
    /// Per-replication estimates (successful replications, in
    /// replication order).
    pub estimates: Vec<f64>,
}

/// Output of [`monte_carlo`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replications: usize,
    pub failures: usize,
    /// One note per failed replication, in replication order.
    pub failure_notes: Vec<String>,
    pub curves: Vec<CurveSummary>,
    pub params: Vec<ParamSummary>,
}

/// One successful replication's extract.
struct RepOutcome {
    params: Vec<f64>,
    curves: Vec<RepCurve>,
}

struct RepCurve {
    estimate: Vec<f64>,
    truth: Vec<f64>,
    covered: f64,
}

/// Run `replications` generate→fit cycles of the design and aggregate
/// curve and parameter estimates.
///
/// Replications run in parallel, each on the RNG stream keyed by
/// (seed, replication index); aggregation order is fixed, so the
/// summary is bit-identical across runs and thread counts. A
/// replication whose fit errors or fails to converge is recorded as a
/// failure and excluded from the aggregates; more than 20% failures
/// fails the whole run.
pub fn monte_carlo(
    spec: &DgpSpec,
    replications: usize,
    options: &FitOptions,
) -> Result<MonteCarloSummary, Error> {
    if replications == 0 {
        return Err(Error::spec("at least one replication is required"));
    }
    spec.validate()?;
    let model_spec = spec.model_spec()?;
    let curve_ids = spec.curves();
    let params = spec.params();
    let grid = common_grid();

    let outcomes: Vec<Result<RepOutcome, Error>> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(spec, &model_spec, &curve_ids, &grid, r, options))
        .collect();

    let mut failure_notes = Vec::new();
    let mut ok = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => failure_notes.push(format!("replication {r}: {e}")),
        }
    }
    let failures = failure_notes.len();
    if failures * 5 > replications {
        return Err(Error::NoConvergence(format!(
            "{failures} of {replications} replications failed; first failure: {}",
            failure_notes[0]
        )));
    }

    let n_ok = ok.len() as f64;
    let curves = curve_ids
        .iter()
        .enumerate()
        .map(|(c, id)| {
            let mut truth = vec![0.0; grid.len()];
            let mut mean = vec![0.0; grid.len()];
            let mut coverage = 0.0;
            let mut replicates = Vec::with_capacity(ok.len());
            for o in &ok {
                let rc = &o.curves[c];
                for i in 0..grid.len() {
                    truth[i] += rc.truth[i] / n_ok;
                    mean[i] += rc.estimate[i] / n_ok;
                }
                coverage += rc.covered / n_ok;
                replicates.push(rc.estimate.clone());
            }
            let rmse = (truth
                .iter()
                .zip(&mean)
                .map(|(t, m)| (t - m) * (t - m))
                .sum::<f64>()
                / grid.len() as f64)
                .sqrt();
            CurveSummary {
                function: id.function.clone(),
                equation: id.equation,
                column: id.column.clone(),
                grid: grid.clone(),
                truth,
                mean,
                replicates,
                rmse,
                coverage,
            }
        })
        .collect();

    let params = params
        .into_iter()
        .enumerate()
        .map(|(j, (name, truth))| {
            let estimates: Vec<f64> = ok.iter().map(|o| o.params[j]).collect();
            let mean = estimates.iter().sum::<f64>() / n_ok;
            let sd = if estimates.len() > 1 {
                (estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / (estimates.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            ParamSummary {
                name,
                truth,
                mean,
                sd,
                estimates,
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        replications,
        failures,
        failure_notes,
        curves,
        params,
    })
}

/// Equispaced evaluation grid on [0.005, 0.995]; kept marginally inside
/// the open unit interval so every replication's data-driven spline
/// domain contains it with overwhelming probability (any residual
/// shortfall is absorbed by clamping into the domain).
fn common_grid() -> Vec<f64> {
    (0..MC_GRID_POINTS)
        .map(|k| 0.005 + 0.99 * k as f64 / (MC_GRID_POINTS - 1) as f64)
        .collect()
}

fn run_replication(
    spec: &DgpSpec,
    model_spec: &ModelSpec,
    curve_ids: &[CurveId],
    grid: &[f64],
    rep: usize,
    options: &FitOptions,
) -> Result<RepOutcome, Error> {
    let table = spec.generate_stream(rep as u64)?;
    let model = Model::build(model_spec, &table)?;
    let fitres = fit(&model, options)?;
    if !fitres.diagnostics.converged {
        return Err(Error::NoConvergence(
            "fit exhausted its iteration budget".to_string(),
        ));
    }
    let params = extract_params(&model.layout, &fitres);
    let curves = curve_ids
        .iter()
        .map(|id| extract_curve(&model, &fitres, id, grid, &table))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(RepOutcome { params, curves })
}

/// Pull the tracked scalar parameters out of a fitted coefficient
/// vector, on their natural scales.
fn extract_params(layout: &Layout, fitres: &FitResult) -> Vec<f64> {
    match layout.kind {
        ModelKind::TriangularOrdinal => {
            let psi = fitres.theta[layout.psi_index.expect("triangular layout has ψ")];
            let rho = fitres.theta[layout.rho_index.expect("triangular layout has ρ*")].tanh();
            vec![psi, rho]
        }
        ModelKind::SelectionBinary => {
            // Intercept-only association predictor: the single assoc
            // coefficient is γ*.
            let gamma_star = fitres.theta[layout.eq_offset[2]];
            vec![layout.copula.link(gamma_star).value]
        }
        _ => Vec::new(),
    }
}

/// Evaluate one estimated smooth on the common grid (clamped into its
/// data-driven domain), with the matching centered truth and the
/// across-the-function band coverage.
fn extract_curve(
    model: &Model,
    fitres: &FitResult,
    id: &CurveId,
    grid: &[f64],
    table: &DataTable,
) -> Result<RepCurve, Error> {
    let (lo, hi) = smooth_domain(&model.layout, id.equation, &id.column)?;
    let xs: Vec<f64> = grid.iter().map(|&g| g.clamp(lo, hi)).collect();
    let bands = infer::smooth_bands(
        &model.layout,
        fitres,
        id.equation,
        &id.column,
        &xs,
        BAND_ALPHA,
    )?;
    let sample = table.complete_column(&id.column)?;
    let truth = centered_truth(&id.function, &sample, &xs)?;
    let covered = bands
        .iter()
        .zip(&truth)
        .filter(|(b, &t)| b.lower <= t && t <= b.upper)
        .count() as f64
        / grid.len() as f64;
    Ok(RepCurve {
        estimate: bands.iter().map(|b| b.fit).collect(),
        truth,
        covered,
    })
}

/// True curve evaluated at `xs`, centered to mean zero over the
/// covariate sample — the same identifiability normalization the
/// fitter imposes on its smooth terms.
fn centered_truth(function: &str, sample: &[f64], xs: &[f64]) -> Result<Vec<f64>, Error> {
    let mut mean = 0.0;
    for &v in sample {
        mean += test_function(function, v)? / sample.len() as f64;
    }
    xs.iter().map(|&x| Ok(test_function(function, x)? - mean)).collect()
}

/// Spline domain of a smooth term, looked up in the layout.
fn smooth_domain(layout: &Layout, equation: usize, column: &str) -> Result<(f64, f64), Error> {
    layout
        .blocks
        .iter()
        .find_map(|b| match &b.shape {
            TermShape::Smooth {
                column: c, basis, ..
            } if b.equation == equation && c == column => Some(basis.domain()),
            _ => None,
        })
        .ok_or_else(|| {
            Error::spec(format!(
                "equation {} has no smooth term on column {column:?}",
                equation + 1
            ))
        })
}
