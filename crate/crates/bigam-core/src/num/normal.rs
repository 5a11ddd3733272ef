//! Standard-normal density, CDF and quantile.
//!
//! The CDF goes through `erfc` so the lower tail keeps full relative
//! precision down to ~1e-300. The quantile is Wichura's PPND16 rational
//! approximation (machine precision on (0,1)); it is the exact inverse
//! pair the simulation and confidence-interval code relies on.

use crate::error::Error;

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014326779399460599343818684;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal density φ(x).
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail probability 1 − Φ(x), accurate for large positive x.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p) for p strictly inside (0, 1).
pub fn quantile(p: f64) -> Result<f64, Error> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::data(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    Ok(inv_cdf(p))
}

/// PPND16: rational approximations on three regimes of p. Input must lie
/// strictly inside (0, 1); the public wrapper enforces that.
pub(crate) fn inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly7(&CENTRAL_NUM, r) / poly7(&CENTRAL_DEN, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly7(&TAIL_NUM, r) / poly7(&TAIL_DEN, r)
    } else {
        let r = r - 5.0;
        poly7(&FAR_TAIL_NUM, r) / poly7(&FAR_TAIL_DEN, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly7(c: &[f64; 8], r: f64) -> f64 {
    // Horner evaluation, highest coefficient first.
    c[..7]
        .iter()
        .rev()
        .fold(c[7], |acc, &ci| acc * r + ci)
}

// Coefficients of Wichura's algorithm AS 241, routine PPND16.
// Central region |p − 0.5| ≤ 0.425:
const CENTRAL_NUM: [f64; 8] = [
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
];
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
];
// Intermediate tail, sqrt(-log r) ≤ 5:
const TAIL_NUM: [f64; 8] = [
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
];
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
];
// Far tail, sqrt(-log r) > 5:
const FAR_TAIL_NUM: [f64; 8] = [
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
const FAR_TAIL_DEN: [f64; 8] = [
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
];
