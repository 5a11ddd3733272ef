//! Bivariate copula families with closed-form CDFs, first/second
//! derivative bundles, rotations, and association-parameter links.
//!
//! Five families are supported — gaussian, frank, clayton, gumbel, joe —
//! each optionally rotated by 90°, 180°, or 270°. The association
//! parameter γ lives in a family-specific range; a monotone link maps an
//! unconstrained working parameter γ* onto that range so optimizers can
//! move freely. Derivative bundles are reported on the γ scale together
//! with the link derivatives, so callers chain to the γ* scale as
//! needed.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::num::normal;
use crate::num::{bvn_bundle, bvn_cdf, Dual2};

/// Half-width of the interval around γ = 0 in which the Frank copula is
/// evaluated by its Taylor expansion instead of the exact formula, which
/// degenerates to 0/0 there.
const FRANK_DEADBAND: f64 = 1e-6;

/// Distance from 0 and 1 to which u and v are clamped in derivative
/// evaluation; second derivatives of all families blow up at the
/// corners of the unit square.
const EDGE_CLAMP: f64 = 1e-8;

/// The five supported copula families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Frank,
    Clayton,
    Gumbel,
    Joe,
}

/// Counterclockwise rotation applied to a base family. 90° and 270°
/// turn a positive-dependence family into a negative-dependence one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

/// Affine description of a rotation: the rotated CDF is
/// `α_const + α_u·u + α_v·v + sign · C(b_u + a_u·u, b_v + a_v·v)`.
struct RotMap {
    alpha_const: f64,
    alpha_u: f64,
    alpha_v: f64,
    sign: f64,
    a_u: f64,
    b_u: f64,
    a_v: f64,
    b_v: f64,
}

impl Rotation {
    fn map(self) -> RotMap {
        // R90:  C90(u,v)  = v − C(1−u, v)
        // R180: C180(u,v) = u + v − 1 + C(1−u, 1−v)
        // R270: C270(u,v) = u − C(u, 1−v)
        match self {
            Rotation::R0 => RotMap {
                alpha_const: 0.0,
                alpha_u: 0.0,
                alpha_v: 0.0,
                sign: 1.0,
                a_u: 1.0,
                b_u: 0.0,
                a_v: 1.0,
                b_v: 0.0,
            },
            Rotation::R90 => RotMap {
                alpha_const: 0.0,
                alpha_u: 0.0,
                alpha_v: 1.0,
                sign: -1.0,
                a_u: -1.0,
                b_u: 1.0,
                a_v: 1.0,
                b_v: 0.0,
            },
            Rotation::R180 => RotMap {
                alpha_const: -1.0,
                alpha_u: 1.0,
                alpha_v: 1.0,
                sign: 1.0,
                a_u: -1.0,
                b_u: 1.0,
                a_v: -1.0,
                b_v: 1.0,
            },
            Rotation::R270 => RotMap {
                alpha_const: 0.0,
                alpha_u: 1.0,
                alpha_v: 0.0,
                sign: -1.0,
                a_u: 1.0,
                b_u: 0.0,
                a_v: -1.0,
                b_v: 1.0,
            },
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Rotation::R0 => "",
            Rotation::R90 => "90",
            Rotation::R180 => "180",
            Rotation::R270 => "270",
        }
    }
}

/// A copula family together with its rotation.
///
/// Serializes as its compact name (`"gaussian"`, `"clayton90"`, …) so
/// configs and saved fits carry the same spelling
/// [`parse_name`](Self::parse_name) accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub rotation: Rotation,
}

impl Serialize for CopulaSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for CopulaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        CopulaSpec::parse_name(&name).map_err(serde::de::Error::custom)
    }
}

/// Link evaluation: γ and its first two derivatives with respect to the
/// unconstrained parameter γ*.
#[derive(Debug, Clone, Copy)]
pub struct LinkValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// First and second partial derivatives of the copula CDF with respect
/// to (u, v, γ), evaluated after clamping u, v away from the edges.
#[derive(Debug, Clone, Copy)]
pub struct DerivBundle {
    pub value: f64,
    pub du: f64,
    pub dv: f64,
    pub dg: f64,
    pub duu: f64,
    pub duv: f64,
    pub dvv: f64,
    pub dug: f64,
    pub dvg: f64,
    pub dgg: f64,
}

impl DerivBundle {
    pub fn grad(&self) -> [f64; 3] {
        [self.du, self.dv, self.dg]
    }

    /// Symmetric 3×3 matrix of second partials ordered (u, v, γ).
    pub fn hess(&self) -> [[f64; 3]; 3] {
        [
            [self.duu, self.duv, self.dug],
            [self.duv, self.dvv, self.dvg],
            [self.dug, self.dvg, self.dgg],
        ]
    }

    fn from_dual(d: Dual2<3>) -> Self {
        DerivBundle {
            value: d.val,
            du: d.grad[0],
            dv: d.grad[1],
            dg: d.grad[2],
            duu: d.hess[0][0],
            duv: d.hess[0][1],
            dvv: d.hess[1][1],
            dug: d.hess[0][2],
            dvg: d.hess[1][2],
            dgg: d.hess[2][2],
        }
    }
}

impl CopulaSpec {
    pub fn new(family: CopulaFamily, rotation: Rotation) -> Self {
        CopulaSpec { family, rotation }
    }

    /// Parse a config-file name such as "gaussian", "frank", "clayton90",
    /// "joe270". A trailing 90/180/270 selects the rotation.
    pub fn parse_name(name: &str) -> Result<Self, Error> {
        let name = name.trim().to_ascii_lowercase();
        let (stem, rotation) = if let Some(s) = name.strip_suffix("270") {
            (s, Rotation::R270)
        } else if let Some(s) = name.strip_suffix("180") {
            (s, Rotation::R180)
        } else if let Some(s) = name.strip_suffix("90") {
            (s, Rotation::R90)
        } else {
            (name.as_str(), Rotation::R0)
        };
        let family = match stem {
            "gaussian" => CopulaFamily::Gaussian,
            "frank" => CopulaFamily::Frank,
            "clayton" => CopulaFamily::Clayton,
            "gumbel" => CopulaFamily::Gumbel,
            "joe" => CopulaFamily::Joe,
            _ => {
                return Err(Error::spec(format!(
                    "unknown copula {name:?}; expected gaussian, frank, clayton, gumbel, or joe, \
                     optionally followed by 90, 180, or 270"
                )))
            }
        };
        Ok(CopulaSpec { family, rotation })
    }

    /// The config-file name of this spec.
    pub fn name(&self) -> String {
        let stem = match self.family {
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Joe => "joe",
        };
        format!("{stem}{}", self.rotation.suffix())
    }

    /// Monotone map γ*(∈ ℝ) ↦ γ into the family's admissible range:
    /// gaussian tanh onto (−1,1); frank identity; clayton exp onto
    /// (0,∞); gumbel and joe 1+exp onto (1,∞).
    pub fn link(&self, gamma_star: f64) -> LinkValue {
        match self.family {
            CopulaFamily::Gaussian => {
                let t = gamma_star.tanh();
                let d1 = 1.0 - t * t;
                LinkValue {
                    value: t,
                    d1,
                    d2: -2.0 * t * d1,
                }
            }
            CopulaFamily::Frank => LinkValue {
                value: gamma_star,
                d1: 1.0,
                d2: 0.0,
            },
            CopulaFamily::Clayton => {
                let e = gamma_star.exp();
                LinkValue {
                    value: e,
                    d1: e,
                    d2: e,
                }
            }
            CopulaFamily::Gumbel | CopulaFamily::Joe => {
                let e = gamma_star.exp();
                LinkValue {
                    value: 1.0 + e,
                    d1: e,
                    d2: e,
                }
            }
        }
    }

    /// Inverse of [`link`](Self::link); errors if γ is outside the
    /// family's admissible range.
    pub fn link_inverse(&self, gamma: f64) -> Result<f64, Error> {
        match self.family {
            CopulaFamily::Gaussian => {
                if !(-1.0 < gamma && gamma < 1.0) {
                    return Err(Error::spec(format!(
                        "gaussian association {gamma} outside (-1, 1)"
                    )));
                }
                Ok(gamma.atanh())
            }
            CopulaFamily::Frank => {
                if !gamma.is_finite() {
                    return Err(Error::spec(format!("frank association {gamma} not finite")));
                }
                Ok(gamma)
            }
            CopulaFamily::Clayton => {
                if !(gamma > 0.0) {
                    return Err(Error::spec(format!(
                        "clayton association {gamma} outside (0, inf)"
                    )));
                }
                Ok(gamma.ln())
            }
            CopulaFamily::Gumbel | CopulaFamily::Joe => {
                if !(gamma > 1.0) {
                    return Err(Error::spec(format!(
                        "association {gamma} outside (1, inf) for this family"
                    )));
                }
                Ok((gamma - 1.0).ln())
            }
        }
    }

    /// Working-scale starting value corresponding to (near-)independence.
    pub fn independence_start(&self) -> f64 {
        match self.family {
            CopulaFamily::Gaussian | CopulaFamily::Frank => 0.0,
            // exp-based links cannot reach their independence limit at a
            // finite γ*; start weakly dependent instead.
            CopulaFamily::Clayton | CopulaFamily::Gumbel | CopulaFamily::Joe => -1.0,
        }
    }

    /// Copula CDF at (u, v) with the association given on the working
    /// scale γ*. Exact at the boundary of the unit square.
    pub fn cdf(&self, u: f64, v: f64, gamma_star: f64) -> Result<f64, Error> {
        if u.is_nan() || v.is_nan() || gamma_star.is_nan() {
            return Err(Error::data("NaN argument to copula cdf"));
        }
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(Error::data(format!(
                "copula arguments ({u}, {v}) outside the unit square"
            )));
        }
        // Uniform-margin identities, exact for every copula.
        if u == 0.0 || v == 0.0 {
            return Ok(0.0);
        }
        if u == 1.0 {
            return Ok(v);
        }
        if v == 1.0 {
            return Ok(u);
        }
        let g = self.link(gamma_star).value;
        let m = self.rotation.map();
        let base = self
            .family
            .base_cdf(m.b_u + m.a_u * u, m.b_v + m.a_v * v, g);
        let c = m.alpha_const + m.alpha_u * u + m.alpha_v * v + m.sign * base;
        Ok(c.clamp(0.0, 1.0))
    }

    /// First and second partials of the CDF with respect to (u, v, γ) at
    /// the linked association γ = link(γ*). Arguments within 1e-8 of
    /// the edges are clamped. Use [`link`](Self::link) or
    /// [`derivs_unconstrained`](Self::derivs_unconstrained) to chain to
    /// the γ* scale.
    pub fn derivs(&self, u: f64, v: f64, gamma_star: f64) -> DerivBundle {
        let u = u.clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
        let v = v.clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
        let g = self.link(gamma_star).value;
        let m = self.rotation.map();
        let b = self
            .family
            .base_bundle(m.b_u + m.a_u * u, m.b_v + m.a_v * v, g);
        let mut out = DerivBundle {
            value: m.alpha_const + m.alpha_u * u + m.alpha_v * v + m.sign * b.value,
            du: m.alpha_u + m.sign * m.a_u * b.du,
            dv: m.alpha_v + m.sign * m.a_v * b.dv,
            dg: m.sign * b.dg,
            duu: m.sign * m.a_u * m.a_u * b.duu,
            duv: m.sign * m.a_u * m.a_v * b.duv,
            dvv: m.sign * m.a_v * m.a_v * b.dvv,
            dug: m.sign * m.a_u * b.dug,
            dvg: m.sign * m.a_v * b.dvg,
            dgg: m.sign * b.dgg,
        };
        // ∂C/∂u and ∂C/∂v are conditional CDFs; round small numerical
        // excursions back into [0, 1].
        out.du = out.du.clamp(0.0, 1.0);
        out.dv = out.dv.clamp(0.0, 1.0);
        out
    }

    /// Like [`derivs`](Self::derivs) but with the association partials
    /// chained onto the unconstrained γ* scale.
    pub fn derivs_unconstrained(&self, u: f64, v: f64, gamma_star: f64) -> DerivBundle {
        let link = self.link(gamma_star);
        let b = self.derivs(u, v, gamma_star);
        DerivBundle {
            dg: b.dg * link.d1,
            dug: b.dug * link.d1,
            dvg: b.dvg * link.d1,
            dgg: b.dgg * link.d1 * link.d1 + b.dg * link.d2,
            ..b
        }
    }
}

/// Numeric scalar abstraction letting each copula formula be written
/// once and evaluated either on plain floats (values) or on
/// second-order dual numbers (derivative bundles).
trait Field:
    Copy
    + core::ops::Add<Output = Self>
    + core::ops::Sub<Output = Self>
    + core::ops::Mul<Output = Self>
    + core::ops::Div<Output = Self>
    + core::ops::Neg<Output = Self>
{
    fn lit(x: f64) -> Self;
    fn scalar_value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp_m1(self) -> Self;
}

impl Field for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn scalar_value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
}

impl Field for Dual2<3> {
    fn lit(x: f64) -> Self {
        Dual2::constant(x)
    }
    fn scalar_value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        Dual2::exp(self)
    }
    fn ln(self) -> Self {
        Dual2::ln(self)
    }
    fn ln_1p(self) -> Self {
        Dual2::ln_1p(self)
    }
    fn exp_m1(self) -> Self {
        Dual2::exp_m1(self)
    }
}

/// Frank CDF, exact form: −log(1 + (e^{−γu}−1)(e^{−γv}−1)/(e^{−γ}−1))/γ.
fn frank_exact<T: Field>(u: T, v: T, g: T) -> T {
    let t = (-(g * u)).exp_m1() * (-(g * v)).exp_m1() / (-g).exp_m1();
    -(t.ln_1p() / g)
}

/// Frank CDF near γ = 0, where the exact form degenerates: Taylor
/// expansion through γ², exact to well below f64 precision for
/// |γ| ≤ 1e-6.
fn frank_series<T: Field>(u: T, v: T, g: T) -> T {
    let one = T::lit(1.0);
    let two = T::lit(2.0);
    let w = u * v * (one - u) * (one - v);
    u * v + g * w / two + g * g * w * (one - two * u) * (one - two * v) / T::lit(12.0)
}

/// Clayton CDF (u^{−γ} + v^{−γ} − 1)^{−1/γ}, computed through shifted
/// logs so large γ cannot overflow the intermediate powers.
fn clayton<T: Field>(u: T, v: T, g: T) -> T {
    let lu = -(g * u.ln());
    let lv = -(g * v.ln());
    let (big, small) = if lu.scalar_value() >= lv.scalar_value() {
        (lu, lv)
    } else {
        (lv, lu)
    };
    let ln_s = big + ((small - big).exp() - (-big).exp()).ln_1p();
    (-(ln_s / g)).exp()
}

/// Gumbel CDF exp(−((−log u)^γ + (−log v)^γ)^{1/γ}) through shifted
/// logs.
fn gumbel<T: Field>(u: T, v: T, g: T) -> T {
    let la = g * (-u.ln()).ln();
    let lb = g * (-v.ln()).ln();
    let (big, small) = if la.scalar_value() >= lb.scalar_value() {
        (la, lb)
    } else {
        (lb, la)
    };
    let ln_s = big + (small - big).exp().ln_1p();
    (-((ln_s / g).exp())).exp()
}

/// Joe CDF 1 − ((1−u)^γ + (1−v)^γ − (1−u)^γ(1−v)^γ)^{1/γ} through
/// shifted logs.
fn joe<T: Field>(u: T, v: T, g: T) -> T {
    let one = T::lit(1.0);
    let la = g * (one - u).ln();
    let lb = g * (one - v).ln();
    let (big, small) = if la.scalar_value() >= lb.scalar_value() {
        (la, lb)
    } else {
        (lb, la)
    };
    let ln_s = big + ((small - big).exp() - small.exp()).ln_1p();
    one - (ln_s / g).exp()
}

impl CopulaFamily {
    /// Unrotated CDF at interior (u, v) with γ already on the family
    /// scale.
    fn base_cdf(&self, u: f64, v: f64, g: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => bvn_cdf(normal::inv_cdf(u), normal::inv_cdf(v), g),
            CopulaFamily::Frank => {
                if g.abs() < FRANK_DEADBAND {
                    frank_series(u, v, g)
                } else {
                    frank_exact(u, v, g)
                }
            }
            CopulaFamily::Clayton => clayton(u, v, g),
            CopulaFamily::Gumbel => gumbel(u, v, g),
            CopulaFamily::Joe => joe(u, v, g),
        }
    }

    /// Unrotated derivative bundle at interior (u, v).
    fn base_bundle(&self, u: f64, v: f64, g: f64) -> DerivBundle {
        match self {
            CopulaFamily::Gaussian => gaussian_bundle(u, v, g),
            _ => {
                let ud = Dual2::<3>::var(0, u);
                let vd = Dual2::<3>::var(1, v);
                let gd = Dual2::<3>::var(2, g);
                let c = match self {
                    CopulaFamily::Frank => {
                        if g.abs() < FRANK_DEADBAND {
                            frank_series(ud, vd, gd)
                        } else {
                            frank_exact(ud, vd, gd)
                        }
                    }
                    CopulaFamily::Clayton => clayton(ud, vd, gd),
                    CopulaFamily::Gumbel => gumbel(ud, vd, gd),
                    CopulaFamily::Joe => joe(ud, vd, gd),
                    CopulaFamily::Gaussian => unreachable!(),
                };
                DerivBundle::from_dual(c)
            }
        }
    }
}

/// Gaussian-copula bundle from the bivariate normal bundle chained
/// through a = Φ⁻¹(u), b = Φ⁻¹(v): da/du = 1/φ(a), d²a/du² = a/φ(a)².
fn gaussian_bundle(u: f64, v: f64, rho: f64) -> DerivBundle {
    let a = normal::inv_cdf(u);
    let b = normal::inv_cdf(v);
    let bb = bvn_bundle(a, b, rho);
    let au = normal::pdf(a).recip();
    let bv = normal::pdf(b).recip();
    let auu = a * au * au;
    let bvv = b * bv * bv;
    DerivBundle {
        value: bb.value,
        du: bb.da * au,
        dv: bb.db * bv,
        dg: bb.drho,
        duu: bb.daa * au * au + bb.da * auu,
        duv: bb.dab * au * bv,
        dvv: bb.dbb * bv * bv + bb.db * bvv,
        dug: bb.darho * au,
        dvg: bb.dbrho * bv,
        dgg: bb.drhorho,
    }
}
