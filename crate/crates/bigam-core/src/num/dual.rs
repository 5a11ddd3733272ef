//! Forward-mode dual numbers carrying value, gradient and Hessian.
//!
//! `Dual2<N>` tracks a scalar together with its first and second partial
//! derivatives with respect to N independent variables. Arithmetic and
//! the usual elementary functions propagate both orders exactly (to
//! floating point), which gives analytic derivative bundles for the
//! Archimedean copula formulas and the endogenous-predictor transform
//! without hand-expanding every second partial.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value + gradient + Hessian with respect to N seeded variables.
#[derive(Debug, Clone, Copy)]
pub struct Dual2<const N: usize> {
    pub val: f64,
    pub grad: [f64; N],
    /// Full symmetric Hessian (both triangles stored).
    pub hess: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    /// A constant: zero derivatives.
    pub fn constant(c: f64) -> Self {
        Dual2 {
            val: c,
            grad: [0.0; N],
            hess: [[0.0; N]; N],
        }
    }

    /// The i-th independent variable with value `x`.
    pub fn var(i: usize, x: f64) -> Self {
        let mut d = Self::constant(x);
        d.grad[i] = 1.0;
        d
    }

    /// Apply a scalar function given its value and first two derivatives
    /// at `self.val`. Chain rule:
    ///   (f∘g)'  = f'·∇g,
    ///   (f∘g)'' = f'·∇²g + f''·∇g ∇gᵀ.
    pub fn lift(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Self::constant(f);
        for i in 0..N {
            out.grad[i] = df * self.grad[i];
            for j in 0..N {
                out.hess[i][j] = df * self.hess[i][j] + d2f * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.lift(e, e, e)
    }

    pub fn ln(self) -> Self {
        let v = self.val;
        self.lift(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    /// ln(1 + x), precise near zero.
    pub fn ln_1p(self) -> Self {
        let v = self.val;
        let d = 1.0 / (1.0 + v);
        self.lift(v.ln_1p(), d, -d * d)
    }

    /// exp(x) − 1, precise near zero.
    pub fn exp_m1(self) -> Self {
        let e = self.val.exp();
        self.lift(self.val.exp_m1(), e, e)
    }

    pub fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.lift(r, 0.5 / r, -0.25 / (r * r * r))
    }

    /// x^p for a constant (possibly non-integer) exponent.
    pub fn powf(self, p: f64) -> Self {
        let v = self.val;
        self.lift(v.powf(p), p * v.powf(p - 1.0), p * (p - 1.0) * v.powf(p - 2.0))
    }

    pub fn recip(self) -> Self {
        let v = self.val;
        self.lift(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn atanh(self) -> Self {
        let v = self.val;
        let d = 1.0 / (1.0 - v * v);
        self.lift(0.5 * ((1.0 + v) / (1.0 - v)).ln(), d, 2.0 * v * d * d)
    }

    pub fn tanh(self) -> Self {
        let t = self.val.tanh();
        let d = 1.0 - t * t;
        self.lift(t, d, -2.0 * t * d)
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.val += rhs.val;
        for i in 0..N {
            self.grad[i] += rhs.grad[i];
            for j in 0..N {
                self.hess[i][j] += rhs.hess[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.val -= rhs.val;
        for i in 0..N {
            self.grad[i] -= rhs.grad[i];
            for j in 0..N {
                self.hess[i][j] -= rhs.hess[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.val * rhs.val);
        for i in 0..N {
            out.grad[i] = self.val * rhs.grad[i] + rhs.val * self.grad[i];
            for j in 0..N {
                out.hess[i][j] = self.val * rhs.hess[i][j]
                    + rhs.val * self.hess[i][j]
                    + self.grad[i] * rhs.grad[j]
                    + self.grad[j] * rhs.grad[i];
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.val = -self.val;
        for i in 0..N {
            self.grad[i] = -self.grad[i];
            for j in 0..N {
                self.hess[i][j] = -self.hess[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual2<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.val += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual2<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.val -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual2<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.val *= rhs;
        for i in 0..N {
            self.grad[i] *= rhs;
            for j in 0..N {
                self.hess[i][j] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Sub<Dual2<N>> for f64 {
    type Output = Dual2<N>;
    fn sub(self, rhs: Dual2<N>) -> Dual2<N> {
        -rhs + self
    }
}

impl<const N: usize> Add<Dual2<N>> for f64 {
    type Output = Dual2<N>;
    fn add(self, rhs: Dual2<N>) -> Dual2<N> {
        rhs + self
    }
}

impl<const N: usize> Mul<Dual2<N>> for f64 {
    type Output = Dual2<N>;
    fn mul(self, rhs: Dual2<N>) -> Dual2<N> {
        rhs * self
    }
}
