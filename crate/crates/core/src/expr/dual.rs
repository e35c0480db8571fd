//! Vector-forward dual numbers.
//!
//! A [`DualNumber`] carries a value together with the partial derivatives with
//! respect to every variable of the expression being evaluated. All partials
//! travel in one pass, so a single evaluation yields a full gradient.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::MAX_VARS;

/// Numeric carrier for expression evaluation.
///
/// Implemented for `f64` (plain evaluation) and [`DualNumber`] (evaluation with
/// gradient). Domain checks happen in the evaluator on [`Scalar::value`] before
/// any operation is applied, so implementations may assume valid inputs.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64, like: &Self) -> Self;
    fn value(&self) -> f64;
    /// True when every derivative component is finite.
    fn derivatives_finite(&self) -> bool;
    /// True when the derivative part is identically zero.
    fn is_constant(&self) -> bool;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sign(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn erf(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn pow(self, exponent: Self) -> Self;
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn powf_exact(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() < i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

impl Scalar for f64 {
    fn constant(c: f64, _like: &Self) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn derivatives_finite(&self) -> bool {
        true
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sign(self) -> Self {
        sign_of(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn pow(self, exponent: Self) -> Self {
        powf_exact(self, exponent)
    }
}

/// A value with `n` partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualNumber {
    pub value: f64,
    partials: [f64; MAX_VARS],
    n: usize,
}

impl DualNumber {
    pub fn constant(value: f64, n: usize) -> Self {
        assert!(n <= MAX_VARS, "at most {MAX_VARS} variables are supported");
        DualNumber {
            value,
            partials: [0.0; MAX_VARS],
            n,
        }
    }

    /// The `index`-th coordinate variable (zero-based) seeded with unit derivative.
    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut d = DualNumber::constant(value, n);
        d.partials[index] = 1.0;
        d
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials[..self.n]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Chain rule for a unary function with derivative `slope` at the value.
    fn chain(self, value: f64, slope: f64) -> Self {
        let mut out = DualNumber::constant(value, self.n);
        if slope != 0.0 {
            for i in 0..self.n {
                out.partials[i] = slope * self.partials[i];
            }
        }
        out
    }

    fn combine(a: Self, b: Self, value: f64, da: f64, db: f64) -> Self {
        let n = a.n.max(b.n);
        let mut out = DualNumber::constant(value, n);
        for i in 0..n {
            let mut p = 0.0;
            if da != 0.0 {
                p += da * a.partials[i];
            }
            if db != 0.0 {
                p += db * b.partials[i];
            }
            out.partials[i] = p;
        }
        out
    }
}

impl Add for DualNumber {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        DualNumber::combine(self, rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for DualNumber {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        DualNumber::combine(self, rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for DualNumber {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        DualNumber::combine(self, rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for DualNumber {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        let q = self.value * inv;
        DualNumber::combine(self, rhs, q, inv, -q * inv)
    }
}

impl Neg for DualNumber {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl Scalar for DualNumber {
    fn constant(c: f64, like: &Self) -> Self {
        DualNumber::constant(c, like.n)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn derivatives_finite(&self) -> bool {
        self.partials().iter().all(|p| p.is_finite())
    }
    fn is_constant(&self) -> bool {
        self.partials().iter().all(|&p| p == 0.0)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        if self.is_constant() {
            return DualNumber::constant(r, self.n);
        }
        self.chain(r, 0.5 / r)
    }
    fn abs(self) -> Self {
        // d|x| at 0 is taken as 0
        self.chain(self.value.abs(), sign_of(self.value))
    }
    fn sign(self) -> Self {
        DualNumber::constant(sign_of(self.value), self.n)
    }
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    fn erf(self) -> Self {
        let slope = std::f64::consts::FRAC_2_SQRT_PI * (-self.value * self.value).exp();
        self.chain(libm::erf(self.value), slope)
    }
    fn atan2(self, x: Self) -> Self {
        let y = self;
        let r2 = x.value * x.value + y.value * y.value;
        DualNumber::combine(y, x, y.value.atan2(x.value), x.value / r2, -y.value / r2)
    }
    fn pow(self, exponent: Self) -> Self {
        let a = self.value;
        let b = exponent.value;
        let v = powf_exact(a, b);
        let da = if self.is_constant() {
            0.0
        } else {
            b * powf_exact(a, b - 1.0)
        };
        let db = if exponent.is_constant() { 0.0 } else { v * a.ln() };
        DualNumber::combine(self, exponent, v, da, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = DualNumber::variable(3.0, 0, 2);
        let y = DualNumber::variable(4.0, 1, 2);
        let p = x * y;
        assert_eq!(p.value, 12.0);
        assert_eq!(p.partials(), &[4.0, 3.0]);
    }

    #[test]
    fn quotient_rule() {
        let x = DualNumber::variable(2.0, 0, 2);
        let y = DualNumber::variable(-2.0, 1, 2);
        let q = y / x;
        assert_eq!(q.value, -1.0);
        assert_eq!(q.partials(), &[0.5, 0.5]);
    }

    #[test]
    fn abs_and_sign_at_zero_have_zero_slope() {
        let x = DualNumber::variable(0.0, 0, 1);
        assert_eq!(Scalar::abs(x).partials(), &[0.0]);
        assert_eq!(Scalar::sign(x).partials(), &[0.0]);
        let y = DualNumber::variable(-1.5, 0, 1);
        assert_eq!(Scalar::sign(y).partials(), &[0.0]);
        assert_eq!(Scalar::abs(y).partials(), &[-1.0]);
    }

    #[test]
    fn atan2_gradient_is_tangential() {
        let x = DualNumber::variable(1.0, 0, 2);
        let y = DualNumber::variable(1.0, 1, 2);
        let t = Scalar::atan2(y, x);
        assert!((t.value - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(t.partials(), &[-0.5, 0.5]);
    }

    #[test]
    fn integer_power_of_negative_base() {
        let x = DualNumber::variable(-3.0, 0, 1);
        let two = DualNumber::constant(2.0, 1);
        let p = Scalar::pow(x, two);
        assert_eq!(p.value, 9.0);
        assert_eq!(p.partials(), &[-6.0]);
    }
}
