//! Forward-mode dual numbers carrying a gradient with respect to the two
//! chart coordinates. Metric fields are evaluated on these so that the
//! q-derivatives needed by the Hamiltonian come out exactly.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by `f64` and [`Dual2`].
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self {
        self.sin() / self.cos()
    }
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn tanh(self) -> Self {
        self.sinh() / self.cosh()
    }
    fn powf(self, e: f64) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
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
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value plus gradient with respect to (q1, q2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d: [f64; 2],
}

impl Dual2 {
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 2];
        d[i] = 1.0;
        Dual2 { v, d }
    }

    /// Seeds both chart coordinates.
    pub fn point(q: [f64; 2]) -> [Dual2; 2] {
        [Dual2::var(q[0], 0), Dual2::var(q[1], 1)]
    }

    fn chain(self, f: f64, df: f64) -> Self {
        Dual2 {
            v: f,
            d: [df * self.d[0], df * self.d[1]],
        }
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1]],
        }
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1]],
        }
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
            ],
        }
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, o: Dual2) -> Dual2 {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        Dual2 {
            v,
            d: [
                (self.d[0] - v * o.d[0]) * inv,
                (self.d[1] - v * o.d[1]) * inv,
            ],
        }
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        Dual2 {
            v: -self.v,
            d: [-self.d[0], -self.d[1]],
        }
    }
}

impl Scalar for Dual2 {
    fn cst(v: f64) -> Self {
        Dual2 { v, d: [0.0; 2] }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sinh(self) -> Self {
        self.chain(self.v.sinh(), self.v.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.v.cosh(), self.v.sinh())
    }
    fn powf(self, e: f64) -> Self {
        self.chain(self.v.powf(e), e * self.v.powf(e - 1.0))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual2::cst(1.0);
        }
        self.chain(self.v.powi(n), n as f64 * self.v.powi(n - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_quotient() {
        let [x, y] = Dual2::point([0.3, 1.7]);
        let f = x * y.sin() / (x + Dual2::cst(2.0));
        let fx = |a: f64, b: f64| a * b.sin() / (a + 2.0);
        let h = 1e-6;
        let dx = (fx(0.3 + h, 1.7) - fx(0.3 - h, 1.7)) / (2.0 * h);
        let dy = (fx(0.3, 1.7 + h) - fx(0.3, 1.7 - h)) / (2.0 * h);
        assert!((f.d[0] - dx).abs() < 1e-9);
        assert!((f.d[1] - dy).abs() < 1e-9);
    }

    #[test]
    fn transcendental_derivatives() {
        let [x, _] = Dual2::point([0.7, 0.0]);
        assert!((x.cosh().d[0] - 0.7f64.sinh()).abs() < 1e-15);
        assert!((x.ln().d[0] - 1.0 / 0.7).abs() < 1e-15);
        assert!((x.powf(2.5).d[0] - 2.5 * 0.7f64.powf(1.5)).abs() < 1e-14);
        assert!((x.sqrt().d[0] - 0.5 / 0.7f64.sqrt()).abs() < 1e-15);
    }
}
