//! Chart atlases for the surfaces the lab knows about.
//!
//! Every built-in surface is covered by a single rectangular chart with
//! per-axis periodicity. The round sphere additionally carries a second,
//! rotated spherical chart (poles on the x-axis) with explicit transition
//! maps; flows always run in chart 0.

use crate::dual::{Dual2, Scalar};
use crate::error::{Error, Result};
use crate::expr::Expr;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub periodic: [bool; 2],
}

impl Chart {
    pub fn contains(&self, q: [f64; 2]) -> bool {
        (0..2).all(|i| self.periodic[i] || (q[i] > self.lo[i] && q[i] < self.hi[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceFamily {
    FlatTorus,
    /// Metric `du^2 + r(u)^2 dv^2` on `(u, v)`, `v` periodic with period 2π.
    /// `poles[i]` marks whether the lower/upper `u` end is a pole (r = 0).
    SurfaceOfRevolution { profile: Expr, poles: [bool; 2] },
    ConformalTorus { exponent: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartAtlas {
    pub charts: Vec<Chart>,
    pub family: SurfaceFamily,
    /// Distance from a pole inside which flows abort.
    pub pole_margin: f64,
}

impl ChartAtlas {
    pub fn unit_torus() -> Self {
        ChartAtlas {
            charts: vec![Chart {
                lo: [0.0, 0.0],
                hi: [1.0, 1.0],
                periodic: [true, true],
            }],
            family: SurfaceFamily::FlatTorus,
            pole_margin: 0.0,
        }
    }

    pub fn conformal_torus(exponent: Expr) -> Self {
        let mut a = Self::unit_torus();
        a.family = SurfaceFamily::ConformalTorus { exponent };
        a
    }

    pub fn revolution(profile: Expr, u_range: [f64; 2], poles: [bool; 2], pole_margin: f64) -> Self {
        ChartAtlas {
            charts: vec![Chart {
                lo: [u_range[0], 0.0],
                hi: [u_range[1], 2.0 * PI],
                periodic: [false, true],
            }],
            family: SurfaceFamily::SurfaceOfRevolution { profile, poles },
            pole_margin,
        }
    }

    /// Round unit sphere with the rotated second chart attached.
    pub fn round_sphere(pole_margin: f64) -> Self {
        let mut a = Self::revolution(Expr::parse("sin(u)").unwrap(), [0.0, PI], [true, true], pole_margin);
        a.charts.push(Chart {
            lo: [0.0, 0.0],
            hi: [PI, 2.0 * PI],
            periodic: [false, true],
        });
        a
    }

    pub fn chart(&self) -> &Chart {
        &self.charts[0]
    }

    pub fn period(&self, axis: usize) -> Option<f64> {
        let c = self.chart();
        c.periodic[axis].then(|| c.hi[axis] - c.lo[axis])
    }

    /// Validates a chart-0 point for flow evaluation.
    pub fn check(&self, q: [f64; 2]) -> Result<()> {
        if !q[0].is_finite() || !q[1].is_finite() {
            return Err(Error::OutsideChart(q[0], q[1]));
        }
        let c = self.chart();
        for i in 0..2 {
            if c.periodic[i] {
                continue;
            }
            let poles = match &self.family {
                SurfaceFamily::SurfaceOfRevolution { poles, .. } if i == 0 => *poles,
                _ => [false, false],
            };
            if q[i] <= c.lo[i] + if poles[0] { self.pole_margin } else { 0.0 } {
                return Err(if poles[0] && q[i] > c.lo[i] - self.pole_margin {
                    Error::PoleProximity(q[0], q[1])
                } else {
                    Error::OutsideChart(q[0], q[1])
                });
            }
            if q[i] >= c.hi[i] - if poles[1] { self.pole_margin } else { 0.0 } {
                return Err(if poles[1] && q[i] < c.hi[i] + self.pole_margin {
                    Error::PoleProximity(q[0], q[1])
                } else {
                    Error::OutsideChart(q[0], q[1])
                });
            }
        }
        Ok(())
    }

    /// True when `q` lies in some chart interior or is a declared pole.
    pub fn covers(&self, q: [f64; 2]) -> bool {
        if self.chart().contains(q) {
            return true;
        }
        if let SurfaceFamily::SurfaceOfRevolution { poles, .. } = &self.family {
            let c = self.chart();
            if (poles[0] && q[0] == c.lo[0]) || (poles[1] && q[0] == c.hi[0]) {
                return true;
            }
        }
        if self.charts.len() > 1 {
            if let Some(q1) = self.transition(0, 1, q) {
                return self.charts[1].contains(q1);
            }
        }
        false
    }

    /// Wraps periodic coordinates into the fundamental domain.
    pub fn reduce(&self, q: [f64; 2]) -> [f64; 2] {
        let c = self.chart();
        let mut r = q;
        for i in 0..2 {
            if c.periodic[i] {
                let l = c.hi[i] - c.lo[i];
                r[i] = c.lo[i] + (q[i] - c.lo[i]).rem_euclid(l);
            }
        }
        r
    }

    /// The deck translation closest to `dq` (zero along non-periodic axes).
    pub fn nearest_lattice(&self, dq: [f64; 2]) -> [f64; 2] {
        let mut l = [0.0; 2];
        for (i, li) in l.iter_mut().enumerate() {
            if let Some(p) = self.period(i) {
                *li = (dq[i] / p).round() * p;
            }
        }
        l
    }

    /// Chart-0 displacement from `a` to `b` modulo deck translations.
    pub fn displacement(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let d = [b[0] - a[0], b[1] - a[1]];
        let l = self.nearest_lattice(d);
        [d[0] - l[0], d[1] - l[1]]
    }

    /// Coordinate change between charts; `None` where undefined.
    pub fn transition(&self, from: usize, to: usize, q: [f64; 2]) -> Option<[f64; 2]> {
        if from == to {
            return Some(q);
        }
        if self.charts.len() < 2 || from > 1 || to > 1 {
            return None;
        }
        let r = sphere_transition(from, Dual2::point(q))?;
        Some([r[0].v, r[1].v])
    }

    /// Jacobian `∂q_to/∂q_from` of the transition map (rows = target coords).
    pub fn transition_jacobian(&self, from: usize, to: usize, q: [f64; 2]) -> Option<[[f64; 2]; 2]> {
        if from == to {
            return Some([[1.0, 0.0], [0.0, 1.0]]);
        }
        if self.charts.len() < 2 || from > 1 || to > 1 {
            return None;
        }
        let r = sphere_transition(from, Dual2::point(q))?;
        Some([r[0].d, r[1].d])
    }

    /// Re-expresses a covector in another chart (inverse-transpose Jacobian).
    pub fn transform_covector(&self, c: &CotangentVector, to: usize) -> Option<CotangentVector> {
        let q_to = self.transition(c.chart, to, c.q)?;
        // p_from = J^T p_to
        let j = self.transition_jacobian(c.chart, to, c.q)?;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return None;
        }
        let p = c.p;
        // solve J^T x = p
        let x0 = (j[1][1] * p[0] - j[1][0] * p[1]) / det;
        let x1 = (-j[0][1] * p[0] + j[0][0] * p[1]) / det;
        Some(CotangentVector {
            chart: to,
            q: q_to,
            p: [x0, x1],
        })
    }
}

/// A covector `p1 dq1 + p2 dq2` attached to a chart point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CotangentVector {
    pub chart: usize,
    pub q: [f64; 2],
    pub p: [f64; 2],
}

fn acos_d(x: Dual2) -> Option<Dual2> {
    if x.v.abs() >= 1.0 {
        return None;
    }
    let s = -1.0 / (1.0 - x.v * x.v).sqrt();
    Some(Dual2 {
        v: x.v.acos(),
        d: [s * x.d[0], s * x.d[1]],
    })
}

fn atan2_d(y: Dual2, x: Dual2) -> Option<Dual2> {
    let r2 = x.v * x.v + y.v * y.v;
    if r2 < 1e-24 {
        return None;
    }
    Some(Dual2 {
        v: y.v.atan2(x.v).rem_euclid(2.0 * PI),
        d: [
            (x.v * y.d[0] - y.v * x.d[0]) / r2,
            (x.v * y.d[1] - y.v * x.d[1]) / r2,
        ],
    })
}

// chart 0: (sin u cos v, sin u sin v, cos u); chart 1: (cos u', sin u' cos v', sin u' sin v').
fn sphere_transition(from: usize, q: [Dual2; 2]) -> Option<[Dual2; 2]> {
    let (su, cu, sv, cv) = (q[0].sin(), q[0].cos(), q[1].sin(), q[1].cos());
    let (x, y, z) = if from == 0 {
        (su * cv, su * sv, cu)
    } else {
        (cu, su * cv, su * sv)
    };
    if from == 0 {
        Some([acos_d(x)?, atan2_d(z, y)?])
    } else {
        Some([acos_d(z)?, atan2_d(y, x)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_reduction_and_lattice() {
        let a = ChartAtlas::unit_torus();
        let r = a.reduce([1.25, -0.5]);
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
        assert_eq!(a.nearest_lattice([2.9, -1.2]), [3.0, -1.0]);
        assert!(a.check([17.0, -3.0]).is_ok());
    }

    #[test]
    fn pole_margin_and_chart_exit() {
        let a = ChartAtlas::round_sphere(1e-3);
        assert!(a.check([1.0, 0.3]).is_ok());
        assert!(matches!(a.check([5e-4, 0.3]), Err(Error::PoleProximity(..))));
        assert!(matches!(a.check([PI - 5e-4, 0.3]), Err(Error::PoleProximity(..))));
        let w = ChartAtlas::revolution(Expr::parse("cosh(u)").unwrap(), [-3.0, 3.0], [false, false], 0.0);
        assert!(matches!(w.check([3.5, 0.0]), Err(Error::OutsideChart(..))));
    }

    #[test]
    fn sphere_transitions_are_mutually_inverse() {
        let a = ChartAtlas::round_sphere(1e-3);
        for &(u, v) in &[(0.3, 0.2), (1.2, 2.5), (2.0, 4.0), (2.9, 6.0), (PI / 2.0, 1.0)] {
            let q1 = a.transition(0, 1, [u, v]).unwrap();
            let back = a.transition(1, 0, q1).unwrap();
            assert!((back[0] - u).abs() < 1e-12, "{back:?}");
            assert!((back[1] - v).abs() < 1e-12, "{back:?}");
        }
    }

    #[test]
    fn covectors_transform_by_inverse_transpose() {
        let a = ChartAtlas::round_sphere(1e-3);
        let q = [1.1, 0.7];
        let c = CotangentVector { chart: 0, q, p: [0.4, -1.3] };
        let c1 = a.transform_covector(&c, 1).unwrap();
        let j = a.transition_jacobian(0, 1, q).unwrap();
        let v = [0.9, 0.25];
        let v1 = [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]];
        let pv = c.p[0] * v[0] + c.p[1] * v[1];
        let pv1 = c1.p[0] * v1[0] + c1.p[1] * v1[1];
        assert!((pv - pv1).abs() < 1e-10);
        // and back again
        let c0 = a.transform_covector(&c1, 0).unwrap();
        assert!((c0.p[0] - c.p[0]).abs() < 1e-10 && (c0.p[1] - c.p[1]).abs() < 1e-10);
    }

    #[test]
    fn atlas_covers_sampled_points() {
        let a = ChartAtlas::round_sphere(1e-3);
        assert!(a.covers([0.0, 1.0]));
        assert!(a.covers([PI, 0.0]));
        for i in 0..50 {
            let q = [0.01 + 3.1 * (i as f64) / 50.0, 0.37 * i as f64];
            assert!(a.covers(q));
        }
    }
}
