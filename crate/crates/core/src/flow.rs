//! The Reeb flow of `λ = p dq` on the unit cotangent bundle, which is the
//! Hamiltonian flow of F* on its unit level, and the geodesic spray on the
//! unit tangent bundle for comparison.

use crate::error::{Error, Result};
use crate::io::{self, Svg};
use crate::metric::{FinslerMetric, V2};
use crate::ode::{Field, Integrator, OdeOptions, Projection};
use serde::Serialize;
use std::cell::Cell;

pub type Phase = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitCotangentState {
    pub q: [f64; 2],
    pub p: [f64; 2],
    /// F*(q, p) after normalisation.
    pub level: f64,
}

impl UnitCotangentState {
    /// Rescales `p` onto the unit level.
    pub fn new(m: &FinslerMetric, q: [f64; 2], p: [f64; 2]) -> Result<Self> {
        let f = m.dual_norm(q, V2::new(p[0], p[1]))?;
        let p = [p[0] / f, p[1] / f];
        let level = m.dual_norm(q, V2::new(p[0], p[1]))?;
        Ok(UnitCotangentState { q, p, level })
    }

    /// Legendre image of the direction `v`.
    pub fn from_tangent(m: &FinslerMetric, q: [f64; 2], v: [f64; 2]) -> Result<Self> {
        let p = m.legendre(q, V2::new(v[0], v[1]))?;
        Self::new(m, q, [p[0], p[1]])
    }

    pub fn phase(&self) -> Phase {
        [self.q[0], self.q[1], self.p[0], self.p[1]]
    }

    pub(crate) fn from_phase(y: &Phase, level: f64) -> Self {
        UnitCotangentState {
            q: [y[0], y[1]],
            p: [y[2], y[3]],
            level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub ode: OdeOptions,
    /// Number of uniform output intervals.
    pub samples: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            ode: OdeOptions::default(),
            samples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, UnitCotangentState)>,
    pub method: &'static str,
    pub tol: f64,
    /// Largest `|F* − 1|` seen before a renormalisation.
    pub max_drift: f64,
    pub steps: usize,
}

/// `(q̇, ṗ) = (∂F*/∂p, −∂F*/∂q)`.
pub fn reeb_vector(m: &FinslerMetric, s: &UnitCotangentState) -> Result<([f64; 2], [f64; 2])> {
    let f = reeb_field(m, &s.phase())?;
    Ok(([f[0], f[1]], [f[2], f[3]]))
}

pub(crate) fn reeb_field(m: &FinslerMetric, y: &Phase) -> Result<Phase> {
    let j = m.dual_jet([y[0], y[1]], V2::new(y[2], y[3]))?;
    Ok([j.grad[0], j.grad[1], -j.dq[0], -j.dq[1]])
}

/// `p ← p / F*(q, p)`, returning the level before projection.
pub(crate) fn renormalize(m: &FinslerMetric, y: &mut Phase) -> Result<f64> {
    let f = m.dual_norm([y[0], y[1]], V2::new(y[2], y[3]))?;
    y[2] /= f;
    y[3] /= f;
    Ok(f)
}

pub(crate) fn reeb_integrator<'a>(
    m: &'a FinslerMetric,
    t0: f64,
    y0: Phase,
    opts: OdeOptions,
    drift: &'a Cell<f64>,
) -> Integrator<'a, 4> {
    let field: Field<4> = Box::new(move |_, y| reeb_field(m, y));
    let proj: Projection<4> = Box::new(move |y| {
        let f = renormalize(m, y)?;
        drift.set(drift.get().max((f - 1.0).abs()));
        Ok(())
    });
    Integrator::new(field, t0, y0, opts).with_projection(proj)
}

/// Flow state after time `dt` (no sampling).
pub fn flow_map(m: &FinslerMetric, y0: Phase, dt: f64, opts: OdeOptions) -> Result<Phase> {
    let drift = Cell::new(0.0);
    let mut it = reeb_integrator(m, 0.0, y0, opts, &drift);
    it.advance_to(dt)?;
    Ok(it.y)
}

/// Integrates the Reeb flow for time `t_total`, sampling uniformly.
pub fn integrate(m: &FinslerMetric, s: &UnitCotangentState, t_total: f64, opts: &FlowOptions) -> Result<Trajectory> {
    if !(t_total > 0.0) {
        return Err(Error::InvalidMetric(format!("duration must be positive, got {t_total}")));
    }
    let drift = Cell::new(0.0);
    let mut it = reeb_integrator(m, 0.0, s.phase(), opts.ode, &drift);
    let n = opts.samples.max(1);
    let mut samples = Vec::with_capacity(n + 1);
    samples.push((0.0, *s));
    for k in 1..=n {
        let t = if k == n { t_total } else { t_total * k as f64 / n as f64 };
        it.advance_to(t)?;
        let level = m.dual_norm([it.y[0], it.y[1]], V2::new(it.y[2], it.y[3]))?;
        samples.push((t, UnitCotangentState::from_phase(&it.y, level)));
    }
    Ok(Trajectory {
        samples,
        method: "dopri5+renormalize",
        tol: opts.ode.tol,
        max_drift: drift.get(),
        steps: it.accepted,
    })
}

/// Acceleration of the geodesic spray: `g v̇ = F ∂ₓF − Dₓ(F ∂ᵥF)·v`.
fn spray_field(m: &FinslerMetric, y: &Phase) -> Result<Phase> {
    let x = [y[0], y[1]];
    let v = V2::new(y[2], y[3]);
    let j = m.primal_jet(x, v)?;
    let g = j.fundamental_tensor();
    let legendre = |x: [f64; 2]| m.primal_jet_unchecked(x, v).map(|j| j.grad * j.value);
    // fourth-order central differences of the Legendre map in x
    let h = 1e-3;
    let mut mixed = V2::zeros();
    for i in 0..2 {
        let at = |s: f64| {
            let mut xs = x;
            xs[i] += s;
            legendre(xs)
        };
        let d = (at(-2.0 * h)? - at(2.0 * h)? + (at(h)? - at(-h)?) * 8.0) / (12.0 * h);
        mixed += d * v[i];
    }
    let rhs = j.dq * j.value - mixed;
    let acc = g
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite(g.determinant()))?
        * rhs;
    Ok([v[0], v[1], acc[0], acc[1]])
}

/// Unit-tangent trajectory `(t, x, v)` of the geodesic spray.
pub fn spray_integrate(
    m: &FinslerMetric,
    x: [f64; 2],
    v: [f64; 2],
    t_total: f64,
    opts: &FlowOptions,
) -> Result<Vec<(f64, [f64; 2], [f64; 2])>> {
    let speed = m.eval(x, V2::new(v[0], v[1]))?;
    if (speed - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnitSpeed(speed));
    }
    let field: Field<4> = Box::new(move |_, y| spray_field(m, y));
    let proj: Projection<4> = Box::new(move |y| {
        let f = m.eval([y[0], y[1]], V2::new(y[2], y[3]))?;
        y[2] /= f;
        y[3] /= f;
        Ok(())
    });
    let mut it = Integrator::new(field, 0.0, [x[0], x[1], v[0], v[1]], opts.ode).with_projection(proj);
    let n = opts.samples.max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push((0.0, x, v));
    for k in 1..=n {
        let t = if k == n { t_total } else { t_total * k as f64 / n as f64 };
        it.advance_to(t)?;
        out.push((t, [it.y[0], it.y[1]], [it.y[2], it.y[3]]));
    }
    Ok(out)
}

/// Max over the sample times of the chart distance between the Reeb
/// trajectory and the Legendre image of the spray trajectory.
pub fn conjugacy_error(m: &FinslerMetric, s: &UnitCotangentState, t_total: f64, opts: &FlowOptions) -> Result<f64> {
    let traj = integrate(m, s, t_total, opts)?;
    let v0 = m.legendre_inverse(s.q, V2::new(s.p[0], s.p[1]))?;
    let tangent = spray_integrate(m, s.q, [v0[0], v0[1]], t_total, opts)?;
    let mut worst: f64 = 0.0;
    for ((_, c), (_, x, v)) in traj.samples.iter().zip(&tangent) {
        let p = m.legendre(*x, V2::new(v[0], v[1]))?;
        let d = ((c.q[0] - x[0]).powi(2) + (c.q[1] - x[1]).powi(2) + (c.p[0] - p[0]).powi(2) + (c.p[1] - p[1]).powi(2))
            .sqrt();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// `∫ f λ` along a uniformly sampled trajectory, which is `∫ f(q(t)) dt`
/// because `λ(R) = 1`. Composite Simpson checked against half resolution.
pub fn line_pair(traj: &Trajectory, f: &dyn Fn([f64; 2]) -> f64, tol: f64) -> Result<f64> {
    let vals: Vec<f64> = traj.samples.iter().map(|(_, s)| f(s.q)).collect();
    let t0 = traj.samples[0].0;
    let t1 = traj.samples.last().map(|s| s.0).unwrap_or(t0);
    simpson_checked(&vals, t1 - t0, tol)
}

/// Simpson over uniformly spaced values on an interval of length `len`.
pub(crate) fn simpson_checked(vals: &[f64], len: f64, tol: f64) -> Result<f64> {
    let n = vals.len() - 1;
    if n == 0 {
        return Ok(0.0);
    }
    let simpson = |stride: usize| -> Option<f64> {
        let m = n / stride;
        if !m.is_multiple_of(2) || m * stride != n {
            return None;
        }
        let h = len / m as f64;
        let mut s = vals[0] + vals[n];
        for k in 1..m {
            s += vals[k * stride] * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        Some(s * h / 3.0)
    };
    let trapezoid = || {
        let h = len / n as f64;
        (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n])) * h
    };
    let Some(fine) = simpson(1) else {
        return Ok(trapezoid());
    };
    if let Some(coarse) = simpson(2) {
        let err = (fine - coarse).abs() / 15.0;
        if err > tol * len.max(1.0) {
            return Err(Error::QuadratureUnderResolved(err));
        }
    }
    Ok(fine)
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0) - self.samples[0].0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,q1,q2,p1,p2\n");
        for (t, st) in &self.samples {
            s.push_str(&io::csv_row(&[
                io::num(*t),
                io::num(st.q[0]),
                io::num(st.q[1]),
                io::num(st.p[0]),
                io::num(st.p[1]),
            ]));
        }
        s
    }

    pub fn to_svg(&self, m: &FinslerMetric) -> String {
        let c = m.atlas.chart();
        let mut svg = Svg::new(c.lo, c.hi, 400.0);
        let pts: Vec<[f64; 2]> = self.samples.iter().map(|(_, s)| s.q).collect();
        for seg in io::wrap_segments(&pts, c.lo, [m.atlas.period(0), m.atlas.period(1)]) {
            svg.polyline(&seg, "steelblue");
        }
        svg.finish()
    }
}

/// Axis-aligned chart section `{q_axis = value}` (modulo the period on a
/// periodic axis), crossed in the direction the flow leaves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Section {
    pub axis: usize,
    pub value: f64,
}

/// Integrates until the next crossing of `section` in the starting
/// direction and returns the located state and elapsed time.
pub fn section_return(
    m: &FinslerMetric,
    section: Section,
    s: &UnitCotangentState,
    horizon: f64,
    opts: OdeOptions,
) -> Result<(UnitCotangentState, f64)> {
    let (qd, _) = reeb_vector(m, s)?;
    let normal = qd[section.axis];
    if normal.abs() < 1e-6 {
        return Err(Error::Tangency(normal));
    }
    let sgn = normal.signum();
    let period = m.atlas.period(section.axis).unwrap_or(f64::INFINITY);
    let hval = |y: &Phase| sgn * (y[section.axis] - section.value);
    let level_of = |h: f64| if period.is_finite() { (h / period).floor() } else if h >= 0.0 { 0.0 } else { -1.0 };
    let drift = Cell::new(0.0);
    let mut it = reeb_integrator(m, 0.0, s.phase(), opts, &drift);
    // start on the section: the first level counts only once we are past it
    let mut level = level_of(hval(&s.phase()).max(0.0));
    let mut armed = !period.is_finite();
    while it.t < horizon {
        let (t_prev, y_prev) = it.step(horizon)?;
        let h_new = hval(&it.y);
        let new_level = level_of(h_new);
        if !period.is_finite() {
            if h_new < 0.0 {
                armed = true;
                level = -1.0;
                continue;
            }
            if !(armed && level < 0.0) {
                level = new_level;
                continue;
            }
        } else if new_level <= level {
            level = level.min(new_level);
            armed = true;
            continue;
        }
        let _ = armed;
        let target = if period.is_finite() { (level + 1.0) * period } else { 0.0 };
        // Newton on the crossing time from the bracketing step
        let g = |y: &Phase| hval(y) - target;
        let (mut lo, mut hi) = (0.0, it.t - t_prev);
        let mut tau = hi * (-g(&y_prev)) / (g(&it.y) - g(&y_prev));
        let mut y = y_prev;
        for _ in 0..60 {
            let inner = Cell::new(0.0);
            let mut sub = reeb_integrator(m, t_prev, y_prev, opts, &inner);
            sub.advance_to(t_prev + tau)?;
            y = sub.y;
            let gv = g(&y);
            if gv < 0.0 {
                lo = tau;
            } else {
                hi = tau;
            }
            if gv.abs() < 1e-13 {
                break;
            }
            let f = reeb_field(m, &y)?;
            let dg = sgn * f[section.axis];
            let mut next = tau - gv / dg;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - tau).abs() < 1e-15 {
                tau = next;
                break;
            }
            tau = next;
        }
        let level_val = m.dual_norm([y[0], y[1]], V2::new(y[2], y[3]))?;
        return Ok((UnitCotangentState::from_phase(&y, level_val), t_prev + tau));
    }
    Err(Error::NoReturn(horizon))
}
