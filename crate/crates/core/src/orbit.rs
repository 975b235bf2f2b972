//! Closed Reeb orbits: shooting with Gauss–Newton on the period map,
//! minimal periods, catalogs for the built-in families, and currents.

use crate::atlas::SurfaceFamily;
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, Phase, UnitCotangentState};
use crate::metric::{FinslerMetric, Preset, V2};
use crate::ode::{Field, Integrator, OdeOptions, Projection};
use nalgebra::{Matrix4, SMatrix, Vector4};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type M4 = Matrix4<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    pub ode: OdeOptions,
    /// Residual at which Newton stops.
    pub newton_tol: f64,
    /// Residual a returned orbit must satisfy.
    pub accept_tol: f64,
    pub max_iter: usize,
    /// Uniform samples stored along the orbit.
    pub samples: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            ode: OdeOptions::with_tol(1e-12),
            newton_tol: 1e-11,
            accept_tol: 1e-8,
            max_iter: 40,
            samples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedOrbit {
    pub id: usize,
    pub label: String,
    pub chart: usize,
    pub start: UnitCotangentState,
    /// Reeb period, which is the arclength of the projected geodesic.
    pub period: f64,
    /// `∫ F(σ, σ')` computed from the projected curve alone.
    pub length: f64,
    pub residual: f64,
    /// Residual when re-integrated at half the tolerance.
    pub residual_halved: f64,
    /// Lattice translation accumulated over one period.
    pub drift: [f64; 2],
    /// This orbit is the `iterate`-fold cover of a minimal orbit.
    pub iterate: usize,
    pub minimal: bool,
    pub iterate_of: Option<usize>,
    pub minimal_ambiguous: bool,
    #[serde(skip)]
    pub samples: Vec<(f64, UnitCotangentState)>,
}

/// State after one period together with the 4×4 linearisation of the
/// time-T flow map.
pub fn variational_flow(m: &FinslerMetric, y0: Phase, t: f64, opts: OdeOptions) -> Result<(Phase, M4)> {
    Ok(variational_samples(m, y0, &[t], opts)?.pop().expect("one output time"))
}

/// State and linearisation at each of the increasing `times`.
pub fn variational_samples(m: &FinslerMetric, y0: Phase, times: &[f64], opts: OdeOptions) -> Result<Vec<(Phase, M4)>> {
    let mut z = [0.0; 20];
    z[..4].copy_from_slice(&y0);
    for i in 0..4 {
        z[4 + 5 * i] = 1.0;
    }
    let field: Field<20> = Box::new(move |_, z| {
        let y: Phase = [z[0], z[1], z[2], z[3]];
        let f = flow::reeb_field(m, &y)?;
        let jac = field_jacobian(m, &y)?;
        let mut out = [0.0; 20];
        out[..4].copy_from_slice(&f);
        // Y row-major in z[4..]
        for r in 0..4 {
            for c in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += jac[(r, k)] * z[4 + 4 * k + c];
                }
                out[4 + 4 * r + c] = s;
            }
        }
        Ok(out)
    });
    let proj: Projection<20> = Box::new(move |z| {
        let mut y: Phase = [z[0], z[1], z[2], z[3]];
        flow::renormalize(m, &mut y)?;
        z[2] = y[2];
        z[3] = y[3];
        Ok(())
    });
    let mut it = Integrator::new(field, 0.0, z, opts).with_projection(proj);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        it.advance_to(t)?;
        let z = it.y;
        let mut mono = M4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                mono[(r, c)] = z[4 + 4 * r + c];
            }
        }
        out.push(([z[0], z[1], z[2], z[3]], mono));
    }
    Ok(out)
}

/// Central-difference Jacobian of the Reeb field.
pub fn field_jacobian(m: &FinslerMetric, y: &Phase) -> Result<M4> {
    let h = 1e-6;
    let mut j = M4::zeros();
    for c in 0..4 {
        let mut a = *y;
        let mut b = *y;
        a[c] += h;
        b[c] -= h;
        let fa = flow::reeb_field(m, &a)?;
        let fb = flow::reeb_field(m, &b)?;
        for r in 0..4 {
            j[(r, c)] = (fa[r] - fb[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

fn phase_residual(m: &FinslerMetric, start: &Phase, end: &Phase) -> ([f64; 4], [f64; 2]) {
    let l = m.atlas.nearest_lattice([end[0] - start[0], end[1] - start[1]]);
    (
        [end[0] - start[0] - l[0], end[1] - start[1] - l[1], end[2] - start[2], end[3] - start[3]],
        l,
    )
}

fn norm4(r: &[f64; 4]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Closure residual of the time-`t` flow from `y`.
pub fn closure_residual(m: &FinslerMetric, y: &Phase, t: f64, opts: OdeOptions) -> Result<f64> {
    let end = flow::flow_map(m, *y, t, opts)?;
    Ok(norm4(&phase_residual(m, y, &end).0))
}

/// Anchored coordinates around `y`: offset `s` along the chart normal of
/// the flow and rotation `ψ` of the covector, both renormalised.
struct Anchor {
    y: Phase,
    n: V2,
}

impl Anchor {
    fn new(m: &FinslerMetric, y: Phase) -> Result<Self> {
        let f = flow::reeb_field(m, &y)?;
        let qd = V2::new(f[0], f[1]);
        let n = V2::new(-qd[1], qd[0]) / qd.norm();
        Ok(Anchor { y, n })
    }

    fn point(&self, m: &FinslerMetric, s: f64, psi: f64) -> Result<Phase> {
        let q = [self.y[0] + s * self.n[0], self.y[1] + s * self.n[1]];
        let (c, sn) = (psi.cos(), psi.sin());
        let p = V2::new(c * self.y[2] - sn * self.y[3], sn * self.y[2] + c * self.y[3]);
        let f = m.dual_norm(q, p)?;
        Ok([q[0], q[1], p[0] / f, p[1] / f])
    }

    /// Tangents of `point` at the anchor.
    fn tangents(&self, m: &FinslerMetric) -> Result<(Vector4<f64>, Vector4<f64>)> {
        let q = [self.y[0], self.y[1]];
        let p = V2::new(self.y[2], self.y[3]);
        let j = m.dual_jet(q, p)?;
        let dqf = j.dq.dot(&self.n);
        let ds = Vector4::new(self.n[0], self.n[1], -p[0] * dqf, -p[1] * dqf);
        let jp = V2::new(-p[1], p[0]);
        let gj = j.grad.dot(&jp);
        let dpsi = Vector4::new(0.0, 0.0, jp[0] - p[0] * gj, jp[1] - p[1] * gj);
        Ok((ds, dpsi))
    }
}

fn pinv_solve(j: &SMatrix<f64, 4, 3>, r: &Vector4<f64>) -> Vector4<f64> {
    let svd = j.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let mut x = nalgebra::Vector3::zeros();
    for k in 0..3 {
        let s = svd.singular_values[k];
        if s > 1e-10 * smax {
            let coef = u.column(k).dot(r) / s;
            x += vt.row(k).transpose() * coef;
        }
    }
    Vector4::new(x[0], x[1], x[2], 0.0)
}

/// Refines a guess `(state, period)` to a closed orbit.
pub fn find_closed_orbit(
    m: &FinslerMetric,
    guess: &UnitCotangentState,
    period_guess: f64,
    opts: &OrbitOptions,
) -> Result<ClosedOrbit> {
    let mut y = guess.phase();
    let mut t = period_guess;
    if !(t > 0.0) {
        return Err(Error::NewtonDiverged(format!("period guess {t} is not positive")));
    }
    let mut res = closure_residual(m, &y, t, opts.ode)?;
    for _ in 0..opts.max_iter {
        if res < opts.newton_tol {
            break;
        }
        let anchor = Anchor::new(m, y)?;
        let (end, mono) = variational_flow(m, y, t, opts.ode)?;
        let (r, _) = phase_residual(m, &y, &end);
        let (ds, dpsi) = anchor.tangents(m)?;
        let a = mono - M4::identity();
        let fend = flow::reeb_field(m, &end)?;
        let mut jac = SMatrix::<f64, 4, 3>::zeros();
        jac.set_column(0, &(a * ds));
        jac.set_column(1, &(a * dpsi));
        jac.set_column(2, &Vector4::from(fend));
        let delta = -pinv_solve(&jac, &Vector4::from(r));
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..12 {
            let cand = anchor.point(m, alpha * delta[0], alpha * delta[1]);
            let tc = t + alpha * delta[2];
            if let Ok(yc) = cand {
                if tc > 0.0 {
                    if let Ok(rc) = closure_residual(m, &yc, tc, opts.ode) {
                        if rc < res {
                            y = yc;
                            t = tc;
                            res = rc;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res > opts.accept_tol {
        return Err(Error::NewtonDiverged(format!("residual {res:e} after refinement")));
    }
    let start = UnitCotangentState::new(m, [y[0], y[1]], [y[2], y[3]])?;
    build_orbit(m, start, t, opts)
}

/// Samples a closed orbit and fills in the length and residual checks.
pub fn build_orbit(m: &FinslerMetric, start: UnitCotangentState, t: f64, opts: &OrbitOptions) -> Result<ClosedOrbit> {
    let fo = FlowOptions {
        ode: opts.ode,
        samples: opts.samples,
    };
    let traj = flow::integrate(m, &start, t, &fo)?;
    let end = traj.samples.last().unwrap().1;
    let (r, drift) = phase_residual(m, &start.phase(), &end.phase());
    let residual = norm4(&r);
    let halved = OdeOptions {
        tol: opts.ode.tol * 0.5,
        ..opts.ode
    };
    let residual_halved = closure_residual(m, &start.phase(), t, halved)?;
    let mut orbit = ClosedOrbit {
        id: 0,
        label: String::new(),
        chart: 0,
        start,
        period: t,
        length: 0.0,
        residual,
        residual_halved,
        drift,
        iterate: 1,
        minimal: true,
        iterate_of: None,
        minimal_ambiguous: false,
        samples: traj.samples,
    };
    orbit.length = projected_length(m, &orbit)?;
    Ok(orbit)
}

/// Finsler length of the projected curve, with velocities taken from a
/// spectral derivative of the position samples.
pub fn projected_length(m: &FinslerMetric, orbit: &ClosedOrbit) -> Result<f64> {
    let curve = OrbitCurve::new(orbit);
    let n = orbit.samples.len() - 1;
    let mut total = 0.0;
    for k in 0..n {
        let tau = k as f64 / n as f64;
        let (q, qd) = curve.position(tau);
        // d/dt = (1/T) d/dτ
        total += m.eval(q, V2::new(qd[0], qd[1]) / orbit.period)?;
    }
    Ok(total * orbit.period / n as f64)
}

/// Trigonometric interpolant of an orbit in normalised time `τ ∈ [0, 1)`.
#[derive(Debug, Clone)]
pub struct OrbitCurve {
    pub period: f64,
    pub drift: [f64; 2],
    /// Per component (q1, q2, p1, p2): mean and harmonics `(a_k, b_k)` of
    /// `a_k cos 2πkτ + b_k sin 2πkτ`.
    coeffs: [(f64, Vec<(f64, f64)>); 4],
}

impl OrbitCurve {
    pub fn new(orbit: &ClosedOrbit) -> Self {
        let n = orbit.samples.len() - 1;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let comp = |c: usize| -> (f64, Vec<(f64, f64)>) {
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|k| {
                    let (_, s) = &orbit.samples[k];
                    let tau = k as f64 / n as f64;
                    let x = match c {
                        0 => s.q[0] - orbit.drift[0] * tau,
                        1 => s.q[1] - orbit.drift[1] * tau,
                        2 => s.p[0],
                        _ => s.p[1],
                    };
                    Complex::new(x, 0.0)
                })
                .collect();
            fft.process(&mut buf);
            let mean = buf[0].re / n as f64;
            let mut h: Vec<(f64, f64)> = (1..n / 2)
                .map(|k| (2.0 * buf[k].re / n as f64, -2.0 * buf[k].im / n as f64))
                .collect();
            let scale = h.iter().fold(mean.abs(), |a, (x, y)| a.max(x.abs()).max(y.abs()));
            while let Some(&(a, b)) = h.last() {
                if a.abs().max(b.abs()) <= 1e-15 * scale.max(1.0) {
                    h.pop();
                } else {
                    break;
                }
            }
            (mean, h)
        };
        OrbitCurve {
            period: orbit.period,
            drift: orbit.drift,
            coeffs: [comp(0), comp(1), comp(2), comp(3)],
        }
    }

    /// Value and first two τ-derivatives of component `c`.
    fn eval(&self, c: usize, tau: f64) -> [f64; 3] {
        let (mean, h) = &self.coeffs[c];
        let w = 2.0 * PI * tau;
        let (s1, c1) = w.sin_cos();
        let (mut ck, mut sk) = (1.0, 0.0);
        let mut out = [*mean, 0.0, 0.0];
        for (k, (a, b)) in h.iter().enumerate() {
            let nc = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = nc;
            let kk = 2.0 * PI * (k + 1) as f64;
            out[0] += a * ck + b * sk;
            out[1] += kk * (-a * sk + b * ck);
            out[2] -= kk * kk * (a * ck + b * sk);
        }
        if c < 2 {
            out[0] += self.drift[c] * tau;
            out[1] += self.drift[c];
        }
        out
    }

    /// Position and its τ-derivative.
    pub fn position(&self, tau: f64) -> ([f64; 2], [f64; 2]) {
        let a = self.eval(0, tau);
        let b = self.eval(1, tau);
        ([a[0], b[0]], [a[1], b[1]])
    }

    /// Position with first and second τ-derivatives.
    pub fn position_jet(&self, tau: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let a = self.eval(0, tau);
        let b = self.eval(1, tau);
        ([a[0], b[0]], [a[1], b[1]], [a[2], b[2]])
    }

    /// Covector and its τ-derivative.
    pub fn covector(&self, tau: f64) -> ([f64; 2], [f64; 2]) {
        let a = self.eval(2, tau);
        let b = self.eval(3, tau);
        ([a[0], b[0]], [a[1], b[1]])
    }
}

impl ClosedOrbit {
    /// The k-fold traversal.
    pub fn iterate(&self, m: &FinslerMetric, k: usize, opts: &OrbitOptions) -> Result<ClosedOrbit> {
        let mut o = build_orbit(m, self.start, self.period * k as f64, opts)?;
        o.iterate = self.iterate * k;
        o.minimal = false;
        o.iterate_of = Some(self.id);
        o.label = format!("{}^{}", self.label, k);
        Ok(o)
    }

    /// `∫ f λ = ∫₀ᵀ f(q(t)) dt` by the periodic trapezoid rule.
    pub fn line_pair(&self, f: &dyn Fn([f64; 2]) -> f64) -> f64 {
        let n = self.samples.len() - 1;
        let s: f64 = self.samples[..n].iter().map(|(_, st)| f(st.q)).sum();
        s * self.period / n as f64
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|(_, s)| s.q).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalPeriod {
    pub orbit: ClosedOrbit,
    pub k: usize,
    pub ambiguous: bool,
}

/// Reduces an orbit to its minimal period: the smallest `j ∈ 2..=12` whose
/// sub-period closes within `10·tol` wins, recursively.
pub fn minimal_period(m: &FinslerMetric, orbit: &ClosedOrbit, tol: f64, opts: &OrbitOptions) -> Result<MinimalPeriod> {
    let mut k = 1;
    let mut t = orbit.period;
    let y = orbit.start.phase();
    let mut closing = Vec::new();
    'outer: loop {
        for j in 2..=12 {
            let sub = t / j as f64;
            if closure_residual(m, &y, sub, opts.ode)? < 10.0 * tol {
                closing.push(k * j);
                k *= j;
                t = sub;
                continue 'outer;
            }
        }
        break;
    }
    // other divisors of the original period that closed but do not divide k
    let mut ambiguous = false;
    if k > 1 {
        for j in 2..=12 {
            if k % j != 0 && closure_residual(m, &y, orbit.period / j as f64, opts.ode)? < 10.0 * tol {
                ambiguous = true;
            }
        }
    }
    if k == 1 {
        let mut o = orbit.clone();
        o.minimal = true;
        o.iterate = 1;
        return Ok(MinimalPeriod { orbit: o, k, ambiguous });
    }
    let mut o = build_orbit(m, orbit.start, t, opts)?;
    o.label = orbit.label.clone();
    o.id = orbit.id;
    o.minimal_ambiguous = ambiguous;
    Ok(MinimalPeriod { orbit: o, k, ambiguous })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    /// Torus families: primitive classes with `max(|a|,|b|) ≤ max_index`.
    pub max_index: i64,
    /// List each torus class in both orientations (always on for
    /// non-symmetric metrics).
    pub both_orientations: bool,
    /// Torus families: where the orbits start.
    pub base_point: [f64; 2],
    /// Round sphere: inclinations (degrees) of extra great circles through
    /// the equator point `v = 0`.
    pub inclinations_deg: Vec<f64>,
    /// Offsets scanned per class when seeding non-flat tori.
    pub scan: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            max_index: 2,
            both_orientations: false,
            base_point: [0.1, 0.3],
            inclinations_deg: vec![30.0, 60.0],
            scan: 16,
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive lattice directions with `max(|a|,|b|) ≤ k`, one per ± pair
/// unless `both` is set.
pub fn primitive_classes(k: i64, both: bool) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for a in -k..=k {
        for b in -k..=k {
            if (a, b) == (0, 0) || gcd(a, b) != 1 {
                continue;
            }
            let canonical = a > 0 || (a == 0 && b > 0);
            if both || canonical {
                out.push((a, b));
            }
        }
    }
    out.sort_by_key(|&(a, b)| (a.abs().max(b.abs()), a.abs() + b.abs(), -a, -b));
    out
}

/// Built-in catalog of closed orbits. Missing orbits for non-flat tori are
/// not an error (seeding is best effort).
pub fn catalog_family(m: &FinslerMetric, spec: &FamilySpec, opts: &OrbitOptions) -> Result<Vec<ClosedOrbit>> {
    let preset = m
        .preset
        .clone()
        .ok_or_else(|| Error::UnknownFamily(format!("{} has no built-in catalog", m.label)))?;
    let both = spec.both_orientations || !m.symmetric;
    let mut out = Vec::new();
    match preset {
        Preset::FlatTorus { .. } | Preset::RandersTorus { .. } => {
            for (a, b) in primitive_classes(spec.max_index, both) {
                let l = V2::new(a as f64, b as f64);
                let len = m.eval(spec.base_point, l)?;
                let s = UnitCotangentState::from_tangent(m, spec.base_point, [l[0], l[1]])?;
                let mut o = find_closed_orbit(m, &s, len, opts)?;
                o.label = format!("torus({a},{b})");
                out.push(o);
            }
        }
        Preset::RiemannianTorus | Preset::ConformalTorus => {
            for (a, b) in primitive_classes(spec.max_index, both) {
                for mut o in scan_torus_class(m, (a, b), spec, opts)? {
                    o.label = format!("torus({a},{b})#{}", out.iter().filter(|x: &&ClosedOrbit| x.label.starts_with(&format!("torus({a},{b})"))).count());
                    out.push(o);
                }
            }
        }
        Preset::RoundSphere => {
            for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
                let s = UnitCotangentState::new(m, [PI / 2.0, 0.0], [0.0, sign])?;
                let mut o = find_closed_orbit(m, &s, 2.0 * PI, opts)?;
                o.label = format!("equator{tag}");
                out.push(o);
            }
            for &deg in &spec.inclinations_deg {
                let b = deg.to_radians();
                let s = UnitCotangentState::from_tangent(m, [PI / 2.0, 0.0], [b.sin(), b.cos()])?;
                let mut o = find_closed_orbit(m, &s, 2.0 * PI, opts)?;
                o.label = format!("great_circle_{deg}");
                out.push(o);
            }
        }
        Preset::Waist { .. } | Preset::Revolution | Preset::Katok { .. } => {
            for u in revolution_equators(m)? {
                for (sign, tag) in [(1.0, "+"), (-1.0, "-")] {
                    let dir = V2::new(0.0, sign);
                    let t0 = m.eval([u, 0.0], dir)? * 2.0 * PI;
                    let s = UnitCotangentState::from_tangent(m, [u, 0.0], [0.0, sign])?;
                    let mut o = find_closed_orbit(m, &s, t0, opts)?;
                    o.label = match preset {
                        Preset::Waist { .. } => format!("waist{tag}"),
                        _ => format!("equator(u={u:.6}){tag}"),
                    };
                    out.push(o);
                }
            }
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        o.id = i;
    }
    Ok(out)
}

/// Parallels of a surface of revolution at critical points of the profile.
fn revolution_equators(m: &FinslerMetric) -> Result<Vec<f64>> {
    let SurfaceFamily::SurfaceOfRevolution { profile, .. } = &m.atlas.family else {
        return Err(Error::UnknownFamily("not a surface of revolution".into()));
    };
    let c = m.atlas.chart();
    let margin = m.atlas.pole_margin.max(1e-6);
    let (lo, hi) = (c.lo[0] + margin, c.hi[0] - margin);
    let dr = |u: f64| profile.jet([u, 0.0]).d[0];
    let n = 400;
    let mut roots = Vec::new();
    let mut prev = (lo, dr(lo));
    for k in 1..=n {
        let u = lo + (hi - lo) * k as f64 / n as f64;
        let d = dr(u);
        if d == 0.0 {
            roots.push(u);
        } else if prev.1 != 0.0 && prev.1.signum() != d.signum() {
            let (mut a, mut b) = (prev.0, u);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if dr(mid).signum() == dr(a).signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = (u, d);
    }
    Ok(roots)
}

/// Grid scan of parallel translates of the straight line in class `(a,b)`,
/// local minima of the closure residual fed to Newton.
fn scan_torus_class(m: &FinslerMetric, class: (i64, i64), spec: &FamilySpec, opts: &OrbitOptions) -> Result<Vec<ClosedOrbit>> {
    let l = V2::new(class.0 as f64, class.1 as f64);
    let n = V2::new(-l[1], l[0]) / l.norm_squared();
    let k = spec.scan.max(3);
    let mut seeds = Vec::with_capacity(k);
    for i in 0..k {
        let off = i as f64 / k as f64;
        let q = [spec.base_point[0] + off * n[0], spec.base_point[1] + off * n[1]];
        // length of the straight segment as the period guess
        let mut t0 = 0.0;
        for j in 0..64 {
            let s = (j as f64 + 0.5) / 64.0;
            t0 += m.eval([q[0] + s * l[0], q[1] + s * l[1]], l)? / 64.0;
        }
        let st = UnitCotangentState::from_tangent(m, q, [l[0], l[1]])?;
        let r = closure_residual(m, &st.phase(), t0, opts.ode).unwrap_or(f64::INFINITY);
        seeds.push((st, t0, r));
    }
    let mut found: Vec<ClosedOrbit> = Vec::new();
    for i in 0..k {
        let (prev, next) = (seeds[(i + k - 1) % k].2, seeds[(i + 1) % k].2);
        if !(seeds[i].2 <= prev && seeds[i].2 <= next) {
            continue;
        }
        let Ok(o) = find_closed_orbit(m, &seeds[i].0, seeds[i].1, opts) else {
            continue;
        };
        if o.drift != [l[0], l[1]] {
            continue;
        }
        let dup = found.iter().any(|f| {
            (f.period - o.period).abs() < 1e-7
                && f.samples.iter().any(|(_, s)| {
                    let d = m.atlas.displacement(s.q, o.start.q);
                    d[0].hypot(d[1]) < 1e-5
                })
        });
        if !dup {
            found.push(o);
        }
    }
    Ok(found)
}

/// Finite positive combination of cataloged orbits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReebCurrent {
    pub terms: Vec<(usize, f64)>,
}

impl ReebCurrent {
    pub fn new(terms: Vec<(usize, f64)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyCurrent);
        }
        if let Some((_, w)) = terms.iter().find(|(_, w)| !(*w > 0.0)) {
            return Err(Error::Validation {
                position: None,
                message: format!("current weights must be positive, got {w}"),
            });
        }
        Ok(ReebCurrent { terms })
    }

    pub fn equal_weights(ids: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(ids.into_iter().map(|i| (i, 1.0)).collect())
    }
}

fn lookup(catalog: &[ClosedOrbit], id: usize) -> Result<&ClosedOrbit> {
    catalog.iter().find(|o| o.id == id).ok_or(Error::UnknownOrbit(id))
}

/// `C(fλ) = Σ aᵢ ∫_{γᵢ} f λ`.
pub fn current_pair(catalog: &[ClosedOrbit], current: &ReebCurrent, f: &dyn Fn([f64; 2]) -> f64) -> Result<f64> {
    let mut s = 0.0;
    for &(id, w) in &current.terms {
        s += w * lookup(catalog, id)?.line_pair(f);
    }
    Ok(s)
}

/// `C(λ) = Σ aᵢ Tᵢ`.
pub fn current_action(catalog: &[ClosedOrbit], current: &ReebCurrent) -> Result<f64> {
    let mut s = 0.0;
    for &(id, w) in &current.terms {
        s += w * lookup(catalog, id)?.period;
    }
    Ok(s)
}

/// 2×2 block helper used by the Poincaré module.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    #[test]
    fn torus_rational_slope() {
        let m = FinslerMetric::euclidean_torus();
        let s = UnitCotangentState::new(&m, [0.1, 0.3], [0.6, 0.8]).unwrap();
        let o = find_closed_orbit(&m, &s, 5.0, &OrbitOptions::default()).unwrap();
        assert!((o.period - 5.0).abs() < 1e-8);
        assert!((o.length - 5.0).abs() < 1e-9);
        assert!(o.residual < 1e-8 && o.residual_halved < 1e-8);
        assert_eq!(o.drift, [3.0, 4.0]);
        // a perturbed guess converges as well
        let s = UnitCotangentState::new(&m, [0.1, 0.3], [0.61, 0.79]).unwrap();
        let o = find_closed_orbit(&m, &s, 4.9, &OrbitOptions::default()).unwrap();
        assert!((o.period - 5.0).abs() < 1e-8);
    }

    #[test]
    fn sphere_near_great_circle() {
        let m = FinslerMetric::round_sphere(1e-3);
        let s = UnitCotangentState::from_tangent(&m, [1.5, 0.2], [0.1, 1.0]).unwrap();
        let o = find_closed_orbit(&m, &s, 6.0, &OrbitOptions::default()).unwrap();
        assert!((o.period - 2.0 * PI).abs() < 1e-8);
        assert!((o.length - o.period).abs() < 1e-7);
    }

    #[test]
    fn katok_equators() {
        let rho = 1.0 / 2f64.sqrt() - 0.2;
        let m = FinslerMetric::katok(rho, 1e-3).unwrap();
        let cat = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default()).unwrap();
        assert_eq!(cat.len(), 2);
        let mut periods: Vec<f64> = cat.iter().map(|o| o.period).collect();
        periods.sort_by(f64::total_cmp);
        assert!((periods[0] - 2.0 * PI / (1.0 + rho)).abs() < 1e-5);
        assert!((periods[1] - 2.0 * PI / (1.0 - rho)).abs() < 1e-5);
        for o in &cat {
            assert!((o.period - o.length).abs() < 1e-7);
        }
    }

    #[test]
    fn minimal_period_examples() {
        let opts = OrbitOptions::default();
        let m = FinslerMetric::euclidean_torus();
        let s = UnitCotangentState::new(&m, [0.1, 0.3], [1.0, 0.0]).unwrap();
        let twice = build_orbit(&m, s, 2.0, &opts).unwrap();
        let r = minimal_period(&m, &twice, 1e-8, &opts).unwrap();
        assert_eq!(r.k, 2);
        assert!((r.orbit.period - 1.0).abs() < 1e-12);

        let sp = FinslerMetric::round_sphere(1e-3);
        let s = UnitCotangentState::new(&sp, [PI / 2.0, 0.0], [0.0, 1.0]).unwrap();
        let twice = build_orbit(&sp, s, 4.0 * PI, &opts).unwrap();
        let r = minimal_period(&sp, &twice, 1e-8, &opts).unwrap();
        assert_eq!(r.k, 2);
        assert!((r.orbit.period - 2.0 * PI).abs() < 1e-12);

        let k = FinslerMetric::katok(0.3, 1e-3).unwrap();
        let cat = catalog_family(&k, &FamilySpec::default(), &opts).unwrap();
        let r = minimal_period(&k, &cat[0], 1e-8, &opts).unwrap();
        assert_eq!(r.k, 1);
    }

    #[test]
    fn flat_torus_catalog() {
        let m = FinslerMetric::euclidean_torus();
        let cat = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default()).unwrap();
        assert_eq!(cat.len(), 8);
        let mut lens: Vec<f64> = cat.iter().map(|o| o.period).collect();
        lens.sort_by(f64::total_cmp);
        let mut want = [1.0, 1.0, 2f64.sqrt(), 2f64.sqrt(), 5f64.sqrt(), 5f64.sqrt(), 5f64.sqrt(), 5f64.sqrt()];
        want.sort_by(f64::total_cmp);
        for (a, b) in lens.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
        let spec = FamilySpec {
            both_orientations: true,
            ..Default::default()
        };
        assert_eq!(catalog_family(&m, &spec, &OrbitOptions::default()).unwrap().len(), 16);
    }

    #[test]
    fn waist_catalog() {
        let m = FinslerMetric::waist(1.5);
        let cat = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default()).unwrap();
        assert!(!cat.is_empty());
        for o in &cat {
            assert!((o.period - 2.0 * PI).abs() < 1e-8);
        }
    }

    #[test]
    fn conformal_torus_scan_finds_orbits() {
        let m = FinslerMetric::conformal_torus(Expr::parse("0.1*cos(2*pi*q1)").unwrap());
        let spec = FamilySpec {
            max_index: 1,
            ..Default::default()
        };
        let cat = catalog_family(&m, &spec, &OrbitOptions::default()).unwrap();
        assert!(!cat.is_empty());
        for o in &cat {
            assert!((o.period - o.length).abs() < 1e-7, "{} {}", o.period, o.length);
        }
        // lines q1 = 0 and q1 = 1/2 in direction (0,1) have lengths e^{±0.1}
        let vertical: Vec<f64> = cat.iter().filter(|o| o.drift == [0.0, 1.0]).map(|o| o.period).collect();
        assert!(vertical.iter().any(|t| (t - (-0.1f64).exp()).abs() < 1e-8), "{vertical:?}");
    }

    #[test]
    fn currents() {
        let m = FinslerMetric::euclidean_torus();
        let opts = OrbitOptions::default();
        let s0 = UnitCotangentState::new(&m, [0.3, 0.0], [0.0, 1.0]).unwrap();
        let mut a = build_orbit(&m, s0, 1.0, &opts).unwrap();
        a.id = 0;
        let s1 = UnitCotangentState::new(&m, [0.0, 0.2], [0.6, 0.8]).unwrap();
        let mut b = build_orbit(&m, s1, 5.0, &opts).unwrap();
        b.id = 1;
        let cat = vec![a, b];
        let one = |_: [f64; 2]| 1.0;
        let c = ReebCurrent::new(vec![(0, 2.0)]).unwrap();
        assert!((current_pair(&cat, &c, &one).unwrap() - 2.0).abs() < 1e-12);
        let c = ReebCurrent::equal_weights([0, 1]).unwrap();
        assert!((current_pair(&cat, &c, &one).unwrap() - 6.0).abs() < 1e-12);
        let f = |q: [f64; 2]| (2.0 * PI * q[0]).cos();
        let c = ReebCurrent::new(vec![(0, 1.0)]).unwrap();
        assert!((current_pair(&cat, &c, &f).unwrap() - (2.0 * PI * 0.3).cos()).abs() < 1e-12);
        assert!(matches!(current_pair(&cat, &ReebCurrent::new(vec![(7, 1.0)]).unwrap(), &one), Err(Error::UnknownOrbit(7))));
        assert!(matches!(ReebCurrent::new(vec![]), Err(Error::EmptyCurrent)));
    }
}
