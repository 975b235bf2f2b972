//! Metric perturbations `F_s*² = F*² + s(Ãp, p)` with `Ã` supported in a
//! tube around a closed geodesic, written in the covector basis `{V, P}`
//! of the tube's curve family, and a search that uses them to make a
//! finite set of closed orbits nondegenerate.

use crate::error::{Error, Result};
use crate::flow::{self, UnitCotangentState};
use crate::local_model::{bump, smoothstep, J};
use crate::metric::{ChartBump, FinslerMetric, M2, V2};
use crate::orbit::{self, ClosedOrbit, OrbitCurve, OrbitOptions};
use crate::poincare::{self, dlambda, frame_at, NormalFormClass};
use serde::{Deserialize, Serialize};
use std::ops::Deref;
use std::sync::Arc;

/// Peak values of the three coefficient bumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BumpProfile {
    /// `Ã = [[a₁, a₂t₁], [a₂t₁, a₃t₁²]]`, vanishing to second order on
    /// the orbit so the orbit survives.
    A([f64; 3]),
    /// `Ã = [[b₁, −b₃], [−b₃, 2b₂t₁]]`, which moves the orbit.
    B([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub orbit: usize,
    /// Window centre and half-width in normalised orbit time.
    pub t0: f64,
    pub eps: f64,
    /// Tube half-width in the normal offset `t₁`.
    pub radius: f64,
    pub profile: BumpProfile,
}

impl PerturbationSpec {
    pub fn a_profile(orbit: usize, a: [f64; 3]) -> Self {
        PerturbationSpec {
            orbit,
            t0: 0.5,
            eps: 0.1,
            radius: 0.1,
            profile: BumpProfile::A(a),
        }
    }

    pub fn b_profile(orbit: usize, b: [f64; 3]) -> Self {
        PerturbationSpec {
            profile: BumpProfile::B(b),
            ..Self::a_profile(orbit, [0.0; 3])
        }
    }

    pub fn in_window(&self, tau: f64) -> bool {
        (tau - self.t0).abs() <= self.eps
    }

    fn coefficients(&self, tau: f64) -> [f64; 3] {
        let w = bump((tau - self.t0) / self.eps);
        match self.profile {
            BumpProfile::A(c) | BumpProfile::B(c) => c.map(|x| x * w),
        }
    }

    /// `Ã(t₁, τ)` in the `{V, P}` basis, including the normal cutoff.
    pub fn a_tilde(&self, t1: f64, tau: f64) -> M2 {
        let chi = smoothstep((self.radius - t1.abs()) / (0.5 * self.radius));
        if chi == 0.0 || !self.in_window(tau) {
            return M2::zeros();
        }
        let [c1, c2, c3] = self.coefficients(tau);
        let m = match self.profile {
            BumpProfile::A(_) => M2::new(c1, c2 * t1, c2 * t1, c3 * t1 * t1),
            BumpProfile::B(_) => M2::new(c1, -c3, -c3, 2.0 * c2 * t1),
        };
        m * chi
    }
}

/// Gradient and Hessian of `h = −½(Ãp, p)` on the orbit at normalised
/// time `tau`, in the frame `{V̄, W̄}`: `V̄` moves `p` along `V`, `W̄` moves
/// along the curve family with `p = P`.
pub fn h_derivatives(spec: &PerturbationSpec, tau: f64) -> Result<(V2, M2)> {
    if !spec.in_window(tau) {
        return Err(Error::OutsideWindow(tau));
    }
    let [c1, c2, c3] = spec.coefficients(tau);
    Ok(match spec.profile {
        BumpProfile::A(_) => (V2::zeros(), M2::new(-c1, -c2, -c2, -c3)),
        BumpProfile::B(_) => (V2::new(c3, -c2), M2::new(-c1, 0.0, 0.0, 0.0)),
    })
}

/// Coordinates `q(t₁, τ) = σ(τ) + t₁N(τ)` around a window of a closed
/// orbit, with `N = (−p₂, p₁)` the chart part of the frame vector `W`.
#[derive(Debug, Clone)]
pub struct Tube {
    base: FinslerMetric,
    curve: OrbitCurve,
    pub period: f64,
    pub t0: f64,
    pub eps: f64,
    pub radius: f64,
    centre: [f64; 2],
    reach: f64,
    guide: Vec<(f64, [f64; 2])>,
}

pub fn build_tube(m: &FinslerMetric, orbit: &ClosedOrbit, t0: f64, eps: f64, radius: f64) -> Result<Tube> {
    if !(eps > 0.0 && radius > 0.0 && t0 - eps > 0.0 && t0 + eps < 1.0) {
        return Err(Error::WindowOutsideRegularSet(format!(
            "window [{}, {}] with radius {radius} must lie inside (0, 1)",
            t0 - eps,
            t0 + eps
        )));
    }
    let curve = OrbitCurve::new(orbit);
    let mut tube = Tube {
        base: m.clone(),
        curve,
        period: orbit.period,
        t0,
        eps,
        radius,
        centre: [0.0; 2],
        reach: 0.0,
        guide: Vec::new(),
    };
    let n = 64;
    let (lo, hi) = (t0 - 1.1 * eps, t0 + 1.1 * eps);
    tube.guide = (0..=n)
        .map(|i| {
            let tau = lo + (hi - lo) * i as f64 / n as f64;
            (tau, tube.curve.position(tau).0)
        })
        .collect();
    tube.centre = tube.curve.position(t0).0;
    for &(tau, _) in &tube.guide {
        for t1 in [-radius, radius] {
            let q = tube.point(t1, tau);
            m.atlas
                .check(q)
                .map_err(|e| Error::WindowOutsideRegularSet(format!("tube leaves the chart: {e}")))?;
            let d = m.atlas.displacement(tube.centre, q);
            tube.reach = tube.reach.max(d[0].hypot(d[1]));
            // a normal segment longer than half a period meets its own translate
            let s = tube.point(0.0, tau);
            let w = m.atlas.displacement(s, q);
            if (w[0] - (q[0] - s[0])).abs() + (w[1] - (q[1] - s[1])).abs() > 1e-9 {
                return Err(Error::SelfIntersection);
            }
        }
    }
    tube.reach *= 1.05;
    // pairwise sample distances against the rest of the geodesic
    let pts = orbit.positions();
    let k = pts.len() - 1;
    let mut arc = vec![0.0; k + 1];
    for i in 0..k {
        let d = m.atlas.displacement(pts[i], pts[i + 1]);
        arc[i + 1] = arc[i] + d[0].hypot(d[1]);
    }
    let total = arc[k];
    for i in 0..k {
        if !tube.in_guide(i as f64 / k as f64) {
            continue;
        }
        for j in 0..k {
            let sep = (arc[i] - arc[j]).abs();
            if sep.min(total - sep) <= 3.0 * radius {
                continue;
            }
            let d = m.atlas.displacement(pts[i], pts[j]);
            if d[0].hypot(d[1]) < 2.0 * radius {
                return Err(Error::SelfIntersection);
            }
        }
    }
    Ok(tube)
}

impl Tube {
    fn in_guide(&self, tau: f64) -> bool {
        (tau - self.t0).abs() <= 1.1 * self.eps
    }

    pub fn normal(&self, tau: f64) -> ([f64; 2], [f64; 2]) {
        let (p, dp) = self.curve.covector(tau);
        ([-p[1], p[0]], [-dp[1], dp[0]])
    }

    pub fn point(&self, t1: f64, tau: f64) -> [f64; 2] {
        let (s, _) = self.curve.position(tau);
        let (n, _) = self.normal(tau);
        [s[0] + t1 * n[0], s[1] + t1 * n[1]]
    }

    /// `∂q/∂τ` of the curve `σ_{t₁}`.
    fn velocity(&self, t1: f64, tau: f64) -> V2 {
        let (_, ds) = self.curve.position(tau);
        let (_, dn) = self.normal(tau);
        V2::new(ds[0] + t1 * dn[0], ds[1] + t1 * dn[1])
    }

    /// `(t₁, τ)` of a chart point, if it lies over the window within the
    /// tube radius.
    pub fn coords(&self, q: [f64; 2]) -> Option<(f64, f64)> {
        let d = self.base.atlas.displacement(self.centre, q);
        if d[0].hypot(d[1]) > self.reach {
            return None;
        }
        let dist = |a: [f64; 2]| {
            let d = self.base.atlas.displacement(q, a);
            d[0] * d[0] + d[1] * d[1]
        };
        let (mut tau, _) = self
            .guide
            .iter()
            .map(|&(t, s)| (t, dist(s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let mut t1 = 0.0;
        for _ in 0..30 {
            let r = self.base.atlas.displacement(q, self.point(t1, tau));
            let (n, _) = self.normal(tau);
            let v = self.velocity(t1, tau);
            let jac = M2::new(n[0], v[0], n[1], v[1]);
            let step = jac.try_inverse()? * V2::new(r[0], r[1]);
            t1 -= step[0];
            tau -= step[1];
            if step.norm() < 1e-15 * (1.0 + t1.abs() + tau.abs()) {
                break;
            }
        }
        (t1.abs() < self.radius && (tau - self.t0).abs() <= self.eps).then_some((t1, tau))
    }

    /// Covector basis `(V, P)` at `(t₁, τ)`: `P` is the Legendre image of
    /// the unit tangent of `σ_{t₁}`, `V` the rotated unit tangent.
    pub fn frame(&self, t1: f64, tau: f64) -> Result<(V2, V2)> {
        let q = self.point(t1, tau);
        let v = self.velocity(t1, tau);
        let jet = self.base.primal_jet(q, v)?;
        let u = v / jet.value;
        Ok((V2::new(-u[1], u[0]), jet.grad))
    }

    /// Chart matrix of `p ↦ (Ãp, p)` for a given `Ã` field.
    pub fn chart_form(&self, spec: &PerturbationSpec, q: [f64; 2]) -> Option<M2> {
        let (t1, tau) = self.coords(q)?;
        let a = spec.a_tilde(t1, tau);
        let (v, p) = self.frame(t1, tau).ok()?;
        let b_inv = M2::new(v[0], p[0], v[1], p[1]).try_inverse()?;
        Some(b_inv.transpose() * a * b_inv)
    }
}

#[derive(Debug, Clone)]
pub struct TubeBump {
    pub tube: Tube,
    pub spec: PerturbationSpec,
}

impl ChartBump for TubeBump {
    fn quad_form(&self, q: [f64; 2]) -> Option<M2> {
        self.tube.chart_form(&self.spec, q)
    }

    fn may_contain(&self, q: [f64; 2]) -> bool {
        let d = self.tube.base.atlas.displacement(self.tube.centre, q);
        d[0].hypot(d[1]) <= self.tube.reach
    }
}

/// Chart-constant `Ã` over the whole surface.
#[derive(Debug, Clone)]
pub struct UniformBump(pub M2);

impl ChartBump for UniformBump {
    fn quad_form(&self, _q: [f64; 2]) -> Option<M2> {
        Some(self.0)
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedMetric {
    pub metric: FinslerMetric,
    pub base: FinslerMetric,
    pub bumps: Vec<(TubeBump, f64)>,
}

impl Deref for PerturbedMetric {
    type Target = FinslerMetric;
    fn deref(&self) -> &FinslerMetric {
        &self.metric
    }
}

impl PerturbedMetric {
    /// `f_s = −½ ln(1 + Σ s(Ãp, p))`, so that `e^{f_s} = 1/F_s*(p)` when
    /// `F*(p) = 1`.
    pub fn contact_factor(&self, q: [f64; 2], p: V2) -> f64 {
        let quad: f64 = self
            .bumps
            .iter()
            .filter_map(|(b, s)| b.quad_form(q).map(|a| s * p.dot(&(a * p))))
            .sum();
        -0.5 * quad.ln_1p()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.bumps.iter().map(|(_, s)| *s).collect()
    }
}

/// Sampled admissible amplitude range `(s_min, s_max)` keeping the dual
/// fundamental tensor `g* + sÃ_chart` positive definite over the tube:
/// 64 offsets × 64 window times, times 64 covector angles when the base
/// is not quadratic.
pub fn convexity_bound(m: &FinslerMetric, bump: &TubeBump) -> Result<(f64, f64)> {
    let n = 64;
    let tube = &bump.tube;
    let angles = if m.is_quadratic() { 1 } else { n };
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let t1 = tube.radius * (2.0 * (i as f64 + 0.5) / n as f64 - 1.0);
        for j in 0..n {
            let tau = tube.t0 + tube.eps * (2.0 * (j as f64 + 0.5) / n as f64 - 1.0);
            let q = tube.point(t1, tau);
            let Some(a) = bump.quad_form(q) else { continue };
            for k in 0..angles {
                let th = 2.0 * std::f64::consts::PI * k as f64 / angles as f64;
                let g = m.dual_fundamental_tensor(q, V2::new(th.cos(), th.sin()))?;
                let l = g
                    .cholesky()
                    .ok_or_else(|| Error::NotPositiveDefinite(crate::metric::min_eigenvalue(&g)))?
                    .l();
                let li = l.try_inverse().expect("triangular factor of a definite matrix");
                let e = (li * a * li.transpose()).symmetric_eigenvalues();
                let (mu_min, mu_max) = (e.min(), e.max());
                if mu_min < 0.0 {
                    hi = hi.min(-1.0 / mu_min);
                }
                if mu_max > 0.0 {
                    lo = lo.max(-1.0 / mu_max);
                }
            }
        }
    }
    Ok((lo, hi))
}

/// The metric with one tube bump at amplitude `s`.
pub fn perturbed_metric(m: &FinslerMetric, orbit: &ClosedOrbit, spec: &PerturbationSpec, s: f64) -> Result<PerturbedMetric> {
    let tube = build_tube(m, orbit, spec.t0, spec.eps, spec.radius)?;
    combine(m, vec![(TubeBump { tube, spec: *spec }, s)])
}

/// Several bumps at once, each checked against its convexity bound.
pub fn combine(m: &FinslerMetric, bumps: Vec<(TubeBump, f64)>) -> Result<PerturbedMetric> {
    for (b, s) in &bumps {
        let (lo, hi) = convexity_bound(m, b)?;
        if *s <= lo || *s >= hi {
            return Err(Error::ConvexityLost(if *s > 0.0 { hi } else { lo }));
        }
    }
    let dynamic: Vec<(Arc<dyn ChartBump>, f64)> = bumps
        .iter()
        .filter(|(_, s)| *s != 0.0)
        .map(|(b, s)| (Arc::new(b.clone()) as Arc<dyn ChartBump>, *s))
        .collect();
    let metric = if dynamic.is_empty() { m.clone() } else { m.with_bumps(dynamic) };
    Ok(PerturbedMetric {
        metric,
        base: m.clone(),
        bumps,
    })
}

/// Largest deviation of the perturbed Reeb field from the original one
/// along the orbit samples, scaled by the period, or the orbit's own
/// closing residual if that is larger.
pub fn check_orbit_preserved(pm: &FinslerMetric, base: &FinslerMetric, orbit: &ClosedOrbit) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (_, s) in &orbit.samples {
        let y = s.phase();
        let a = flow::reeb_field(pm, &y)?;
        let b = flow::reeb_field(base, &y)?;
        let d = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(d);
    }
    Ok((worst * orbit.period).max(orbit.residual))
}

/// First-order change of the return map, `dM/ds` at `s = 0`, from the
/// Hessian of `h` along the orbit transported by the unperturbed
/// linearised flow.
pub fn predicted_derivative(m: &FinslerMetric, orbit: &ClosedOrbit, bump: &TubeBump, opts: &OrbitOptions) -> Result<M2> {
    let spec = &bump.spec;
    let tube = &bump.tube;
    let n = 200;
    let t = orbit.period;
    let mut times: Vec<f64> = (0..=n)
        .map(|i| t * (spec.t0 - spec.eps + 2.0 * spec.eps * i as f64 / n as f64))
        .collect();
    times.push(t);
    let sol = orbit::variational_samples(m, orbit.start.phase(), &times, opts.ode)?;
    let f0 = frame_at(m, &orbit.start)?;
    let reduced = |mono: &orbit::M4, s: &UnitCotangentState| -> Result<(M2, poincare::SymplecticFrame)> {
        let ft = frame_at(m, s)?;
        let zv = mono * f0.v;
        let zw = mono * f0.w;
        Ok((
            M2::new(dlambda(&zv, &ft.w), dlambda(&zw, &ft.w), dlambda(&ft.v, &zv), dlambda(&ft.v, &zw)),
            ft,
        ))
    };
    let hstep = 1e-6;
    let mut vals = Vec::with_capacity(n + 1);
    for (i, (y, mono)) in sol[..=n].iter().enumerate() {
        let tau = times[i] / t;
        let state = UnitCotangentState::new(m, [y[0], y[1]], [y[2], y[3]])?;
        let (yt, ft) = reduced(mono, &state)?;
        let (_, hbar) = h_derivatives(spec, tau.clamp(spec.t0 - spec.eps, spec.t0 + spec.eps))?;
        // W̄ = W + aV: compare the t₁-derivative of P with W's p-part
        let (_, pp) = tube.frame(hstep, tau)?;
        let (_, pm) = tube.frame(-hstep, tau)?;
        let dp = (pp - pm) / (2.0 * hstep);
        let vp = V2::new(ft.v[2], ft.v[3]);
        let a = (dp - V2::new(ft.w[2], ft.w[3])).dot(&vp) / vp.norm_squared();
        let c = M2::new(1.0, -a, 0.0, 1.0);
        let h = c.transpose() * hbar * c;
        let yi = yt.try_inverse().ok_or(Error::FramePairingSingular)?;
        vals.push(yi * (-J * h) * yt);
    }
    let dt = times[1] - times[0];
    let mut integral = M2::zeros();
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += v * (w * dt / 3.0);
    }
    let (_, end) = &sol[n + 1];
    let end_state = orbit.start;
    let (mt, _) = reduced(end, &end_state)?;
    Ok(mt * integral)
}

/// Central difference of the computed return map in the amplitude.
pub fn derivative_fd(m: &FinslerMetric, orbit: &ClosedOrbit, bump: &TubeBump, ds: f64, opts: &OrbitOptions) -> Result<M2> {
    let at = |s: f64| -> Result<M2> {
        let pm = combine(m, vec![(bump.clone(), s)])?;
        Ok(poincare::poincare_map(&pm, orbit, opts, 1e-6)?.m)
    };
    Ok((at(ds)? - at(-ds)?) / (2.0 * ds))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegenerateReport {
    pub orbit: usize,
    pub label: String,
    pub coefficients: [f64; 3],
    pub amplitude: f64,
    pub window: (f64, f64),
    pub class_before: NormalFormClass,
    pub class_after: NormalFormClass,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct Nondegenerified {
    pub metric: PerturbedMetric,
    pub reports: Vec<NondegenerateReport>,
}

pub const MARGIN: f64 = 1e-4;
const PATTERNS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
const WINDOW_CENTRES: [f64; 7] = [0.5, 0.25, 0.75, 0.375, 0.625, 0.125, 0.875];

fn margin_of(c: &NormalFormClass) -> f64 {
    if c.nondegenerate {
        c.eigenvalue_margin()
    } else {
        0.0
    }
}

/// A tube on `orbit` whose support misses every other listed orbit.
fn clear_tube(m: &FinslerMetric, orbit: &ClosedOrbit, others: &[&ClosedOrbit]) -> Result<Tube> {
    let mut last = Error::WindowOutsideRegularSet("no window candidates".into());
    for t0 in WINDOW_CENTRES {
        match build_tube(m, orbit, t0, 0.1, 0.1) {
            Ok(tube) => {
                let hit = others.iter().any(|o| o.samples.iter().any(|(_, s)| tube.coords(s.q).is_some()));
                if !hit {
                    return Ok(tube);
                }
                last = Error::WindowOutsideRegularSet(format!("window at {t0} meets another orbit"));
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn search_one(
    m: &FinslerMetric,
    orbit: &ClosedOrbit,
    others: &[&ClosedOrbit],
    budget: f64,
    opts: &OrbitOptions,
) -> Result<(Option<TubeBump>, NondegenerateReport)> {
    let before = poincare::poincare_map(m, orbit, opts, 1e-6)?.class;
    let mut report = NondegenerateReport {
        orbit: orbit.id,
        label: orbit.label.clone(),
        coefficients: [0.0; 3],
        amplitude: 0.0,
        window: (0.0, 0.0),
        class_before: before,
        class_after: before,
        margin: margin_of(&before),
    };
    if report.margin >= MARGIN {
        return Ok((None, report));
    }
    let tube = clear_tube(m, orbit, others)?;
    let ladder: Vec<f64> = (0..=12).rev().map(|k| budget / 2f64.powi(k)).collect();
    let mut best: Option<(f64, TubeBump, NormalFormClass)> = None;
    for pattern in PATTERNS {
        let mut spec = PerturbationSpec::a_profile(orbit.id, pattern);
        spec.t0 = tube.t0;
        let bump = TubeBump {
            tube: tube.clone(),
            spec,
        };
        let (_, hi) = convexity_bound(m, &bump)?;
        for &s in &ladder {
            if s >= hi || best.as_ref().is_some_and(|b| s >= b.0) {
                break;
            }
            let pm = combine(m, vec![(bump.clone(), s)])?;
            let class = poincare::poincare_map(&pm, orbit, opts, 1e-6)?.class;
            if margin_of(&class) >= MARGIN {
                best = Some((s, bump.clone(), class));
                break;
            }
        }
    }
    let Some((s, bump, class)) = best else {
        return Err(Error::BudgetExhausted(format!("orbit {} stays degenerate up to amplitude {budget}", orbit.id)));
    };
    report.coefficients = match bump.spec.profile {
        BumpProfile::A(c) | BumpProfile::B(c) => c,
    };
    report.amplitude = s;
    report.window = (bump.spec.t0, bump.spec.eps);
    report.class_after = class;
    report.margin = margin_of(&class);
    Ok((Some(bump), report))
}

/// Perturbs `m` inside disjoint tubes so every listed orbit becomes
/// nondegenerate, spending at most `budget` amplitude per orbit.
pub fn nondegenerify(m: &FinslerMetric, orbits: &[ClosedOrbit], budget: f64, opts: &OrbitOptions) -> Result<Nondegenerified> {
    let work = |i: usize| {
        let others: Vec<&ClosedOrbit> = orbits.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o).collect();
        search_one(m, &orbits[i], &others, budget, opts)
    };
    #[cfg(feature = "parallel")]
    let found: Vec<_> = {
        use rayon::prelude::*;
        (0..orbits.len()).into_par_iter().map(work).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let found: Vec<_> = (0..orbits.len()).map(work).collect::<Result<_>>()?;
    let mut bumps = Vec::new();
    let mut reports = Vec::new();
    for (b, r) in found {
        if let Some(b) = b {
            bumps.push((b, r.amplitude));
        }
        reports.push(r);
    }
    let metric = combine(m, bumps)?;
    if metric.bumps.len() > 1 {
        // supports are disjoint from other orbits, so classes carry over;
        // recheck after merging anyway
        for (o, r) in orbits.iter().zip(reports.iter_mut()) {
            let class = poincare::poincare_map(&metric, o, opts, 1e-6)?.class;
            r.class_after = class;
            r.margin = margin_of(&class);
            if r.margin < MARGIN {
                return Err(Error::BudgetExhausted(format!("orbit {} lost its margin after merging", o.id)));
            }
        }
    }
    Ok(Nondegenerified { metric, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{catalog_family, FamilySpec};
    use crate::poincare::NormalForm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sphere_equator() -> (FinslerMetric, ClosedOrbit) {
        let m = FinslerMetric::round_sphere(1e-3);
        let o = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default()).unwrap().remove(0);
        (m, o)
    }

    fn torus_line(dir: (i64, i64)) -> (FinslerMetric, ClosedOrbit) {
        let m = FinslerMetric::euclidean_torus();
        let o = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default())
            .unwrap()
            .into_iter()
            .find(|o| o.drift == [dir.0 as f64, dir.1 as f64])
            .unwrap();
        (m, o)
    }

    #[test]
    fn tube_coordinates() {
        let (m, o) = torus_line((0, 1));
        let c = o.start.q[0];
        let tube = build_tube(&m, &o, 0.5, 0.1, 0.1).unwrap();
        let (t1, tau) = tube.coords([c + 0.03, o.start.q[1] + 0.52]).unwrap();
        assert!((t1 + 0.03).abs() < 1e-13 && (tau - 0.52).abs() < 1e-13, "{t1} {tau}");
        assert!(tube.coords([c + 0.15, o.start.q[1] + 0.5]).is_none());
        assert!(tube.coords([c, o.start.q[1] + 0.2]).is_none());

        let (m, o) = sphere_equator();
        let tube = build_tube(&m, &o, 0.5, 0.1, 0.2).unwrap();
        let (t1, tau) = tube.coords([PI / 2.0 - 0.07, PI + 0.1]).unwrap();
        assert!((t1.abs() - 0.07).abs() < 1e-12 && (tau - (PI + 0.1) / (2.0 * PI)).abs() < 1e-12);

        let k = FinslerMetric::katok(0.3, 1e-3).unwrap();
        let o = catalog_family(&k, &FamilySpec::default(), &OrbitOptions::default()).unwrap().remove(0);
        let tube = build_tube(&k, &o, 0.5, 0.1, 0.1).unwrap();
        for i in 0..=20 {
            let tau = 0.4 + 0.01 * i as f64;
            let (n, _) = tube.normal(tau);
            let v = tube.velocity(0.0, tau);
            let u = tube.point(0.0, tau)[0];
            let h = M2::new(1.0, 0.0, 0.0, u.sin().powi(2));
            assert!((V2::new(n[0], n[1]).dot(&(h * v))).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_windows() {
        let (m, o) = torus_line((1, 0));
        assert!(matches!(build_tube(&m, &o, 0.05, 0.1, 0.1), Err(Error::WindowOutsideRegularSet(_))));
        assert!(matches!(build_tube(&m, &o, 0.5, 0.1, 0.6), Err(Error::SelfIntersection)));
    }

    #[test]
    fn defining_formula_and_trivial_cases() {
        let (m, o) = torus_line((1, 1));
        let spec = PerturbationSpec::a_profile(o.id, [0.8, -0.5, 0.6]);
        let pm = perturbed_metric(&m, &o, &spec, 0.07).unwrap();
        let p0 = perturbed_metric(&m, &o, &spec, 0.0).unwrap();
        let bump = &pm.bumps[0].0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let q = bump.tube.point(0.2 * rng.random::<f64>() - 0.1, 0.4 + 0.2 * rng.random::<f64>());
            let th = 2.0 * PI * rng.random::<f64>();
            let p = V2::new(th.cos(), th.sin()) * (0.5 + rng.random::<f64>());
            let a = bump.quad_form(q).unwrap();
            let want = (m.dual_norm(q, p).unwrap().powi(2) + 0.07 * p.dot(&(a * p))).sqrt();
            assert!((pm.dual_norm(q, p).unwrap() - want).abs() < 1e-12);
            assert_eq!(p0.dual_norm(q, p).unwrap(), m.dual_norm(q, p).unwrap());
            let unit = p / m.dual_norm(q, p).unwrap();
            assert!((pm.contact_factor(q, unit).exp() - 1.0 / pm.dual_norm(q, unit).unwrap()).abs() < 1e-12);
        }
        let far = bump.tube.point(0.0, 0.1);
        assert_eq!(pm.dual_norm(far, V2::new(0.3, 0.4)).unwrap(), 0.5);

        let c = 0.6;
        let e = m.with_bumps(vec![(Arc::new(UniformBump(M2::new(c, 0.0, 0.0, 0.0))), 0.25)]);
        assert!((e.dual_norm([0.3, 0.1], V2::new(1.0, 0.0)).unwrap() - (1.0 + 0.25 * c).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn class_preservation() {
        let (m, o) = sphere_equator();
        let pm = perturbed_metric(&m, &o, &PerturbationSpec::a_profile(0, [0.7, 0.4, -0.3]), 0.1).unwrap();
        let tube = &pm.bumps[0].0.tube;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = tube.point(0.2 * rng.random::<f64>() - 0.1, 0.4 + 0.2 * rng.random::<f64>());
            let th = 2.0 * PI * rng.random::<f64>();
            let v = V2::new(th.cos(), th.sin());
            assert!((pm.eval(q, v).unwrap() - pm.eval(q, -v).unwrap()).abs() < 1e-10);
            let g1 = pm.fundamental_tensor(q, v).unwrap();
            let g2 = pm.fundamental_tensor(q, V2::new(0.3, -0.9)).unwrap();
            assert!((g1 - g2).abs().max() < 1e-10);
        }
    }

    #[test]
    fn h_derivative_formulas() {
        let a = PerturbationSpec::a_profile(0, [1.0, 0.0, 0.0]);
        let (g, h) = h_derivatives(&a, 0.5).unwrap();
        assert_eq!(g, V2::zeros());
        assert_eq!(h, M2::new(-1.0, 0.0, 0.0, 0.0));
        let b = PerturbationSpec::b_profile(0, [0.0, 0.4, 0.7]);
        let (g, _) = h_derivatives(&b, 0.5).unwrap();
        assert_eq!(g, V2::new(0.7, -0.4));
        assert!(matches!(h_derivatives(&b, 0.8), Err(Error::OutsideWindow(_))));

        // finite differences of h through the chart form
        let (m, o) = sphere_equator();
        for spec in [
            PerturbationSpec::a_profile(0, [0.9, -0.6, 0.4]),
            PerturbationSpec::b_profile(0, [0.3, 0.5, -0.8]),
        ] {
            let tube = build_tube(&m, &o, spec.t0, spec.eps, spec.radius).unwrap();
            for tau in [0.45, 0.5, 0.53] {
                let h = |t1: f64, x: f64| {
                    let (v, p) = tube.frame(t1, tau).unwrap();
                    let cov = p + v * x;
                    let a = tube.chart_form(&spec, tube.point(t1, tau)).unwrap();
                    -0.5 * cov.dot(&(a * cov))
                };
                let d = 1e-4;
                let gx = (h(0.0, d) - h(0.0, -d)) / (2.0 * d);
                let gt = (h(d, 0.0) - h(-d, 0.0)) / (2.0 * d);
                let hxx = (h(0.0, d) - 2.0 * h(0.0, 0.0) + h(0.0, -d)) / (d * d);
                let htt = (h(d, 0.0) - 2.0 * h(0.0, 0.0) + h(-d, 0.0)) / (d * d);
                let hxt = (h(d, d) - h(d, -d) - h(-d, d) + h(-d, -d)) / (4.0 * d * d);
                let (g, hh) = h_derivatives(&spec, tau).unwrap();
                assert!((gx - g[0]).abs() < 1e-6 && (gt - g[1]).abs() < 1e-6, "{gx} {gt} {g}");
                let fd = M2::new(hxx, hxt, hxt, htt);
                assert!((fd - hh).abs().max() < 1e-6, "{fd} {hh}");
            }
        }
    }

    #[test]
    fn orbit_preservation() {
        let (m, o) = sphere_equator();
        let a = PerturbationSpec::a_profile(0, [1.0, 0.5, 0.5]);
        let r0 = check_orbit_preserved(&perturbed_metric(&m, &o, &a, 0.0).unwrap(), &m, &o).unwrap();
        assert_eq!(r0, o.residual);
        for s in [0.01, 0.05, 0.1] {
            let pm = perturbed_metric(&m, &o, &a, s).unwrap();
            assert!(check_orbit_preserved(&pm, &m, &o).unwrap() < 1e-8);
        }
        let b = PerturbationSpec::b_profile(0, [0.5, 0.5, 0.5]);
        let pm = perturbed_metric(&m, &o, &b, 0.05).unwrap();
        assert!(check_orbit_preserved(&pm, &m, &o).unwrap() > 1e-4);
    }

    #[test]
    fn convexity_guard() {
        let (m, o) = sphere_equator();
        let spec = PerturbationSpec::a_profile(0, [-20.0, 0.0, 0.0]);
        let tube = build_tube(&m, &o, 0.5, 0.1, 0.1).unwrap();
        let (lo, hi) = convexity_bound(&m, &TubeBump { tube, spec }).unwrap();
        assert!((hi - 0.05).abs() < 1e-3 && lo == f64::NEG_INFINITY, "{lo} {hi}");
        assert!(matches!(perturbed_metric(&m, &o, &spec, 0.06), Err(Error::ConvexityLost(_))));
    }

    #[test]
    fn sphere_equator_prediction() {
        let (m, o) = sphere_equator();
        let opts = OrbitOptions::default();
        let spec = PerturbationSpec::a_profile(0, [1.0, 0.0, 0.0]);
        let bump = TubeBump {
            tube: build_tube(&m, &o, spec.t0, spec.eps, spec.radius).unwrap(),
            spec,
        };
        let pred = predicted_derivative(&m, &o, &bump, &opts).unwrap();
        let fd = derivative_fd(&m, &o, &bump, 1e-3, &opts).unwrap();
        assert!((pred - fd).norm() < 0.05 * fd.norm(), "{pred} {fd}");
        let pm = combine(&m, vec![(bump, 0.02)]).unwrap();
        let class = poincare::poincare_map(&pm, &o, &opts, 1e-6).unwrap().class;
        assert!(class.nondegenerate && matches!(class.form, NormalForm::Elliptic { .. } | NormalForm::Hyperbolic { .. }));
    }

    #[test]
    fn nondegenerify_examples() {
        let opts = OrbitOptions::default();
        let w = FinslerMetric::waist(1.5);
        let o = catalog_family(&w, &FamilySpec::default(), &opts).unwrap().remove(0);
        let r = nondegenerify(&w, std::slice::from_ref(&o), 0.1, &opts).unwrap();
        assert_eq!(r.reports[0].amplitude, 0.0);
        assert!(r.metric.bumps.is_empty());

        let (m, o) = torus_line((1, 0));
        let r = nondegenerify(&m, std::slice::from_ref(&o), 0.1, &opts).unwrap();
        assert!(r.reports[0].amplitude > 0.0 && r.reports[0].amplitude <= 0.1);
        assert!(r.reports[0].margin >= MARGIN);
    }
}
