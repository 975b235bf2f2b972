//! Finsler metrics on chart atlases.
//!
//! A metric is a fiber norm family evaluated pointwise through [`Jet`]s:
//! value, fiber gradient, fiber Hessian and chart gradient. Families are
//! either primal-native (F given, F* by support function), dual-native
//! (F* given, F by support function) or quadratic (both in closed form).

use crate::atlas::{ChartAtlas, SurfaceFamily};
use crate::dual::{Dual2, Scalar};
use crate::error::{Error, Result};
use crate::expr::Expr;
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type V2 = Vector2<f64>;
pub type M2 = Matrix2<f64>;

const ZERO_TOL: f64 = 1e-14;
const PD_TOL: f64 = 1e-10;
const BUMP_FD_STEP: f64 = 1e-6;

pub fn v2(a: [f64; 2]) -> V2 {
    V2::new(a[0], a[1])
}

/// Pointwise data of a 1-homogeneous fiber norm at a vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// Fiber gradient (0-homogeneous).
    pub grad: V2,
    /// Fiber Hessian ((-1)-homogeneous).
    pub hess: M2,
    /// Chart gradient at fixed fiber argument.
    pub dq: V2,
}

impl Jet {
    /// `½ ∂²N²/∂v∂v = N Hess N + ∇N ∇Nᵀ`.
    pub fn fundamental_tensor(&self) -> M2 {
        self.hess * self.value + self.grad * self.grad.transpose()
    }
}

/// Symmetric 2×2 tensor field on the chart.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorField {
    Constant(M2),
    /// Entries g11, g12, g22 as chart expressions.
    Entries([Expr; 3]),
    /// `diag(1, r(q1)^2)` for a surface of revolution.
    Revolution(Expr),
}

impl TensorField {
    fn eval_d(&self, q: [f64; 2]) -> [[Dual2; 2]; 2] {
        let c = Dual2::cst;
        match self {
            TensorField::Constant(g) => [[c(g[(0, 0)]), c(g[(0, 1)])], [c(g[(1, 0)]), c(g[(1, 1)])]],
            TensorField::Entries(e) => {
                let x = Dual2::point(q);
                let (a, b, d) = (e[0].eval(x), e[1].eval(x), e[2].eval(x));
                [[a, b], [b, d]]
            }
            TensorField::Revolution(r) => {
                let x = Dual2::point(q);
                let rr = r.eval(x);
                [[c(1.0), c(0.0)], [c(0.0), rr * rr]]
            }
        }
    }

    pub fn jet(&self, q: [f64; 2]) -> (M2, [M2; 2]) {
        split_tensor(self.eval_d(q))
    }

    fn depends_on(&self, axis: usize) -> bool {
        match self {
            TensorField::Constant(_) => false,
            TensorField::Entries(e) => e.iter().any(|x| x.depends_on(axis)),
            TensorField::Revolution(r) => r.depends_on(axis),
        }
    }
}

fn split_tensor(t: [[Dual2; 2]; 2]) -> (M2, [M2; 2]) {
    let m = |f: &dyn Fn(Dual2) -> f64| M2::new(f(t[0][0]), f(t[0][1]), f(t[1][0]), f(t[1][1]));
    (m(&|x| x.v), [m(&|x| x.d[0]), m(&|x| x.d[1])])
}

/// A 1-form (or vector) field with chart-expression components.
#[derive(Debug, Clone, PartialEq)]
pub enum FormField {
    Constant(V2),
    Entries([Expr; 2]),
}

impl FormField {
    fn eval_d(&self, q: [f64; 2]) -> [Dual2; 2] {
        match self {
            FormField::Constant(b) => [Dual2::cst(b[0]), Dual2::cst(b[1])],
            FormField::Entries(e) => {
                let x = Dual2::point(q);
                [e[0].eval(x), e[1].eval(x)]
            }
        }
    }

    fn depends_on(&self, axis: usize) -> bool {
        match self {
            FormField::Constant(_) => false,
            FormField::Entries(e) => e.iter().any(|x| x.depends_on(axis)),
        }
    }
}

/// Randers data `F(v) = sqrt(vᵀ A v) + b(v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RandersData {
    Explicit { alpha: TensorField, beta: FormField },
    /// Zermelo navigation on a Riemannian `h` with wind vector field `W`:
    /// `A = (λh + W♭W♭ᵀ)/λ²`, `b = −W♭/λ`, `λ = 1 − h(W,W)`.
    Navigation { h: TensorField, wind: FormField },
}

impl RandersData {
    fn eval_d(&self, q: [f64; 2]) -> ([[Dual2; 2]; 2], [Dual2; 2]) {
        match self {
            RandersData::Explicit { alpha, beta } => (alpha.eval_d(q), beta.eval_d(q)),
            RandersData::Navigation { h, wind } => {
                let h = h.eval_d(q);
                let w = wind.eval_d(q);
                let wf = [h[0][0] * w[0] + h[0][1] * w[1], h[1][0] * w[0] + h[1][1] * w[1]];
                let lam = Dual2::cst(1.0) - (wf[0] * w[0] + wf[1] * w[1]);
                let l2 = lam * lam;
                let a = |i: usize, j: usize| (lam * h[i][j] + wf[i] * wf[j]) / l2;
                ([[a(0, 0), a(0, 1)], [a(1, 0), a(1, 1)]], [-wf[0] / lam, -wf[1] / lam])
            }
        }
    }

    /// `(A, ∂A, b, ∂b)` at q.
    pub fn jet(&self, q: [f64; 2]) -> (M2, [M2; 2], V2, [V2; 2]) {
        let (a, b) = self.eval_d(q);
        let (am, ad) = split_tensor(a);
        (
            am,
            ad,
            V2::new(b[0].v, b[1].v),
            [V2::new(b[0].d[0], b[1].d[0]), V2::new(b[0].d[1], b[1].d[1])],
        )
    }

    /// Randers data of the dual norm: the navigation pair `(h⁻¹, W)`,
    /// since `F*(p) = |p|_h* + p(W)`.
    fn dual_eval_d(&self, q: [f64; 2]) -> Result<([[Dual2; 2]; 2], [Dual2; 2])> {
        match self {
            RandersData::Navigation { h, wind } => {
                let h = h.eval_d(q);
                let w = wind.eval_d(q);
                let wf = [h[0][0] * w[0] + h[0][1] * w[1], h[1][0] * w[0] + h[1][1] * w[1]];
                let norm2 = (wf[0] * w[0] + wf[1] * w[1]).v;
                if norm2 >= 1.0 {
                    return Err(Error::InvalidMetric(format!("wind is not subunit: |W|^2 = {norm2}")));
                }
                Ok((inv2(h), w))
            }
            RandersData::Explicit { alpha, beta } => {
                let a = alpha.eval_d(q);
                let b = beta.eval_d(q);
                let ai = inv2(a);
                let aib = [ai[0][0] * b[0] + ai[0][1] * b[1], ai[1][0] * b[0] + ai[1][1] * b[1]];
                let bb = b[0] * aib[0] + b[1] * aib[1];
                if bb.v >= 1.0 {
                    return Err(Error::InvalidMetric(format!("Randers form too large: |b|^2 = {}", bb.v)));
                }
                let eps = Dual2::cst(1.0) - bb;
                let m = |i: usize, j: usize| a[i][j] - b[i] * b[j];
                let mi = inv2([[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]]);
                let hi = |i: usize, j: usize| mi[i][j] / eps;
                Ok(([[hi(0, 0), hi(0, 1)], [hi(1, 0), hi(1, 1)]], [-aib[0] / eps, -aib[1] / eps]))
            }
        }
    }

    /// `(A*, ∂A*, w, ∂w)` of the dual Randers norm at q.
    pub fn dual_jet(&self, q: [f64; 2]) -> Result<(M2, [M2; 2], V2, [V2; 2])> {
        let (a, b) = self.dual_eval_d(q)?;
        let (am, ad) = split_tensor(a);
        Ok((
            am,
            ad,
            V2::new(b[0].v, b[1].v),
            [V2::new(b[0].d[0], b[1].d[0]), V2::new(b[0].d[1], b[1].d[1])],
        ))
    }

    /// Dual norm of `b` with respect to `A`; must stay below 1.
    pub fn beta_norm(&self, q: [f64; 2]) -> f64 {
        let (a, _, b, _) = self.jet(q);
        match a.try_inverse() {
            Some(ai) => (b.transpose() * ai * b)[(0, 0)].max(0.0).sqrt(),
            None => f64::INFINITY,
        }
    }

    fn depends_on(&self, axis: usize) -> bool {
        match self {
            RandersData::Explicit { alpha, beta } => alpha.depends_on(axis) || beta.depends_on(axis),
            RandersData::Navigation { h, wind } => h.depends_on(axis) || wind.depends_on(axis),
        }
    }
}

/// A compactly supported symmetric form `A(q)` added to `F*²`.
pub trait ChartBump: Send + Sync + fmt::Debug {
    /// Chart matrix of `p ↦ (Ã(q)p, p)`, `None` outside the support.
    fn quad_form(&self, q: [f64; 2]) -> Option<M2>;
    /// Whether q can be inside the support (cheap rejection).
    fn may_contain(&self, _q: [f64; 2]) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub enum Norm {
    Riemannian(TensorField),
    Randers(RandersData),
    /// `e^{u(q)} · F_base`.
    Conformal { base: Box<Norm>, exponent: Expr },
    /// `F_s*² = F*² + Σ s_i (Ã_i(q) p, p)`.
    Perturbed {
        base: Box<Norm>,
        bumps: Vec<(Arc<dyn ChartBump>, f64)>,
    },
}

impl Norm {
    fn depends_on(&self, axis: usize) -> bool {
        match self {
            Norm::Riemannian(g) => g.depends_on(axis),
            Norm::Randers(r) => r.depends_on(axis),
            Norm::Conformal { base, exponent } => base.depends_on(axis) || exponent.depends_on(axis),
            Norm::Perturbed { base, bumps } => base.depends_on(axis) || !bumps.is_empty(),
        }
    }

    fn is_quadratic(&self) -> bool {
        match self {
            Norm::Riemannian(_) => true,
            Norm::Randers(_) => false,
            Norm::Conformal { base, .. } | Norm::Perturbed { base, .. } => base.is_quadratic(),
        }
    }

    /// Sum of active bump forms at q together with their chart derivatives.
    fn bump_forms(bumps: &[(Arc<dyn ChartBump>, f64)], q: [f64; 2]) -> Option<(M2, [M2; 2])> {
        let mut total = M2::zeros();
        let mut d = [M2::zeros(); 2];
        let mut any = false;
        for (b, s) in bumps {
            if *s == 0.0 || !b.may_contain(q) {
                continue;
            }
            let at = |x: [f64; 2]| b.quad_form(x).unwrap_or_else(M2::zeros);
            let centre = b.quad_form(q);
            let mut local_d = [M2::zeros(); 2];
            let mut nonzero = centre.is_some();
            for (i, di) in local_d.iter_mut().enumerate() {
                let mut a = q;
                let mut c = q;
                a[i] += BUMP_FD_STEP;
                c[i] -= BUMP_FD_STEP;
                let (fa, fc) = (at(a), at(c));
                if fa != M2::zeros() || fc != M2::zeros() {
                    nonzero = true;
                }
                *di = (fa - fc) / (2.0 * BUMP_FD_STEP);
            }
            if !nonzero {
                continue;
            }
            any = true;
            total += centre.unwrap_or_else(M2::zeros) * *s;
            d[0] += local_d[0] * *s;
            d[1] += local_d[1] * *s;
        }
        any.then_some((total, d))
    }

    /// Closed-form `(G, ∂G)` for quadratic norms.
    pub fn quadratic(&self, q: [f64; 2]) -> Option<(M2, [M2; 2])> {
        match self {
            Norm::Riemannian(g) => Some(g.jet(q)),
            Norm::Randers(_) => None,
            Norm::Conformal { base, exponent } => {
                let (g, dg) = base.quadratic(q)?;
                let u = exponent.jet(q);
                let s = (2.0 * u.v).exp();
                Some((g * s, [(dg[0] + g * 2.0 * u.d[0]) * s, (dg[1] + g * 2.0 * u.d[1]) * s]))
            }
            Norm::Perturbed { base, bumps } => {
                let (g, dg) = base.quadratic(q)?;
                let Some((a, da)) = Self::bump_forms(bumps, q) else {
                    return Some((g, dg));
                };
                let gi = g.try_inverse()?;
                let gs_inv = gi + a;
                let gs = gs_inv.try_inverse()?;
                let d = |i: usize| {
                    let dgi = -gi * dg[i] * gi + da[i];
                    -gs * dgi * gs
                };
                Some((gs, [d(0), d(1)]))
            }
        }
    }

    fn primal_native(&self, q: [f64; 2], v: V2) -> Option<Jet> {
        if let Some((g, dg)) = self.quadratic(q) {
            return Some(quadratic_jet(&g, &dg, v));
        }
        match self {
            Norm::Randers(r) => {
                let (a, da, b, db) = r.jet(q);
                Some(randers_jet(&a, &da, &b, &db, v))
            }
            Norm::Conformal { base, exponent } => {
                let j = base.primal_native(q, v)?;
                Some(conformal_scale(j, exponent.jet(q), 1.0))
            }
            _ => None,
        }
    }

    fn dual_native(&self, q: [f64; 2], p: V2) -> Option<Result<Jet>> {
        if let Some((g, dg)) = self.quadratic(q) {
            let gi = g.try_inverse()?;
            let dgi = [-gi * dg[0] * gi, -gi * dg[1] * gi];
            return Some(Ok(quadratic_jet(&gi, &dgi, p)));
        }
        match self {
            Norm::Randers(r) => Some(r.dual_jet(q).map(|(a, da, b, db)| randers_jet(&a, &da, &b, &db, p))),
            Norm::Conformal { base, exponent } => {
                let u = exponent.jet(q);
                let j = base.dual_native(q, p)?;
                Some(j.map(|j| conformal_scale(j, u, -1.0)))
            }
            Norm::Perturbed { base, bumps } => {
                let base_dual = match base.dual_native(q, p) {
                    Some(r) => r,
                    None => {
                        let bp = |v: V2| {
                            base.primal_native(q, v)
                                .ok_or_else(|| Error::InvalidMetric("perturbation base has no primal form".into()))
                        };
                        support_jet(&bp, p)
                    }
                };
                Some(base_dual.and_then(|b| perturb_dual(b, bumps, q, p)))
            }
            _ => None,
        }
    }
}

fn conformal_scale(j: Jet, u: Dual2, sign: f64) -> Jet {
    let s = (sign * u.v).exp();
    Jet {
        value: j.value * s,
        grad: j.grad * s,
        hess: j.hess * s,
        dq: (j.dq + V2::new(u.d[0], u.d[1]) * (sign * j.value)) * s,
    }
}

fn randers_jet(a: &M2, da: &[M2; 2], b: &V2, db: &[V2; 2], v: V2) -> Jet {
    let av = a * v;
    let alpha = v.dot(&av).max(0.0).sqrt();
    Jet {
        value: alpha + b.dot(&v),
        grad: av / alpha + b,
        hess: (a - av * av.transpose() / (alpha * alpha)) / alpha,
        dq: V2::new(
            v.dot(&(da[0] * v)) / (2.0 * alpha) + db[0].dot(&v),
            v.dot(&(da[1] * v)) / (2.0 * alpha) + db[1].dot(&v),
        ),
    }
}

fn inv2(m: [[Dual2; 2]; 2]) -> [[Dual2; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn quadratic_jet(g: &M2, dg: &[M2; 2], v: V2) -> Jet {
    let gv = g * v;
    let f = v.dot(&gv).max(0.0).sqrt();
    Jet {
        value: f,
        grad: gv / f,
        hess: (g - gv * gv.transpose() / (f * f)) / f,
        dq: V2::new(v.dot(&(dg[0] * v)) / (2.0 * f), v.dot(&(dg[1] * v)) / (2.0 * f)),
    }
}

fn perturb_dual(base: Jet, bumps: &[(Arc<dyn ChartBump>, f64)], q: [f64; 2], p: V2) -> Result<Jet> {
    let Some((a, da)) = Norm::bump_forms(bumps, q) else {
        return Ok(base);
    };
    let e = base.value * base.value + p.dot(&(a * p));
    if e <= 0.0 {
        return Err(Error::ConvexityLost(e));
    }
    let f = e.sqrt();
    let grad = (base.grad * base.value + a * p) / f;
    let half_hess_e = base.fundamental_tensor() + a;
    let hess = (half_hess_e - grad * grad.transpose()) / f;
    let dq = V2::new(
        (base.value * base.dq[0] + 0.5 * p.dot(&(da[0] * p))) / f,
        (base.value * base.dq[1] + 0.5 * p.dot(&(da[1] * p))) / f,
    );
    Ok(Jet {
        value: f,
        grad,
        hess,
        dq,
    })
}

/// Support function of the unit ball of `other`: `max_θ (x·u(θ)) / N(u(θ))`.
///
/// Golden-section bracketing on a coarse angular grid, then Newton on θ.
/// The returned jet is the dual norm at `x` with envelope-theorem
/// derivatives taken at the maximizer.
pub fn support_jet(other: &dyn Fn(V2) -> Result<Jet>, x: V2) -> Result<Jet> {
    let xn = x.norm();
    if xn < ZERO_TOL {
        return Err(Error::ZeroCovector(xn));
    }
    let phi = |t: f64| -> Result<f64> {
        let u = V2::new(t.cos(), t.sin());
        let j = other(u)?;
        if j.value <= 0.0 || !j.value.is_finite() {
            return Err(Error::MaximizerNotFound(format!("fiber norm not positive at angle {t}")));
        }
        Ok(x.dot(&u) / j.value)
    };
    const COARSE: usize = 24;
    let step = 2.0 * PI / COARSE as f64;
    let base = x[1].atan2(x[0]);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..COARSE {
        let t = base + k as f64 * step - PI;
        let val = phi(t)?;
        if val > best.0 {
            best = (val, t);
        }
    }
    // golden section on [t-step, t+step]
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let (mut fc, mut fd) = (phi(c)?, phi(d)?);
    while b - a > 1e-4 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = phi(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = phi(d)?;
        }
    }
    let mut t = 0.5 * (a + b);
    let (lo, hi) = (best.1 - step, best.1 + step);
    let mut converged = false;
    for _ in 0..30 {
        let (c, s) = (t.cos(), t.sin());
        let u = V2::new(c, s);
        let up = V2::new(-s, c);
        let j = other(u)?;
        let (av, ap) = (x.dot(&u), x.dot(&up));
        let n = j.value;
        let np = j.grad.dot(&up);
        let npp = up.dot(&(j.hess * up)) - n;
        let num = ap * n - av * np;
        let d1 = num / (n * n);
        let d2 = (-av * n - av * npp) / (n * n) - 2.0 * np * num / (n * n * n);
        if d2 >= 0.0 {
            return Err(Error::MaximizerNotFound(format!(
                "objective not concave at the bracketed maximum (second derivative {d2:e})"
            )));
        }
        let dt = -d1 / d2;
        t += dt;
        if !(lo - step..=hi + step).contains(&t) {
            return Err(Error::NoConvergence("Newton left the bracket".into()));
        }
        if dt.abs() < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("angular Newton did not reach 1e-12".into()));
    }
    let u = V2::new(t.cos(), t.sin());
    let j = other(u)?;
    let vstar = u / j.value;
    let value = x.dot(&vstar);
    let g_other = j.fundamental_tensor();
    let g_this = g_other
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite(0.0))?;
    Ok(Jet {
        value,
        grad: vstar,
        hess: (g_this - vstar * vstar.transpose()) / value,
        dq: -j.dq * (value / j.value),
    })
}

/// Built-in metric families. Carried by a metric so that orbit catalogs
/// and reports know what surface they are looking at.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    FlatTorus { g: M2 },
    RiemannianTorus,
    ConformalTorus,
    RandersTorus { b: V2 },
    RoundSphere,
    Waist { u_max: f64 },
    Revolution,
    Katok { rho: f64 },
}

#[derive(Debug, Clone)]
pub struct FinslerMetric {
    pub atlas: ChartAtlas,
    pub norm: Norm,
    pub symmetric: bool,
    pub preset: Option<Preset>,
    pub label: String,
}

/// How the Euclidean area of the dual unit disk is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberAreaMethod {
    /// `π sqrt(det G)` for quadratic norms, polar formula otherwise.
    Exact,
    /// Jittered stratified sampling of the membership test `F*(p) ≤ 1`.
    MonteCarlo { per_axis: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub nodes: usize,
    pub tol: f64,
    pub angular_nodes: usize,
    pub fiber: FiberAreaMethod,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            nodes: 256,
            tol: 1e-9,
            angular_nodes: 256,
            fiber: FiberAreaMethod::Exact,
        }
    }
}

impl FinslerMetric {
    pub fn euclidean_torus() -> Self {
        Self::flat_torus(M2::identity())
    }

    pub fn flat_torus(g: M2) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::unit_torus(),
            norm: Norm::Riemannian(TensorField::Constant(g)),
            symmetric: true,
            preset: Some(Preset::FlatTorus { g }),
            label: "flat_torus".into(),
        }
    }

    pub fn riemannian_torus(entries: [Expr; 3]) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::unit_torus(),
            norm: Norm::Riemannian(TensorField::Entries(entries)),
            symmetric: true,
            preset: Some(Preset::RiemannianTorus),
            label: "riemannian_torus".into(),
        }
    }

    /// `e^{u(q)}` times the Euclidean norm on the unit torus.
    pub fn conformal_torus(exponent: Expr) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::conformal_torus(exponent.clone()),
            norm: Norm::Conformal {
                base: Box::new(Norm::Riemannian(TensorField::Constant(M2::identity()))),
                exponent,
            },
            symmetric: true,
            preset: Some(Preset::ConformalTorus),
            label: "conformal_torus".into(),
        }
    }

    /// `|v| + b·v` on the unit torus with constant `b`.
    pub fn randers_torus(b: V2) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::unit_torus(),
            norm: Norm::Randers(RandersData::Explicit {
                alpha: TensorField::Constant(M2::identity()),
                beta: FormField::Constant(b),
            }),
            symmetric: false,
            preset: Some(Preset::RandersTorus { b }),
            label: "randers_torus".into(),
        }
    }

    pub fn round_sphere(pole_margin: f64) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::round_sphere(pole_margin),
            norm: Norm::Riemannian(TensorField::Revolution(Expr::parse("sin(u)").unwrap())),
            symmetric: true,
            preset: Some(Preset::RoundSphere),
            label: "round_sphere".into(),
        }
    }

    /// `du² + cosh²u dv²` on `|u| < u_max`; the waist `u = 0` is a
    /// hyperbolic closed geodesic of length 2π.
    pub fn waist(u_max: f64) -> Self {
        let profile = Expr::parse("cosh(u)").unwrap();
        FinslerMetric {
            atlas: ChartAtlas::revolution(profile.clone(), [-u_max, u_max], [false, false], 0.0),
            norm: Norm::Riemannian(TensorField::Revolution(profile)),
            symmetric: true,
            preset: Some(Preset::Waist { u_max }),
            label: "waist".into(),
        }
    }

    pub fn revolution(profile: Expr, u_range: [f64; 2], poles: [bool; 2], pole_margin: f64) -> Self {
        FinslerMetric {
            atlas: ChartAtlas::revolution(profile.clone(), u_range, poles, pole_margin),
            norm: Norm::Riemannian(TensorField::Revolution(profile)),
            symmetric: true,
            preset: Some(Preset::Revolution),
            label: "revolution".into(),
        }
    }

    /// Katok's Randers sphere: Zermelo navigation on the round sphere with
    /// the rotational wind `ρ ∂/∂v`. The equator closes in lengths 2π/(1±ρ).
    pub fn katok(rho: f64, pole_margin: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho.abs()) {
            return Err(Error::InvalidMetric(format!("Katok wind |rho| = {} must be < 1", rho.abs())));
        }
        let atlas = ChartAtlas::round_sphere(pole_margin);
        Ok(FinslerMetric {
            atlas,
            norm: Norm::Randers(RandersData::Navigation {
                h: TensorField::Revolution(Expr::parse("sin(u)").unwrap()),
                wind: FormField::Constant(V2::new(0.0, rho)),
            }),
            symmetric: rho == 0.0,
            preset: Some(Preset::Katok { rho }),
            label: "katok".into(),
        })
    }

    /// The metric with its norm wrapped in additional bump perturbations.
    pub fn with_bumps(&self, bumps: Vec<(Arc<dyn ChartBump>, f64)>) -> FinslerMetric {
        let norm = match &self.norm {
            Norm::Perturbed { base, bumps: old } => {
                let mut all = old.clone();
                all.extend(bumps);
                Norm::Perturbed {
                    base: base.clone(),
                    bumps: all,
                }
            }
            n => Norm::Perturbed {
                base: Box::new(n.clone()),
                bumps,
            },
        };
        FinslerMetric {
            atlas: self.atlas.clone(),
            norm,
            symmetric: self.symmetric,
            preset: self.preset.clone(),
            label: format!("{}+perturbed", self.label),
        }
    }

    /// Whether the norm is independent of chart axis `axis`.
    pub fn invariant_along(&self, axis: usize) -> bool {
        !self.norm.depends_on(axis)
    }

    pub fn is_quadratic(&self) -> bool {
        self.norm.is_quadratic()
    }

    /// Checks a point and returns whether it is a declared pole.
    pub fn at_pole(&self, q: [f64; 2]) -> bool {
        if let SurfaceFamily::SurfaceOfRevolution { poles, .. } = &self.atlas.family {
            let c = self.atlas.chart();
            return (poles[0] && (q[0] - c.lo[0]).abs() < 1e-15) || (poles[1] && (q[0] - c.hi[0]).abs() < 1e-15);
        }
        false
    }

    /// Primal jet without chart validation.
    pub fn primal_jet_unchecked(&self, q: [f64; 2], v: V2) -> Result<Jet> {
        let n = v.norm();
        if n < ZERO_TOL {
            return Err(Error::ZeroVector(n));
        }
        if let Some(j) = self.norm.primal_native(q, v) {
            return Ok(j);
        }
        let dual = |p: V2| self.dual_jet_unchecked(q, p);
        support_jet(&dual, v).map_err(|e| match e {
            Error::ZeroCovector(x) => Error::ZeroVector(x),
            e => e,
        })
    }

    /// Dual jet without chart validation.
    pub fn dual_jet_unchecked(&self, q: [f64; 2], p: V2) -> Result<Jet> {
        let n = p.norm();
        if n < ZERO_TOL {
            return Err(Error::ZeroCovector(n));
        }
        let primal = |v: V2| {
            self.norm
                .primal_native(q, v)
                .ok_or_else(|| Error::InvalidMetric("no primal form".into()))
        };
        if let Some(r) = self.norm.dual_native(q, p) {
            return r;
        }
        support_jet(&primal, p)
    }

    pub fn primal_jet(&self, q: [f64; 2], v: V2) -> Result<Jet> {
        self.atlas.check(q)?;
        self.primal_jet_unchecked(q, v)
    }

    pub fn dual_jet(&self, q: [f64; 2], p: V2) -> Result<Jet> {
        self.atlas.check(q)?;
        self.dual_jet_unchecked(q, p)
    }

    /// F(x, v).
    pub fn eval(&self, q: [f64; 2], v: V2) -> Result<f64> {
        Ok(self.primal_jet(q, v)?.value)
    }

    /// `½ ∂²F²/∂v∂v`, rejected when not positive definite.
    pub fn fundamental_tensor(&self, q: [f64; 2], v: V2) -> Result<M2> {
        let g = self.primal_jet(q, v)?.fundamental_tensor();
        check_pd(&g)?;
        Ok(g)
    }

    /// `½ ∂²F*²/∂p∂p`.
    pub fn dual_fundamental_tensor(&self, q: [f64; 2], p: V2) -> Result<M2> {
        Ok(self.dual_jet(q, p)?.fundamental_tensor())
    }

    /// `p = F(v) ∂F/∂v`.
    pub fn legendre(&self, q: [f64; 2], v: V2) -> Result<V2> {
        let j = self.primal_jet(q, v)?;
        Ok(j.grad * j.value)
    }

    /// F*(x, p).
    pub fn dual_norm(&self, q: [f64; 2], p: V2) -> Result<f64> {
        Ok(self.dual_jet(q, p)?.value)
    }

    /// `v = F*(p) ∂F*/∂p`.
    pub fn legendre_inverse(&self, q: [f64; 2], p: V2) -> Result<V2> {
        let j = self.dual_jet(q, p)?;
        Ok(j.grad * j.value)
    }

    /// Hilbert form `β|_(x,v)(w) = ∂F/∂v(v) · w`, for unit `v`.
    pub fn hilbert_pair(&self, q: [f64; 2], v: V2, w: V2) -> Result<f64> {
        let j = self.primal_jet(q, v)?;
        if (j.value - 1.0).abs() > 1e-8 {
            return Err(Error::NotUnitSpeed(j.value));
        }
        Ok(j.grad.dot(&w))
    }

    /// Euclidean area of the dual unit disk `{p : F*(q,p) ≤ 1}`.
    pub fn fiber_area(&self, q: [f64; 2], method: FiberAreaMethod, angular_nodes: usize, tol: f64) -> Result<f64> {
        if self.at_pole(q) {
            return Ok(0.0);
        }
        match method {
            FiberAreaMethod::Exact => {
                if let Some((g, _)) = self.norm.quadratic(q) {
                    return Ok(PI * g.determinant().max(0.0).sqrt());
                }
                self.fiber_area_polar(q, angular_nodes, tol)
            }
            FiberAreaMethod::MonteCarlo { per_axis, seed } => self.fiber_area_monte_carlo(q, per_axis, seed),
        }
    }

    /// `½ ∮ dφ / F*(e_φ)²` by the periodic trapezoid rule, checked against
    /// half the nodes.
    /// The angle is taken after mapping by `S^{-1/2}`, `S` the mean dual
    /// fundamental tensor over `±e₁, ±e₂`, so eccentric disks stay resolved.
    pub fn fiber_area_polar(&self, q: [f64; 2], nodes: usize, tol: f64) -> Result<f64> {
        let n = nodes.max(8) & !1;
        let mut s = M2::zeros();
        for p in [V2::new(1.0, 0.0), V2::new(-1.0, 0.0), V2::new(0.0, 1.0), V2::new(0.0, -1.0)] {
            s += self.dual_jet_unchecked(q, p)?.fundamental_tensor() / 4.0;
        }
        let eig = s.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::DegenerateFiber(format!("dual tensor not positive at {q:?}")));
        }
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let l = eig.eigenvectors * M2::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        let det = l.determinant().abs();
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let t = 2.0 * PI * k as f64 / n as f64;
            let r = self.dual_jet_unchecked(q, l * V2::new(t.cos(), t.sin()))?.value;
            vals.push(det / (r * r));
        }
        let full: f64 = vals.iter().sum::<f64>() * PI / n as f64;
        let half: f64 = vals.iter().step_by(2).sum::<f64>() * 2.0 * PI / n as f64;
        if (full - half).abs() > tol * full.abs().max(1.0) {
            return Err(Error::QuadratureUnderResolved((full - half).abs()));
        }
        Ok(full)
    }

    /// Jittered stratified Monte Carlo estimate of the dual disk area.
    pub fn fiber_area_monte_carlo(&self, q: [f64; 2], per_axis: usize, seed: u64) -> Result<f64> {
        // bounding box from a polar scan of the boundary
        let mut rmax: f64 = 0.0;
        for k in 0..64 {
            let t = 2.0 * PI * k as f64 / 64.0;
            let r = 1.0 / self.dual_jet_unchecked(q, V2::new(t.cos(), t.sin()))?.value;
            rmax = rmax.max(r);
        }
        let half = rmax * 1.1;
        let h = 2.0 * half / per_axis as f64;
        let row = |i: usize| -> Result<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut hits = 0;
            for j in 0..per_axis {
                let p = V2::new(
                    -half + (i as f64 + rng.random::<f64>()) * h,
                    -half + (j as f64 + rng.random::<f64>()) * h,
                );
                if p.norm() < ZERO_TOL || self.dual_jet_unchecked(q, p)?.value <= 1.0 {
                    hits += 1;
                }
            }
            Ok(hits)
        };
        #[cfg(feature = "parallel")]
        let hits: Result<Vec<usize>> = {
            use rayon::prelude::*;
            (0..per_axis).into_par_iter().map(row).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let hits: Result<Vec<usize>> = (0..per_axis).map(row).collect();
        let total: usize = hits?.iter().sum();
        Ok(total as f64 * h * h)
    }

    /// `∫_Σ f dvol_F` with `dvol_F = fiber_area/π dq1 dq2`.
    pub fn surface_integral(&self, f: &dyn Fn([f64; 2]) -> f64, opts: &QuadratureOptions) -> Result<f64> {
        self.surface_integral_weighted(f, &|q| self.fiber_area(q, opts.fiber, opts.angular_nodes, opts.tol).map(|a| a / PI), opts)
    }

    /// Total Finsler volume.
    pub fn volume(&self, opts: &QuadratureOptions) -> Result<f64> {
        self.surface_integral(&|_| 1.0, opts)
    }

    /// Tensor-product rule over the chart domain for `f · density`:
    /// trapezoid on periodic axes, Simpson with one Richardson step on
    /// bounded axes. Densities are reused along invariant axes. The node
    /// count is doubled, at most twice, until the refinement check passes.
    pub fn surface_integral_weighted(
        &self,
        f: &dyn Fn([f64; 2]) -> f64,
        density: &(dyn Fn([f64; 2]) -> Result<f64> + Sync),
        opts: &QuadratureOptions,
    ) -> Result<f64> {
        let mut n = opts.nodes.max(8) & !1;
        loop {
            match self.tensor_rule(f, density, n, opts.tol) {
                Err(Error::QuadratureUnderResolved(_)) if n < 4 * opts.nodes => n *= 2,
                r => return r,
            }
        }
    }

    fn tensor_rule(
        &self,
        f: &dyn Fn([f64; 2]) -> f64,
        density: &(dyn Fn([f64; 2]) -> Result<f64> + Sync),
        n: usize,
        tol: f64,
    ) -> Result<f64> {
        let c = self.atlas.chart().clone();
        let axis_nodes = |i: usize| -> Vec<(f64, f64, f64)> {
            // (coordinate, weight at n, weight at n/2 or 0)
            let (lo, hi) = (c.lo[i], c.hi[i]);
            if c.periodic[i] {
                let h = (hi - lo) / n as f64;
                (0..n)
                    .map(|k| (lo + k as f64 * h, h, if k % 2 == 0 { 2.0 * h } else { 0.0 }))
                    .collect()
            } else {
                let h = (hi - lo) / n as f64;
                (0..=n)
                    .map(|k| {
                        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                        let w2 = if k % 2 == 1 {
                            0.0
                        } else if k == 0 || k == n {
                            1.0
                        } else if (k / 2) % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        (lo + k as f64 * h, w * h / 3.0, w2 * 2.0 * h / 3.0)
                    })
                    .collect()
            }
        };
        let xs = axis_nodes(0);
        let ys = axis_nodes(1);
        let inv = [self.invariant_along(0), self.invariant_along(1)];
        let dens_at = |i: usize, j: usize| density([xs[i].0, ys[j].0]);
        // density table honouring invariance
        let mut table = vec![0.0; xs.len() * ys.len()];
        let rows: Vec<usize> = (0..xs.len()).collect();
        let compute_row = |i: usize| -> Result<Vec<f64>> {
            if inv[0] && i > 0 {
                return Ok(Vec::new());
            }
            let mut out = Vec::with_capacity(ys.len());
            for j in 0..ys.len() {
                if inv[1] && j > 0 {
                    out.push(out[0]);
                } else {
                    out.push(dens_at(i, j)?);
                }
            }
            Ok(out)
        };
        #[cfg(feature = "parallel")]
        let computed: Result<Vec<Vec<f64>>> = {
            use rayon::prelude::*;
            rows.par_iter().map(|&i| compute_row(i)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let computed: Result<Vec<Vec<f64>>> = rows.iter().map(|&i| compute_row(i)).collect();
        let computed = computed?;
        for i in 0..xs.len() {
            let src = if inv[0] { &computed[0] } else { &computed[i] };
            table[i * ys.len()..(i + 1) * ys.len()].copy_from_slice(src);
        }
        let (mut fine, mut coarse) = (0.0, 0.0);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                let val = f([x.0, y.0]) * table[i * ys.len() + j];
                fine += x.1 * y.1 * val;
                coarse += x.2 * y.2 * val;
            }
        }
        let bounded = !c.periodic[0] || !c.periodic[1];
        let (value, err) = if bounded {
            let extrap = fine + (fine - coarse) / 15.0;
            (extrap, (fine - coarse).abs() / 15.0)
        } else {
            (fine, (fine - coarse).abs())
        };
        if err > tol * value.abs().max(1.0) {
            return Err(Error::QuadratureUnderResolved(err));
        }
        Ok(value)
    }

    /// Sup over a sample grid of `|F_other/F_self − 1|`, the distance used to
    /// report how far a perturbed metric moved.
    pub fn sup_ratio_distance(&self, other: &FinslerMetric, grid: usize) -> Result<f64> {
        let c = self.atlas.chart();
        let mut worst: f64 = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                let q = [
                    c.lo[0] + (i as f64 + 0.5) / grid as f64 * (c.hi[0] - c.lo[0]),
                    c.lo[1] + (j as f64 + 0.5) / grid as f64 * (c.hi[1] - c.lo[1]),
                ];
                if self.atlas.check(q).is_err() {
                    continue;
                }
                for k in 0..8 {
                    let t = 2.0 * PI * k as f64 / 8.0;
                    let v = V2::new(t.cos(), t.sin());
                    let a = self.eval(q, v)?;
                    let b = other.eval(q, v)?;
                    worst = worst.max((b / a - 1.0).abs());
                }
            }
        }
        Ok(worst)
    }
}

pub(crate) fn check_pd(g: &M2) -> Result<()> {
    let tr = g.trace();
    let det = g.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let lmin = 0.5 * tr - disc;
    if lmin < PD_TOL {
        return Err(Error::NotPositiveDefinite(lmin));
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn min_eigenvalue(g: &M2) -> f64 {
    let tr = g.trace();
    let det = g.determinant();
    0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt()
}
