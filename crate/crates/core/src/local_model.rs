//! The standard contact tube `S¹ × D²` with the form `H(dz + x₁dx₂)`:
//! its Reeb field, the linearised flow along the axis, and the first-order
//! response of the return map to a bump `h̃` supported in a window.

use crate::error::{Error, Result};
use crate::metric::{M2, V2};
use crate::ode::{Field, Integrator, OdeOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `S(x) = 35x⁴ − 84x⁵ + 70x⁶ − 20x⁷`, clamped to [0, 1]; three
/// continuous derivatives at both ends.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let x4 = x * x * x * x;
    x4 * (35.0 + x * (-84.0 + x * (70.0 - 20.0 * x)))
}

pub fn smoothstep_deriv(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let x3 = x * x * x;
    140.0 * x3 * (1.0 - x).powi(3)
}

/// Bump of height 1 at 0 and support `[-1, 1]`.
pub fn bump(y: f64) -> f64 {
    smoothstep(1.0 - y.abs())
}

pub fn bump_deriv(y: f64) -> f64 {
    -y.signum() * smoothstep_deriv(1.0 - y.abs())
}

pub const J: M2 = M2::new(0.0, -1.0, 1.0, 0.0);

/// Symmetric 2×2 matrix from `(xx, xy, yy)`.
pub fn sym(c: [f64; 3]) -> M2 {
    M2::new(c[0], c[1], c[1], c[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Degree-7 bump in the window.
    Smooth,
    /// Indicator of the window; for the constant-coefficient check.
    Boxcar,
}

/// Coefficients of `Q(z, x) = ½xᵀ(A₀ + A₁cos2πz + A₂sin2πz)x + κ_Q x₁²x₂`
/// and `q(z, x) = ½xᵀ(C₀ + C₁y)x + κ_q x₁x₂²` with `y = (z − t₀)/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BumpCoefficients {
    pub outer: [[f64; 3]; 3],
    pub outer_cubic: f64,
    pub inner: [[f64; 3]; 2],
    pub inner_cubic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelForm {
    pub l: f64,
    pub t0: f64,
    pub eps: f64,
    pub coeffs: BumpCoefficients,
    pub profile: Profile,
}

pub fn make_admissible(l: f64, t0: f64, eps: f64, coeffs: BumpCoefficients) -> Result<ModelForm> {
    make_form(l, t0, eps, coeffs, Profile::Smooth)
}

pub fn make_form(l: f64, t0: f64, eps: f64, coeffs: BumpCoefficients, profile: Profile) -> Result<ModelForm> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InadmissibleForm(format!("period parameter {l} must be positive")));
    }
    if !(eps > 0.0) || t0 - eps <= 0.0 || t0 + eps >= 1.0 {
        return Err(Error::WindowTooWide(t0 - eps, t0 + eps));
    }
    let flat = coeffs.outer.iter().chain(coeffs.inner.iter()).flatten();
    if flat.chain([coeffs.outer_cubic, coeffs.inner_cubic].iter()).any(|c| !c.is_finite()) {
        return Err(Error::InadmissibleForm("non-finite coefficient".into()));
    }
    Ok(ModelForm {
        l,
        t0,
        eps,
        coeffs,
        profile,
    })
}

impl ModelForm {
    /// Width of the ramp between the window and the region where `H`
    /// is fully switched on.
    fn ramp(&self) -> f64 {
        0.5 * (self.t0 - self.eps).min(1.0 - self.t0 - self.eps)
    }

    pub fn chi_out(&self, z: f64) -> f64 {
        let z = z.rem_euclid(1.0);
        let d = (z - self.t0).abs() - self.eps;
        smoothstep(d / self.ramp())
    }

    fn chi_out_deriv(&self, z: f64) -> f64 {
        let z = z.rem_euclid(1.0);
        let d = (z - self.t0).abs() - self.eps;
        (z - self.t0).signum() * smoothstep_deriv(d / self.ramp()) / self.ramp()
    }

    pub fn chi_in(&self, z: f64) -> f64 {
        let y = (z.rem_euclid(1.0) - self.t0) / self.eps;
        match self.profile {
            Profile::Smooth => bump(y),
            Profile::Boxcar => {
                if y.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn outer_matrix(&self, z: f64) -> (M2, M2) {
        let [a0, a1, a2] = self.coeffs.outer.map(sym);
        let w = 2.0 * std::f64::consts::PI;
        let (s, c) = (w * z).sin_cos();
        (a0 + a1 * c + a2 * s, (a2 * c - a1 * s) * w)
    }

    fn inner_matrix(&self, z: f64) -> M2 {
        let [c0, c1] = self.coeffs.inner.map(sym);
        c0 + c1 * ((z.rem_euclid(1.0) - self.t0) / self.eps)
    }

    /// `H` with its partials `(H_z, H_{x₁}, H_{x₂})`.
    pub fn h(&self, zeta: [f64; 3]) -> (f64, [f64; 3]) {
        let [z, x1, x2] = zeta;
        let x = V2::new(x1, x2);
        let (a, da) = self.outer_matrix(z);
        let k = self.coeffs.outer_cubic;
        let q = 0.5 * x.dot(&(a * x)) + k * x1 * x1 * x2;
        let qx = a * x + V2::new(2.0 * k * x1 * x2, k * x1 * x1);
        let qz = 0.5 * x.dot(&(da * x));
        let chi = self.chi_out(z);
        (
            self.l + chi * q,
            [self.chi_out_deriv(z) * q + chi * qz, chi * qx[0], chi * qx[1]],
        )
    }

    pub fn h_tilde(&self, zeta: [f64; 3]) -> f64 {
        let [z, x1, x2] = zeta;
        let x = V2::new(x1, x2);
        let c = self.inner_matrix(z);
        self.chi_in(z) * (0.5 * x.dot(&(c * x)) + self.coeffs.inner_cubic * x1 * x2 * x2)
    }

    pub fn axis_hessian_h(&self, z: f64) -> M2 {
        self.outer_matrix(z).0 * self.chi_out(z)
    }

    pub fn axis_hessian_h_tilde(&self, z: f64) -> M2 {
        self.inner_matrix(z) * self.chi_in(z)
    }

    /// Times at which the coefficients lose smoothness or switch on.
    fn breakpoints(&self) -> [f64; 4] {
        let r = self.ramp();
        [self.t0 - self.eps - r, self.t0 - self.eps, self.t0 + self.eps, self.t0 + self.eps + r]
    }

    /// Finite-difference check of the invariants: `H = l` and `∇ₓH = 0` on
    /// the axis, `H ≡ l` on the window, and `∇²ₓh̃ = 0` on the axis outside
    /// it. Returns the largest violation.
    pub fn admissibility_defect(&self) -> f64 {
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            let z = i as f64 / 400.0;
            let at = |x1: f64, x2: f64| self.h([z, x1, x2]).0;
            worst = worst.max((at(0.0, 0.0) - self.l).abs());
            worst = worst.max(((at(h, 0.0) - at(-h, 0.0)) / (2.0 * h)).abs());
            worst = worst.max(((at(0.0, h) - at(0.0, -h)) / (2.0 * h)).abs());
            if (z - self.t0).abs() <= self.eps {
                for (a, b) in [(0.05, 0.0), (0.0, 0.05), (0.03, -0.04)] {
                    worst = worst.max((at(a, b) - self.l).abs());
                }
            } else {
                let ht = |x1: f64, x2: f64| self.h_tilde([z, x1, x2]);
                let hxx = (ht(h, 0.0) - 2.0 * ht(0.0, 0.0) + ht(-h, 0.0)) / (h * h);
                let hyy = (ht(0.0, h) - 2.0 * ht(0.0, 0.0) + ht(0.0, -h)) / (h * h);
                worst = worst.max(hxx.abs()).max(hyy.abs());
            }
        }
        worst
    }
}

pub fn model_reeb_field(form: &ModelForm, zeta: [f64; 3]) -> [f64; 3] {
    let x1 = zeta[1];
    let (h, [hz, h1, h2]) = form.h(zeta);
    let k = 1.0 / (h * h);
    [k * (h + x1 * h1), k * (h2 - x1 * hz), -k * h1]
}

/// `(α(X), ι_X dα)` for the model form; the Reeb field gives `(1, 0)`.
pub fn contraction(form: &ModelForm, zeta: [f64; 3], x: [f64; 3]) -> (f64, [f64; 3]) {
    let x1 = zeta[1];
    let (h, dh) = form.h(zeta);
    let a0 = |y: [f64; 3]| y[0] + x1 * y[2];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // dα = dH ∧ α₀ + H dx₁ ∧ dx₂
    let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let iota = e.map(|y| dot(dh, x) * a0(y) - a0(x) * dot(dh, y) + h * (x[1] * y[2] - x[2] * y[1]));
    (h * a0(x), iota)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalSolution {
    pub times: Vec<f64>,
    pub r: Vec<M2>,
}

impl FundamentalSolution {
    /// Value at a grid time.
    pub fn at(&self, t: f64) -> Option<M2> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-14).map(|i| self.r[i])
    }

    pub fn end(&self) -> M2 {
        *self.r.last().expect("non-empty grid")
    }

    pub fn max_det_defect(&self) -> f64 {
        self.r.iter().fold(0.0f64, |a, r| a.max((r.determinant() - 1.0).abs()))
    }
}

fn to_arr(m: &M2) -> [f64; 4] {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

fn from_arr(a: &[f64; 4]) -> M2 {
    M2::new(a[0], a[1], a[2], a[3])
}

/// Fundamental solution of `Ṙ = l⁻²J(−∇²H + (sl/2)∇²h̃)R`, sampled on a
/// uniform grid of `n` steps merged with the coefficient breakpoints.
pub fn model_linearized(form: &ModelForm, s: f64, n: usize, tol: f64) -> Result<FundamentalSolution> {
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    times.extend(form.breakpoints().iter().filter(|&&t| t > 0.0 && t < 1.0));
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let l = form.l;
    let coef = move |t: f64| (J * (form.axis_hessian_h_tilde(t) * (s * l / 2.0) - form.axis_hessian_h(t))) / (l * l);
    let mut opts = OdeOptions::with_tol(tol);
    opts.h_max = 0.05;
    let mut r = vec![M2::identity()];
    let mut y = to_arr(&M2::identity());
    for w in times.windows(2) {
        // restart per interval so the boxcar jump is never straddled
        let (a, b) = (w[0], w[1]);
        let d = 1e-12 * (b - a);
        let field: Field<4> = Box::new(move |t, y| Ok(to_arr(&(coef(t.clamp(a + d, b - d)) * from_arr(y)))));
        let mut it = Integrator::new(field, a, y, opts);
        it.advance_to(b)?;
        y = it.y;
        r.push(from_arr(&y));
    }
    Ok(FundamentalSolution { times, r })
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let d = left + right - whole;
        if depth == 0 || d.abs() <= 15.0 * tol {
            return left + right + d / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    rec(f, a, fa, b, fb, m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// Predicted `d/ds R_s(1)` at `s = 0`.
pub fn lemma31_prediction(form: &ModelForm) -> Result<M2> {
    lemma31_prediction_with(form, 400, 1e-12)
}

pub fn lemma31_prediction_with(form: &ModelForm, n: usize, tol: f64) -> Result<M2> {
    let defect = form.admissibility_defect();
    if defect > 1e-6 {
        return Err(Error::InadmissibleForm(format!("invariant defect {defect:e}")));
    }
    let r0 = model_linearized(form, 0.0, n, tol)?;
    let (a, b) = (form.t0 - form.eps, form.t0 + form.eps);
    let mut integral = M2::zeros();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        let v = adaptive_simpson(&|t| form.axis_hessian_h_tilde(t)[(i, j)], a, b, 1e-12);
        integral[(i, j)] = v;
        integral[(j, i)] = v;
    }
    let k = J * integral / (2.0 * form.l);
    let rt0 = r0.at(form.t0).unwrap_or_else(|| r0.at(a).expect("window start on grid"));
    let rt0_inv = rt0.try_inverse().ok_or_else(|| Error::InadmissibleForm("singular fundamental solution".into()))?;
    Ok(r0.end() * rt0_inv * k * rt0)
}

pub fn lemma31_fd_oracle(form: &ModelForm, ds: f64) -> Result<M2> {
    let plus = model_linearized(form, ds, 50, 1e-12)?.end();
    let minus = model_linearized(form, -ds, 50, 1e-12)?.end();
    Ok((plus - minus) / (2.0 * ds))
}

/// A random admissible instance; identical seeds give identical forms.
pub fn random_instance(seed: u64) -> ModelForm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let l = u(0.5, 2.0);
    let t0 = u(0.35, 0.65);
    let eps = u(0.05, 0.15);
    let mut c = BumpCoefficients::default();
    for row in c.outer.iter_mut() {
        for v in row.iter_mut() {
            *v = u(-1.0, 1.0);
        }
    }
    for row in c.inner.iter_mut() {
        for v in row.iter_mut() {
            *v = u(-1.0, 1.0);
        }
    }
    c.outer_cubic = u(-1.0, 1.0);
    c.inner_cubic = u(-1.0, 1.0);
    make_admissible(l, t0, eps, c).expect("window chosen inside (0, 1)")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma31Row {
    pub seed: u64,
    pub prediction_norm: f64,
    pub oracle_norm: f64,
    pub relative_error: f64,
}

pub fn lemma31_check(seed: u64) -> Result<Lemma31Row> {
    let form = random_instance(seed);
    let p = lemma31_prediction(&form)?;
    let o = lemma31_fd_oracle(&form, 1e-4)?;
    Ok(Lemma31Row {
        seed,
        prediction_norm: p.norm(),
        oracle_norm: o.norm(),
        relative_error: (p - o).norm() / p.norm().max(1e-300),
    })
}

/// Rows for seeds `seed, seed + 1, …`.
pub fn lemma31_batch(seed: u64, instances: usize) -> Result<Vec<Lemma31Row>> {
    let seeds: Vec<u64> = (0..instances as u64).map(|i| seed.wrapping_add(i)).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| lemma31_check(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| lemma31_check(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expm_j(a: f64) -> M2 {
        M2::new(a.cos(), -a.sin(), a.sin(), a.cos())
    }

    fn constant_c(c: f64) -> ModelForm {
        let mut k = BumpCoefficients::default();
        k.inner[0] = [c, 0.0, c];
        make_form(1.5, 0.5, 0.1, k, Profile::Boxcar).unwrap()
    }

    #[test]
    fn smoothstep_shape() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        let h = 1e-6;
        for x in [0.1, 0.37, 0.8] {
            let fd = (smoothstep(x + h) - smoothstep(x - h)) / (2.0 * h);
            assert!((fd - smoothstep_deriv(x)).abs() < 1e-8);
            let fd = (bump(x + h) - bump(x - h)) / (2.0 * h);
            assert!((fd - bump_deriv(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn reeb_field_examples() {
        let f = make_admissible(2.0, 0.5, 0.1, BumpCoefficients::default()).unwrap();
        assert_eq!(model_reeb_field(&f, [0.3, 0.1, -0.2]), [0.5, 0.0, 0.0]);
        let mut k = BumpCoefficients::default();
        k.outer[0] = [2.0, 0.0, 0.0];
        let f = make_admissible(1.3, 0.5, 0.1, k).unwrap();
        let r = model_reeb_field(&f, [0.1, 0.0, 0.0]);
        assert!((r[0] - 1.0 / 1.3).abs() < 1e-15 && r[1] == 0.0 && r[2] == 0.0);
        assert_eq!(f.axis_hessian_h(0.05), M2::new(2.0, 0.0, 0.0, 0.0) * f.chi_out(0.05));
        for seed in 0..10 {
            let f = random_instance(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..100 {
                let zeta = [rng.random::<f64>(), 0.2 * rng.random::<f64>() - 0.1, 0.2 * rng.random::<f64>() - 0.1];
                let (a, iota) = contraction(&f, zeta, model_reeb_field(&f, zeta));
                assert!((a - 1.0).abs() < 1e-9);
                assert!(iota.iter().all(|v| v.abs() < 1e-9), "{iota:?}");
            }
        }
    }

    #[test]
    fn admissibility() {
        for seed in 0..5 {
            assert!(random_instance(seed).admissibility_defect() < 1e-8);
        }
        assert!(matches!(make_admissible(1.0, 0.05, 0.1, BumpCoefficients::default()), Err(Error::WindowTooWide(..))));
        assert!(matches!(make_admissible(1.0, 0.5, 0.5, BumpCoefficients::default()), Err(Error::WindowTooWide(..))));
    }

    #[test]
    fn trivial_fundamental_solutions() {
        let f = make_admissible(1.0, 0.5, 0.1, BumpCoefficients::default()).unwrap();
        let r = model_linearized(&f, 0.0, 20, 1e-12).unwrap();
        assert!(r.r.iter().all(|m| (m - M2::identity()).abs().max() < 1e-14));
        assert_eq!(lemma31_prediction(&f).unwrap(), M2::zeros());
        assert!(lemma31_fd_oracle(&f, 1e-4).unwrap().abs().max() < 1e-8);
        let (c, s) = (0.7, 0.05);
        let f = constant_c(c);
        let want = expm_j(s * c * f.eps / f.l);
        assert!((model_linearized(&f, s, 20, 1e-12).unwrap().end() - want).abs().max() < 1e-9);
        let dp = J * (c * f.eps / f.l);
        assert!((lemma31_prediction(&f).unwrap() - dp).abs().max() < 1e-12);
        assert!((lemma31_fd_oracle(&f, 1e-4).unwrap() - dp).abs().max() < 1e-6);
    }

    #[test]
    fn window_constancy_and_splice() {
        let f = random_instance(3);
        let r0 = model_linearized(&f, 0.0, 200, 1e-12).unwrap();
        let rs = model_linearized(&f, 1e-3, 200, 1e-12).unwrap();
        assert!(r0.max_det_defect() < 1e-8 && rs.max_det_defect() < 1e-8);
        let base = r0.at(f.t0 - f.eps).unwrap();
        for (t, m) in r0.times.iter().zip(&r0.r) {
            if (t - f.t0).abs() <= f.eps {
                assert!((m - base).abs().max() < 1e-10);
            }
        }
        let te = f.t0 + f.eps;
        let splice = rs.at(te).unwrap();
        let inv = r0.at(te).unwrap().try_inverse().unwrap();
        for (t, m) in rs.times.iter().zip(&rs.r) {
            if *t >= te {
                let pred = r0.at(*t).unwrap() * inv * splice;
                assert!((m - pred).abs().max() < 1e-7);
            }
        }
    }

    #[test]
    fn prediction_matches_oracle() {
        for row in lemma31_batch(7, 6).unwrap() {
            assert!(row.relative_error < 1e-4, "{row:?}");
        }
    }
}
