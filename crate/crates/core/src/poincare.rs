//! Linearised return maps of closed orbits on the contact plane, in a
//! dλ-symplectic basepoint frame, and their Sp(2) normal forms.

use crate::error::{Error, Result};
use crate::flow::{self, UnitCotangentState};
use crate::metric::{FinslerMetric, M2, V2};
use crate::orbit::{self, ClosedOrbit, OrbitOptions, M4};
use nalgebra::Vector4;
use serde::Serialize;
use std::f64::consts::PI;

pub type Tangent = Vector4<f64>;

/// `λ(X) = p · X_q`.
pub fn lambda(s: &UnitCotangentState, x: &Tangent) -> f64 {
    s.p[0] * x[0] + s.p[1] * x[1]
}

/// `dλ(X, Y) = X_p · Y_q − X_q · Y_p`.
pub fn dlambda(x: &Tangent, y: &Tangent) -> f64 {
    x[2] * y[0] + x[3] * y[1] - x[0] * y[2] - x[1] * y[3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticFrame {
    pub base: UnitCotangentState,
    /// Vertical: zero q-part, p-part tangent to the unit fiber.
    pub v: Tangent,
    /// q-part `(−p₂, p₁)`, p-part keeping `dF* = 0`.
    pub w: Tangent,
    pub reeb: Tangent,
    /// `dF*` as a covector on the 4-dimensional tangent space.
    pub dfstar: Tangent,
}

impl SymplecticFrame {
    /// `W ↦ cW`, `V ↦ V/c`.
    pub fn rescaled(&self, c: f64) -> Self {
        SymplecticFrame {
            v: self.v / c,
            w: self.w * c,
            ..self.clone()
        }
    }

    /// Largest violation of `λ(V)=λ(W)=0`, `dF*(V)=dF*(W)=0`, `dλ(V,W)=1`.
    pub fn defect(&self) -> f64 {
        [
            lambda(&self.base, &self.v),
            lambda(&self.base, &self.w),
            self.dfstar.dot(&self.v),
            self.dfstar.dot(&self.w),
            dlambda(&self.v, &self.w) - 1.0,
        ]
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

pub fn frame_at(m: &FinslerMetric, s: &UnitCotangentState) -> Result<SymplecticFrame> {
    let j = m.dual_jet(s.q, V2::new(s.p[0], s.p[1]))?;
    let gp = j.grad;
    let gq = j.dq;
    let wq = V2::new(-s.p[1], s.p[0]);
    let g2 = gp.norm_squared();
    if g2 < 1e-24 {
        return Err(Error::DegenerateFiber("fiber gradient vanishes".into()));
    }
    let wp = -gp * (gq.dot(&wq) / g2);
    let w = Tangent::new(wq[0], wq[1], wp[0], wp[1]);
    let v_raw = Tangent::new(0.0, 0.0, -gp[1], gp[0]);
    let pairing = dlambda(&v_raw, &w);
    if pairing.abs() < 1e-12 {
        return Err(Error::DegenerateFiber(format!("dλ(V, W) = {pairing:e}")));
    }
    Ok(SymplecticFrame {
        base: *s,
        v: v_raw / pairing,
        w,
        reeb: Tangent::new(gp[0], gp[1], -gq[0], -gq[1]),
        dfstar: Tangent::new(gq[0], gq[1], gp[0], gp[1]),
    })
}

/// Linearisation of the time-T flow along the orbit.
pub fn variational_transport(m: &FinslerMetric, o: &ClosedOrbit, opts: &OrbitOptions) -> Result<M4> {
    Ok(orbit::variational_flow(m, o.start.phase(), o.period, opts.ode)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum NormalForm {
    Parabolic { sign: i8, b: i8 },
    Hyperbolic { a: f64 },
    Elliptic { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalFormClass {
    #[serde(flatten)]
    pub form: NormalForm,
    pub nondegenerate: bool,
    /// The trace sits within 10× the tolerance of a class boundary.
    pub uncertain: bool,
    /// Nearest `p/q` (q ≤ 64) to `θ/2π` and its distance, elliptic only.
    pub rational_rotation: Option<(i64, i64, f64)>,
    /// Smallest k ≤ 64 with `kθ ∈ 2πℤ` within tolerance, elliptic only.
    pub degenerate_iterate: Option<usize>,
}

impl NormalFormClass {
    /// Distance of the nearest eigenvalue from 1.
    pub fn eigenvalue_margin(&self) -> f64 {
        match self.form {
            NormalForm::Elliptic { theta } => 2.0 * (theta / 2.0).sin().abs(),
            NormalForm::Hyperbolic { a } => (a - 1.0).abs().min((1.0 / a - 1.0).abs()),
            NormalForm::Parabolic { sign, .. } => {
                if sign > 0 {
                    0.0
                } else {
                    2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareMap {
    pub m: M2,
    pub det: f64,
    pub trace: f64,
    pub class: NormalFormClass,
    pub monodromy: M4,
}

/// Return map in the given basepoint frame.
pub fn poincare_in_frame(mono: &M4, frame: &SymplecticFrame) -> Result<M2> {
    let pair = dlambda(&frame.v, &frame.w);
    if (pair - 1.0).abs() > 1e-8 {
        return Err(Error::FramePairingSingular);
    }
    let zv = mono * frame.v;
    let zw = mono * frame.w;
    let cv = |z: &Tangent| dlambda(z, &frame.w);
    let cw = |z: &Tangent| dlambda(&frame.v, z);
    Ok(M2::new(cv(&zv), cv(&zw), cw(&zv), cw(&zw)))
}

pub fn poincare_map(m: &FinslerMetric, o: &ClosedOrbit, opts: &OrbitOptions, tol_trace: f64) -> Result<PoincareMap> {
    let mono = variational_transport(m, o, opts)?;
    let frame = frame_at(m, &o.start)?;
    let pm = poincare_in_frame(&mono, &frame)?;
    let class = classify(&pm, tol_trace)?;
    Ok(PoincareMap {
        m: pm,
        det: pm.determinant(),
        trace: pm.trace(),
        class,
        monodromy: mono,
    })
}

fn omega(x: &V2, y: &V2) -> f64 {
    x[0] * y[1] - x[1] * y[0]
}

/// Sp(2) normal form of a 2×2 symplectic matrix.
pub fn classify(mat: &M2, tol_trace: f64) -> Result<NormalFormClass> {
    let det = mat.determinant();
    if (det - 1.0).abs() > 1e-6 {
        return Err(Error::NotSymplectic(det));
    }
    let tr = mat.trace();
    let uncertain = (tr.abs() - 2.0).abs() < 10.0 * tol_trace;
    let nondegenerate = (tr - 2.0).abs() > tol_trace;
    let form = if tr.abs() < 2.0 - tol_trace {
        let c = (tr / 2.0).acos();
        NormalForm::Elliptic {
            theta: if mat[(1, 0)] >= 0.0 { c } else { 2.0 * PI - c },
        }
    } else if tr.abs() > 2.0 + tol_trace {
        let d = (tr * tr - 4.0).sqrt();
        NormalForm::Hyperbolic {
            a: (tr + tr.signum() * d) / 2.0,
        }
    } else {
        let s = if tr >= 0.0 { 1.0 } else { -1.0 };
        let n = mat - M2::identity() * s;
        let b = if n.abs().max() < tol_trace {
            0
        } else {
            let (e1, e2) = (V2::new(1.0, 0.0), V2::new(0.0, 1.0));
            let u = if (n * e1).norm() >= (n * e2).norm() { e1 } else { e2 };
            let q = omega(&(n * u), &u);
            if q > 0.0 {
                1
            } else if q < 0.0 {
                -1
            } else {
                0
            }
        };
        NormalForm::Parabolic { sign: s as i8, b }
    };
    let (rational_rotation, degenerate_iterate) = match form {
        NormalForm::Elliptic { theta } => {
            let x = theta / (2.0 * PI);
            let mut best = (0, 1, f64::INFINITY);
            for q in 1..=64i64 {
                let p = (x * q as f64).round() as i64;
                let err = (x - p as f64 / q as f64).abs();
                if err < best.2 - 1e-15 {
                    best = (p, q, err);
                }
            }
            let k = (1..=64usize).find(|&k| {
                let a = (k as f64 * theta).rem_euclid(2.0 * PI);
                a.min(2.0 * PI - a) < tol_trace
            });
            (Some(best), k)
        }
        _ => (None, None),
    };
    Ok(NormalFormClass {
        form,
        nondegenerate,
        uncertain,
        rational_rotation,
        degenerate_iterate,
    })
}

/// Class of `M^k`.
pub fn iterate_class(mat: &M2, k: usize, tol_trace: f64) -> Result<NormalFormClass> {
    if k == 0 {
        return Err(Error::Validation {
            position: None,
            message: "iterate count must be at least 1".into(),
        });
    }
    classify(&mat.pow(k as u32), tol_trace)
}

/// Checks the Reeb direction is fixed by the monodromy.
pub fn reeb_eigen_defect(m: &FinslerMetric, o: &ClosedOrbit, mono: &M4) -> Result<f64> {
    let (qd, pd) = flow::reeb_vector(m, &o.start)?;
    let r = Tangent::new(qd[0], qd[1], pd[0], pd[1]);
    Ok((mono * r - r).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::M2;
    use crate::orbit::{catalog_family, FamilySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot(t: f64) -> M2 {
        M2::new(t.cos(), -t.sin(), t.sin(), t.cos())
    }

    #[test]
    fn normal_form_examples() {
        let c = classify(&M2::new(1.0, 1.0, 0.0, 1.0), 1e-6).unwrap();
        assert_eq!(c.form, NormalForm::Parabolic { sign: 1, b: 1 });
        assert!(!c.nondegenerate);
        let c = classify(&M2::new(2.0, 0.0, 0.0, 0.5), 1e-6).unwrap();
        assert_eq!(c.form, NormalForm::Hyperbolic { a: 2.0 });
        assert!(c.nondegenerate);
        let c = classify(&rot(PI / 3.0), 1e-6).unwrap();
        match c.form {
            NormalForm::Elliptic { theta } => assert!((theta - PI / 3.0).abs() < 1e-12),
            f => panic!("{f:?}"),
        }
        assert!(c.nondegenerate);
        assert_eq!(c.rational_rotation.unwrap().1, 6);
        let c = classify(&rot(-PI / 3.0), 1e-6).unwrap();
        match c.form {
            NormalForm::Elliptic { theta } => assert!((theta - 5.0 * PI / 3.0).abs() < 1e-12),
            f => panic!("{f:?}"),
        }
        assert_eq!(classify(&M2::new(1.0, 0.0, 1.0, 1.0), 1e-6).unwrap().form, NormalForm::Parabolic { sign: 1, b: -1 });
        assert_eq!(classify(&-M2::identity(), 1e-6).unwrap().form, NormalForm::Parabolic { sign: -1, b: 0 });
        assert!(matches!(classify(&M2::new(2.0, 0.0, 0.0, 1.0), 1e-6), Err(Error::NotSymplectic(_))));
    }

    #[test]
    fn iterate_examples() {
        let c = iterate_class(&rot(2.0 * PI / 5.0), 5, 1e-6).unwrap();
        assert_eq!(c.form, NormalForm::Parabolic { sign: 1, b: 0 });
        assert!(!c.nondegenerate);
        assert_eq!(classify(&rot(2.0 * PI / 5.0), 1e-6).unwrap().degenerate_iterate, Some(5));
        for k in 1..=6 {
            match iterate_class(&M2::new(2.0, 0.0, 0.0, 0.5), k, 1e-6).unwrap().form {
                NormalForm::Hyperbolic { a } => assert!((a - 2f64.powi(k as i32)).abs() < 1e-9 * a),
                f => panic!("{f:?}"),
            }
        }
        for k in 1..=64 {
            assert!(iterate_class(&rot(1.0), k, 1e-6).unwrap().nondegenerate);
        }
        assert_eq!(classify(&rot(1.0), 1e-6).unwrap().degenerate_iterate, None);
    }

    #[test]
    fn frames_satisfy_invariants() {
        let e = FinslerMetric::euclidean_torus();
        let s = UnitCotangentState::new(&e, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let f = frame_at(&e, &s).unwrap();
        assert_eq!([f.w[0], f.w[1]], [0.0, 1.0]);
        assert_eq!([f.v[0], f.v[1], f.v[2]], [0.0, 0.0, 0.0]);
        assert!(f.defect() < 1e-15);
        let g = FinslerMetric::flat_torus(M2::new(4.0, 0.0, 0.0, 1.0));
        let s = UnitCotangentState::new(&g, [0.2, 0.1], [1.0, 2.0]).unwrap();
        assert!(frame_at(&g, &s).unwrap().defect() < 1e-12);
        let k = FinslerMetric::katok(0.3, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = [0.2 + 2.7 * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>()];
            let t = 2.0 * PI * rng.random::<f64>();
            let s = UnitCotangentState::new(&k, q, [t.cos(), t.sin()]).unwrap();
            assert!(frame_at(&k, &s).unwrap().defect() < 1e-9);
        }
    }

    #[test]
    fn sphere_torus_and_waist_maps() {
        let opts = OrbitOptions::default();
        let sp = FinslerMetric::round_sphere(1e-3);
        for o in catalog_family(&sp, &FamilySpec::default(), &opts).unwrap() {
            let pm = poincare_map(&sp, &o, &opts, 1e-6).unwrap();
            assert!((pm.m - M2::identity()).abs().max() < 1e-6, "{}", pm.m);
            assert!(!pm.class.nondegenerate);
            assert!(reeb_eigen_defect(&sp, &o, &pm.monodromy).unwrap() < 1e-6);
        }
        let e = FinslerMetric::euclidean_torus();
        let cat = catalog_family(&e, &FamilySpec::default(), &opts).unwrap();
        for o in &cat {
            let pm = poincare_map(&e, o, &opts, 1e-6).unwrap();
            assert!((pm.trace - 2.0).abs() < 1e-9);
            assert!((pm.m - M2::identity()).abs().max() > 0.1);
            assert!(matches!(pm.class.form, NormalForm::Parabolic { sign: 1, b } if b != 0));
            assert!((pm.det - 1.0).abs() < 1e-7);
        }
        let w = FinslerMetric::waist(1.5);
        let o = &catalog_family(&w, &FamilySpec::default(), &opts).unwrap()[0];
        let pm = poincare_map(&w, o, &opts, 1e-6).unwrap();
        let want = 2.0 * (2.0 * PI).cosh();
        assert!((pm.trace - want).abs() < 1e-3 * want);
        match pm.class.form {
            NormalForm::Hyperbolic { a } => assert!((a - (2.0 * PI).exp()).abs() < 1e-3 * a),
            f => panic!("{f:?}"),
        }
        assert!(pm.class.nondegenerate);
    }

    #[test]
    fn frame_rescaling_conjugates() {
        let opts = OrbitOptions::default();
        let w = FinslerMetric::waist(1.5);
        let o = &catalog_family(&w, &FamilySpec::default(), &opts).unwrap()[0];
        let mono = variational_transport(&w, o, &opts).unwrap();
        let f = frame_at(&w, &o.start).unwrap();
        let a = poincare_in_frame(&mono, &f).unwrap();
        let b = poincare_in_frame(&mono, &f.rescaled(3.7)).unwrap();
        assert!((a.trace() - b.trace()).abs() < 1e-8 * a.trace().abs());
        assert_eq!(
            std::mem::discriminant(&classify(&a, 1e-6).unwrap().form),
            std::mem::discriminant(&classify(&b, 1e-6).unwrap().form)
        );
    }

    #[test]
    fn iterates_of_orbits_power_the_map() {
        let opts = OrbitOptions::default();
        let e = FinslerMetric::flat_torus(M2::new(2.0, 0.3, 0.3, 1.0));
        let o = &catalog_family(&e, &FamilySpec::default(), &opts).unwrap()[2];
        let p1 = poincare_map(&e, o, &opts, 1e-6).unwrap().m;
        for k in 2..=4 {
            let ok = o.iterate(&e, k, &opts).unwrap();
            let pk = poincare_map(&e, &ok, &opts, 1e-6).unwrap().m;
            assert!((pk - p1.pow(k as u32)).abs().max() < 1e-5);
        }
    }
}
