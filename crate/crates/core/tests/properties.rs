use finsler_reeb::config::parse_str;
use finsler_reeb::equidist::cesaro_schedule;
use finsler_reeb::expr::Expr;
use finsler_reeb::io::num;
use finsler_reeb::local_model::{bump, smoothstep};
use finsler_reeb::metric::{FinslerMetric, M2, V2};
use finsler_reeb::poincare::{classify, NormalForm};
use proptest::prelude::*;
use std::f64::consts::PI;

fn metric(kind: usize, a: f64, b: f64) -> FinslerMetric {
    match kind {
        0 => FinslerMetric::flat_torus(M2::new(1.0 + a * a, a * b, a * b, 1.0 + b * b)),
        1 => FinslerMetric::randers_torus(V2::new(0.6 * a, 0.6 * b)),
        2 => FinslerMetric::conformal_torus(Expr::parse(&format!("{a}*sin(2*pi*q1) + {b}*cos(2*pi*q2)")).unwrap()),
        _ => FinslerMetric::katok(0.9 * a, 1e-3).unwrap(),
    }
}

fn point(m: &FinslerMetric, s: [f64; 2]) -> [f64; 2] {
    let c = m.atlas.chart();
    let margin = if m.atlas.chart().periodic[0] { 0.0 } else { 0.01 };
    [
        c.lo[0] + margin + (c.hi[0] - c.lo[0] - 2.0 * margin) * s[0],
        c.lo[1] + (c.hi[1] - c.lo[1]) * s[1],
    ]
}

fn unit(a: f64) -> [[f64; 2]; 2] {
    [[a.cos(), -a.sin()], [a.sin(), a.cos()]]
}

fn mat(m: [[f64; 2]; 2]) -> M2 {
    M2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn legendre_inverts_and_pairs_to_f_squared(
        kind in 0usize..4, a in -0.9f64..0.9, b in -0.9f64..0.9,
        s in prop::array::uniform2(0.0f64..1.0), th in 0.0f64..(2.0 * PI), r in 0.1f64..5.0,
    ) {
        let m = metric(kind, a, b);
        let q = point(&m, s);
        let v = V2::new(th.cos(), th.sin()) * r;
        let f = m.eval(q, v).unwrap();
        let p = m.legendre(q, v).unwrap();
        prop_assert!((m.legendre_inverse(q, p).unwrap() - v).norm() < 1e-9 * r);
        prop_assert!((p.dot(&v) - f * f).abs() < 1e-10 * f * f);
        prop_assert!((m.dual_norm(q, p).unwrap() - f).abs() < 1e-9 * f);
    }

    #[test]
    fn norm_is_positively_homogeneous_and_convex(
        kind in 0usize..4, a in -0.9f64..0.9, b in -0.9f64..0.9,
        s in prop::array::uniform2(0.0f64..1.0), th in 0.0f64..(2.0 * PI), lam in 0.01f64..100.0,
    ) {
        let m = metric(kind, a, b);
        let q = point(&m, s);
        let v = V2::new(th.cos(), th.sin());
        let f = m.eval(q, v).unwrap();
        prop_assert!((m.eval(q, v * lam).unwrap() - lam * f).abs() < 1e-12 * lam * f.max(1.0));
        let g = m.fundamental_tensor(q, v).unwrap();
        prop_assert!(g[(0, 0)] > 0.0 && g.determinant() > 0.0);
    }

    #[test]
    fn classification_is_conjugation_invariant(
        kind in 0usize..3, x in 0.05f64..3.0, shear in -3.0f64..3.0, phi in 0.0f64..(2.0 * PI), k in -2.0f64..2.0,
    ) {
        let base = match kind {
            0 => mat(unit(x)),
            1 => M2::new(1.0 + x, 0.0, 0.0, 1.0 / (1.0 + x)),
            _ => M2::new(1.0, shear, 0.0, 1.0),
        };
        // symplectic change of basis
        let p = mat(unit(phi)) * M2::new(1.0, k, 0.0, 1.0);
        let conj = p * base * p.try_inverse().unwrap();
        let c0 = classify(&base, 1e-6).unwrap();
        let c1 = classify(&conj, 1e-6).unwrap();
        prop_assume!(!c0.uncertain && !c1.uncertain);
        prop_assert_eq!(c0.nondegenerate, c1.nondegenerate);
        match (c0.form, c1.form) {
            (NormalForm::Elliptic { theta: a }, NormalForm::Elliptic { theta: b }) => prop_assert!((a - b).abs() < 1e-9),
            (NormalForm::Hyperbolic { a }, NormalForm::Hyperbolic { a: b }) => prop_assert!((a - b).abs() < 1e-9 * a.abs()),
            (NormalForm::Parabolic { sign: s0, b: b0 }, NormalForm::Parabolic { sign: s1, b: b1 }) => {
                prop_assert_eq!(s0, s1);
                prop_assert_eq!(b0, b1);
            }
            (f0, f1) => prop_assert!(false, "{f0:?} vs {f1:?}"),
        }
    }

    #[test]
    fn cesaro_running_ratio_tracks_stage(stages in prop::collection::vec((-1.0f64..1.0, 0.01f64..100.0), 1..64)) {
        let s: Vec<(f64, f64)> = stages.iter().map(|&(r, b)| (r * b, b)).collect();
        let c = cesaro_schedule(&s).unwrap();
        for (i, (run, stage)) in c.running.iter().zip(&c.stage_ratios).enumerate() {
            prop_assert!((run - stage).abs() <= 2.0 / (i + 1) as f64 + 1e-12);
        }
        prop_assert_eq!(c.multiplicities[0].as_str(), "1");
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), trace in 1e-12f64..1e-2, nodes in 8usize..1024, rho in -0.95f64..0.95) {
        let src = format!(
            "seed = {seed}\n[metric]\nfamily = \"katok\"\nrho = {rho:?}\n[tolerances]\ntrace = {trace:?}\n[quadrature]\nnodes = {nodes}\n"
        );
        let c = parse_str(&src).unwrap();
        let back = parse_str(&c.to_toml()).unwrap();
        prop_assert_eq!(c.hash(), back.hash());
        prop_assert_eq!(c, back);
    }

    #[test]
    fn number_format_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let s = num(x);
        prop_assert_eq!(s.parse::<f64>().unwrap(), if x == 0.0 { 0.0 } else { x });
        let mantissa = s.trim_start_matches('-').split('e').next().unwrap();
        prop_assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
    }

    #[test]
    fn cutoffs_stay_in_unit_interval(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let s = smoothstep(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(smoothstep(x.max(y)) >= smoothstep(x.min(y)));
        let b = bump(y);
        prop_assert!((0.0..=1.0).contains(&b));
        if y.abs() >= 1.0 {
            prop_assert_eq!(b, 0.0);
        }
    }
}
