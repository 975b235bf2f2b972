//! Acceptance criteria, one test each. Every test writes a single
//! `PASS`/`FAIL` line to stderr with the measured quantity and its runtime before
//! asserting.

use finsler_reeb::app::{self, Task};
use finsler_reeb::config::parse_str;
use finsler_reeb::equidist::{self, cesaro_schedule, discrepancy_report, target, torus_basis};
use finsler_reeb::expr::Expr;
use finsler_reeb::flow::{conjugacy_error, FlowOptions, UnitCotangentState};
use finsler_reeb::local_model::lemma31_batch;
use finsler_reeb::metric::{FiberAreaMethod, FinslerMetric, QuadratureOptions, M2, V2};
use finsler_reeb::ode::OdeOptions;
use finsler_reeb::orbit::{catalog_family, projected_length, ClosedOrbit, FamilySpec, OrbitOptions, ReebCurrent};
use finsler_reeb::perturbation::{
    build_tube, check_orbit_preserved, derivative_fd, nondegenerify, perturbed_metric, predicted_derivative,
    PerturbationSpec, TubeBump, MARGIN,
};
use finsler_reeb::poincare::{poincare_map, NormalForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

fn report(id: u32, title: &str, ok: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let pass = ok && in_time;
    let line = format!(
        "{} AC{id:02} {title}: {detail}; {:.2}s (budget {}s){}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { " over budget" }
    );
    // straight to the handle so the line survives output capture
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    pass
}

fn riemannian_torus() -> FinslerMetric {
    FinslerMetric::riemannian_torus([
        Expr::parse("2 + sin(2*pi*q1)").unwrap(),
        Expr::parse("0.3*cos(2*pi*q2)").unwrap(),
        Expr::parse("1.5").unwrap(),
    ])
}

fn conformal_torus() -> FinslerMetric {
    FinslerMetric::conformal_torus(Expr::parse("0.2*sin(2*pi*q1) + 0.1*cos(2*pi*q2)").unwrap())
}

#[test]
fn ac01_legendre_duality() {
    let start = Instant::now();
    let metrics = [
        FinslerMetric::euclidean_torus(),
        riemannian_torus(),
        FinslerMetric::randers_torus(V2::new(0.3, -0.2)),
        conformal_torus(),
        FinslerMetric::katok(0.3, 1e-3).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut roundtrip, mut euler, mut closed_form): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let m = &metrics[rng.random_range(0..metrics.len())];
        let c = m.atlas.chart();
        let q = loop {
            let q = [0, 1].map(|i| c.lo[i] + (c.hi[i] - c.lo[i]) * rng.random::<f64>());
            if m.atlas.check(q).is_ok() {
                break q;
            }
        };
        let th = 2.0 * PI * rng.random::<f64>();
        let v = V2::new(th.cos(), th.sin()) * (0.2 + 3.0 * rng.random::<f64>());
        let f = m.eval(q, v).unwrap();
        let p = m.legendre(q, v).unwrap();
        roundtrip = roundtrip.max((m.legendre_inverse(q, p).unwrap() - v).norm() / v.norm());
        euler = euler.max((p.dot(&v) - f * f).abs() / (f * f));
        // independent check for the quadratic families: p = G v
        if let Some((g, _)) = m.norm.quadratic(q) {
            closed_form = closed_form.max((p - g * v).norm() / p.norm());
        }
    }
    let ok = roundtrip < 1e-9 && euler < 1e-10 && closed_form < 1e-12;
    let detail = format!("roundtrip {roundtrip:.2e} < 1e-9, Euler {euler:.2e} < 1e-10, p = Gv {closed_form:.2e}");
    assert!(report(1, "Legendre duality", ok, detail, start.elapsed(), Duration::from_secs(10)));
}

#[test]
fn ac02_length_equals_period() {
    let start = Instant::now();
    let opts = OrbitOptions::default();
    let families = [
        FinslerMetric::euclidean_torus(),
        FinslerMetric::flat_torus(M2::new(4.0, 0.0, 0.0, 1.0)),
        FinslerMetric::randers_torus(V2::new(0.3, 0.1)),
        riemannian_torus(),
        conformal_torus(),
        FinslerMetric::round_sphere(1e-3),
        FinslerMetric::waist(1.5),
        FinslerMetric::katok(0.3, 1e-3).unwrap(),
    ];
    let (mut worst, mut count): (f64, usize) = (0.0, 0);
    for m in &families {
        let spec = FamilySpec {
            max_index: 1,
            ..Default::default()
        };
        let cat = catalog_family(m, &spec, &opts).unwrap();
        assert!(!cat.is_empty(), "{} has no orbits", m.label);
        for o in &cat {
            worst = worst.max((o.period - projected_length(m, o).unwrap()).abs());
            count += 1;
        }
    }
    let detail = format!("max |T - l_F| {worst:.2e} < 1e-7 over {count} orbits on {} metrics", families.len());
    assert!(report(2, "length = period", worst < 1e-7, detail, start.elapsed(), Duration::from_secs(30)));
}

#[test]
fn ac03_volume_identities() {
    let start = Instant::now();
    let sources = [
        "1",
        "2 + cos(2*pi*q1)",
        "1 + 0.5*sin(2*pi*q2)",
        "3 + cos(2*pi*(q1 + q2))",
        "exp(sin(2*pi*q1)*cos(2*pi*q2))",
    ];
    let functions: Vec<Expr> = sources.iter().map(|s| Expr::parse(s).unwrap()).collect();
    let relative = |t: &equidist::Target| (t.contact - 2.0 * PI * t.integral).abs() / (2.0 * PI * t.integral).abs();
    let exact = QuadratureOptions::default();
    let mut riemannian: f64 = 0.0;
    for m in [riemannian_torus(), FinslerMetric::flat_torus(M2::new(2.0, 0.5, 0.5, 1.0))] {
        for f in &functions {
            riemannian = riemannian.max(relative(&target(&m, &|q| f.value(q), &exact).unwrap()));
        }
    }
    let mc = QuadratureOptions {
        fiber: FiberAreaMethod::MonteCarlo { per_axis: 1000, seed: 3 },
        ..exact
    };
    let randers_metric = FinslerMetric::randers_torus(V2::new(0.3, 0.1));
    let mut randers: f64 = 0.0;
    for f in &functions {
        randers = randers.max(relative(&target(&randers_metric, &|q| f.value(q), &mc).unwrap()));
    }
    let ok = riemannian < 1e-9 && randers < 1e-4;
    let detail = format!("Riemannian {riemannian:.2e} < 1e-9, Randers (Monte Carlo) {randers:.2e} < 1e-4, 5 functions");
    assert!(report(3, "volume identities", ok, detail, start.elapsed(), Duration::from_secs(60)));
}

#[test]
fn ac04_reeb_spray_conjugacy() {
    let start = Instant::now();
    let opts = FlowOptions {
        ode: OdeOptions::with_tol(1e-12),
        samples: 400,
    };
    let c = conformal_torus();
    let k = FinslerMetric::katok(0.3, 1e-3).unwrap();
    let mut worst: f64 = 0.0;
    for (m, q, v) in [
        (&c, [0.1, 0.3], [0.6, 0.8]),
        (&c, [0.7, 0.2], [-1.0, 0.3]),
        (&k, [PI / 2.0, 0.0], [0.3f64.sin(), 0.3f64.cos()]),
        (&k, [1.2, 1.0], [0.2, -1.0]),
    ] {
        let s = UnitCotangentState::from_tangent(m, q, v).unwrap();
        worst = worst.max(conjugacy_error(m, &s, 10.0, &opts).unwrap());
    }
    let detail = format!("max divergence over T = 10: {worst:.2e} < 1e-6");
    assert!(report(4, "Reeb/spray conjugacy", worst < 1e-6, detail, start.elapsed(), Duration::from_secs(30)));
}

#[test]
fn ac05_local_model_derivative() {
    let start = Instant::now();
    let rows = lemma31_batch(7, 24).unwrap();
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let detail = format!("{} instances, max relative error {worst:.2e} < 1e-4", rows.len());
    assert!(report(5, "local model derivative", worst < 1e-4, detail, start.elapsed(), Duration::from_secs(60)));
}

fn sphere_equator() -> (FinslerMetric, ClosedOrbit) {
    let m = FinslerMetric::round_sphere(1e-3);
    let o = catalog_family(&m, &FamilySpec::default(), &OrbitOptions::default()).unwrap().remove(0);
    (m, o)
}

#[test]
fn ac06_orbit_preservation() {
    let start = Instant::now();
    let (m, o) = sphere_equator();
    let a = PerturbationSpec::a_profile(0, [1.0, 0.5, 0.5]);
    let mut worst: f64 = 0.0;
    for s in [0.01, 0.05, 0.1] {
        let pm = perturbed_metric(&m, &o, &a, s).unwrap();
        worst = worst.max(check_orbit_preserved(&pm, &m, &o).unwrap());
    }
    let b = PerturbationSpec::b_profile(0, [0.5, 0.5, 0.5]);
    let control = check_orbit_preserved(&perturbed_metric(&m, &o, &b, 0.05).unwrap(), &m, &o).unwrap();
    let ok = worst < 1e-8 && control > 1e-4;
    let detail = format!("a-profile residual {worst:.2e} < 1e-8, b-profile control {control:.2e} > 1e-4");
    assert!(report(6, "orbit preservation", ok, detail, start.elapsed(), Duration::from_secs(60)));
}

#[test]
fn ac07_classification_oracles() {
    let start = Instant::now();
    let opts = OrbitOptions::default();
    let tol = 1e-6;
    let mut notes = Vec::new();
    let mut ok = true;

    let torus = FinslerMetric::euclidean_torus();
    for o in catalog_family(&torus, &FamilySpec::default(), &opts).unwrap() {
        let pm = poincare_map(&torus, &o, &opts, tol).unwrap();
        let good = matches!(pm.class.form, NormalForm::Parabolic { sign: 1, b } if b != 0) && !pm.class.nondegenerate;
        ok &= good;
    }
    notes.push("torus parabolic(+1, b != 0)".to_string());

    let sphere = FinslerMetric::round_sphere(1e-3);
    let mut id_err: f64 = 0.0;
    for o in catalog_family(&sphere, &FamilySpec::default(), &opts).unwrap() {
        let pm = poincare_map(&sphere, &o, &opts, tol).unwrap();
        id_err = id_err.max((pm.m - M2::identity()).abs().max());
        ok &= !pm.class.nondegenerate;
    }
    ok &= id_err < 1e-6;
    notes.push(format!("sphere |M - I| {id_err:.2e}"));

    let waist = FinslerMetric::waist(1.5);
    let o = catalog_family(&waist, &FamilySpec::default(), &opts).unwrap().remove(0);
    let pm = poincare_map(&waist, &o, &opts, tol).unwrap();
    let expected = (2.0 * PI).exp();
    let rel = match pm.class.form {
        NormalForm::Hyperbolic { a } => {
            let big = a.abs().max(1.0 / a.abs());
            (big - expected).abs() / expected
        }
        _ => f64::INFINITY,
    };
    ok &= rel < 1e-3;
    notes.push(format!("waist multiplier rel {rel:.2e}"));

    let katok = FinslerMetric::katok(0.3, 1e-3).unwrap();
    let cat = catalog_family(&katok, &FamilySpec::default(), &opts).unwrap();
    let mut periods: Vec<f64> = cat.iter().map(|o| o.period).collect();
    periods.sort_by(f64::total_cmp);
    let want = [2.0 * PI / 1.3, 2.0 * PI / 0.7];
    let kerr = if periods.len() == 2 {
        (periods[0] - want[0]).abs().max((periods[1] - want[1]).abs())
    } else {
        f64::INFINITY
    };
    ok &= kerr < 1e-5;
    notes.push(format!("Katok lengths err {kerr:.2e}"));

    assert!(report(7, "classification oracles", ok, notes.join(", "), start.elapsed(), Duration::from_secs(120)));
}

#[test]
fn ac08_nondegenerification() {
    let start = Instant::now();
    let opts = OrbitOptions::default();
    let (m, o) = sphere_equator();
    let nd = nondegenerify(&m, std::slice::from_ref(&o), 0.1, &opts).unwrap();
    let r = &nd.reports[0];
    let after = poincare_map(&nd.metric, &o, &opts, 1e-6).unwrap().class;
    let margin = if after.nondegenerate { after.eigenvalue_margin() } else { 0.0 };
    let (bump, _) = &nd.metric.bumps[0];
    let fresh = TubeBump {
        tube: build_tube(&m, &o, bump.spec.t0, bump.spec.eps, bump.spec.radius).unwrap(),
        spec: bump.spec,
    };
    let pred = predicted_derivative(&m, &o, &fresh, &opts).unwrap();
    let fd = derivative_fd(&m, &o, &fresh, 1e-3, &opts).unwrap();
    let rel = (pred - fd).norm() / fd.norm();
    let ok = r.amplitude > 0.0 && r.amplitude <= 0.1 && margin >= MARGIN && rel < 0.05;
    let detail = format!(
        "amplitude {:.4} <= 0.1, eigenvalue margin {margin:.2e} >= 1e-4, dM/ds vs prediction rel {rel:.2e} < 5e-2",
        r.amplitude
    );
    assert!(report(8, "nondegenerification", ok, detail, start.elapsed(), Duration::from_secs(120)));
}

#[test]
fn ac09_equidistribution() {
    let start = Instant::now();
    let m = FinslerMetric::euclidean_torus();
    let opts = OrbitOptions::default();
    let cat = catalog_family(
        &m,
        &FamilySpec {
            max_index: 8,
            ..Default::default()
        },
        &opts,
    )
    .unwrap();
    let currents: Vec<(String, ReebCurrent)> = (2..=8)
        .map(|k| {
            let ids = cat.iter().filter(|o| o.drift[0].abs().max(o.drift[1].abs()) <= k as f64).map(|o| o.id);
            (format!("K{k}"), ReebCurrent::equal_weights(ids).unwrap())
        })
        .collect();
    let rep = discrepancy_report(&m, &cat, &currents, &torus_basis(), &QuadratureOptions::default()).unwrap();
    let dev = |k: i64, f: &str| {
        rep.rows.iter().find(|r| r.current == format!("K{k}") && r.function == f).unwrap().deviation
    };
    let k8_worst = rep.rows.iter().filter(|r| r.current == "K8").map(|r| r.deviation).fold(0.0, f64::max);
    let mut ok = k8_worst < 0.05;
    for f in ["cos_q1", "sin_q2", "cos_q1_q2"] {
        ok &= dev(2, f) > dev(4, f) && dev(4, f) > dev(8, f);
    }
    // Cesàro concatenation on synthetic stage sequences
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cesaro_worst: f64 = 0.0;
    for _ in 0..20 {
        let stages: Vec<(f64, f64)> = (0..64)
            .map(|_| {
                let b = 0.1 + 10.0 * rng.random::<f64>();
                (b * (2.0 * rng.random::<f64>() - 1.0), b)
            })
            .collect();
        let c = cesaro_schedule(&stages).unwrap();
        for (i, (r, s)) in c.running.iter().zip(&c.stage_ratios).enumerate() {
            cesaro_worst = cesaro_worst.max((r - s).abs() * (i + 1) as f64 / 2.0);
        }
    }
    ok &= cesaro_worst <= 1.0;
    let detail = format!(
        "K8 max deviation {k8_worst:.2e} < 0.05, deviations decrease K2 > K4 > K8, Cesàro N|ratio - stage|/2 max {cesaro_worst:.3}"
    );
    assert!(report(9, "equidistribution", ok, detail, start.elapsed(), Duration::from_secs(120)));
}

#[test]
fn ac10_reproducibility() {
    let start = Instant::now();
    let cfg = parse_str(
        "seed = 11\n[metric]\nfamily = \"flat_torus\"\ng = [[2.0, 0.5], [0.5, 1.0]]\n[equidist]\nks = [2, 4]\n[lemma31]\ninstances = 4\n",
    )
    .unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let tasks = [Task::Verify, Task::Flow, Task::OrbitsClassify, Task::Equidist, Task::CheckLemma31];
    let mut files = 0;
    for d in &dirs {
        for t in tasks {
            let out = app::run(&cfg, t).unwrap();
            app::write_artifacts(d.path(), &out.artifacts).unwrap();
        }
    }
    let mut identical = true;
    for entry in std::fs::read_dir(dirs[0].path()).unwrap() {
        let entry = entry.unwrap();
        let a = std::fs::read(entry.path()).unwrap();
        let b = std::fs::read(dirs[1].path().join(entry.file_name())).unwrap();
        identical &= a == b;
        files += 1;
    }
    let detail = format!("{files} CSV/JSON/SVG artifacts byte-identical across two runs");
    assert!(report(10, "reproducibility", identical && files >= 8, detail, start.elapsed(), Duration::from_secs(120)));
}
