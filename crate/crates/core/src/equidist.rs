//! Weighted averages of test functions over families of closed geodesics,
//! compared with Finsler volume averages, and the concatenation scheme
//! that turns stage-wise ratios into a single sequence.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::io::num;
use crate::metric::{FiberAreaMethod, FinslerMetric, QuadratureOptions};
use crate::orbit::{ClosedOrbit, ReebCurrent};
use num_bigint::BigUint;
use num_traits::{FromPrimitive, One};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub id: String,
    pub expr: Expr,
}

impl TestFunction {
    pub fn parse(id: &str, src: &str) -> Result<Self> {
        let expr = Expr::parse(src).map_err(|e| Error::Validation {
            position: None,
            message: format!("test function {id}: {e}"),
        })?;
        Ok(TestFunction { id: id.into(), expr })
    }

    pub fn eval(&self, q: [f64; 2]) -> f64 {
        self.expr.value(q)
    }
}

/// `{1, cos2πq₁, sin2πq₂, cos2π(q₁+q₂)}`.
pub fn torus_basis() -> Vec<TestFunction> {
    [
        ("one", "1"),
        ("cos_q1", "cos(2*pi*q1)"),
        ("sin_q2", "sin(2*pi*q2)"),
        ("cos_q1_q2", "cos(2*pi*(q1+q2))"),
    ]
    .iter()
    .map(|(i, s)| TestFunction::parse(i, s).expect("built-in test function"))
    .collect()
}

/// Legendre polynomials in `cos u` times low harmonics in `v`.
pub fn revolution_basis() -> Vec<TestFunction> {
    [
        ("one", "1"),
        ("p1", "cos(u)"),
        ("p2", "(3*cos(u)^2 - 1)/2"),
        ("p1_cos_v", "cos(u)*cos(v)"),
        ("p2_sin_v", "(3*cos(u)^2 - 1)/2*sin(v)"),
    ]
    .iter()
    .map(|(i, s)| TestFunction::parse(i, s).expect("built-in test function"))
    .collect()
}

/// `Σ r·σ(fβ) / Σ r·l` over the orbits of a current.
pub fn ratio(catalog: &[ClosedOrbit], current: &ReebCurrent, f: &dyn Fn([f64; 2]) -> f64) -> Result<f64> {
    let (a, b) = ratio_parts(catalog, current, f)?;
    Ok(a / b)
}

fn ratio_parts(catalog: &[ClosedOrbit], current: &ReebCurrent, f: &dyn Fn([f64; 2]) -> f64) -> Result<(f64, f64)> {
    if current.terms.is_empty() {
        return Err(Error::EmptyCurrent);
    }
    let (mut a, mut b) = (0.0, 0.0);
    for &(id, r) in &current.terms {
        let o = catalog.iter().find(|o| o.id == id).ok_or(Error::UnknownOrbit(id))?;
        a += r * o.line_pair(f);
        b += r * o.period;
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    /// `∫ f dvol / vol`.
    pub mean: f64,
    pub integral: f64,
    /// `∫ |f| dvol`.
    pub abs_integral: f64,
    pub volume: f64,
    /// `∫ fλ∧dλ` over the unit cotangent bundle.
    pub contact: f64,
    /// `|contact − 2π∫f dvol|` relative to `2π∫|f| dvol`.
    pub contact_error: f64,
}

/// Tolerance the contact-side identity must meet for a fiber-area method.
pub fn contact_tolerance(method: FiberAreaMethod) -> f64 {
    match method {
        FiberAreaMethod::Exact => 1e-9,
        FiberAreaMethod::MonteCarlo { .. } => 1e-4,
    }
}

/// Volume average of `f`, with the contact-side value computed from polar
/// integration of the dual unit disks and checked against it.
pub fn target(m: &FinslerMetric, f: &dyn Fn([f64; 2]) -> f64, opts: &QuadratureOptions) -> Result<Target> {
    let volume = m.volume(opts)?;
    let integral = m.surface_integral(f, opts)?;
    // only a scale for the relative error; |f| has kinks, so no refinement check
    let lax = QuadratureOptions {
        tol: f64::INFINITY,
        ..*opts
    };
    let abs = m.surface_integral(&|q| f(q).abs(), &lax)?;
    let polar = |q: [f64; 2]| m.fiber_area_polar(q, opts.angular_nodes, 1e-12).map(|a| 2.0 * a);
    let contact = m.surface_integral_weighted(f, &|q| if m.at_pole(q) { Ok(0.0) } else { polar(q) }, opts)?;
    let scale = 2.0 * PI * abs;
    let contact_error = if scale > 0.0 { (contact - 2.0 * PI * integral).abs() / scale } else { 0.0 };
    if contact_error > contact_tolerance(opts.fiber) {
        return Err(Error::QuadratureUnderResolved(contact_error));
    }
    Ok(Target {
        mean: integral / volume,
        integral,
        abs_integral: abs,
        volume,
        contact,
        contact_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cesaro {
    /// Multiplicities `n_N` as decimal strings.
    pub multiplicities: Vec<String>,
    /// `𝓐_N / 𝓑_N` after each stage.
    pub running: Vec<f64>,
    pub stage_ratios: Vec<f64>,
}

/// Concatenates stages `(A_i, B_i)` with multiplicities
/// `n_N = ⌈N·𝓑_{N−1}/B_N⌉`, `n₁ = 1`.
pub fn cesaro_schedule(stages: &[(f64, f64)]) -> Result<Cesaro> {
    let mut mult = Vec::with_capacity(stages.len());
    let mut running = Vec::with_capacity(stages.len());
    let (mut big_a, mut big_b) = (0.0f64, 0.0f64);
    for (i, &(a, b)) in stages.iter().enumerate() {
        if !(b > 0.0) {
            return Err(Error::Validation {
                position: None,
                message: format!("stage {} has non-positive denominator {b}", i + 1),
            });
        }
        let big_n = (i + 1) as f64;
        let n = if i == 0 { 1.0 } else { (big_n * big_b / b).ceil().max(1.0) };
        let exact = if i == 0 {
            BigUint::one()
        } else {
            BigUint::from_f64(n).ok_or_else(|| Error::Validation {
                position: None,
                message: format!("multiplicity at stage {} is not finite", i + 1),
            })?
        };
        mult.push(exact.to_string());
        big_a += n * a;
        big_b += n * b;
        running.push(big_a / big_b);
    }
    Ok(Cesaro {
        multiplicities: mult,
        running,
        stage_ratios: stages.iter().map(|(a, b)| a / b).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub metric: String,
    pub current: String,
    pub function: String,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    pub target: f64,
    /// `|ratio − target|`.
    pub deviation: f64,
    /// `C_N(fλ)`: the current normalised to the contact volume.
    pub contact_current: f64,
    pub contact_target: f64,
    pub contact_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquidistReport {
    pub metric: String,
    pub functions: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub cesaro: Option<Cesaro>,
}

pub const REPORT_HEADER: &str = "metric,current,function,numerator,denominator,ratio,target,deviation,contact_current,contact_target,contact_deviation";

impl EquidistReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let fields = [
                r.metric.clone(),
                r.current.clone(),
                r.function.clone(),
                num(r.numerator),
                num(r.denominator),
                num(r.ratio),
                num(r.target),
                num(r.deviation),
                num(r.contact_current),
                num(r.contact_target),
                num(r.contact_deviation),
            ];
            s.push_str(&crate::io::csv_row(&fields));
        }
        s
    }

    /// Bar chart of deviations, one bar per row.
    pub fn to_svg(&self) -> String {
        let size = 480.0;
        let mut svg = crate::io::Svg::new([0.0, 0.0], [1.0, 1.0], size);
        let n = self.rows.len().max(1) as f64;
        let top = self.rows.iter().fold(0.0f64, |a, r| a.max(r.deviation)).max(1e-300);
        let w = size / n;
        for (i, r) in self.rows.iter().enumerate() {
            let h = (r.deviation / top) * (size - 40.0);
            svg.rect(i as f64 * w + 0.1 * w, size - 20.0 - h, 0.8 * w, h, "steelblue");
        }
        svg.text([0.01, 0.97], &format!("{}: max deviation {:.3e}", self.metric, top));
        svg.finish()
    }
}

/// Ratio, target and contact-side deviation for every (current, function)
/// pair, rows in input order.
pub fn discrepancy_report(
    m: &FinslerMetric,
    catalog: &[ClosedOrbit],
    currents: &[(String, ReebCurrent)],
    functions: &[TestFunction],
    opts: &QuadratureOptions,
) -> Result<EquidistReport> {
    let targets: Vec<Target> = functions.iter().map(|f| target(m, &|q| f.eval(q), opts)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (cid, cur) in currents {
        for (f, t) in functions.iter().zip(&targets) {
            let (a, b) = ratio_parts(catalog, cur, &|q| f.eval(q))?;
            let ratio = a / b;
            let contact_current = ratio * 2.0 * PI * t.volume;
            rows.push(ReportRow {
                metric: m.label.clone(),
                current: cid.clone(),
                function: f.id.clone(),
                numerator: a,
                denominator: b,
                ratio,
                target: t.mean,
                deviation: (ratio - t.mean).abs(),
                contact_current,
                contact_target: t.contact,
                contact_deviation: (contact_current - t.contact).abs() / (2.0 * PI * t.abs_integral).max(1e-300),
            });
        }
    }
    Ok(EquidistReport {
        metric: m.label.clone(),
        functions: functions.iter().map(|f| f.id.clone()).collect(),
        rows,
        cesaro: None,
    })
}
