//! Batch runner behind the command-line tool: each task turns a validated
//! configuration into a list of named artifacts. Writing them is left to
//! the caller so runs can be compared in memory.

use crate::config::{Command, PerturbationConfig, ProfileKind, RunConfig};
use crate::equidist::{self, discrepancy_report, EquidistReport, TestFunction};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, UnitCotangentState};
use crate::io::{self, num, Svg};
use crate::local_model::{lemma31_batch, Lemma31Row};
use crate::metric::{min_eigenvalue, FinslerMetric, Preset, V2};
use crate::orbit::{self, catalog_family, ClosedOrbit, FamilySpec, ReebCurrent};
use crate::perturbation::{self, build_tube, combine, convexity_bound, nondegenerify, TubeBump};
use crate::poincare::{self, NormalForm, NormalFormClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Verify,
    Flow,
    OrbitsFind,
    OrbitsClassify,
    OrbitsList,
    PerturbApply,
    PerturbNondegenerify,
    Equidist,
    CheckLemma31,
    Report,
}

impl Task {
    pub fn for_command(c: Command) -> Task {
        match c {
            Command::Verify => Task::Verify,
            Command::Flow => Task::Flow,
            Command::Orbits => Task::OrbitsFind,
            Command::Classify => Task::OrbitsClassify,
            Command::Perturb => Task::PerturbApply,
            Command::Equidist => Task::Equidist,
            Command::CheckLemma31 => Task::CheckLemma31,
            Command::Report => Task::Report,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Verify => "verify",
            Task::Flow => "flow",
            Task::OrbitsFind => "orbits-find",
            Task::OrbitsClassify => "orbits-classify",
            Task::OrbitsList => "orbits-list",
            Task::PerturbApply => "perturb-apply",
            Task::PerturbNondegenerify => "perturb-nondegenerify",
            Task::Equidist => "equidist",
            Task::CheckLemma31 => "check-lemma31",
            Task::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// Human-readable lines for standard output.
    pub summary: Vec<String>,
    /// Set when the task ran to completion but a check failed.
    pub failure: Option<Error>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, Error::exit_code)
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.contents.as_str())
    }
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub task: String,
}

impl Meta {
    fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={} task={}\n", self.config_hash, self.seed, self.task)
    }

    fn svg_comment(&self) -> String {
        format!("<!-- config_hash={} seed={} task={} -->\n", self.config_hash, self.seed, self.task)
    }
}

/// Strips the provenance comment from a CSV artifact.
pub fn csv_body(s: &str) -> &str {
    match s.strip_prefix('#') {
        Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
        None => s,
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    meta: &'a Meta,
    #[serde(flatten)]
    body: T,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    meta: Meta,
    out: Vec<Artifact>,
    summary: Vec<String>,
}

impl Ctx<'_> {
    fn json<T: Serialize>(&mut self, name: &str, body: T) {
        let contents = io::json(&Stamped { meta: &self.meta, body });
        self.out.push(Artifact { name: name.into(), contents });
    }

    fn csv(&mut self, name: &str, body: String) {
        let contents = self.meta.csv_comment() + &body;
        self.out.push(Artifact { name: name.into(), contents });
    }

    fn svg(&mut self, name: &str, body: String) {
        if self.cfg.output.svg {
            let contents = self.meta.svg_comment() + &body;
            self.out.push(Artifact { name: name.into(), contents });
        }
    }

    fn say(&mut self, line: String) {
        self.summary.push(line);
    }
}

/// Caps the global worker pool. Only the first call has an effect.
pub fn set_threads(n: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation {
                position: None,
                message: format!("cannot set thread count: {e}"),
            })
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

pub fn run(cfg: &RunConfig, task: Task) -> Result<Outcome> {
    let mut ctx = Ctx {
        cfg,
        meta: Meta {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            task: task.name().into(),
        },
        out: Vec::new(),
        summary: Vec::new(),
    };
    let failure = match task {
        Task::Verify => verify(&mut ctx)?,
        Task::Flow => flow_task(&mut ctx)?,
        Task::OrbitsFind => catalog_task(&mut ctx, false)?,
        Task::OrbitsClassify => catalog_task(&mut ctx, true)?,
        Task::OrbitsList => list_task(&mut ctx)?,
        Task::PerturbApply => perturb_task(&mut ctx)?,
        Task::PerturbNondegenerify => nondegenerify_task(&mut ctx)?,
        Task::Equidist => equidist_task(&mut ctx)?,
        Task::CheckLemma31 => lemma31_task(&mut ctx)?,
        Task::Report => report_task(&mut ctx)?,
    };
    Ok(Outcome {
        artifacts: ctx.out,
        summary: ctx.summary,
        failure,
    })
}

/// Writes artifacts in order into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- catalog

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub trace: f64,
    pub det: f64,
    pub class: String,
    /// Rotation angle, multiplier or shear sign, by class.
    pub theta_or_a_or_b: f64,
    /// Sign of the parabolic eigenvalue.
    pub sign: Option<i8>,
    pub nondegenerate: bool,
    pub uncertain: bool,
    pub rational_rotation: Option<(i64, i64, f64)>,
    pub eigenvalue_margin: f64,
}

impl Classification {
    pub fn new(trace: f64, det: f64, c: &NormalFormClass) -> Self {
        let (class, value, sign) = match c.form {
            NormalForm::Parabolic { sign, b } => ("parabolic", b as f64, Some(sign)),
            NormalForm::Hyperbolic { a } => ("hyperbolic", a, None),
            NormalForm::Elliptic { theta } => ("elliptic", theta, None),
        };
        Classification {
            trace,
            det,
            class: class.into(),
            theta_or_a_or_b: value,
            sign,
            nondegenerate: c.nondegenerate,
            uncertain: c.uncertain,
            rational_rotation: c.rational_rotation,
            eigenvalue_margin: c.eigenvalue_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    pub label: String,
    pub chart: usize,
    pub q0: [f64; 2],
    pub p0: [f64; 2],
    pub period: f64,
    pub length: f64,
    pub residual: f64,
    pub minimal: bool,
    pub iterate_of: Option<usize>,
    pub drift: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
}

impl CatalogEntry {
    fn new(o: &ClosedOrbit) -> Self {
        CatalogEntry {
            id: o.id,
            label: o.label.clone(),
            chart: o.chart,
            q0: o.start.q,
            p0: o.start.p,
            period: o.period,
            length: o.length,
            residual: o.residual,
            minimal: o.minimal,
            iterate_of: o.iterate_of,
            drift: o.drift,
            classification: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub config_hash: String,
    pub seed: u64,
    pub task: String,
    pub metric: String,
    pub metric_hash: String,
    pub orbits: Vec<CatalogEntry>,
}

pub const ORBITS_HEADER: &str = "id,label,q1,q2,p1,p2,period,length,residual,minimal,class,trace,nondegenerate";

fn metric_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(&cfg.metric).expect("metric section serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn orbits_csv(entries: &[CatalogEntry]) -> String {
    let mut s = format!("{ORBITS_HEADER}\n");
    for e in entries {
        let (class, trace, nd) = match &e.classification {
            Some(c) => (c.class.clone(), num(c.trace), c.nondegenerate.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        s.push_str(&io::csv_row(&[
            e.id.to_string(),
            e.label.clone(),
            num(e.q0[0]),
            num(e.q0[1]),
            num(e.p0[0]),
            num(e.p0[1]),
            num(e.period),
            num(e.length),
            num(e.residual),
            e.minimal.to_string(),
            class,
            trace,
            nd,
        ]));
    }
    s
}

fn orbits_svg(m: &FinslerMetric, orbits: &[ClosedOrbit]) -> String {
    let c = m.atlas.chart();
    let mut svg = Svg::new(c.lo, c.hi, 400.0);
    let palette = ["steelblue", "darkorange", "seagreen", "crimson", "purple", "saddlebrown"];
    for (i, o) in orbits.iter().enumerate() {
        for seg in io::wrap_segments(&o.positions(), c.lo, [m.atlas.period(0), m.atlas.period(1)]) {
            svg.polyline(&seg, palette[i % palette.len()]);
        }
    }
    svg.finish()
}

fn classify_all(cfg: &RunConfig, m: &FinslerMetric, orbits: &[ClosedOrbit]) -> Result<Vec<Classification>> {
    let opts = cfg.orbit_options();
    let tol = cfg.trace_tol();
    let one = |o: &ClosedOrbit| -> Result<Classification> {
        let pm = poincare::poincare_map(m, o, &opts, tol)?;
        Ok(Classification::new(pm.trace, pm.det, &pm.class))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        orbits.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        orbits.iter().map(one).collect()
    }
}

fn build_catalog(cfg: &RunConfig, m: &FinslerMetric, spec: &FamilySpec) -> Result<Vec<ClosedOrbit>> {
    catalog_family(m, spec, &cfg.orbit_options())
}

fn catalog_task(ctx: &mut Ctx, classify: bool) -> Result<Option<Error>> {
    let m = ctx.cfg.build_metric()?;
    let orbits = build_catalog(ctx.cfg, &m, &ctx.cfg.orbits)?;
    let mut entries: Vec<CatalogEntry> = orbits.iter().map(CatalogEntry::new).collect();
    if classify {
        for (e, c) in entries.iter_mut().zip(classify_all(ctx.cfg, &m, &orbits)?) {
            e.classification = Some(c);
        }
    }
    ctx.say(format!("{}: {} closed orbits", m.label, entries.len()));
    for e in &entries {
        let class = e.classification.as_ref().map_or(String::new(), |c| {
            format!("  {} trace {:.9} {}", c.class, c.trace, if c.nondegenerate { "nondegenerate" } else { "degenerate" })
        });
        ctx.say(format!("  #{} {} period {:.12}{}", e.id, e.label, e.period, class));
    }
    let catalog = Catalog {
        config_hash: ctx.meta.config_hash.clone(),
        seed: ctx.meta.seed,
        task: ctx.meta.task.clone(),
        metric: m.label.clone(),
        metric_hash: metric_hash(ctx.cfg),
        orbits: entries.clone(),
    };
    ctx.out.push(Artifact {
        name: "catalog.json".into(),
        contents: io::json(&catalog),
    });
    ctx.csv("orbits.csv", orbits_csv(&entries));
    let svg = orbits_svg(&m, &orbits);
    ctx.svg("orbits.svg", svg);
    Ok(None)
}

fn list_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let path = Path::new(&ctx.cfg.output.dir).join("catalog.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let catalog: Catalog = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", path.display()),
    })?;
    ctx.say(format!(
        "{} ({} orbits, config {})",
        catalog.metric,
        catalog.orbits.len(),
        &catalog.config_hash[..12.min(catalog.config_hash.len())]
    ));
    for e in &catalog.orbits {
        ctx.say(format!("  #{} {} period {:.12}", e.id, e.label, e.period));
    }
    Ok(None)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `value < tolerance`, or `value > tolerance` for lower bounds.
    pub lower_bound: bool,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn upper(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            lower_bound: false,
            passed: value < tolerance,
            detail,
        }
    }

    fn lower(name: &str, value: f64, bound: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: bound,
            lower_bound: true,
            passed: value > bound,
            detail,
        }
    }
}

fn random_point(m: &FinslerMetric, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let c = m.atlas.chart();
    loop {
        let q = [0, 1].map(|i| c.lo[i] + (c.hi[i] - c.lo[i]) * rng.random::<f64>());
        if m.atlas.check(q).is_ok() {
            return q;
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng) -> V2 {
    let t = 2.0 * PI * rng.random::<f64>();
    let r = 0.5 + 1.5 * rng.random::<f64>();
    V2::new(r * t.cos(), r * t.sin())
}

fn default_functions(m: &FinslerMetric) -> Vec<TestFunction> {
    match m.preset {
        Some(Preset::RoundSphere | Preset::Waist { .. } | Preset::Revolution | Preset::Katok { .. }) => {
            equidist::revolution_basis()
        }
        _ => equidist::torus_basis(),
    }
}

fn test_functions(cfg: &RunConfig, m: &FinslerMetric) -> Result<Vec<TestFunction>> {
    if cfg.equidist.functions.is_empty() {
        return Ok(default_functions(m));
    }
    cfg.equidist.functions.iter().map(|f| TestFunction::parse(&f.id, f.expr.get_ref())).collect()
}

/// Start for the conjugacy check that stays inside the chart for `T = 10`.
fn conjugacy_start(m: &FinslerMetric, rng: &mut ChaCha8Rng) -> Result<UnitCotangentState> {
    let (q, v) = match m.preset {
        Some(Preset::RoundSphere | Preset::Katok { .. }) => ([PI / 2.0, 0.0], [0.3f64.sin(), 0.3f64.cos()]),
        Some(Preset::Waist { .. }) => ([0.0, 0.0], [0.0, 1.0]),
        Some(Preset::Revolution) => {
            let c = m.atlas.chart();
            ([0.5 * (c.lo[0] + c.hi[0]), 0.0], [0.0, 1.0])
        }
        _ => {
            let q = random_point(m, rng);
            let v = random_vector(rng);
            (q, [v[0], v[1]])
        }
    };
    UnitCotangentState::from_tangent(m, q, v)
}

fn verify(ctx: &mut Ctx) -> Result<Option<Error>> {
    let cfg = ctx.cfg;
    let m = cfg.build_metric()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    let samples = 1000;
    let (mut min_eig, mut roundtrip, mut euler, mut dual, mut sym): (f64, f64, f64, f64, f64) =
        (f64::INFINITY, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let q = random_point(&m, &mut rng);
        let v = random_vector(&mut rng);
        min_eig = min_eig.min(min_eigenvalue(&m.primal_jet(q, v)?.fundamental_tensor()));
        let f = m.eval(q, v)?;
        let p = m.legendre(q, v)?;
        roundtrip = roundtrip.max((m.legendre_inverse(q, p)? - v).norm() / v.norm());
        euler = euler.max((p.dot(&v) - f * f).abs() / (f * f));
        dual = dual.max((m.dual_norm(q, p)? - f).abs() / f);
        if m.symmetric {
            sym = sym.max((m.eval(q, -v)? - f).abs() / f);
        }
    }
    let n = format!("{samples} random samples");
    checks.push(Check::lower("fiber_convexity", min_eig, 0.0, format!("smallest fundamental tensor eigenvalue, {n}")));
    checks.push(Check::upper("legendre_roundtrip", roundtrip, 1e-9, format!("relative, {n}")));
    checks.push(Check::upper("euler_identity", euler, 1e-10, format!("|p(v) - F^2| / F^2, {n}")));
    checks.push(Check::upper("dual_norm_of_legendre", dual, 1e-9, format!("|F*(Lv) - F(v)| / F(v), {n}")));
    if m.symmetric {
        checks.push(Check::upper("symmetry", sym, 1e-12, format!("|F(-v) - F(v)| / F(v), {n}")));
    }

    let qo = cfg.quadrature_options();
    let tol = equidist::contact_tolerance(qo.fiber);
    for f in test_functions(cfg, &m)? {
        let value = match equidist::target(&m, &|q| f.eval(q), &qo) {
            Ok(t) => t.contact_error,
            Err(Error::QuadratureUnderResolved(e)) => e,
            Err(e) => return Err(e),
        };
        checks.push(Check::upper(
            &format!("volume_identity[{}]", f.id),
            value,
            tol,
            "|contact - 2pi vol| relative to 2pi int|f|".into(),
        ));
    }

    let flow_opts = FlowOptions {
        ode: cfg.ode(),
        samples: 200,
    };
    let mut conj: f64 = 0.0;
    for _ in 0..3 {
        let s = conjugacy_start(&m, &mut rng)?;
        conj = conj.max(flow::conjugacy_error(&m, &s, 10.0, &flow_opts)?);
    }
    checks.push(Check::upper("reeb_spray_conjugacy", conj, 1e-6, "max chart distance over T = 10, 3 starts".into()));

    let orbits = build_catalog(cfg, &m, &cfg.orbits)?;
    let opts = cfg.orbit_options();
    let (mut len_err, mut residual, mut det_err, mut frame_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for o in &orbits {
        len_err = len_err.max((o.period - orbit::projected_length(&m, o)?).abs());
        residual = residual.max(o.residual);
        let frame = poincare::frame_at(&m, &o.start)?;
        frame_err = frame_err.max(frame.defect());
        let mono = poincare::variational_transport(&m, o, &opts)?;
        let pm = poincare::poincare_in_frame(&mono, &frame)?;
        det_err = det_err.max((pm.determinant() - 1.0).abs());
    }
    let on = format!("{} cataloged orbits", orbits.len());
    checks.push(Check::upper("length_equals_period", len_err, 1e-7, on.clone()));
    checks.push(Check::upper("orbit_residual", residual, *cfg.tolerances.accept.get_ref() * (1.0 + 1e-9), on.clone()));
    checks.push(Check::upper("frame_defect", frame_err, 1e-8, on.clone()));
    checks.push(Check::upper("return_map_symplectic", det_err, 1e-6, on));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    for c in &checks {
        ctx.say(format!(
            "{} {:<32} {:.3e} {} {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            if c.lower_bound { ">" } else { "<" },
            c.tolerance
        ));
    }
    let failure = if failed.is_empty() {
        None
    } else {
        Some(Error::VerificationFailed(failed.join(", ")))
    };
    #[derive(Serialize)]
    struct Suite<'a> {
        metric: &'a str,
        passed: bool,
        checks: &'a [Check],
    }
    let metric = m.label.clone();
    ctx.json(
        "verify.json",
        Suite {
            metric: &metric,
            passed: failure.is_none(),
            checks: &checks,
        },
    );
    Ok(failure)
}

// ---------------------------------------------------------------- flow

fn flow_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let cfg = ctx.cfg;
    let m = cfg.build_metric()?;
    let s = UnitCotangentState::from_tangent(&m, cfg.flow.q0, cfg.flow.v0)?;
    let opts = FlowOptions {
        ode: cfg.ode(),
        samples: *cfg.flow.samples.get_ref(),
    };
    let duration = *cfg.flow.duration.get_ref();
    let traj = flow::integrate(&m, &s, duration, &opts)?;
    let conj = flow::conjugacy_error(&m, &s, duration, &opts)?;
    ctx.say(format!(
        "{}: integrated T = {duration} in {} steps, max |F* - 1| {:.3e}, conjugacy error {:.3e}",
        m.label, traj.steps, traj.max_drift, conj
    ));
    #[derive(Serialize)]
    struct FlowSummary {
        metric: String,
        start: UnitCotangentState,
        duration: f64,
        steps: usize,
        max_drift: f64,
        conjugacy_error: f64,
        method: &'static str,
        tol: f64,
    }
    ctx.json(
        "flow.json",
        FlowSummary {
            metric: m.label.clone(),
            start: s,
            duration,
            steps: traj.steps,
            max_drift: traj.max_drift,
            conjugacy_error: conj,
            method: traj.method,
            tol: traj.tol,
        },
    );
    ctx.csv("trajectory.csv", traj.to_csv());
    let svg = traj.to_svg(&m);
    ctx.svg("trajectory.svg", svg);
    Ok(None)
}

// ---------------------------------------------------------------- perturb

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbRow {
    pub orbit: usize,
    pub label: String,
    pub profile: ProfileKind,
    pub coefficients: [f64; 3],
    pub amplitude: f64,
    pub convexity_range: (f64, f64),
    /// `T · max |R_s − R_0|` along the unperturbed orbit.
    pub orbit_residual: f64,
    pub class_before: Classification,
    /// Class of the perturbed orbit, re-found when the bump moved it.
    pub class_after: Option<Classification>,
    pub predicted_dm_ds: [[f64; 2]; 2],
}

fn perturb_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let cfg = ctx.cfg;
    if cfg.perturbations.is_empty() {
        return Err(Error::Validation {
            position: None,
            message: "perturb apply needs at least one [[perturbation]] entry".into(),
        });
    }
    let m = cfg.build_metric()?;
    let orbits = build_catalog(cfg, &m, &cfg.orbits)?;
    let opts = cfg.orbit_options();
    let tol = cfg.trace_tol();
    let find = |id: usize| orbits.iter().find(|o| o.id == id).ok_or(Error::UnknownOrbit(id));
    let mut bumps = Vec::new();
    for p in &cfg.perturbations {
        let spec = p.spec();
        let tube = build_tube(&m, find(spec.orbit)?, spec.t0, spec.eps, spec.radius)?;
        bumps.push((TubeBump { tube, spec }, *p.amplitude.get_ref()));
    }
    let pm = combine(&m, bumps.clone())?;
    let mut rows = Vec::new();
    for ((bump, s), p) in bumps.iter().zip(&cfg.perturbations) {
        let o = find(bump.spec.orbit)?;
        let before = poincare::poincare_map(&m, o, &opts, tol)?;
        let residual = perturbation::check_orbit_preserved(&pm, &m, o)?;
        let after = match orbit::find_closed_orbit(&pm, &o.start, o.period, &opts) {
            Ok(moved) => {
                let a = poincare::poincare_map(&pm, &moved, &opts, tol)?;
                Some(Classification::new(a.trace, a.det, &a.class))
            }
            Err(_) => None,
        };
        let d = perturbation::predicted_derivative(&m, o, bump, &opts)?;
        let row = PerturbRow {
            orbit: o.id,
            label: o.label.clone(),
            profile: p.profile,
            coefficients: p.coefficients,
            amplitude: *s,
            convexity_range: convexity_bound(&m, bump)?,
            orbit_residual: residual,
            class_before: Classification::new(before.trace, before.det, &before.class),
            class_after: after,
            predicted_dm_ds: [[d[(0, 0)], d[(0, 1)]], [d[(1, 0)], d[(1, 1)]]],
        };
        ctx.say(format!(
            "orbit #{} {}: amplitude {} residual {:.3e} class {} -> {}",
            row.orbit,
            row.label,
            row.amplitude,
            row.orbit_residual,
            row.class_before.class,
            row.class_after.as_ref().map_or("lost", |c| c.class.as_str())
        ));
        rows.push(row);
    }
    #[derive(Serialize)]
    struct Applied<'a> {
        metric: String,
        perturbations: &'a [PerturbRow],
    }
    ctx.json(
        "perturb.json",
        Applied {
            metric: pm.label.clone(),
            perturbations: &rows,
        },
    );
    Ok(None)
}

fn nondegenerify_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let cfg = ctx.cfg;
    let m = cfg.build_metric()?;
    let all = build_catalog(cfg, &m, &cfg.orbits)?;
    let chosen: Vec<ClosedOrbit> = match &cfg.nondegenerify.orbits {
        None => all,
        Some(ids) => ids
            .iter()
            .map(|&id| all.iter().find(|o| o.id == id).cloned().ok_or(Error::UnknownOrbit(id)))
            .collect::<Result<_>>()?,
    };
    let budget = *cfg.nondegenerify.budget.get_ref();
    let nd = nondegenerify(&m, &chosen, budget, &cfg.orbit_options())?;
    for r in &nd.reports {
        ctx.say(format!(
            "orbit #{} {}: amplitude {} margin {:.3e}",
            r.orbit, r.label, r.amplitude, r.margin
        ));
    }
    // the perturbed metric as configuration, reproducible without a search
    let mut out = cfg.clone();
    out.command = Command::Perturb;
    out.perturbations = nd
        .metric
        .bumps
        .iter()
        .map(|(b, s)| PerturbationConfig {
            orbit: b.spec.orbit,
            profile: match b.spec.profile {
                perturbation::BumpProfile::A(_) => ProfileKind::A,
                perturbation::BumpProfile::B(_) => ProfileKind::B,
            },
            coefficients: match b.spec.profile {
                perturbation::BumpProfile::A(c) | perturbation::BumpProfile::B(c) => c,
            },
            amplitude: toml::Spanned::new(0..0, *s),
            t0: b.spec.t0,
            eps: toml::Spanned::new(0..0, b.spec.eps),
            radius: toml::Spanned::new(0..0, b.spec.radius),
        })
        .collect();
    #[derive(Serialize)]
    struct Nd<'a> {
        metric: String,
        budget: f64,
        reports: &'a [perturbation::NondegenerateReport],
    }
    ctx.json(
        "nondegenerify.json",
        Nd {
            metric: nd.metric.label.clone(),
            budget,
            reports: &nd.reports,
        },
    );
    let toml = format!(
        "# config_hash={} seed={} task={}\n{}",
        ctx.meta.config_hash,
        ctx.meta.seed,
        ctx.meta.task,
        out.to_toml()
    );
    ctx.out.push(Artifact {
        name: "nondegenerified.toml".into(),
        contents: toml,
    });
    Ok(None)
}

// ---------------------------------------------------------------- equidist

/// Currents of the configured family: one equal-weight current per torus
/// refinement level, or a single equal-weight current over the catalog.
fn equidist_currents(cfg: &RunConfig, m: &FinslerMetric) -> Result<(Vec<ClosedOrbit>, Vec<(String, ReebCurrent)>)> {
    let torus = matches!(m.preset, Some(Preset::FlatTorus { .. } | Preset::RandersTorus { .. }));
    if !torus {
        let cat = build_catalog(cfg, m, &cfg.orbits)?;
        let cur = ReebCurrent::equal_weights(cat.iter().map(|o| o.id))?;
        return Ok((cat, vec![("all".into(), cur)]));
    }
    let kmax = cfg.equidist.ks.iter().copied().max().unwrap_or(cfg.orbits.max_index);
    let spec = FamilySpec {
        max_index: kmax,
        ..cfg.orbits.clone()
    };
    let cat = build_catalog(cfg, m, &spec)?;
    let mut currents = Vec::new();
    for &k in &cfg.equidist.ks {
        let ids = cat.iter().filter(|o| o.drift[0].abs().max(o.drift[1].abs()) <= k as f64).map(|o| o.id);
        currents.push((format!("K{k}"), ReebCurrent::equal_weights(ids)?));
    }
    Ok((cat, currents))
}

pub fn equidist_report(cfg: &RunConfig) -> Result<EquidistReport> {
    let m = cfg.build_metric()?;
    let (cat, currents) = equidist_currents(cfg, &m)?;
    discrepancy_report(&m, &cat, &currents, &test_functions(cfg, &m)?, &cfg.quadrature_options())
}

fn equidist_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let report = equidist_report(ctx.cfg)?;
    for r in &report.rows {
        ctx.say(format!(
            "{} {:<10} ratio {:+.9} target {:+.9} deviation {:.3e}",
            r.current, r.function, r.ratio, r.target, r.deviation
        ));
    }
    #[derive(Serialize)]
    struct Schedule {
        function: String,
        cesaro: equidist::Cesaro,
    }
    let mut schedules = Vec::new();
    if report.rows.len() > report.functions.len() {
        for f in &report.functions {
            let stages: Vec<(f64, f64)> =
                report.rows.iter().filter(|r| &r.function == f).map(|r| (r.numerator, r.denominator)).collect();
            schedules.push(Schedule {
                function: f.clone(),
                cesaro: equidist::cesaro_schedule(&stages)?,
            });
        }
    }
    #[derive(Serialize)]
    struct Eq<'a> {
        report: &'a EquidistReport,
        schedules: Vec<Schedule>,
    }
    ctx.json(
        "equidist.json",
        Eq {
            report: &report,
            schedules,
        },
    );
    ctx.csv("equidist.csv", report.to_csv());
    let svg = report.to_svg();
    ctx.svg("equidist.svg", svg);
    Ok(None)
}

// ---------------------------------------------------------------- local model check

pub const LEMMA31_HEADER: &str = "seed,prediction_norm,oracle_norm,relative_error";

pub fn lemma31_csv(rows: &[Lemma31Row]) -> String {
    let mut s = format!("{LEMMA31_HEADER}\n");
    for r in rows {
        s.push_str(&io::csv_row(&[
            r.seed.to_string(),
            num(r.prediction_norm),
            num(r.oracle_norm),
            num(r.relative_error),
        ]));
    }
    s
}

fn lemma31_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    let cfg = ctx.cfg;
    let rows = lemma31_batch(cfg.seed, cfg.lemma31.instances)?;
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let threshold = cfg.lemma31.threshold;
    ctx.say(format!(
        "{} instances from seed {}: max relative error {:.3e} (threshold {:.1e})",
        rows.len(),
        cfg.seed,
        worst,
        threshold
    ));
    ctx.csv("lemma31.csv", lemma31_csv(&rows));
    Ok((worst >= threshold).then(|| Error::VerificationFailed(format!("local model error {worst:e} >= {threshold:e}"))))
}

// ---------------------------------------------------------------- report

fn report_task(ctx: &mut Ctx) -> Result<Option<Error>> {
    catalog_task(ctx, true)?;
    let cat: Catalog = serde_json::from_str(ctx.out[0].contents.as_str()).expect("catalog just written");
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    let mut degenerate = 0;
    for e in &cat.orbits {
        if let Some(c) = &e.classification {
            *counts.entry(c.class.clone()).or_default() += 1;
            degenerate += usize::from(!c.nondegenerate);
        }
    }
    let report = equidist_report(ctx.cfg)?;
    let worst = report.rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    ctx.say(format!("classes {counts:?}, degenerate {degenerate}, max equidistribution deviation {worst:.3e}"));
    #[derive(Serialize)]
    struct Summary {
        metric: String,
        orbits: usize,
        classes: std::collections::BTreeMap<String, usize>,
        degenerate: usize,
        max_deviation: f64,
    }
    ctx.json(
        "summary.json",
        Summary {
            metric: cat.metric.clone(),
            orbits: cat.orbits.len(),
            classes: counts,
            degenerate,
            max_deviation: worst,
        },
    );
    ctx.csv("equidist.csv", report.to_csv());
    let svg = report.to_svg();
    ctx.svg("equidist.svg", svg);
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    fn cfg(extra: &str) -> RunConfig {
        parse_str(&format!("seed = 5\n[metric]\nfamily = \"euclidean_torus\"\n{extra}")).unwrap()
    }

    #[test]
    fn verify_euclidean_torus_passes() {
        let out = run(&cfg(""), Task::Verify).unwrap();
        assert_eq!(out.exit_code(), 0, "{:?}", out.summary);
        let v: serde_json::Value = serde_json::from_str(out.artifact("verify.json").unwrap()).unwrap();
        assert_eq!(v["passed"], true);
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
        assert!(v["checks"].as_array().unwrap().len() >= 10);
    }

    #[test]
    fn verify_reports_failures() {
        let c = cfg("[tolerances]\naccept = 1e-30\nnewton = 1e-31\n");
        match run(&c, Task::Verify) {
            Ok(out) => assert_eq!(out.exit_code(), 20),
            Err(e) => assert_eq!(e.exit_code(), 12),
        }
    }

    #[test]
    fn catalog_json_schema() {
        let out = run(&cfg(""), Task::OrbitsClassify).unwrap();
        let c: Catalog = serde_json::from_str(out.artifact("catalog.json").unwrap()).unwrap();
        assert_eq!(c.orbits.len(), 8);
        let e = &c.orbits[0];
        let cl = e.classification.as_ref().unwrap();
        assert_eq!(cl.class, "parabolic");
        assert!(!cl.nondegenerate);
        assert!((cl.det - 1.0).abs() < 1e-9);
        assert!(out.artifact("orbits.csv").unwrap().starts_with("# config_hash="));
        assert_eq!(csv_body(out.artifact("orbits.csv").unwrap()).lines().next(), Some(ORBITS_HEADER));
        assert!(out.artifact("orbits.svg").unwrap().starts_with("<!-- config_hash="));
    }

    #[test]
    fn artifacts_byte_identical_across_runs() {
        let c = cfg("[equidist]\nks = [2, 3]\n");
        for task in [Task::Equidist, Task::OrbitsClassify, Task::Flow] {
            assert_eq!(run(&c, task).unwrap().artifacts, run(&c, task).unwrap().artifacts);
        }
    }

    #[test]
    fn equidist_matches_library_report() {
        let c = cfg("[equidist]\nks = [3]\n");
        let out = run(&c, Task::Equidist).unwrap();
        let lib = equidist_report(&c).unwrap();
        assert_eq!(csv_body(out.artifact("equidist.csv").unwrap()), lib.to_csv());
        assert_eq!(lib.rows.len(), 4);
    }

    #[test]
    fn perturb_round_trip_through_config() {
        let c = parse_str(
            "command = \"perturb\"\n[metric]\nfamily = \"round_sphere\"\n[[perturbation]]\norbit = 0\nprofile = \"a\"\ncoefficients = [1.0, 0.0, 0.0]\namplitude = 0.01\n",
        )
        .unwrap();
        let out = run(&c, Task::PerturbApply).unwrap();
        let v: serde_json::Value = serde_json::from_str(out.artifact("perturb.json").unwrap()).unwrap();
        let row = &v["perturbations"][0];
        assert!(row["orbit_residual"].as_f64().unwrap() < 1e-8);
        assert_eq!(row["class_after"]["class"], "elliptic");
    }
}
