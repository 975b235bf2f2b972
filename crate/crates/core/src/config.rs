//! Run configuration: a TOML document naming a metric family, the command
//! to run and its numeric options. Unknown keys are rejected, and every
//! validation failure carries the line and column of the offending value.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::metric::{FiberAreaMethod, FinslerMetric, QuadratureOptions, M2, V2};
use crate::ode::OdeOptions;
use crate::orbit::{FamilySpec, OrbitOptions};
use crate::perturbation::{BumpProfile, PerturbationSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    Flow,
    Orbits,
    Classify,
    Perturb,
    Equidist,
    CheckLemma31,
    Report,
}

/// A coefficient given either as a number or as a chart expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Number(f64),
    Expr(String),
}

impl Coefficient {
    fn to_expr(&self) -> std::result::Result<Expr, String> {
        match self {
            Coefficient::Number(x) => Ok(Expr::constant(*x)),
            Coefficient::Expr(s) => Expr::parse(s).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub family: Spanned<String>,
    /// flat_torus: constant Gram matrix.
    pub g: Option<Spanned<[[f64; 2]; 2]>>,
    /// riemannian_torus: g11, g12, g22.
    pub entries: Option<Spanned<[Coefficient; 3]>>,
    /// conformal_torus: `u` in `e^u |v|`.
    pub exponent: Option<Spanned<Coefficient>>,
    /// randers_torus: constant one-form.
    pub b: Option<Spanned<[f64; 2]>>,
    /// katok: wind speed.
    pub rho: Option<Spanned<f64>>,
    /// revolution: profile `r(u)`.
    pub profile: Option<Spanned<String>>,
    pub u_range: Option<Spanned<[f64; 2]>>,
    pub poles: Option<[bool; 2]>,
    /// waist: half-height of the annulus.
    pub u_max: Option<Spanned<f64>>,
    pub pole_margin: Option<Spanned<f64>>,
}

pub const FAMILIES: [&str; 9] = [
    "euclidean_torus",
    "flat_torus",
    "riemannian_torus",
    "conformal_torus",
    "randers_torus",
    "round_sphere",
    "waist",
    "revolution",
    "katok",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Per-step integrator tolerance for flows.
    pub ode: Spanned<f64>,
    /// Integrator tolerance inside orbit finding and monodromy.
    pub orbit_ode: Spanned<f64>,
    pub newton: Spanned<f64>,
    pub accept: Spanned<f64>,
    /// Trace tolerance of the normal-form classifier.
    pub trace: Spanned<f64>,
}

fn unspanned<T>(v: T) -> Spanned<T> {
    Spanned::new(0..0, v)
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ode: unspanned(1e-10),
            orbit_ode: unspanned(1e-12),
            newton: unspanned(1e-11),
            accept: unspanned(1e-8),
            trace: unspanned(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub nodes: Spanned<usize>,
    pub tol: Spanned<f64>,
    pub angular_nodes: Spanned<usize>,
    pub fiber: FiberMethod,
    /// Monte Carlo samples per axis; the stream is seeded by the run seed.
    pub mc_per_axis: Spanned<usize>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes: unspanned(256),
            tol: unspanned(1e-9),
            angular_nodes: unspanned(256),
            fiber: FiberMethod::Exact,
            mc_per_axis: unspanned(1000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub q0: [f64; 2],
    /// Initial direction; the start covector is its Legendre image.
    pub v0: [f64; 2],
    pub duration: Spanned<f64>,
    pub samples: Spanned<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            q0: [0.1, 0.3],
            v0: [1.0, 0.0],
            duration: unspanned(10.0),
            samples: unspanned(512),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub orbit: usize,
    pub profile: ProfileKind,
    pub coefficients: [f64; 3],
    pub amplitude: Spanned<f64>,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_eps")]
    pub eps: Spanned<f64>,
    #[serde(default = "default_radius")]
    pub radius: Spanned<f64>,
}

fn default_t0() -> f64 {
    0.5
}

fn default_eps() -> Spanned<f64> {
    unspanned(0.1)
}

fn default_radius() -> Spanned<f64> {
    unspanned(0.1)
}

impl PerturbationConfig {
    pub fn spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            orbit: self.orbit,
            t0: self.t0,
            eps: *self.eps.get_ref(),
            radius: *self.radius.get_ref(),
            profile: match self.profile {
                ProfileKind::A => BumpProfile::A(self.coefficients),
                ProfileKind::B => BumpProfile::B(self.coefficients),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NondegenerifyConfig {
    pub budget: Spanned<f64>,
    /// Catalog ids to treat; all orbits when absent.
    pub orbits: Option<Vec<usize>>,
}

impl Default for NondegenerifyConfig {
    fn default() -> Self {
        NondegenerifyConfig {
            budget: unspanned(0.1),
            orbits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionConfig {
    pub id: String,
    pub expr: Spanned<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquidistConfig {
    /// Torus refinement levels; each gives one equal-weight current.
    pub ks: Vec<i64>,
    /// Test functions; the family's built-in basis when empty.
    pub functions: Vec<FunctionConfig>,
}

impl Default for EquidistConfig {
    fn default() -> Self {
        EquidistConfig {
            ks: vec![2, 4, 8],
            functions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lemma31Config {
    pub instances: usize,
    /// Largest relative error accepted.
    pub threshold: f64,
}

impl Default for Lemma31Config {
    fn default() -> Self {
        Lemma31Config {
            instances: 20,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_command")]
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    pub metric: MetricConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub orbits: FamilySpec,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default, rename = "perturbation")]
    pub perturbations: Vec<PerturbationConfig>,
    #[serde(default)]
    pub nondegenerify: NondegenerifyConfig,
    #[serde(default)]
    pub equidist: EquidistConfig,
    #[serde(default)]
    pub lemma31: Lemma31Config,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_command() -> Command {
    Command::Verify
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map(|i| before.len() - i).unwrap_or(before.len() + 1);
    (line, col)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let position = e.span().map(|s| line_col(text, s.start));
        let message = e.message().trim().to_string();
        if message.contains("unknown field") || message.contains("unknown variant") {
            Error::Validation { position, message }
        } else {
            let (line, column) = position.unwrap_or((0, 0));
            Error::Parse { line, column, message }
        }
    })?;
    cfg.validate(text)?;
    Ok(cfg)
}

fn invalid<T>(text: &str, at: &Spanned<T>, message: String) -> Error {
    let span = at.span();
    let position = if span.is_empty() && span.start == 0 { None } else { Some(line_col(text, span.start)) };
    Error::Validation { position, message }
}

fn positive(text: &str, name: &str, v: &Spanned<f64>) -> Result<()> {
    let x = *v.get_ref();
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(text, v, format!("{name} must be positive and finite, got {x}")))
    }
}

impl RunConfig {
    /// Total validation, including building the metric so that family
    /// invariants surface here rather than mid-run.
    pub fn validate(&self, text: &str) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.ode", &t.ode),
            ("tolerances.orbit_ode", &t.orbit_ode),
            ("tolerances.newton", &t.newton),
            ("tolerances.accept", &t.accept),
            ("tolerances.trace", &t.trace),
            ("quadrature.tol", &self.quadrature.tol),
            ("flow.duration", &self.flow.duration),
            ("nondegenerify.budget", &self.nondegenerify.budget),
        ] {
            positive(text, name, v)?;
        }
        for (name, v) in [
            ("quadrature.nodes", &self.quadrature.nodes),
            ("quadrature.angular_nodes", &self.quadrature.angular_nodes),
        ] {
            if *v.get_ref() < 8 {
                return Err(invalid(text, v, format!("{name} must be at least 8")));
            }
        }
        if *self.flow.samples.get_ref() == 0 {
            return Err(invalid(text, &self.flow.samples, "flow.samples must be positive".into()));
        }
        if *self.quadrature.mc_per_axis.get_ref() == 0 {
            return Err(invalid(text, &self.quadrature.mc_per_axis, "quadrature.mc_per_axis must be positive".into()));
        }
        if !(self.lemma31.threshold > 0.0) {
            return Err(Error::Validation {
                position: None,
                message: "lemma31.threshold must be positive".into(),
            });
        }
        if self.equidist.ks.iter().any(|&k| k < 1) {
            return Err(Error::Validation {
                position: None,
                message: "equidist.ks entries must be at least 1".into(),
            });
        }
        for p in &self.perturbations {
            positive(text, "perturbation.eps", &p.eps)?;
            positive(text, "perturbation.radius", &p.radius)?;
            if !p.amplitude.get_ref().is_finite() {
                return Err(invalid(text, &p.amplitude, "perturbation.amplitude must be finite".into()));
            }
        }
        for f in &self.equidist.functions {
            Expr::parse(f.expr.get_ref()).map_err(|e| invalid(text, &f.expr, format!("function {}: {e}", f.id)))?;
        }
        self.build_metric_checked(text)?;
        Ok(())
    }

    pub fn build_metric(&self) -> Result<FinslerMetric> {
        self.build_metric_checked("")
    }

    fn build_metric_checked(&self, text: &str) -> Result<FinslerMetric> {
        let mc = &self.metric;
        let family = mc.family.get_ref().as_str();
        let allowed: &[&str] = match family {
            "euclidean_torus" => &[],
            "flat_torus" => &["g"],
            "riemannian_torus" => &["entries"],
            "conformal_torus" => &["exponent"],
            "randers_torus" => &["b"],
            "round_sphere" => &["pole_margin"],
            "waist" => &["u_max"],
            "revolution" => &["profile", "u_range", "poles", "pole_margin"],
            "katok" => &["rho", "pole_margin"],
            other => {
                return Err(invalid(
                    text,
                    &mc.family,
                    format!("unknown metric family `{other}`, expected one of {}", FAMILIES.join(", ")),
                ))
            }
        };
        let present: [(&str, Option<std::ops::Range<usize>>); 10] = [
            ("g", mc.g.as_ref().map(|s| s.span())),
            ("entries", mc.entries.as_ref().map(|s| s.span())),
            ("exponent", mc.exponent.as_ref().map(|s| s.span())),
            ("b", mc.b.as_ref().map(|s| s.span())),
            ("rho", mc.rho.as_ref().map(|s| s.span())),
            ("profile", mc.profile.as_ref().map(|s| s.span())),
            ("u_range", mc.u_range.as_ref().map(|s| s.span())),
            ("poles", mc.poles.map(|_| 0..0)),
            ("u_max", mc.u_max.as_ref().map(|s| s.span())),
            ("pole_margin", mc.pole_margin.as_ref().map(|s| s.span())),
        ];
        for (key, span) in present {
            if let Some(span) = span {
                if !allowed.contains(&key) {
                    return Err(invalid(
                        text,
                        &Spanned::new(span, ()),
                        format!("key `{key}` does not apply to family `{family}`"),
                    ));
                }
            }
        }
        let require = |key: &str| Error::Validation {
            position: Some(line_col(text, mc.family.span().start)),
            message: format!("family `{family}` requires `{key}`"),
        };
        let margin = match &mc.pole_margin {
            Some(m) => {
                positive(text, "metric.pole_margin", m)?;
                *m.get_ref()
            }
            None => 1e-3,
        };
        let m = match family {
            "euclidean_torus" => FinslerMetric::euclidean_torus(),
            "flat_torus" => {
                let g = mc.g.as_ref().ok_or_else(|| require("g"))?;
                let a = g.get_ref();
                let gm = M2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
                if (gm[(0, 1)] - gm[(1, 0)]).abs() > 1e-14 * gm.norm() || gm[(0, 0)] <= 0.0 || gm.determinant() <= 0.0 {
                    return Err(invalid(text, g, "g must be symmetric positive definite".into()));
                }
                FinslerMetric::flat_torus(gm)
            }
            "riemannian_torus" => {
                let e = mc.entries.as_ref().ok_or_else(|| require("entries"))?;
                let ex: Vec<Expr> = e
                    .get_ref()
                    .iter()
                    .map(|c| c.to_expr())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|msg| invalid(text, e, msg))?;
                let m = FinslerMetric::riemannian_torus([ex[0].clone(), ex[1].clone(), ex[2].clone()]);
                sample_convexity(&m).map_err(|msg| invalid(text, e, msg))?;
                m
            }
            "conformal_torus" => {
                let e = mc.exponent.as_ref().ok_or_else(|| require("exponent"))?;
                FinslerMetric::conformal_torus(e.get_ref().to_expr().map_err(|msg| invalid(text, e, msg))?)
            }
            "randers_torus" => {
                let b = mc.b.as_ref().ok_or_else(|| require("b"))?;
                let v = V2::new(b.get_ref()[0], b.get_ref()[1]);
                if !(v.norm() < 1.0) {
                    return Err(invalid(text, b, format!("Randers bound |b| < 1 violated: |b| = {}", v.norm())));
                }
                FinslerMetric::randers_torus(v)
            }
            "round_sphere" => FinslerMetric::round_sphere(margin),
            "waist" => {
                let u = match &mc.u_max {
                    Some(u) => {
                        positive(text, "metric.u_max", u)?;
                        *u.get_ref()
                    }
                    None => 1.5,
                };
                FinslerMetric::waist(u)
            }
            "revolution" => {
                let p = mc.profile.as_ref().ok_or_else(|| require("profile"))?;
                let r = mc.u_range.as_ref().ok_or_else(|| require("u_range"))?;
                let profile = Expr::parse(p.get_ref()).map_err(|e| invalid(text, p, e.to_string()))?;
                let range = *r.get_ref();
                if !(range[0] < range[1]) {
                    return Err(invalid(text, r, "u_range must be increasing".into()));
                }
                let m = FinslerMetric::revolution(profile, range, mc.poles.unwrap_or([false, false]), margin);
                sample_convexity(&m).map_err(|msg| invalid(text, p, msg))?;
                m
            }
            "katok" => {
                let rho = mc.rho.as_ref().ok_or_else(|| require("rho"))?;
                let r = *rho.get_ref();
                if !(r.abs() < 1.0) {
                    return Err(invalid(
                        text,
                        rho,
                        format!("Randers bound |b| < 1 violated: the wind has norm |rho| = {}", r.abs()),
                    ));
                }
                FinslerMetric::katok(r, margin).map_err(|e| invalid(text, rho, e.to_string()))?
            }
            _ => unreachable!("family list checked above"),
        };
        Ok(m)
    }

    pub fn ode(&self) -> OdeOptions {
        OdeOptions::with_tol(*self.tolerances.ode.get_ref())
    }

    pub fn orbit_options(&self) -> OrbitOptions {
        let t = &self.tolerances;
        OrbitOptions {
            ode: OdeOptions::with_tol(*t.orbit_ode.get_ref()),
            newton_tol: *t.newton.get_ref(),
            accept_tol: *t.accept.get_ref(),
            ..OrbitOptions::default()
        }
    }

    pub fn quadrature_options(&self) -> QuadratureOptions {
        let q = &self.quadrature;
        QuadratureOptions {
            nodes: *q.nodes.get_ref(),
            tol: *q.tol.get_ref(),
            angular_nodes: *q.angular_nodes.get_ref(),
            fiber: match q.fiber {
                FiberMethod::Exact => FiberAreaMethod::Exact,
                FiberMethod::MonteCarlo => FiberAreaMethod::MonteCarlo {
                    per_axis: *q.mc_per_axis.get_ref(),
                    seed: self.seed,
                },
            },
        }
    }

    pub fn trace_tol(&self) -> f64 {
        *self.tolerances.trace.get_ref()
    }

    /// The configuration as TOML; parsing it back gives an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    /// The output directory is left out so relocated runs hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir.clear();
        let canonical = serde_json::to_string(&c).expect("configuration serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Command-line overrides. `tol` replaces the classification trace
    /// tolerance.
    pub fn with_overrides(mut self, seed: Option<u64>, tol: Option<f64>, out_dir: Option<String>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(t) = tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Validation {
                    position: None,
                    message: format!("--tol must be positive and finite, got {t}"),
                });
            }
            self.tolerances.trace = unspanned(t);
        }
        if let Some(d) = out_dir {
            self.output.dir = d;
        }
        Ok(self)
    }
}

/// Positive-definiteness of the fundamental tensor on a coarse grid.
fn sample_convexity(m: &FinslerMetric) -> std::result::Result<(), String> {
    let c = m.atlas.chart();
    let margin = m.atlas.pole_margin;
    for i in 0..16 {
        for j in 0..16 {
            let q = [0, 1].map(|k| {
                let (lo, hi) = if k == 0 { (c.lo[0] + margin, c.hi[0] - margin) } else { (c.lo[1], c.hi[1]) };
                lo + (hi - lo) * ((if k == 0 { i } else { j }) as f64 + 0.5) / 16.0
            });
            for a in 0..4 {
                let t = std::f64::consts::FRAC_PI_4 * a as f64;
                m.fundamental_tensor(q, V2::new(t.cos(), t.sin()))
                    .map_err(|e| format!("metric is not strongly convex at {q:?}: {e}"))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_torus_gets_defaults() {
        let c = parse_str("[metric]\nfamily = \"euclidean_torus\"\n").unwrap();
        assert_eq!(c.command, Command::Verify);
        assert_eq!(c.seed, 0);
        assert_eq!(*c.tolerances.trace.get_ref(), 1e-6);
        assert_eq!(*c.quadrature.nodes.get_ref(), 256);
        assert_eq!(c.orbits, FamilySpec::default());
        assert_eq!(c.equidist.ks, vec![2, 4, 8]);
        assert_eq!(c.build_metric().unwrap().label, "flat_torus");
    }

    #[test]
    fn unknown_key_named_with_position() {
        let src = "seed = 1\n[metric]\nfamily = \"euclidean_torus\"\ncolour = 3\n";
        match parse_str(src) {
            Err(Error::Validation { position, message }) => {
                assert!(message.contains("colour"), "{message}");
                assert_eq!(position.map(|p| p.0), Some(4));
            }
            other => panic!("{other:?}"),
        }
        let src = "[metric]\nfamily = \"round_sphere\"\nrho = 0.2\n";
        assert!(matches!(parse_str(src), Err(Error::Validation { position: Some((3, _)), .. })));
    }

    #[test]
    fn katok_wind_bound() {
        let src = "[metric]\nfamily = \"katok\"\nrho = 1.2\n";
        match parse_str(src) {
            Err(Error::Validation { position, message }) => {
                assert!(message.contains("Randers"), "{message}");
                assert_eq!(position, Some((3, 7)));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_str("[metric]\nfamily = \"katok\"\nrho = 0.3\n").is_ok());
        assert!(matches!(
            parse_str("[metric]\nfamily = \"randers_torus\"\nb = [0.8, 0.8]\n"),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn tolerances_positive_and_syntax_positions() {
        let src = "[metric]\nfamily = \"euclidean_torus\"\n[tolerances]\ntrace = -1e-6\n";
        assert!(matches!(parse_str(src), Err(Error::Validation { position: Some((4, _)), .. })));
        assert!(matches!(parse_str("[metric\n"), Err(Error::Parse { line: 1, .. })));
        let bad = "[metric]\nfamily = \"riemannian_torus\"\nentries = [1, \"sin(\", 1]\n";
        assert!(matches!(parse_str(bad), Err(Error::Validation { position: Some((3, _)), .. })));
    }

    #[test]
    fn round_trip_and_hash() {
        let src = r#"
command = "perturb"
seed = 42
[metric]
family = "riemannian_torus"
entries = ["2 + sin(2*pi*q1)", 0.3, 1.5]
[quadrature]
fiber = "monte_carlo"
mc_per_axis = 300
[[perturbation]]
orbit = 0
profile = "a"
coefficients = [1.0, 0.0, 0.5]
amplitude = 0.02
[[equidist.functions]]
id = "c"
expr = "cos(2*pi*q1)"
"#;
        let c = parse_str(src).unwrap();
        let back = parse_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        assert_eq!(c.hash().len(), 64);
        let other = c.clone().with_overrides(Some(43), None, None).unwrap();
        assert_ne!(c.hash(), other.hash());
        assert_eq!(
            c.quadrature_options().fiber,
            FiberAreaMethod::MonteCarlo { per_axis: 300, seed: 42 }
        );
        assert_eq!(c.perturbations[0].spec().profile, BumpProfile::A([1.0, 0.0, 0.5]));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
