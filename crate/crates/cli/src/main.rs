use clap::{Args, Parser, Subcommand};
use finsler_reeb::app::{self, Task};
use finsler_reeb::config::{parse_config, parse_str, RunConfig};
use finsler_reeb::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Reeb flows of Finsler metrics on surfaces: closed orbits, return maps,
/// local perturbations and equidistribution checks.
#[derive(Parser, Debug)]
#[command(name = "reeblab", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Metric family used when no configuration is given (torus, sphere,
    /// waist or any family name accepted in `[metric]`).
    #[arg(long, global = true)]
    family: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Trace tolerance for return-map classification.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the invariant suite; exits 20 if any check fails.
    Verify,
    /// Integrate one trajectory from `[flow]`.
    Flow,
    /// Closed orbit catalog.
    #[command(subcommand)]
    Orbits(OrbitsCmd),
    /// Local perturbations near closed orbits.
    #[command(subcommand)]
    Perturb(PerturbCmd),
    /// Normalized averages of test functions over orbit currents.
    Equidist {
        /// Torus refinement level; replaces `equidist.ks`.
        #[arg(long = "K")]
        k: Option<i64>,
    },
    /// Compare the local model prediction with finite differences.
    CheckLemma31 {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Classified catalog plus summary and equidistribution tables.
    Report,
    /// Run the command named in the configuration file.
    Run,
}

#[derive(Subcommand, Debug)]
enum OrbitsCmd {
    Find,
    Classify,
    /// Print the catalog previously written to the output directory.
    List,
}

#[derive(Subcommand, Debug)]
enum PerturbCmd {
    /// Apply every `[[perturbation]]` entry.
    Apply,
    /// Search for a small perturbation making the selected orbits nondegenerate.
    Nondegenerify,
}

fn family_name(s: &str) -> &str {
    match s {
        "torus" => "euclidean_torus",
        "sphere" => "round_sphere",
        other => other,
    }
}

fn load(g: &Global) -> finsler_reeb::Result<RunConfig> {
    let cfg = match (&g.config, &g.family) {
        (Some(path), None) => parse_config(path)?,
        (path, family) => {
            let family = family.as_deref().unwrap_or("torus");
            let mut cfg = parse_str(&format!("[metric]\nfamily = \"{}\"\n", family_name(family)))?;
            if let Some(path) = path {
                let file = parse_config(path)?;
                if file.metric.family.get_ref() != cfg.metric.family.get_ref() {
                    return Err(Error::Validation {
                        position: None,
                        message: format!("--family {family} conflicts with {}", path.display()),
                    });
                }
                cfg = file;
            }
            cfg
        }
    };
    cfg.with_overrides(g.seed, g.tol, g.out_dir.as_ref().map(|d| d.display().to_string()))
}

fn execute(cli: Cli) -> finsler_reeb::Result<i32> {
    let mut cfg = load(&cli.global)?;
    let task = match cli.command {
        Cmd::Verify => Task::Verify,
        Cmd::Flow => Task::Flow,
        Cmd::Orbits(OrbitsCmd::Find) => Task::OrbitsFind,
        Cmd::Orbits(OrbitsCmd::Classify) => Task::OrbitsClassify,
        Cmd::Orbits(OrbitsCmd::List) => Task::OrbitsList,
        Cmd::Perturb(PerturbCmd::Apply) => Task::PerturbApply,
        Cmd::Perturb(PerturbCmd::Nondegenerify) => Task::PerturbNondegenerify,
        Cmd::Equidist { k } => {
            if let Some(k) = k {
                cfg.equidist.ks = vec![k];
            }
            Task::Equidist
        }
        Cmd::CheckLemma31 { instances } => {
            if let Some(n) = instances {
                cfg.lemma31.instances = n;
            }
            Task::CheckLemma31
        }
        Cmd::Report => Task::Report,
        Cmd::Run => Task::for_command(cfg.command),
    };
    if let Some(n) = cli.global.threads {
        app::set_threads(n)?;
    }
    let outcome = app::run(&cfg, task)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    let dir = Path::new(&cfg.output.dir);
    app::write_artifacts(dir, &outcome.artifacts)?;
    for a in &outcome.artifacts {
        eprintln!("wrote {}", dir.join(&a.name).display());
    }
    if let Some(e) = &outcome.failure {
        eprintln!("error: {e}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
