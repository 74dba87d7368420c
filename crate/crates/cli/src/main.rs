use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use localtb::config::{MeasureSource, RunConfig};
use localtb::dyadic::{MeasuredGrid, ShiftedGrid};
use localtb::rng::stream;
use localtb::runner::{self, RunError};
use localtb::sqfn::{self, ThetaProfile};
use localtb::verify::{self, Setup};
use localtb::{martingale, report, Error};

#[derive(Parser)]
#[command(
    name = "localtb",
    version,
    about = "Random dyadic grids, adapted martingales and square-function experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, or directory for verify-all.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value` override, e.g. `grid.g_max=10`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct FunctionArg {
    /// JSON array of atom values for f; a seeded random function otherwise.
    #[arg(long = "f")]
    f: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureKind {
    LebesgueSurrogate,
    Cantor,
    PointCloud,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a builtin measure as JSON. Parameters as key=value: k, n
    /// (surrogate); depth, ratio (cantor); count, n (point cloud).
    GenMeasure {
        kind: MeasureKind,
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Good/bad status of every positive-mass cube of one shifted grid.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Use the unshifted standard grid.
        #[arg(long)]
        zero_shifts: bool,
    },
    /// Adapted martingale pieces of f and their norms.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        f: FunctionArg,
    },
    /// Whitney-region square-function report of f.
    Sqfn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        f: FunctionArg,
        /// Restrict to good Whitney regions.
        #[arg(long)]
        good_only: bool,
    },
    /// Run every configured experiment and write JSON reports.
    VerifyAll {
        #[command(flatten)]
        common: Common,
    },
    /// Flatten a JSON report to CSV.
    Report {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Io { .. } | Error::Json(_) | Error::DoublingConstant(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|source| Failure::from(Error::Io { path: path.display().to_string(), source })),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Internal(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    emit(out, &text)
}

fn kv(params: &[String]) -> Result<Vec<(String, String)>, Failure> {
    params
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Failure::Usage(format!("expected key=value, got {p:?}")))
        })
        .collect()
}

fn param<T: std::str::FromStr>(pairs: &[(String, String)], key: &str, default: T) -> Result<T, Failure> {
    match pairs.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v.parse().map_err(|_| Failure::Usage(format!("bad value for {key}: {v:?}"))),
        None => Ok(default),
    }
}

fn gen_measure(kind: MeasureKind, params: &[String], seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let pairs = kv(params)?;
    let allowed: &[&str] = match kind {
        MeasureKind::LebesgueSurrogate => &["k", "n"],
        MeasureKind::Cantor => &["depth", "ratio"],
        MeasureKind::PointCloud => &["count", "n"],
    };
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(Failure::Usage(format!("unknown parameter {k:?}; expected one of {allowed:?}")));
    }
    let source = match kind {
        MeasureKind::LebesgueSurrogate => {
            MeasureSource::LebesgueSurrogate { k: param(&pairs, "k", 3)?, dim: param(&pairs, "n", 1)? }
        }
        MeasureKind::Cantor => {
            MeasureSource::Cantor { depth: param(&pairs, "depth", 6)?, ratio: param(&pairs, "ratio", 1.0 / 3.0)? }
        }
        MeasureKind::PointCloud => {
            MeasureSource::PointCloud { count: param(&pairs, "count", 64)?, dim: param(&pairs, "n", 1)? }
        }
    };
    let mu = source.build(seed)?;
    let mut text = mu.to_json();
    text.push('\n');
    emit(out, &text)
}

fn function(setup: &Setup, arg: &FunctionArg) -> Result<Vec<f64>, Failure> {
    match &arg.f {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| Failure::from(Error::Io { path: path.display().to_string(), source }))?;
            let f: Vec<f64> =
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if f.len() != setup.mu.len() {
                return Err(Failure::Usage(format!("f has {} values for {} atoms", f.len(), setup.mu.len())));
            }
            Ok(f)
        }
        None => Ok(verify::random_function(setup.mu.len(), &mut stream(setup.seed, "cli-f", 0))),
    }
}

fn grid(setup: &Setup, zero_shifts: bool) -> Result<MeasuredGrid, Failure> {
    if zero_shifts {
        Ok(MeasuredGrid::new(ShiftedGrid::standard(setup.params.clone(), setup.mu.dim()), &setup.mu)?)
    } else {
        Ok(setup.draw("cli-grid", 0)?.0)
    }
}

fn classify(common: &Common, zero_shifts: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let setup = cfg.resolve()?;
    let mg = grid(&setup, zero_shifts)?;
    let cubes: Vec<Value> = mg
        .keys()
        .into_iter()
        .map(|key| {
            let cube = mg.cube(&key);
            let witness =
                mg.grid().badness(&cube).map(|big| json!({"generation": big.generation(), "lo": big.geom.lo}));
            json!({
                "generation": key.generation, "index": key.index, "lo": cube.geom.lo, "side": cube.side(),
                "mass": mg.mass(&key), "good": witness.is_none(), "bad_against": witness,
            })
        })
        .collect();
    let good = cubes.iter().filter(|c| c["good"] == true).count();
    let doc = json!({
        "schema_version": localtb::SCHEMA_VERSION,
        "zero_shifts": zero_shifts,
        "shifts": mg.grid().shifts().to_hex(),
        "cubes": cubes,
        "good": good,
        "config": runner::resolved_config(&cfg, &setup),
    });
    emit_json(common.out.as_deref(), &doc)
}

fn decompose(common: &Common, arg: &FunctionArg) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let setup = cfg.resolve()?;
    let mg = grid(&setup, false)?;
    let f = function(&setup, arg)?;
    let b = setup.accretive(&mg)?.b;
    let d = martingale::decompose(&f, &b, &mg, &setup.mu)?;
    let piece = |key: &localtb::dyadic::CubeKey, p: &martingale::Piece, top: bool| {
        json!({
            "generation": key.generation, "index": key.index, "top": top,
            "norm": p.norm_sq(&setup.mu).sqrt(), "atoms": p.atoms, "values": p.values,
        })
    };
    let mut pieces: Vec<Value> = d.top_pieces.iter().map(|(k, p)| piece(k, p, true)).collect();
    pieces.extend(d.pieces.iter().map(|(k, p)| piece(k, p, false)));
    let doc = json!({
        "schema_version": localtb::SCHEMA_VERSION,
        "pieces": pieces,
        "f_norm": d.f_norm,
        "residual_norm": d.residual_norm,
        "energy": d.energy(&setup.mu),
        "config": runner::resolved_config(&cfg, &setup),
    });
    emit_json(common.out.as_deref(), &doc)
}

fn square_function(common: &Common, arg: &FunctionArg, good_only: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let setup = cfg.resolve()?;
    let mg = grid(&setup, false)?;
    let f = function(&setup, arg)?;
    let profile = ThetaProfile::new(&setup.kernel, &f, &setup.mu, &setup.params, &setup.quad)?;
    let goodness = mg.classify();
    let rep = sqfn::global_norm(&profile, &mg, good_only.then_some(&goodness));
    let mut doc = serde_json::to_value(&rep).map_err(|e| Failure::Internal(e.to_string()))?;
    doc["schema_version"] = json!(localtb::SCHEMA_VERSION);
    doc["slab_total"] = json!(profile.total());
    doc["config"] =
        serde_json::to_value(runner::resolved_config(&cfg, &setup)).map_err(|e| Failure::Internal(e.to_string()))?;
    emit_json(common.out.as_deref(), &doc)
}

fn verify_all(common: &Common) -> Result<ExitCode, Failure> {
    let cfg = load_config(common)?;
    let out = common.out.clone().or_else(|| cfg.output_dir.clone());
    match runner::run(&cfg, out.as_deref()) {
        Ok(outcome) => {
            for r in &outcome.reports {
                eprintln!("{:<11} {}", r.name, if r.pass { "pass" } else { "FAIL" });
            }
            if out.is_none() {
                emit_json(None, &outcome.summary)?;
            }
            Ok(ExitCode::from(outcome.exit_code() as u8))
        }
        Err(e @ RunError::Config(_)) => Err(Failure::Usage(e.to_string())),
        Err(e) => Err(Failure::Internal(e.to_string())),
    }
}

fn render(input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input)
        .map_err(|source| Failure::from(Error::Io { path: input.display().to_string(), source }))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
    emit(out, &report::to_csv(&value)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenMeasure { kind, params, seed, out } => {
            gen_measure(*kind, params, *seed, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Classify { common, zero_shifts } => classify(common, *zero_shifts).map(|_| ExitCode::SUCCESS),
        Command::Decompose { common, f } => decompose(common, f).map(|_| ExitCode::SUCCESS),
        Command::Sqfn { common, f, good_only } => square_function(common, f, *good_only).map(|_| ExitCode::SUCCESS),
        Command::VerifyAll { common } => verify_all(common),
        Command::Report { input, out } => render(input, out.as_deref()).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
