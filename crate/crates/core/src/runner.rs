//! Batch orchestration: runs the configured experiments in order and writes
//! one JSON report per experiment plus `summary.json`.
//!
//! Reports carry no timestamps or timings, so two runs of the same
//! configuration produce byte-identical files.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{ExperimentEntry, RunConfig};
use crate::error::Error;
use crate::rng::stream;
use crate::verify::{self, ExperimentReport, Setup};
use crate::SCHEMA_VERSION;

/// Why a run stopped before producing a verdict.
#[derive(Debug)]
pub enum RunError {
    /// Unusable configuration or input file.
    Config(Error),
    /// An experiment hit an internal failure.
    Internal { experiment: String, source: Error },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Internal { experiment, source } => write!(f, "experiment {experiment} failed: {source}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Internal { .. } => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<ExperimentReport>,
    pub summary: Value,
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// The configuration with `g_max` and `r` filled in from the resolved setup.
pub fn resolved_config(cfg: &RunConfig, setup: &Setup) -> RunConfig {
    let mut out = cfg.clone();
    out.grid.g_max = Some(setup.params.g_max);
    out.grid.r = Some(setup.params.r);
    out
}

/// Runs one experiment entry.
pub fn run_experiment(cfg: &RunConfig, setup: &Setup, entry: &ExperimentEntry) -> crate::Result<ExperimentReport> {
    let o = entry.options();
    let mut setup = setup.clone();
    if let Some(seed) = o.seed {
        setup.seed = seed;
    }
    let s = &setup;
    match entry.name() {
        "measure" => verify::measure_experiment(s),
        "kernel" => verify::kernel_experiment(s, o.samples.unwrap_or(8)),
        "identities" => verify::identities_experiment(s, o.f_count.unwrap_or(20)),
        "goodness" => verify::goodness_crosscheck(s, o.samples.unwrap_or(20_000), o.max_bits.unwrap_or(20)),
        "schur" => verify::schur_bound_experiment(s, o.trials.unwrap_or(10_000)),
        "averaging" => {
            let f = verify::random_function(s.mu.len(), &mut stream(s.seed, "averaging-f", 0));
            verify::averaging_identity_experiment(s, &f, o.draws.unwrap_or(2000))
        }
        "cases" => verify::case_experiment(s),
        "theorem" => {
            let mut variants = vec![("base".to_string(), s.clone())];
            if let Some(denser) = cfg.denser(s) {
                let mut d = denser.resolve()?;
                d.seed = s.seed;
                variants.push((format!("atoms_{}", d.mu.len()), d));
            }
            variants.push((format!("g_max_{}", s.params.g_max + 2), s.with_g_max(s.params.g_max + 2)?));
            verify::theorem_uniformity(
                &variants,
                o.f_count.unwrap_or(16),
                o.random_cubes.unwrap_or(20),
                o.kappa.unwrap_or(3.0),
            )
        }
        "necessity" => verify::necessity_experiment(s, o.corpus_size.unwrap_or(50)),
        "final_sum" => verify::final_sum_experiment(s, o.f_count.unwrap_or(20)),
        "carleson" => verify::carleson_experiment(s, o.f_count.unwrap_or(20)),
        "quadrature" => verify::quadrature_experiment(s, o.k_lo.unwrap_or(32), o.k_hi.unwrap_or(64)),
        other => Err(Error::InvalidInput(format!("unknown experiment {other:?}"))),
    }
}

fn write_json(path: &Path, value: &Value) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Runs every configured experiment in order. With `out`, writes
/// `NN-name.json` per experiment and `summary.json`, each embedding the
/// resolved configuration.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    let setup = cfg.resolve().map_err(RunError::Config)?;
    let resolved = serde_json::to_value(resolved_config(cfg, &setup)).map_err(|e| RunError::Config(e.into()))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|source| RunError::Config(Error::Io { path: dir.display().to_string(), source }))?;
    }
    let mut reports = Vec::new();
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (i, entry) in cfg.experiments.iter().enumerate() {
        let report = run_experiment(cfg, &setup, entry)
            .map_err(|source| RunError::Internal { experiment: entry.name().to_string(), source })?;
        let file = format!("{:02}-{}.json", i + 1, entry.name());
        if let Some(dir) = out {
            let mut doc = serde_json::to_value(&report).map_err(|e| RunError::Config(e.into()))?;
            doc["config"] = resolved.clone();
            let path = dir.join(&file);
            write_json(&path, &doc).map_err(RunError::Config)?;
            files.push(path);
        }
        entries.push(json!({"name": report.name, "file": file, "pass": report.pass}));
        reports.push(report);
    }
    let pass = reports.iter().all(|r| r.pass);
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "experiments": entries,
        "count": reports.len(),
        "pass": pass,
        "config": resolved,
    });
    if let Some(dir) = out {
        let path = dir.join("summary.json");
        write_json(&path, &summary).map_err(RunError::Config)?;
        files.push(path);
    }
    Ok(RunOutcome { reports, summary, pass, files })
}
