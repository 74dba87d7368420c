//! Run configuration: JSON schema, defaults, dotted overrides and resolution
//! into a [`Setup`].
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "seed": 20240611,
//!   "measure": {"kind": "lebesgue_surrogate", "k": 3, "dim": 1},
//!   "lambda": null,
//!   "kernel": {"family": "canonical", "alpha": 1.0},
//!   "grid": {"s": 6, "g_max": null, "r": null, "tail_bits": 16},
//!   "quadrature": {"t_nodes_per_octave": 8},
//!   "b": "one",
//!   "experiments": ["identities", {"name": "averaging", "draws": 500}],
//!   "thresholds": {"sigma": 3.0},
//!   "output_dir": "out"
//! }
//! ```
//!
//! `lambda: null` picks the natural dominating function of the measure.
//! `g_max: null` picks the smallest `g` with `2^-g < min_separation/4`, and
//! `r: null` the smallest admissible `r` with non-negligible goodness
//! probability.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dyadic::{GridParams, DEFAULT_TAIL_BITS};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::measure::{doubling_exponent, DiscreteMeasure, DominatingFunction, LambdaSpec};
use crate::rng::stream;
use crate::sqfn::QuadratureSpec;
use crate::verify::{BChoice, Setup, Thresholds};
use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSource {
    /// `4^k` equal atoms on a uniform grid in `[0,1)^dim`.
    LebesgueSurrogate { k: u32, dim: usize },
    /// `2^depth` atoms of the middle-gap Cantor construction in `[0,1)`.
    Cantor { depth: u32, ratio: f64 },
    /// `count` uniform random atoms in `[0,1)^dim`, drawn from the run seed.
    PointCloud { count: usize, dim: usize },
    /// Measure JSON as written by `gen-measure`.
    File { path: PathBuf },
}

impl Default for MeasureSource {
    fn default() -> Self {
        MeasureSource::LebesgueSurrogate { k: 3, dim: 1 }
    }
}

impl MeasureSource {
    pub fn build(&self, seed: u64) -> Result<DiscreteMeasure> {
        match self {
            MeasureSource::LebesgueSurrogate { k, dim } => DiscreteMeasure::lebesgue_surrogate(*k, *dim),
            MeasureSource::Cantor { depth, ratio } => DiscreteMeasure::cantor(*depth, *ratio),
            MeasureSource::PointCloud { count, dim } => {
                DiscreteMeasure::point_cloud(*count, *dim, &mut stream(seed, "point-cloud", 0))
            }
            MeasureSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
                DiscreteMeasure::from_json(&text)
            }
        }
    }

    /// Natural dominating function: the surrogate's own, the Cantor power law
    /// with exponent `log 2 / log(1/ratio)`, or a calibrated power law with
    /// exponent `dim`.
    pub fn natural_lambda(&self, mu: &DiscreteMeasure) -> Result<DominatingFunction> {
        match self {
            MeasureSource::LebesgueSurrogate { k, dim } => DominatingFunction::lebesgue_surrogate(*k, *dim),
            MeasureSource::Cantor { depth, ratio } => {
                let m = 2f64.ln() / (1.0 / ratio).ln();
                DominatingFunction::calibrated_power_law(mu, m, 2f64.powi(-(*depth as i32)))
            }
            _ => DominatingFunction::calibrated_power_law(mu, mu.dim() as f64, 0.0),
        }
    }

    /// The same family with four times as many atoms, where that is defined.
    pub fn denser(&self) -> Option<MeasureSource> {
        match self {
            MeasureSource::LebesgueSurrogate { k, dim } => {
                Some(MeasureSource::LebesgueSurrogate { k: k + 1, dim: *dim })
            }
            MeasureSource::Cantor { depth, ratio } => Some(MeasureSource::Cantor { depth: depth + 2, ratio: *ratio }),
            MeasureSource::PointCloud { count, dim } => Some(MeasureSource::PointCloud { count: 4 * count, dim: *dim }),
            MeasureSource::File { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub s: i32,
    pub g_max: Option<i32>,
    pub r: Option<u32>,
    pub tail_bits: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { s: 6, g_max: None, r: None, tail_bits: DEFAULT_TAIL_BITS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BSource {
    One,
    BlockAlternating,
    Values(Vec<f64>),
}

impl BSource {
    fn choice(&self) -> BChoice {
        match self {
            BSource::One => BChoice::One,
            BSource::BlockAlternating => BChoice::BlockAlternating,
            BSource::Values(v) => BChoice::Values(v.clone()),
        }
    }
}

/// Experiment names accepted in `experiments`, in the default order.
pub const EXPERIMENTS: [&str; 12] = [
    "measure",
    "kernel",
    "identities",
    "goodness",
    "schur",
    "averaging",
    "cases",
    "theorem",
    "necessity",
    "final_sum",
    "carleson",
    "quadrature",
];

/// Per-experiment knobs. Unset fields take the experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_cubes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_lo: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hi: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentEntry {
    Name(String),
    Detailed(ExperimentOptions),
}

impl ExperimentEntry {
    pub fn name(&self) -> &str {
        match self {
            ExperimentEntry::Name(n) | ExperimentEntry::Detailed(ExperimentOptions { name: n, .. }) => n,
        }
    }

    pub fn options(&self) -> ExperimentOptions {
        match self {
            ExperimentEntry::Name(n) => ExperimentOptions { name: n.clone(), ..Default::default() },
            ExperimentEntry::Detailed(options) => options.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub measure: MeasureSource,
    pub lambda: Option<LambdaSpec>,
    pub kernel: KernelSpec,
    pub grid: GridConfig,
    pub quadrature: QuadratureSpec,
    pub b: BSource,
    pub experiments: Vec<ExperimentEntry>,
    pub thresholds: Thresholds,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 20240611,
            measure: MeasureSource::default(),
            lambda: None,
            kernel: KernelSpec::default(),
            grid: GridConfig::default(),
            quadrature: QuadratureSpec::default(),
            b: BSource::One,
            experiments: EXPERIMENTS.iter().map(|n| ExperimentEntry::Name(n.to_string())).collect(),
            thresholds: Thresholds::default(),
            output_dir: None,
        }
    }
}

/// Smallest `g` with `2^-g < min_separation / 4`; `0` for a single atom.
pub fn auto_g_max(mu: &DiscreteMeasure) -> i32 {
    match mu.min_separation() {
        Some(sep) if sep > 0.0 => {
            let mut g = 0;
            while GridParams::side(g) >= sep / 4.0 {
                g += 1;
            }
            g
        }
        _ => 0,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for e in &self.experiments {
            if !EXPERIMENTS.contains(&e.name()) {
                return Err(Error::InvalidInput(format!(
                    "unknown experiment {:?}; known: {}",
                    e.name(),
                    EXPERIMENTS.join(", ")
                )));
            }
        }
        if let MeasureSource::File { path } = &self.measure {
            if !path.exists() {
                return Err(Error::InvalidInput(format!("measure file not found: {}", path.display())));
            }
        }
        self.quadrature.validate()
    }

    /// Applies `key=value` with a dotted key, e.g. `grid.g_max=10` or
    /// `measure.k=4`. The value is parsed as JSON, falling back to a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            let obj = slot.as_object_mut().ok_or_else(|| {
                Error::InvalidInput(format!("override key {key:?}: {part:?} is not inside an object"))
            })?;
            slot = obj.entry(part.to_string()).or_insert(Value::Null);
        }
        *slot = value;
        let updated: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::InvalidInput(format!("override {assignment:?}: {e}")))?;
        *self = updated;
        Ok(())
    }

    /// Builds the measure, `λ`, kernel and grid parameters.
    pub fn resolve(&self) -> Result<Setup> {
        self.validate()?;
        let mu = self.measure.build(self.seed)?;
        if mu.is_empty() {
            return Err(Error::InvalidInput("measure has no atoms".into()));
        }
        let lam = match &self.lambda {
            Some(spec) => spec.build()?,
            None => self.measure.natural_lambda(&mu)?,
        };
        let kernel = self.kernel.build(lam.clone())?;
        let d = doubling_exponent(&lam)?;
        let g_max = self.grid.g_max.unwrap_or_else(|| auto_g_max(&mu));
        let params = match self.grid.r {
            Some(r) => GridParams::new(kernel.alpha, d, r, self.grid.s, g_max)?,
            None => GridParams::with_auto_r(kernel.alpha, d, self.grid.s, g_max, mu.dim())?,
        }
        .with_tail_bits(self.grid.tail_bits)?;
        let b = self.b.choice();
        if let BChoice::Values(v) = &b {
            if v.len() != mu.len() {
                return Err(Error::InvalidInput(format!("b has {} values for {} atoms", v.len(), mu.len())));
            }
        }
        Ok(Setup {
            mu,
            lam,
            kernel,
            params,
            quad: self.quadrature.clone(),
            b,
            seed: self.seed,
            thresholds: self.thresholds.clone(),
        })
    }

    /// Same configuration on the denser member of the measure family. The
    /// grid depth is re-derived for the denser measure; `r` is taken from
    /// `base` so both runs share the goodness parameter.
    pub fn denser(&self, base: &Setup) -> Option<RunConfig> {
        let measure = self.measure.denser()?;
        let mut cfg = RunConfig { measure, ..self.clone() };
        cfg.grid.r = Some(base.params.r);
        if self.grid.g_max.is_some() {
            cfg.grid.g_max = None;
        }
        Some(cfg)
    }
}
