//! Experiments: exact identity checks, the averaging identity over random
//! grids, the Schur bound for `A_QR`, pointwise case diagnostics, the
//! theorem-level ratio, the necessity check and the final geometric sum.
//!
//! Every experiment returns an [`ExperimentReport`] whose `pass` flag is a
//! function of the reported numbers and the declared [`Thresholds`] only.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dyadic::{
    goodness_probability, AxisCube, Cube, CubeKey, Goodness, GridParams, MeasuredGrid, ProbabilityMode, ShiftedGrid,
    ENUMERATION_LIMIT,
};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::martingale::{self, AccretiveSystem};
use crate::measure::{DiscreteMeasure, DominatingFunction};
use crate::rng::stream;
use crate::sqfn::{self, CorpusCube, QuadratureSpec, ThetaProfile};
use crate::{pow, SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Multiples of the standard error allowed in Monte Carlo comparisons.
    pub sigma: f64,
    /// Allowed relative growth of the Schur operator norm.
    pub norm_growth: f64,
    /// Allowed factor between empirical constants under refinement.
    pub stability_factor: f64,
    /// Allowed relative change of the theorem ratio `G/T`.
    pub uniformity: f64,
    /// Allowed relative change between quadrature levels, and the tolerance
    /// for quadrature against references.
    pub quadrature_rel: f64,
    /// Classical dyadic Carleson embedding constant.
    pub embedding: f64,
    /// Relative tolerance for exact identities.
    pub identity_rel: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            sigma: 3.0,
            norm_growth: 0.10,
            stability_factor: 2.0,
            uniformity: 0.5,
            quadrature_rel: 0.01,
            embedding: 4.0,
            identity_rel: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub params: Value,
    pub trials: Vec<Value>,
    pub summary: Value,
    pub pass: bool,
    pub thresholds: Thresholds,
}

impl ExperimentReport {
    fn new(name: &str, params: Value, trials: Vec<Value>, summary: Value, pass: bool, thresholds: &Thresholds) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            params,
            trials,
            summary,
            pass,
            thresholds: thresholds.clone(),
        }
    }
}

/// Draws tried by [`Setup::draw_nested`].
pub const NESTED_DRAW_LIMIT: u64 = 256;

/// Which accretive function to use.
#[derive(Clone, Debug, PartialEq)]
pub enum BChoice {
    One,
    BlockAlternating,
    Values(Vec<f64>),
}

impl BChoice {
    pub fn values(&self, n: usize) -> Vec<f64> {
        match self {
            BChoice::One => vec![1.0; n],
            BChoice::BlockAlternating => martingale::block_alternating_values(n),
            BChoice::Values(v) => v.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BChoice::One => "one",
            BChoice::BlockAlternating => "block_alternating",
            BChoice::Values(_) => "values",
        }
    }
}

/// A fully resolved configuration: measure, `λ`, kernel, grid parameters,
/// quadrature, `b`, seed.
#[derive(Clone, Debug)]
pub struct Setup {
    pub mu: DiscreteMeasure,
    pub lam: DominatingFunction,
    pub kernel: Kernel,
    pub params: GridParams,
    pub quad: QuadratureSpec,
    pub b: BChoice,
    pub seed: u64,
    pub thresholds: Thresholds,
}

impl Setup {
    /// Shifted grid drawn from the stream `(seed, label, index)`, with
    /// boundary rejections counted.
    pub fn draw(&self, label: &str, index: u64) -> Result<(MeasuredGrid, u32)> {
        let (grid, rejections) = ShiftedGrid::draw(&self.params, &self.mu, &mut stream(self.seed, label, index))?;
        Ok((MeasuredGrid::new(grid, &self.mu)?, rejections))
    }

    /// First draw `(label, i)`, `i = 0, 1, ...`, with a good cube fine enough
    /// to have an ancestor `R^(r)`, so that the nested case is not vacuous.
    /// Returns the grid, its rejection count and `i`.
    pub fn draw_nested(&self, label: &str) -> Result<(MeasuredGrid, u32, u64)> {
        let depth = self.params.r as i32 - self.params.s;
        for index in 0..NESTED_DRAW_LIMIT {
            let (mg, rejections) = self.draw(label, index)?;
            if mg.classify().good_keys().any(|k| k.generation >= depth) {
                return Ok((mg, rejections, index));
            }
        }
        Err(Error::Degenerate(format!(
            "no good cube of generation >= {depth} in {NESTED_DRAW_LIMIT} draws; lower r or raise g_max"
        )))
    }

    pub fn b_values(&self) -> Vec<f64> {
        self.b.values(self.mu.len())
    }

    pub fn accretive(&self, mg: &MeasuredGrid) -> Result<AccretiveSystem> {
        AccretiveSystem::certify(self.b_values(), &self.mu, mg)
    }

    /// Same setup with a different finest generation; `r` is kept.
    pub fn with_g_max(&self, g_max: i32) -> Result<Setup> {
        Ok(Setup { params: self.params.with_g_max(g_max)?, ..self.clone() })
    }

    pub fn with_quadrature(&self, k: u32) -> Result<Setup> {
        Ok(Setup { quad: QuadratureSpec::new(k)?, ..self.clone() })
    }

    /// Configuration summary carried by every report: the measure size,
    /// `α, γ, d, C_λ, r, s, g_max`, the kernel, `b` and the accretivity
    /// constant `δ` of `b` on the unshifted grid.
    pub fn describe(&self) -> Value {
        let p = &self.params;
        let delta = MeasuredGrid::new(ShiftedGrid::standard(p.clone(), self.mu.dim()), &self.mu)
            .and_then(|mg| self.accretive(&mg))
            .ok()
            .map(|sys| sys.accretivity);
        json!({
            "atoms": self.mu.len(),
            "dim": self.mu.dim(),
            "total_mass": self.mu.total_mass(),
            "alpha": p.alpha,
            "gamma": p.gamma,
            "d": p.d,
            "c_lambda": self.lam.c_lambda,
            "r": p.r,
            "s": p.s,
            "g_max": p.g_max,
            "tail_bits": p.tail_bits,
            "kernel": self.kernel.spec(),
            "t_nodes_per_octave": self.quad.t_nodes_per_octave,
            "b": self.b.label(),
            "delta_standard_grid": delta,
            "seed": self.seed,
        })
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `true` when `refined ≤ factor·base` (and both finite).
fn stable(base: f64, refined: f64, factor: f64) -> bool {
    base.is_finite() && refined.is_finite() && refined <= factor * base.max(0.0) + f64::MIN_POSITIVE
}

/// Random atom values in `[-1, 1)`.
pub fn random_function<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Default test functions: random atom values, indicators of random cubes,
/// `b` itself and single-atom spikes, in rotation. Indicators that miss every
/// atom are replaced by random functions.
pub fn default_f_samples<R: Rng>(
    mu: &DiscreteMeasure,
    b: &[f64],
    params: &GridParams,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = mu.len();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let f = match i % 4 {
            0 => random_function(n, rng),
            1 => {
                let cube = sqfn::random_cubes(params, mu, 1, rng).remove(0).cube;
                let chi: Vec<f64> = mu.points().map(|x| if cube.contains(x) { 1.0 } else { 0.0 }).collect();
                if chi.iter().any(|v| *v != 0.0) {
                    chi
                } else {
                    random_function(n, rng)
                }
            }
            2 => b.to_vec(),
            _ => {
                let mut e = vec![0.0; n];
                e[rng.gen_range(0..n)] = 1.0;
                e
            }
        };
        out.push(f);
    }
    out
}

// ---------------------------------------------------------------------------
// measure and kernel certification

/// `μ(B(x,r)) ≤ λ(x,r)` at every atom for `r = 2^-g_max ..= 2^s`, and the
/// sampled doubling ratio of `λ` against the declared `C_λ`.
pub fn measure_experiment(setup: &Setup) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let p = &setup.params;
    let samples = crate::measure::default_domination_samples(&setup.mu, p.g_max, p.s);
    let dom = crate::measure::verify_domination(&setup.mu, &setup.lam, &samples);
    let xs: Vec<Vec<f64>> = setup.mu.points().map(<[f64]>::to_vec).collect();
    let doubling =
        crate::measure::empirical_doubling(&setup.lam, &xs, &crate::measure::dyadic_radii(-p.g_max - 1, p.s + 1));
    let doubling_ok = doubling <= setup.lam.c_lambda * (1.0 + 1e-12);
    let summary = json!({
        "dominated": dom.dominated, "max_ratio": dom.max_ratio, "violations": dom.violations,
        "empirical_doubling": doubling, "c_lambda": setup.lam.c_lambda, "doubling_ok": doubling_ok,
    });
    let trials = dom.witnesses.iter().map(|w| serde_json::to_value(w).expect("plain struct")).collect();
    Ok(ExperimentReport::new("measure", setup.describe(), trials, summary, dom.dominated && doubling_ok, th))
}

/// Sampled size and Hölder constants of the kernel over the tracked scales.
pub fn kernel_experiment(setup: &Setup, atoms: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let p = &setup.params;
    let n = setup.mu.len();
    let stride = (n / atoms.max(1)).max(1);
    let points: Vec<Vec<f64>> = (0..n).step_by(stride).map(|a| setup.mu.point(a).to_vec()).collect();
    let size_samples = crate::kernel::default_size_samples(&points, -p.g_max - 1, p.s, 2);
    let holder_samples = crate::kernel::default_holder_samples(&size_samples);
    let size = crate::kernel::check_size(&setup.kernel, &size_samples)?;
    let holder = crate::kernel::check_holder(&setup.kernel, &holder_samples)?;
    let pass = size.c_size.is_finite() && holder.c_holder.is_finite();
    let summary = json!({"size": size, "holder": holder});
    let mut params = setup.describe();
    params["base_points"] = json!(points.len());
    Ok(ExperimentReport::new("kernel", params, Vec::new(), summary, pass, th))
}

// ---------------------------------------------------------------------------
// exact identities

/// Textbook conditional expectations for `b ≡ 1`: atoms are grouped by direct
/// floor division against the grid offsets; the difference of consecutive
/// levels restricted to a cube is that cube's martingale difference.
pub fn classical_martingale(f: &[f64], mu: &DiscreteMeasure, mg: &MeasuredGrid) -> BTreeMap<CubeKey, Vec<f64>> {
    let grid = mg.grid();
    let p = mg.params();
    let conditional = |j: i32| -> (Vec<Vec<i64>>, Vec<f64>) {
        let side = GridParams::side(j);
        let off = grid.offset(j);
        let cells: Vec<Vec<i64>> =
            mu.points().map(|x| x.iter().zip(off).map(|(c, o)| ((c - o) / side).floor() as i64).collect()).collect();
        let mut sums: BTreeMap<&Vec<i64>, (f64, f64)> = BTreeMap::new();
        for (a, c) in cells.iter().enumerate() {
            let e = sums.entry(c).or_insert((0.0, 0.0));
            e.0 += f[a] * mu.mass(a);
            e.1 += mu.mass(a);
        }
        let means = cells.iter().map(|c| sums[c].0 / sums[c].1).collect();
        (cells.clone(), means)
    };
    let mut out = BTreeMap::new();
    for j in -p.s..p.g_max {
        let (cells, coarse) = conditional(j);
        let (_, fine) = conditional(j + 1);
        let mut by_cell: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
        for (a, c) in cells.iter().enumerate() {
            by_cell.entry(c.clone()).or_insert_with(|| vec![0.0; mu.len()])[a] = fine[a] - coarse[a];
        }
        for (index, v) in by_cell {
            out.insert(CubeKey { generation: j, index }, v);
        }
    }
    out
}

/// Exact identities on one grid: decomposition telescoping, Pythagoras for
/// `b ≡ 1`, the classical oracle, `B` telescoping, the three-term split and
/// the final-sum re-indexing, for `b ≡ 1` and the configured `b`.
pub fn identities_experiment(setup: &Setup, f_count: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let mu = &setup.mu;
    let (mg, rejections, draw) = setup.draw_nested("identities-grid")?;
    let p = mg.params().clone();
    let mut rng = stream(setup.seed, "identities-f", 0);
    let fs: Vec<Vec<f64>> = (0..f_count).map(|_| random_function(mu.len(), &mut rng)).collect();
    let mut bs = vec![("one", vec![1.0; mu.len()])];
    if setup.b != BChoice::One {
        bs.push((setup.b.label(), setup.b_values()));
    }
    if setup.b != BChoice::BlockAlternating {
        bs.push(("block_alternating", martingale::block_alternating_values(mu.len())));
    }
    let goodness = mg.classify();
    let mut residual: f64 = 0.0;
    let mut pythagoras: f64 = 0.0;
    let mut oracle: f64 = 0.0;
    let mut telescoping: f64 = 0.0;
    let mut split: f64 = 0.0;
    let mut reindex: f64 = 0.0;
    let mut telescoped_cubes = 0usize;
    let mut trials = Vec::new();
    for (label, b) in &bs {
        AccretiveSystem::certify(b.clone(), mu, &mg)?;
        for (i, f) in fs.iter().enumerate() {
            let d = martingale::decompose(f, b, &mg, mu)?;
            let res = d.residual_norm / d.f_norm;
            residual = residual.max(res);
            let mut row = json!({"b": label, "f": i, "residual_rel": res});
            if *label == "one" {
                let py = rel(d.energy(mu), d.f_norm * d.f_norm);
                pythagoras = pythagoras.max(py);
                row["pythagoras_rel"] = json!(py);
                let classical = classical_martingale(f, mu, &mg);
                for (key, piece) in &d.pieces {
                    let dense = piece.to_dense(mu.len());
                    let other =
                        classical.get(key).ok_or_else(|| Error::Degenerate(format!("oracle lacks cube {key}")))?;
                    for (x, y) in dense.iter().zip(other) {
                        oracle = oracle.max((x - y).abs());
                    }
                }
            }
            let fs_report = final_sum(&setup.kernel, f, b, mu, &mg)?;
            reindex = reindex.max(fs_report.reindex_error());
            trials.push(row);
        }
        let f = &fs[0];
        for key in goodness.good_keys() {
            let top_k = key.generation + p.s;
            if top_k < p.r as i32 + 1 {
                continue;
            }
            let mut sum = 0.0;
            for k in p.r + 1..=top_k as u32 {
                sum += martingale::b_coefficient(f, b, key, k, &mg, mu)?;
                let parts = martingale::delta_split(f, b, key, k, &mg, mu)?;
                let big = mg.ancestor_key(key, k)?;
                let direct = martingale::delta_full(f, b, &big, &mg, mu)?.to_dense(mu.len());
                let scale = direct.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(parts.coefficient.abs());
                for (x, y) in parts.sum().iter().zip(&direct) {
                    if scale > 0.0 {
                        split = split.max((x - y).abs() / scale);
                    }
                }
            }
            let target = martingale::adapted_ratio(f, b, &mg.ancestor_key(key, p.r)?, &mg, mu)?;
            telescoping = telescoping.max(rel(sum, target));
            telescoped_cubes += 1;
        }
    }
    let tol = th.identity_rel;
    let summary = json!({
        "max_residual_rel": residual,
        "max_pythagoras_rel": pythagoras,
        "max_classical_oracle_abs": oracle,
        "max_b_telescoping_rel": telescoping,
        "telescoped_good_cubes": telescoped_cubes,
        "max_delta_split_rel": split,
        "max_final_sum_reindex_rel": reindex,
        "grid_rejections": rejections,
        "draw": draw,
    });
    let pass =
        residual <= tol && pythagoras <= tol && oracle <= 1e-12 && telescoping <= tol && split <= tol && reindex <= tol;
    let mut params = setup.describe();
    params["f_count"] = json!(f_count);
    Ok(ExperimentReport::new("identities", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// goodness classifier

/// Enumerated versus Monte Carlo `π_good(j)` on the generations whose
/// enumeration needs at most `max_bits` bits.
pub fn goodness_crosscheck(setup: &Setup, samples: usize, max_bits: u32) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let p = &setup.params;
    let dim = setup.mu.dim();
    let mut trials = Vec::new();
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let limit = max_bits.min(ENUMERATION_LIMIT);
    for j in p.generations() {
        let bits = dim as i64 * (j + p.s) as i64;
        if bits > limit as i64 {
            continue;
        }
        let exact = goodness_probability(p, dim, j, ProbabilityMode::Enumerate)?;
        let mc = goodness_probability(
            p,
            dim,
            j,
            ProbabilityMode::MonteCarlo { samples, seed: setup.seed ^ (j as u64).wrapping_mul(0x9e37) },
        )?;
        let diff = (exact.p - mc.p).abs();
        let ok = diff <= th.sigma * mc.stderr || diff == 0.0;
        if mc.stderr > 0.0 {
            worst = worst.max(diff / mc.stderr);
        }
        pass &= ok;
        trials.push(json!({
            "generation": j, "bits": bits, "enumerated": exact.p, "monte_carlo": mc.p,
            "stderr": mc.stderr, "pass": ok,
        }));
    }
    if trials.is_empty() {
        return Err(Error::Degenerate(format!("no generation has at most {limit} shift bits")));
    }
    let summary = json!({"generations": trials.len(), "max_z": worst});
    let mut params = setup.describe();
    params["samples"] = json!(samples);
    params["max_bits"] = json!(limit);
    Ok(ExperimentReport::new("goodness", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// Schur matrix

/// `sup_{z ∈ Q ∪ R} λ(z, radius)` over atoms, both centres and all corners.
fn sup_lambda(
    lam: &DominatingFunction,
    mu: &DiscreteMeasure,
    mg: &MeasuredGrid,
    cubes: [(&CubeKey, &Cube); 2],
    radius: f64,
) -> f64 {
    if lam.is_translation_invariant() {
        return lam.eval(&cubes[0].1.center(), radius);
    }
    let mut best: f64 = 0.0;
    for (key, cube) in cubes {
        for &a in mg.atoms(key) {
            best = best.max(lam.eval(mu.point(a), radius));
        }
        best = best.max(lam.eval(&cube.center(), radius));
        for c in cube.geom.corners() {
            best = best.max(lam.eval(&c, radius));
        }
    }
    best
}

/// `ℓ(Q)^{α/2} ℓ(R)^{α/2} / (D^α sup_{z ∈ Q∪R} λ(z, D))`.
#[allow(clippy::too_many_arguments)]
fn pair_coefficient(
    lam: &DominatingFunction,
    alpha: f64,
    mu: &DiscreteMeasure,
    mg: &MeasuredGrid,
    qk: &CubeKey,
    q: &Cube,
    rk: &CubeKey,
    r: &Cube,
) -> f64 {
    let d = q.long_dist(r);
    let sup = sup_lambda(lam, mu, mg, [(qk, q), (rk, r)], d);
    pow(q.side() * r.side(), alpha / 2.0) / (pow(d, alpha) * sup)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchurMatrix {
    pub keys: Vec<CubeKey>,
    /// Row-major `n × n`.
    pub entries: Vec<f64>,
}

impl SchurMatrix {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.len() + j]
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.entries[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut ay = vec![0.0; self.len()];
        self.apply(y, &mut ay);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Operator norm by power iteration. The matrix is symmetric with positive
    /// entries, so the Perron eigenvalue is the norm.
    pub fn operator_norm(&self, max_iter: usize) -> Result<f64> {
        let n = self.len();
        if n == 0 {
            return Ok(0.0);
        }
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut w = vec![0.0; n];
        let mut estimate = 0.0;
        for _ in 0..max_iter {
            self.apply(&v, &mut w);
            let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok(0.0);
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            if (rayleigh - estimate).abs() <= 1e-13 * rayleigh {
                return Ok(rayleigh.max(norm.min(rayleigh * (1.0 + 1e-12))));
            }
            estimate = rayleigh;
        }
        Err(Error::PowerIteration(max_iter))
    }

    /// Largest `x^T A y` over random non-negative unit vectors.
    pub fn sampled_max<R: Rng>(&self, trials: usize, rng: &mut R) -> f64 {
        let n = self.len();
        let unit = |rng: &mut R| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        (0..trials)
            .map(|_| {
                let x = unit(rng);
                let y = unit(rng);
                self.bilinear(&x, &y)
            })
            .fold(0.0, f64::max)
    }
}

/// `A_QR` over the given positive-mass cubes.
pub fn schur_matrix(
    mu: &DiscreteMeasure,
    mg: &MeasuredGrid,
    lam: &DominatingFunction,
    alpha: f64,
    keys: Vec<CubeKey>,
) -> SchurMatrix {
    let cubes: Vec<Cube> = keys.iter().map(|k| mg.cube(k)).collect();
    let n = keys.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let c = pair_coefficient(lam, alpha, mu, mg, &keys[i], &cubes[i], &keys[j], &cubes[j]);
            let a = c * (mg.mass(&keys[i]) * mg.mass(&keys[j])).sqrt();
            entries[i * n + j] = a;
            entries[j * n + i] = a;
        }
    }
    SchurMatrix { keys, entries }
}

const POWER_ITERATIONS: usize = 200_000;

/// Operator norm of `A_QR` over all positive-mass cubes, at `g_max` and
/// `g_max + 1`.
pub fn schur_bound_experiment(setup: &Setup, trials: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    let mut pass = true;
    for (level, s) in [("base", setup.clone()), ("refined", setup.with_g_max(setup.params.g_max + 1)?)] {
        let (mg, rejections) = s.draw("schur-grid", 0)?;
        let m = schur_matrix(&s.mu, &mg, &s.lam, s.params.alpha, mg.keys());
        let norm = m.operator_norm(POWER_ITERATIONS)?;
        let sampled = m.sampled_max(trials, &mut stream(s.seed, "schur-rayleigh", level.len() as u64));
        let diag = (0..m.len()).map(|i| m.get(i, i)).fold(0.0, f64::max);
        let ok = m.is_symmetric() && sampled <= norm * (1.0 + 1e-12) && diag <= norm * (1.0 + 1e-12);
        pass &= ok;
        norms.push(norm);
        rows.push(json!({
            "level": level, "g_max": s.params.g_max, "cubes": m.len(), "operator_norm": norm,
            "sampled_max": sampled, "max_diagonal": diag, "symmetric": m.is_symmetric(),
            "grid_rejections": rejections, "consistent": ok,
        }));
    }
    let growth = norms[1] / norms[0] - 1.0;
    pass &= growth < th.norm_growth;
    let summary = json!({"norm_base": norms[0], "norm_refined": norms[1], "growth": growth});
    let mut params = setup.describe();
    params["rayleigh_trials"] = json!(trials);
    Ok(ExperimentReport::new("schur", params, rows, summary, pass, th))
}

// ---------------------------------------------------------------------------
// averaging identity

/// Over `draws` shifted grids: for each generation, the good-restricted
/// Whitney sum against `π_good(j)` times the full one, and the correlation of
/// goodness with the Whitney integral of the cube containing a fixed point.
pub fn averaging_identity_experiment(setup: &Setup, f: &[f64], draws: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    if draws == 0 {
        return Err(Error::NoSamples);
    }
    let mu = &setup.mu;
    let p = setup.params.clone();
    let profile = ThetaProfile::new(&setup.kernel, f, mu, &p, &setup.quad)?;
    let gens: Vec<i32> = p.generations().collect();
    let all: Vec<f64> = gens.iter().map(|&j| (0..mu.len()).map(|a| mu.mass(a) * profile.octave(a, j)).sum()).collect();
    let (lo, hi) = mu.bounding_box().ok_or_else(|| Error::Degenerate("empty measure".into()))?;
    let probe: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + 0.5 * (b - a) + 0.0123 * (b - a)).collect();
    let mut good_sums = vec![Vec::with_capacity(draws); gens.len()];
    let mut all_sums = vec![Vec::with_capacity(draws); gens.len()];
    let mut probe_good = vec![Vec::with_capacity(draws); gens.len()];
    let mut probe_w = vec![Vec::with_capacity(draws); gens.len()];
    let mut trials = Vec::with_capacity(draws);
    for i in 0..draws {
        let (mg, rejections) = setup.draw("averaging-grid", i as u64)?;
        let goodness = mg.classify();
        let mut total_good = 0.0;
        for (gi, &j) in gens.iter().enumerate() {
            let mut good = 0.0;
            let mut every = 0.0;
            for (key, _) in mg.level(j) {
                let w = profile.whitney(&mg, &key);
                every += w;
                if goodness.is_good(&key) {
                    good += w;
                }
            }
            total_good += good;
            good_sums[gi].push(good);
            all_sums[gi].push(every);
            let key = mg.grid().locate(j, &probe)?;
            let cube = mg.grid().cube_of(&key)?;
            probe_good[gi].push(if mg.grid().is_bad(&cube) { 0.0 } else { 1.0 });
            probe_w[gi].push(if mg.cell(&key).is_some() { profile.whitney(&mg, &key) } else { 0.0 });
        }
        trials.push(json!({"draw": i, "rejections": rejections, "good_total": total_good}));
    }
    let safe = p.safe_window();
    let mut per_gen = Vec::new();
    let mut pass = true;
    let mut zero_variance_mismatch = false;
    for (gi, &j) in gens.iter().enumerate() {
        let (mg_, se_g) = mean_and_stderr(&good_sums[gi]);
        let (ma, se_a) = mean_and_stderr(&all_sums[gi]);
        let bits = setup.mu.dim() as i64 * (j + p.s) as i64;
        let mode = if bits <= ENUMERATION_LIMIT as i64 {
            ProbabilityMode::Enumerate
        } else {
            ProbabilityMode::MonteCarlo { samples: 20_000, seed: setup.seed ^ 0xa5a5 ^ j as u64 }
        };
        let pi = goodness_probability(&p, setup.mu.dim(), j, mode)?;
        let diff = mg_ - pi.p * ma;
        let se = (se_g.powi(2) + (pi.p * se_a).powi(2) + (ma * pi.stderr).powi(2)).sqrt();
        let identity_ok = if se > 0.0 {
            diff.abs() <= th.sigma * se
        } else {
            let ok = diff.abs() <= 1e-12 * ma.abs().max(f64::MIN_POSITIVE);
            zero_variance_mismatch |= !ok;
            ok
        };
        let rho = correlation(&probe_good[gi], &probe_w[gi]);
        let rho_se = ((1.0 - rho * rho).max(0.0) / (draws as f64 - 2.0).max(1.0)).sqrt();
        let corr_ok = rho.abs() <= th.sigma * rho_se || rho == 0.0;
        let in_window = safe.contains(&j);
        let all_ok = rel(ma, all[gi]) <= 1e-12;
        pass &= all_ok;
        if in_window {
            pass &= identity_ok && corr_ok;
        }
        per_gen.push(json!({
            "generation": j, "in_safe_window": in_window, "mean_good": mg_, "stderr_good": se_g,
            "mean_all": ma, "all_enumerated": all[gi], "all_consistent": all_ok, "pi_good": pi.p, "pi_stderr": pi.stderr, "difference": diff,
            "combined_stderr": se, "identity_pass": identity_ok, "correlation": rho,
            "correlation_stderr": rho_se, "correlation_pass": corr_ok,
        }));
    }
    let summary = json!({
        "draws": draws,
        "safe_window": [*safe.start(), *safe.end()],
        "generations": per_gen,
        "zero_variance_mismatch": zero_variance_mismatch,
    });
    let mut params = setup.describe();
    params["probe"] = json!(probe);
    Ok(ExperimentReport::new("averaging", params, trials, summary, pass && !zero_variance_mismatch, th))
}

/// Pearson correlation; `0` when either sample has zero variance.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

// ---------------------------------------------------------------------------
// case diagnostics

/// Whitney sample points of a cube: centre and sub-cell centres, at
/// `t ∈ {0.55, 0.75, 0.95}·ℓ(R)`.
pub fn whitney_samples(cube: &AxisCube) -> Vec<(Vec<f64>, f64)> {
    let mut xs = vec![cube.center()];
    xs.extend(cube.subcell_centers());
    let mut out = Vec::new();
    for x in xs {
        for frac in [0.55, 0.75, 0.95] {
            out.push((x.clone(), frac * cube.side));
        }
    }
    out
}

/// Maximal empirical constants of the pointwise case bounds on one grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CaseConstants {
    /// `ℓ(Q) < ℓ(R)`.
    pub small_q: f64,
    /// `ℓ(Q) ≥ ℓ(R)`, separated.
    pub separated: f64,
    /// `ℓ(R) ≤ ℓ(Q) ≤ 2^r ℓ(R)`, close.
    pub comparable: f64,
    /// `θ_t(χ_{R^n \ R^(k-1)} b)` against `2^{-αk/2}`.
    pub nested_outer: f64,
    /// `θ_t(χ_S Δ_{R^(k)} f)` against `2^{-αk/2} μ(R^(k-1))^{-1/2} ‖Δ_{R^(k)} f‖`.
    pub nested_sibling: f64,
    /// `|B| μ(R^(k-1))^{1/2} / ‖Δ_{R^(k)} f‖`.
    pub b_coefficient: f64,
    /// `λ(x,ℓ(Q)) / ((ℓ(Q)/ℓ(R))^{γd} λ(x, ℓ(R)^γ ℓ(Q)^{1-γ}))`.
    pub lambda_doubling: f64,
    /// Largest number of cubes `Q` in the comparable case for one `R`.
    pub max_comparable_count: usize,
    /// Good `R`, `k` with `d(R, R^n \ R^(k-1)) < ℓ(R)^{1/2} ℓ(R^(k-1))^{1/2}`.
    pub geometry_violations: usize,
    pub geometry_checks: usize,
    pub pairs: BTreeMap<String, usize>,
    /// Pairs skipped because the right side vanished.
    pub skipped: usize,
}

impl CaseConstants {
    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("small_q", self.small_q),
            ("separated", self.separated),
            ("comparable", self.comparable),
            ("nested_outer", self.nested_outer),
            ("nested_sibling", self.nested_sibling),
        ]
    }
}

fn piece_max_ratio(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    piece: &martingale::Piece,
    samples: &[(Vec<f64>, f64)],
    rhs: f64,
) -> f64 {
    samples
        .iter()
        .map(|(x, t)| sqfn::theta_sparse(kernel, mu, &piece.atoms, &piece.values, x, *t).abs() / rhs)
        .fold(0.0, f64::max)
}

/// Evaluates each pointwise case estimate at Whitney samples of every tracked
/// `R` (the nested case over good `R`) and records the largest `LHS/RHS`.
pub fn case_diagnostics(
    setup: &Setup,
    mg: &MeasuredGrid,
    goodness: &Goodness,
    f: &[f64],
    b: &[f64],
) -> Result<CaseConstants> {
    let mu = &setup.mu;
    let kernel = &setup.kernel;
    let lam = &setup.lam;
    let p = mg.params().clone();
    let alpha = p.alpha;
    let keys = mg.keys();
    let cubes: BTreeMap<&CubeKey, Cube> = keys.iter().map(|k| (k, mg.cube(k))).collect();
    let mut pieces = BTreeMap::new();
    for k in &keys {
        if k.generation < p.g_max || k.generation == -p.s {
            let piece = martingale::delta_full(f, b, k, mg, mu)?;
            let norm = piece.norm_sq(mu).sqrt();
            pieces.insert(k, (piece, norm));
        }
    }
    let mut out = CaseConstants::default();
    let count = |name: &str, out: &mut CaseConstants| *out.pairs.entry(name.to_string()).or_insert(0) += 1;
    for rk in &keys {
        let r = &cubes[rk];
        let samples = whitney_samples(&r.geom);
        let mut comparable_here = 0;
        for (qk, (piece, norm)) in &pieces {
            let q = &cubes[qk];
            let (lq, lr) = (q.side(), r.side());
            let dist = q.dist(r);
            let close = dist <= p.bad_threshold(lr, lq);
            let case = if lq < lr {
                "small_q"
            } else if !close {
                "separated"
            } else if lq <= 2f64.powi(p.r as i32) * lr {
                "comparable"
            } else {
                continue;
            };
            if case == "comparable" {
                comparable_here += 1;
            }
            if lq >= lr {
                let x = r.center();
                let ratio = lam.eval(&x, lq)
                    / (pow(lq / lr, p.gamma * p.d) * lam.eval(&x, pow(lr, p.gamma) * pow(lq, 1.0 - p.gamma)));
                out.lambda_doubling = out.lambda_doubling.max(ratio);
            }
            if *norm == 0.0 {
                out.skipped += 1;
                continue;
            }
            count(case, &mut out);
            let rhs = match case {
                "comparable" => norm / mg.mass(rk).sqrt(),
                _ => pair_coefficient(lam, alpha, mu, mg, qk, q, rk, r) * mg.mass(qk).sqrt() * norm,
            };
            let c = piece_max_ratio(kernel, mu, piece, &samples, rhs);
            let slot = match case {
                "small_q" => &mut out.small_q,
                "separated" => &mut out.separated,
                _ => &mut out.comparable,
            };
            *slot = slot.max(c);
        }
        out.max_comparable_count = out.max_comparable_count.max(comparable_here);
    }
    for rk in goodness.good_keys() {
        let top_k = rk.generation + p.s;
        if top_k < p.r as i32 + 1 {
            continue;
        }
        let r = &cubes[rk];
        let samples = whitney_samples(&r.geom);
        for k in p.r + 1..=top_k as u32 {
            let inner_key = mg.ancestor_key(rk, k - 1)?;
            let big_key = mg.ancestor_key(rk, k)?;
            let inner = &cubes[&inner_key];
            out.geometry_checks += 1;
            if r.boundary_dist(inner) < (r.side() * inner.side()).sqrt() {
                out.geometry_violations += 1;
            }
            let decay = 2f64.powf(-alpha * k as f64 / 2.0);
            let outside: Vec<usize> = (0..mu.len()).filter(|&a| !inner.contains(mu.point(a))).collect();
            let outside_b: Vec<f64> = outside.iter().map(|&a| b[a]).collect();
            if !outside.is_empty() {
                count("nested_outer", &mut out);
                let c = samples
                    .iter()
                    .map(|(x, t)| sqfn::theta_sparse(kernel, mu, &outside, &outside_b, x, *t).abs() / decay)
                    .fold(0.0, f64::max);
                out.nested_outer = out.nested_outer.max(c);
            }
            let (big_piece, big_norm) = &pieces[&big_key];
            let coef = martingale::b_coefficient(f, b, rk, k, mg, mu)?;
            if *big_norm == 0.0 {
                out.skipped += 1;
                continue;
            }
            out.b_coefficient = out.b_coefficient.max(coef.abs() * mg.mass(&inner_key).sqrt() / big_norm);
            let rhs = decay * big_norm / mg.mass(&inner_key).sqrt();
            for sib in mg.children(&big_key) {
                if sib == inner_key {
                    continue;
                }
                let atoms = mg.atoms(&sib);
                let values: Vec<f64> = atoms
                    .iter()
                    .map(|a| big_piece.atoms.iter().position(|x| x == a).map_or(0.0, |i| big_piece.values[i]))
                    .collect();
                count("nested_sibling", &mut out);
                let c = samples
                    .iter()
                    .map(|(x, t)| sqfn::theta_sparse(kernel, mu, atoms, &values, x, *t).abs() / rhs)
                    .fold(0.0, f64::max);
                out.nested_sibling = out.nested_sibling.max(c);
            }
        }
    }
    Ok(out)
}

/// Case diagnostics at `g_max` and `g_max + 1` for a random `f` and the
/// configured `b`.
pub fn case_experiment(setup: &Setup) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let f = random_function(setup.mu.len(), &mut stream(setup.seed, "cases-f", 0));
    let mut levels = Vec::new();
    let mut trials = Vec::new();
    let (_, _, draw) = setup.draw_nested("cases-grid")?;
    for (level, s) in [("base", setup.clone()), ("refined", setup.with_g_max(setup.params.g_max + 1)?)] {
        let (mg, _) = s.draw("cases-grid", draw)?;
        let sys = s.accretive(&mg)?;
        let c = case_diagnostics(&s, &mg, &mg.classify(), &f, &sys.b)?;
        trials.push(json!({"level": level, "g_max": s.params.g_max, "accretivity": sys.accretivity, "constants": c}));
        levels.push(c);
    }
    let mut stability = serde_json::Map::new();
    let mut pass = true;
    for ((name, base), (_, refined)) in levels[0].named().iter().zip(levels[1].named().iter()) {
        let ok = stable(*base, *refined, th.stability_factor);
        pass &= ok;
        stability.insert(name.to_string(), json!({"base": base, "refined": refined, "pass": ok}));
    }
    pass &= levels.iter().all(|c| c.geometry_violations == 0);
    let summary = json!({
        "cases": stability,
        "lambda_doubling": levels[1].lambda_doubling.max(levels[0].lambda_doubling),
        "max_comparable_count": levels[0].max_comparable_count.max(levels[1].max_comparable_count),
        "geometry_violations": levels[0].geometry_violations + levels[1].geometry_violations,
        "b_coefficient_constant": levels[0].b_coefficient.max(levels[1].b_coefficient),
    });
    let mut params = setup.describe();
    params["draw"] = json!(draw);
    Ok(ExperimentReport::new("cases", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// theorem-level ratio

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremResult {
    /// `max_f ∬ |θ_t f|² / ‖f‖²`.
    pub g: f64,
    /// `G` over the first half of the samples.
    pub g_half: f64,
    /// `G` over the samples other than `b` itself.
    pub g_excluding_b: f64,
    /// Testing constant of `b` with `μ(κQ)`.
    pub t_b: f64,
    /// Testing constant of indicators, `sup ∬_{Q̂} |θ_t χ_Q|² / μ(Q)`.
    pub t_chi: f64,
    pub ratio_b: Option<f64>,
    pub ratio_chi: Option<f64>,
    /// `G_excluding_b / T_χ`, reported only.
    pub ratio_chi_excluding_b: Option<f64>,
    pub samples: usize,
    pub corpus: usize,
}

fn ratio_or_degenerate(g: f64, t: f64, what: &str) -> Result<Option<f64>> {
    if t > 0.0 {
        Ok(Some(g / t))
    } else if g > 0.0 {
        Err(Error::Degenerate(format!("{what} testing constant is 0 while G = {g}")))
    } else {
        Ok(None)
    }
}

/// `G`, `T_b`, `T_χ` and the ratios on one grid.
pub fn theorem_experiment(
    setup: &Setup,
    mg: &MeasuredGrid,
    b: &[f64],
    f_samples: &[Vec<f64>],
    corpus: &[CorpusCube],
    kappa: f64,
) -> Result<TheoremResult> {
    if f_samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let mu = &setup.mu;
    let mut g: f64 = 0.0;
    let mut g_half: f64 = 0.0;
    let mut g_other: f64 = 0.0;
    let half = f_samples.len().div_ceil(2);
    for (i, f) in f_samples.iter().enumerate() {
        let norm = mu.norm_sq(f);
        if norm == 0.0 {
            continue;
        }
        let prof = ThetaProfile::new(&setup.kernel, f, mu, mg.params(), &setup.quad)?;
        let v = prof.total() / norm;
        g = g.max(v);
        if i < half {
            g_half = g_half.max(v);
        }
        if f.as_slice() != b {
            g_other = g_other.max(v);
        }
    }
    let bprof = ThetaProfile::new(&setup.kernel, b, mu, mg.params(), &setup.quad)?;
    let t_b = sqfn::testing_constant(&bprof, mu, mg, kappa, corpus)?.value;
    let t_chi = sqfn::indicator_testing_constant(&setup.kernel, mu, mg.params(), &setup.quad, corpus)?.value;
    Ok(TheoremResult {
        g,
        g_half,
        g_excluding_b: g_other,
        t_b,
        t_chi,
        ratio_b: ratio_or_degenerate(g, t_b, "b")?,
        ratio_chi: ratio_or_degenerate(g, t_chi, "indicator")?,
        ratio_chi_excluding_b: (t_chi > 0.0).then(|| g_other / t_chi),
        samples: f_samples.len(),
        corpus: corpus.len(),
    })
}

/// Theorem ratio for a list of labelled setups; the first is the reference.
/// Passes when `G`, `T` are finite and positive everywhere and every
/// `G/T_χ` is within the uniformity threshold of the reference, as is the
/// ratio over half of the samples.
pub fn theorem_uniformity(
    variants: &[(String, Setup)],
    f_count: usize,
    random_cubes: usize,
    kappa: f64,
) -> Result<ExperimentReport> {
    let (_, first) = variants.first().ok_or(Error::NoSamples)?;
    let th = &first.thresholds;
    let mut trials = Vec::new();
    let mut results = Vec::new();
    for (label, s) in variants {
        let (mg, _) = s.draw("theorem-grid", 0)?;
        let sys = s.accretive(&mg)?;
        let mut rng = stream(s.seed, "theorem-samples", 0);
        let fs = default_f_samples(&s.mu, &sys.b, &s.params, f_count, &mut rng);
        let corpus = sqfn::default_corpus(&mg, &s.mu, random_cubes, &mut stream(s.seed, "theorem-corpus", 0));
        let r = theorem_experiment(s, &mg, &sys.b, &fs, &corpus, kappa)?;
        trials.push(json!({"variant": label, "params": s.describe(), "result": r}));
        results.push(r);
    }
    let reference = results[0].ratio_chi;
    let mut pass = true;
    let mut changes = Vec::new();
    for (r, (label, _)) in results.iter().zip(variants) {
        let finite = r.g.is_finite() && r.g > 0.0 && r.t_chi.is_finite() && r.t_chi > 0.0 && r.t_b > 0.0;
        let change = match (reference, r.ratio_chi) {
            (Some(a), Some(b)) => (b / a - 1.0).abs(),
            _ => f64::INFINITY,
        };
        let sample_change = if r.g_half > 0.0 { r.g / r.g_half - 1.0 } else { f64::INFINITY };
        let ok = finite && change < th.uniformity && sample_change < th.uniformity;
        pass &= ok;
        changes.push(json!({
            "variant": label, "ratio_chi": r.ratio_chi, "ratio_b": r.ratio_b,
            "ratio_chi_excluding_b": r.ratio_chi_excluding_b,
            "change_vs_reference": change, "sample_doubling_change": sample_change, "pass": ok,
        }));
    }
    let summary = json!({"variants": changes});
    let params =
        json!({"f_samples": f_count, "random_cubes": random_cubes, "kappa": kappa, "reference": first.describe()});
    Ok(ExperimentReport::new("theorem", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// necessity

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NecessityRow {
    pub center: Vec<f64>,
    pub side: f64,
    pub mass: f64,
    /// `max |θ_t(b χ_{(3Q)^c})(x)| ℓ(Q)^α / t^α` over samples in `Q̂`.
    pub pointwise: f64,
    /// `∬_{Q̂} |θ_t(b χ_{(3Q)^c})|² / μ(Q)`.
    pub integral: f64,
    /// Quadrature of `ℓ(Q)^{-2α} ∫_0^{ℓ(Q)} t^{2α-1} dt` against `1/(2α)`.
    pub model_rel_error: f64,
    /// The same model integral cut at the grid floor, relative to `1/(2α)`.
    pub model_truncation: f64,
}

/// Samples `(x, t)` in `Q̂`: centre and sub-cell centres of `Q`, at
/// `t = ℓ(Q)·{0.95, 0.75, 0.55}·2^{-i}` above `t_floor`.
pub fn carleson_samples(cube: &AxisCube, t_floor: f64) -> Vec<(Vec<f64>, f64)> {
    let mut xs = vec![cube.center()];
    xs.extend(cube.subcell_centers());
    let mut out = Vec::new();
    for x in &xs {
        let mut scale = cube.side;
        while scale * 0.55 > t_floor {
            for frac in [0.95, 0.75, 0.55] {
                out.push((x.clone(), frac * scale));
            }
            scale /= 2.0;
        }
    }
    out
}

/// For one cube: the decay constant of `θ_t(b χ_{(3Q)^c})` and its
/// Carleson-box integral over `μ(Q)`.
pub fn necessity_row(setup: &Setup, params: &GridParams, b: &[f64], cube: &AxisCube) -> Result<Option<NecessityRow>> {
    let mu = &setup.mu;
    let alpha = setup.kernel.alpha;
    let mass = sqfn::cube_mass(mu, cube);
    if mass == 0.0 {
        return Ok(None);
    }
    let triple = cube.dilate(3.0);
    let outer: Vec<f64> = mu.points().enumerate().map(|(a, x)| if triple.contains(x) { 0.0 } else { b[a] }).collect();
    let outside: Vec<usize> = (0..mu.len()).filter(|&a| outer[a] != 0.0).collect();
    let values: Vec<f64> = outside.iter().map(|&a| outer[a]).collect();
    let pointwise = carleson_samples(cube, params.t_floor())
        .iter()
        .map(|(x, t)| sqfn::theta_sparse(&setup.kernel, mu, &outside, &values, x, *t).abs() * pow(cube.side / t, alpha))
        .fold(0.0, f64::max);
    let region = crate::dyadic::carleson_box_free(cube.clone(), params);
    let integral = sqfn::region_integral(&setup.kernel, &outer, mu, &region, &setup.quad)? / mass;
    let exact = 1.0 / (2.0 * alpha);
    let k = setup.quad.t_nodes_per_octave;
    let l = cube.side;
    let model = |lo: f64| sqfn::log_trapezoid(|t| pow(t / l, 2.0 * alpha), lo, l, k);
    let model_rel_error = (model(l * 2f64.powi(-60))? - exact).abs() / exact;
    let model_truncation = if params.t_floor() < l { (exact - model(params.t_floor())?) / exact } else { 1.0 };
    Ok(Some(NecessityRow {
        center: cube.center(),
        side: l,
        mass,
        pointwise,
        integral,
        model_rel_error,
        model_truncation,
    }))
}

/// The outer-part decay and integral constants over a corpus. Stable when
/// the maximum over the whole corpus is within the stability factor of the
/// maximum over its first half.
pub fn necessity_experiment(setup: &Setup, corpus_size: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let (mg, _) = setup.draw("necessity-grid", 0)?;
    let sys = setup.accretive(&mg)?;
    let mut rng = stream(setup.seed, "necessity-corpus", 0);
    let mut corpus = sqfn::default_corpus(&mg, &setup.mu, corpus_size, &mut rng);
    // interleave grid and random cubes, then keep `corpus_size`
    let grid_part: Vec<CorpusCube> = corpus.drain(..corpus.len() - corpus_size.min(corpus.len())).collect();
    let mut picked = Vec::new();
    let stride = (grid_part.len() / corpus_size.max(1)).max(1);
    for i in 0..corpus_size {
        if i % 2 == 0 {
            if let Some(c) = grid_part.get((i / 2) * stride * 2 % grid_part.len().max(1)) {
                picked.push(c.clone());
                continue;
            }
        }
        if let Some(c) = corpus.get(i) {
            picked.push(c.clone());
        }
    }
    picked.truncate(corpus_size);
    let mut rows = Vec::new();
    let mut skipped = 0;
    for c in &picked {
        match necessity_row(setup, mg.params(), &sys.b, &c.cube)? {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let half = rows.len().div_ceil(2);
    let max_of = |rs: &[NecessityRow], f: fn(&NecessityRow) -> f64| rs.iter().map(f).fold(0.0, f64::max);
    let pw_half = max_of(&rows[..half], |r| r.pointwise);
    let pw_all = max_of(&rows, |r| r.pointwise);
    let int_half = max_of(&rows[..half], |r| r.integral);
    let int_all = max_of(&rows, |r| r.integral);
    let model = max_of(&rows, |r| r.model_rel_error);
    let pass = pw_all.is_finite()
        && int_all.is_finite()
        && stable(pw_half, pw_all, th.stability_factor)
        && stable(int_half, int_all, th.stability_factor)
        && model <= th.quadrature_rel;
    let trials = rows.iter().map(|r| serde_json::to_value(r).expect("plain struct")).collect();
    let summary = json!({
        "cubes": rows.len(), "skipped_zero_mass": skipped,
        "pointwise_first_half": pw_half, "pointwise_all": pw_all,
        "integral_first_half": int_half, "integral_all": int_all,
        "model_max_rel_error": model,
        "model_max_truncation": max_of(&rows, |r| r.model_truncation),
    });
    let mut params = setup.describe();
    params["corpus_size"] = json!(corpus_size);
    Ok(ExperimentReport::new("necessity", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// final sum

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalSum {
    /// `Σ_R μ(R) [Σ_k 2^{-αk/2} μ(R^(k-1))^{-1/2} ‖Δ_{R^(k)} f‖]²`.
    pub direct: f64,
    /// After Cauchy-Schwarz: `Σ_R μ(R) Σ_k 2^{-αk/2} μ(R^(k-1))^{-1} ‖Δ_{R^(k)} f‖²`.
    pub cauchy_schwarz: f64,
    /// Same sum over `k, m, S = R^(k-1)` with `Σ_{R ⊂ S} μ(R)` kept.
    pub reindexed: f64,
    /// With `Σ_{R ⊂ S, ℓ(R) = 2^{-m}} μ(R)` collapsed to `μ(S)`.
    pub collapsed: f64,
    /// `Σ_{k > r} 2^{-αk/2}`.
    pub geometric: f64,
    pub f_norm_sq: f64,
    /// `Σ_Q ‖Δ_Q f‖²` (top cubes including `E_Q`).
    pub energy: f64,
    /// Contribution of `k < s + gen(R)` to `direct`-style sums.
    pub below_top: f64,
}

impl FinalSum {
    pub fn reindex_error(&self) -> f64 {
        rel(self.cauchy_schwarz, self.reindexed).max(rel(self.reindexed, self.collapsed))
    }

    pub fn ratio(&self) -> f64 {
        if self.f_norm_sq > 0.0 {
            self.direct / self.f_norm_sq
        } else {
            0.0
        }
    }
}

/// The final geometric-sum chain, computed directly and re-indexed.
pub fn final_sum(kernel: &Kernel, f: &[f64], b: &[f64], mu: &DiscreteMeasure, mg: &MeasuredGrid) -> Result<FinalSum> {
    let p = mg.params().clone();
    let alpha = kernel.alpha;
    let r = p.r as i32;
    let mut norms: BTreeMap<CubeKey, f64> = BTreeMap::new();
    for key in mg.keys() {
        if key.generation < p.g_max || key.generation == -p.s {
            let piece = martingale::delta_full(f, b, &key, mg, mu)?;
            norms.insert(key, piece.norm_sq(mu));
        }
    }
    let weight = |k: i32| 2f64.powf(-alpha * k as f64 / 2.0);
    let mut direct = 0.0;
    let mut cs = 0.0;
    let mut below_top = 0.0;
    for key in mg.keys() {
        let top_k = key.generation + p.s;
        if top_k < r + 1 {
            continue;
        }
        let mut linear = 0.0;
        for k in r + 1..=top_k {
            let inner = mg.ancestor_key(&key, (k - 1) as u32)?;
            let big = mg.ancestor_key(&key, k as u32)?;
            let dn = norms[&big];
            linear += weight(k) * dn.sqrt() / mg.mass(&inner).sqrt();
            let term = weight(k) * dn / mg.mass(&inner);
            cs += mg.mass(&key) * term;
            if k < top_k {
                below_top += mg.mass(&key) * term;
            }
        }
        direct += mg.mass(&key) * linear * linear;
    }
    let mut reindexed = 0.0;
    let mut collapsed = 0.0;
    for k in r + 1..=p.s + p.g_max {
        let mut inner_k = 0.0;
        let mut inner_c = 0.0;
        for m in (k - p.s).max(r + 1 - p.s)..=p.g_max {
            let mut below: BTreeMap<CubeKey, f64> = BTreeMap::new();
            for (rk, cell) in mg.level(m) {
                *below.entry(mg.ancestor_key(&rk, (k - 1) as u32)?).or_insert(0.0) += cell.mass;
            }
            for (s_key, mass_below) in below {
                let parent = mg.ancestor_key(&s_key, 1)?;
                let dn = norms[&parent];
                inner_k += dn / mg.mass(&s_key) * mass_below;
            }
            for (s_key, _) in mg.level(m - k + 1) {
                inner_c += norms[&mg.ancestor_key(&s_key, 1)?];
            }
        }
        reindexed += weight(k) * inner_k;
        collapsed += weight(k) * inner_c;
    }
    let geometric = (r + 1..=p.s + p.g_max).map(weight).sum();
    Ok(FinalSum {
        direct,
        cauchy_schwarz: cs,
        reindexed,
        collapsed,
        geometric,
        f_norm_sq: mu.norm_sq(f),
        energy: norms.values().sum(),
        below_top,
    })
}

/// Final-sum chain on random functions at `g_max` and `g_max + 1`.
pub fn final_sum_experiment(setup: &Setup, f_count: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let mut rng = stream(setup.seed, "final-sum-f", 0);
    let fs: Vec<Vec<f64>> = (0..f_count).map(|_| random_function(setup.mu.len(), &mut rng)).collect();
    let mut trials = Vec::new();
    let mut maxima = Vec::new();
    let mut pass = true;
    let mut reindex: f64 = 0.0;
    let (_, _, draw) = setup.draw_nested("final-sum-grid")?;
    for (level, s) in [("base", setup.clone()), ("refined", setup.with_g_max(setup.params.g_max + 1)?)] {
        let (mg, _) = s.draw("final-sum-grid", draw)?;
        let sys = s.accretive(&mg)?;
        let n = s.mu.dim() as i32;
        let mut worst: f64 = 0.0;
        for (i, f) in fs.iter().enumerate() {
            let fsum = final_sum(&s.kernel, f, &sys.b, &s.mu, &mg)?;
            reindex = reindex.max(fsum.reindex_error());
            let cs_ok = fsum.direct <= fsum.geometric * fsum.cauchy_schwarz * (1.0 + 1e-12);
            let chain_ok = fsum.collapsed <= 2f64.powi(n) * fsum.geometric * fsum.energy * (1.0 + 1e-12);
            pass &= cs_ok && chain_ok;
            worst = worst.max(fsum.ratio());
            trials.push(
                json!({"level": level, "f": i, "final_sum": fsum, "cauchy_schwarz_ok": cs_ok, "chain_ok": chain_ok}),
            );
        }
        maxima.push(worst);
    }
    pass &= reindex <= th.identity_rel && stable(maxima[0], maxima[1], th.stability_factor);
    let summary = json!({"max_reindex_rel": reindex, "ratio_base": maxima[0], "ratio_refined": maxima[1]});
    let mut params = setup.describe();
    params["draw"] = json!(draw);
    params["f_count"] = json!(f_count);
    Ok(ExperimentReport::new("final_sum", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// Carleson sequence

/// `C_carl` of `b` at `g_max` and `g_max + 2`, and the embedding constant on
/// random functions.
pub fn carleson_experiment(setup: &Setup, f_count: usize) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let mut trials = Vec::new();
    let mut constants = Vec::new();
    let mut embed: f64 = 0.0;
    let (_, _, draw) = setup.draw_nested("carleson-grid")?;
    for (level, s) in [("base", setup.clone()), ("refined", setup.with_g_max(setup.params.g_max + 2)?)] {
        let (mg, _) = s.draw("carleson-grid", draw)?;
        let sys = s.accretive(&mg)?;
        let prof = ThetaProfile::new(&s.kernel, &sys.b, &s.mu, mg.params(), &s.quad)?;
        let seq = sqfn::carleson_sequence(&prof, &mg, &mg.classify())?;
        let mut rng = stream(s.seed, "carleson-f", 0);
        let fs: Vec<Vec<f64>> = (0..f_count).map(|_| random_function(s.mu.len(), &mut rng)).collect();
        let emb = sqfn::carleson_embedding_check(&s.mu, &mg, &seq, &fs)?;
        embed = embed.max(emb.c_emb);
        constants.push(seq.c_carl);
        trials.push(json!({
            "level": level, "g_max": s.params.g_max, "c_carl": seq.c_carl,
            "worst": seq.worst.as_ref().map(|k| k.to_string()), "orphaned_good_cubes": seq.orphaned,
            "support": seq.a.len(), "c_emb": emb.c_emb, "flagged": emb.flagged,
        }));
    }
    let change = constants[1] / constants[0];
    let pass = constants.iter().all(|c| c.is_finite() && *c > 0.0)
        && change < th.stability_factor
        && 1.0 / change < th.stability_factor
        && embed <= th.embedding;
    let summary = json!({"c_carl_base": constants[0], "c_carl_refined": constants[1], "change_factor": change, "max_c_emb": embed});
    let mut params = setup.describe();
    params["draw"] = json!(draw);
    params["f_count"] = json!(f_count);
    Ok(ExperimentReport::new("carleson", params, trials, summary, pass, th))
}

// ---------------------------------------------------------------------------
// quadrature

/// Every reported integral (Whitney regions of `f` and `b`, Carleson boxes of
/// `b`, `a_S`, totals) at `K = k_lo` against `K = k_hi`, and the global norm
/// against the tiling-free Simpson reference.
pub fn quadrature_experiment(setup: &Setup, k_lo: u32, k_hi: u32) -> Result<ExperimentReport> {
    let th = &setup.thresholds;
    let mu = &setup.mu;
    let (mg, _) = setup.draw("quadrature-grid", 0)?;
    let sys = setup.accretive(&mg)?;
    let f = random_function(mu.len(), &mut stream(setup.seed, "quadrature-f", 0));
    let good = mg.classify();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut compared = 0usize;
    let mut totals = Vec::new();
    let mut note = |label: String, a: f64, b: f64, scale: f64| {
        let change = (a - b).abs() / b.abs().max(1e-9 * scale).max(f64::MIN_POSITIVE);
        compared += 1;
        if change > worst {
            worst = change;
            worst_at = label;
        }
    };
    for (name, g) in [("f", &f), ("b", &sys.b)] {
        let lo = ThetaProfile::new(&setup.kernel, g, mu, mg.params(), &QuadratureSpec::new(k_lo)?)?;
        let hi = ThetaProfile::new(&setup.kernel, g, mu, mg.params(), &QuadratureSpec::new(k_hi)?)?;
        let (rl, rh) = (sqfn::global_norm(&lo, &mg, None), sqfn::global_norm(&hi, &mg, None));
        let scale = rh.total;
        note(format!("{name}:total"), rl.total, rh.total, scale);
        for (a, b) in rl.per_region.iter().zip(&rh.per_region) {
            note(format!("{name}:whitney:g{}{:?}", a.generation, a.index), a.value, b.value, scale);
        }
        for key in mg.keys() {
            note(format!("{name}:carleson:{key}"), lo.carleson(&mg, &key), hi.carleson(&mg, &key), scale);
        }
        if name == "b" {
            let (sl, sh) = (sqfn::carleson_sequence(&lo, &mg, &good)?, sqfn::carleson_sequence(&hi, &mg, &good)?);
            for (key, v) in &sh.a {
                note(format!("a_S:{key}"), sl.a[key], *v, scale);
            }
        }
        let oracle = sqfn::slab_oracle(&setup.kernel, g, mu, mg.params(), 2 * k_hi)?;
        totals.push(json!({"function": name, "total_lo": rl.total, "total_hi": rh.total, "oracle": oracle, "oracle_rel": rel(rh.total, oracle)}));
    }
    let oracle_rel = totals.iter().map(|t| t["oracle_rel"].as_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let pass = worst < th.quadrature_rel && oracle_rel <= th.quadrature_rel;
    let summary = json!({
        "k_lo": k_lo, "k_hi": k_hi, "integrals_compared": compared, "max_rel_change": worst,
        "max_rel_change_at": worst_at, "max_oracle_rel": oracle_rel,
    });
    Ok(ExperimentReport::new("quadrature", setup.describe(), totals, summary, pass, th))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelFamily, KernelTable};

    fn setup(k: u32, g_max: i32) -> Setup {
        let mu = DiscreteMeasure::lebesgue_surrogate(k, 1).unwrap();
        let lam = DominatingFunction::lebesgue_surrogate(k, 1).unwrap();
        let params = GridParams::new(1.0, 1.0, 9, 6, g_max).unwrap();
        Setup {
            kernel: Kernel::canonical(1.0, lam.clone()).unwrap(),
            mu,
            lam,
            params,
            quad: QuadratureSpec::default(),
            b: BChoice::BlockAlternating,
            seed: 7,
            thresholds: Thresholds::default(),
        }
    }

    fn small() -> Setup {
        let mut s = setup(2, 6);
        s.params = GridParams::new(1.0, 1.0, 4, 3, 6).unwrap();
        s
    }

    #[test]
    fn schur_single_cube_and_symmetry() {
        let s = small();
        let (mg, _) = s.draw("t", 0).unwrap();
        let keys = mg.keys();
        let one = schur_matrix(&s.mu, &mg, &s.lam, 1.0, vec![keys[5].clone()]);
        let q = mg.cube(&keys[5]);
        let expected = q.side() / (2.0 * q.side() * s.lam.eval(&q.center(), 2.0 * q.side())) * mg.mass(&keys[5]);
        assert!((one.get(0, 0) - expected).abs() <= 1e-15 * expected);
        assert!((one.operator_norm(1000).unwrap() - expected).abs() <= 1e-12 * expected);
        let m = schur_matrix(&s.mu, &mg, &s.lam, 1.0, keys);
        assert!(m.is_symmetric());
        assert!(m.entries.iter().all(|v| *v >= 0.0));
        let norm = m.operator_norm(100_000).unwrap();
        let mut rng = stream(1, "schur-test", 0);
        assert!(m.sampled_max(10_000, &mut rng) <= norm * (1.0 + 1e-12));
        for i in 0..m.len() {
            assert!(m.get(i, i) <= norm * (1.0 + 1e-12));
            let mut e = vec![0.0; m.len()];
            e[i] = 1.0;
            assert!((m.bilinear(&e, &e) - m.get(i, i)).abs() < 1e-15);
        }
    }

    #[test]
    fn schur_entries_decay_with_distance() {
        let s = small();
        let (mg, _) = s.draw("t", 1).unwrap();
        let level: Vec<CubeKey> = mg.level(4).map(|(k, _)| k).collect();
        let q = &level[0];
        let qc = mg.cube(q);
        let mut prev = f64::INFINITY;
        let mut by_dist: Vec<(f64, &CubeKey)> = level[1..].iter().map(|k| (qc.dist(&mg.cube(k)), k)).collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, r) in by_dist {
            let a = schur_matrix(&s.mu, &mg, &s.lam, 1.0, vec![q.clone(), r.clone()]).get(0, 1);
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn classical_oracle_is_independent_and_agrees() {
        let s = small();
        let (mg, _) = s.draw("t", 2).unwrap();
        let f = random_function(s.mu.len(), &mut stream(3, "t", 0));
        let d = martingale::decompose(&f, &vec![1.0; s.mu.len()], &mg, &s.mu).unwrap();
        let oracle = classical_martingale(&f, &s.mu, &mg);
        for (key, piece) in &d.pieces {
            for (x, y) in piece.to_dense(s.mu.len()).iter().zip(&oracle[key]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn final_sum_reindexing_and_adapted_function() {
        let s = small();
        let (mg, _) = s.draw("t", 3).unwrap();
        let b = martingale::block_alternating_values(s.mu.len());
        let f = random_function(s.mu.len(), &mut stream(4, "t", 0));
        let fs = final_sum(&s.kernel, &f, &b, &s.mu, &mg).unwrap();
        assert!(fs.reindex_error() <= 1e-12, "{fs:?}");
        assert!(fs.direct <= fs.geometric * fs.cauchy_schwarz * (1.0 + 1e-12));
        assert!(fs.direct > 0.0);
        let adapted = final_sum(&s.kernel, &b, &b, &s.mu, &mg).unwrap();
        assert!(adapted.below_top.abs() <= 1e-25, "{}", adapted.below_top);
    }

    #[test]
    fn case_diagnostics_on_adapted_function() {
        let s = small();
        let (mg, _) = s.draw("t", 4).unwrap();
        let b = martingale::block_alternating_values(s.mu.len());
        let c = case_diagnostics(&s, &mg, &mg.classify(), &b, &b).unwrap();
        assert_eq!(c.small_q, 0.0);
        assert!(!c.pairs.contains_key("small_q"));
        assert_eq!(c.geometry_violations, 0);
        assert!(c.lambda_doubling <= 1.0 + 1e-12);
        let f = random_function(s.mu.len(), &mut stream(5, "t", 0));
        let c = case_diagnostics(&s, &mg, &mg.classify(), &f, &b).unwrap();
        assert!(c.small_q > 0.0 && c.small_q.is_finite());
        assert!(c.comparable > 0.0 && c.max_comparable_count > 0);
    }

    #[test]
    fn zero_kernel_theorem_is_degenerate_free() {
        let mut s = small();
        s.kernel = Kernel::new(KernelFamily::UserTable(KernelTable::zeros()), 1.0, s.lam.clone()).unwrap();
        let (mg, _) = s.draw("t", 5).unwrap();
        let b = vec![1.0; s.mu.len()];
        let fs = vec![random_function(s.mu.len(), &mut stream(1, "t", 1))];
        let corpus = sqfn::default_corpus(&mg, &s.mu, 5, &mut stream(1, "t", 2));
        let r = theorem_experiment(&s, &mg, &b, &fs, &corpus, 3.0).unwrap();
        assert_eq!((r.g, r.t_b, r.t_chi), (0.0, 0.0, 0.0));
        assert_eq!(r.ratio_chi, None);
    }

    #[test]
    fn theorem_ratio_is_homogeneous_and_spike_matches_closed_form() {
        let s = small();
        let (mg, _) = s.draw("t", 6).unwrap();
        let b = vec![1.0; s.mu.len()];
        let corpus = sqfn::default_corpus(&mg, &s.mu, 5, &mut stream(1, "t", 3));
        let f = random_function(s.mu.len(), &mut stream(2, "t", 4));
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let a = theorem_experiment(&s, &mg, &b, &[f], &corpus, 3.0).unwrap();
        let c = theorem_experiment(&s, &mg, &b, &[f2], &corpus, 3.0).unwrap();
        assert!((a.g - c.g).abs() <= 1e-12 * a.g);
        // spike at atom y0: Σ_x m_x ∫ |s_t(x,y0) m0|² dt/t, one-dimensional integrals
        let y0 = 5;
        let mut spike = vec![0.0; s.mu.len()];
        spike[y0] = 1.0;
        let prof = ThetaProfile::new(&s.kernel, &spike, &s.mu, mg.params(), &s.quad).unwrap();
        let m0 = s.mu.mass(y0);
        let mut closed = 0.0;
        for (a, x) in s.mu.points().enumerate() {
            let y = s.mu.point(y0);
            let q = sqfn::log_trapezoid(
                |t| (s.kernel.eval(t, x, y).unwrap() * m0).powi(2),
                s.params.t_floor(),
                s.params.t_ceiling(),
                512,
            )
            .unwrap();
            closed += s.mu.mass(a) * q;
        }
        assert!(rel(prof.total(), closed) < 1e-3, "{} vs {closed}", prof.total());
    }

    #[test]
    fn necessity_support_and_model_integral() {
        let mut s = small();
        let (mg, _) = s.draw("t", 7).unwrap();
        let cube = mg.cube(&mg.level(2).next().unwrap().0).geom;
        let inside = vec![1.0; s.mu.len()];
        let row = necessity_row(&s, mg.params(), &inside, &cube).unwrap().unwrap();
        assert!(row.model_rel_error < 0.01);
        // b supported inside 3Q: outer part vanishes
        let triple = cube.dilate(3.0);
        let local: Vec<f64> = s.mu.points().map(|x| if triple.contains(x) { 1.0 } else { 0.0 }).collect();
        let zero = necessity_row(&s, mg.params(), &local, &cube).unwrap().unwrap();
        assert_eq!((zero.pointwise, zero.integral), (0.0, 0.0));
        // compactly supported kernel: θ_t of the outer part vanishes on Q for t ≤ d(Q, (3Q)^c) = ℓ(Q)
        s.kernel = Kernel::new(KernelFamily::LipschitzBump, 1.0, s.lam.clone()).unwrap();
        let outer: Vec<f64> = s.mu.points().map(|x| if triple.contains(x) { 0.0 } else { 1.0 }).collect();
        let atoms: Vec<usize> = (0..s.mu.len()).filter(|&a| outer[a] != 0.0).collect();
        let values = vec![1.0; atoms.len()];
        for (x, t) in carleson_samples(&cube, mg.params().t_floor()) {
            assert_eq!(sqfn::theta_sparse(&s.kernel, &s.mu, &atoms, &values, &x, t), 0.0);
        }
    }

    #[test]
    fn averaging_smoke_and_zero_function() {
        let s = small();
        let f = random_function(s.mu.len(), &mut stream(1, "t", 5));
        let rep = averaging_identity_experiment(&s, &f, 60).unwrap();
        assert_eq!(rep.trials.len(), 60);
        let zero = averaging_identity_experiment(&s, &vec![0.0; s.mu.len()], 10).unwrap();
        for g in zero.summary["generations"].as_array().unwrap() {
            assert_eq!(g["mean_good"].as_f64().unwrap(), 0.0);
            assert_eq!(g["mean_all"].as_f64().unwrap(), 0.0);
        }
        assert!(zero.pass);
        let again = averaging_identity_experiment(&s, &f, 60).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn correlation_basics() {
        assert_eq!(correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn f_samples_cover_all_kinds() {
        let s = small();
        let b = s.b_values();
        let fs = default_f_samples(&s.mu, &b, &s.params, 8, &mut stream(1, "t", 6));
        assert_eq!(fs.len(), 8);
        assert_eq!(fs[2], b);
        assert_eq!(fs[3].iter().filter(|v| **v != 0.0).count(), 1);
        assert!(fs.iter().all(|f| f.iter().any(|v| *v != 0.0)));
    }
}
