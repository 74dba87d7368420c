//! `θ_t f(x) = ∫ s_t(x,y) f(y) dμ(y)` and the quadratures of
//! `∬ |θ_t f(x)|² dμ(x) dt/t` over Whitney regions, Carleson boxes and the
//! whole truncated slab `R^n × (2^{-g_max-1}, 2^s]`.
//!
//! The x-integral is always the exact atom sum. The t-integral is the
//! trapezoid rule in `u = ln t` with `K` nodes per octave.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{carleson_box, whitney, AxisCube, CubeKey, Goodness, GridParams, MeasuredGrid, Region, RegionKind};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::measure::DiscreteMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    LogTrapezoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub t_nodes_per_octave: u32,
    #[serde(default = "default_rule")]
    pub rule: QuadratureRule,
}

fn default_rule() -> QuadratureRule {
    QuadratureRule::LogTrapezoid
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { t_nodes_per_octave: 8, rule: QuadratureRule::LogTrapezoid }
    }
}

impl QuadratureSpec {
    pub fn new(k: u32) -> Result<Self> {
        let q = QuadratureSpec { t_nodes_per_octave: k, rule: QuadratureRule::LogTrapezoid };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_nodes_per_octave < 2 {
            return Err(Error::InvalidInput(format!(
                "t_nodes_per_octave must be at least 2, got {}",
                self.t_nodes_per_octave
            )));
        }
        Ok(())
    }
}

/// `∫_{t_lo}^{t_hi} g(t) dt/t`, trapezoid in `ln t` with `ceil(K·log₂(t_hi/t_lo))`
/// panels.
pub fn log_trapezoid(mut g: impl FnMut(f64) -> f64, t_lo: f64, t_hi: f64, k: u32) -> Result<f64> {
    if !(t_lo > 0.0 && t_hi > t_lo) {
        return Err(Error::EmptyInterval { t_lo, t_hi });
    }
    let span = (t_hi / t_lo).ln();
    let panels = ((k as f64 * span / std::f64::consts::LN_2) - 1e-9).ceil().max(1.0) as usize;
    let h = span / panels as f64;
    let mut acc = 0.5 * (g(t_lo) + g(t_hi));
    for i in 1..panels {
        acc += g(t_lo * (h * i as f64).exp());
    }
    Ok(acc * h)
}

/// Atoms where `f` is non-zero, with `f(y)·m(y)` premultiplied.
fn support(f: &[f64], mu: &DiscreteMeasure) -> Vec<(usize, f64)> {
    f.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(a, v)| (a, v * mu.mass(a))).collect()
}

fn theta_on(kernel: &Kernel, supp: &[(usize, f64)], mu: &DiscreteMeasure, x: &[f64], t: f64) -> f64 {
    let row = kernel.at(t, x);
    supp.iter().map(|&(a, fm)| row.eval(mu.point(a)) * fm).sum()
}

/// `θ_t f(x)`, exact for atomic `μ`.
pub fn theta(kernel: &Kernel, f: &[f64], mu: &DiscreteMeasure, x: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveScale(t));
    }
    if f.len() != mu.len() {
        return Err(Error::InvalidInput(format!("f has {} values for {} atoms", f.len(), mu.len())));
    }
    Ok(theta_on(kernel, &support(f, mu), mu, x, t))
}

/// `θ_t g(x)` for `g` given by its values on a list of atoms (zero elsewhere).
pub fn theta_sparse(kernel: &Kernel, mu: &DiscreteMeasure, atoms: &[usize], values: &[f64], x: &[f64], t: f64) -> f64 {
    let row = kernel.at(t, x);
    atoms.iter().zip(values).map(|(&a, v)| row.eval(mu.point(a)) * v * mu.mass(a)).sum()
}

/// `∬_region |θ_t f(x)|² dμ(x) dt/t` by direct quadrature.
pub fn region_integral(
    kernel: &Kernel,
    f: &[f64],
    mu: &DiscreteMeasure,
    region: &Region,
    quad: &QuadratureSpec,
) -> Result<f64> {
    quad.validate()?;
    if !(region.t_lo > 0.0 && region.t_hi > region.t_lo) {
        return Err(Error::EmptyInterval { t_lo: region.t_lo, t_hi: region.t_hi });
    }
    let supp = support(f, mu);
    let mut total = 0.0;
    for (a, x) in mu.points().enumerate() {
        if !region.cube.contains(x) {
            continue;
        }
        let q = log_trapezoid(
            |t| theta_on(kernel, &supp, mu, x, t).powi(2),
            region.t_lo,
            region.t_hi,
            quad.t_nodes_per_octave,
        )?;
        total += mu.mass(a) * q;
    }
    Ok(total)
}

/// `|θ_t f(x_a)|²` at every atom on the log-uniform nodes
/// `t_i = 2^{i/K - g_max - 1}`, `i = 0 ..= K(s + g_max + 1)`, with running
/// trapezoid integrals. Whitney regions and grid Carleson boxes are sums of
/// whole octaves, so every grid-aligned integral is read off without
/// re-evaluating `θ`; the profile does not depend on the shift.
pub struct ThetaProfile<'a> {
    kernel: &'a Kernel,
    mu: &'a DiscreteMeasure,
    supp: Vec<(usize, f64)>,
    k: u32,
    g_max: i32,
    s: i32,
    values: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl<'a> ThetaProfile<'a> {
    pub fn new(
        kernel: &'a Kernel,
        f: &[f64],
        mu: &'a DiscreteMeasure,
        params: &GridParams,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        quad.validate()?;
        if f.len() != mu.len() {
            return Err(Error::InvalidInput(format!("f has {} values for {} atoms", f.len(), mu.len())));
        }
        let k = quad.t_nodes_per_octave;
        let (g_max, s) = (params.g_max, params.s);
        let count = (k as i64 * (s + g_max + 1) as i64) as usize + 1;
        let supp = support(f, mu);
        let h = std::f64::consts::LN_2 / k as f64;
        let mut values = Vec::with_capacity(mu.len());
        let mut cumulative = Vec::with_capacity(mu.len());
        for x in mu.points() {
            let v: Vec<f64> = (0..count)
                .map(|i| {
                    let t = Self::node(k, g_max, i);
                    theta_on(kernel, &supp, mu, x, t).powi(2)
                })
                .collect();
            let mut c = Vec::with_capacity(count);
            c.push(0.0);
            for i in 1..count {
                c.push(c[i - 1] + 0.5 * h * (v[i - 1] + v[i]));
            }
            values.push(v);
            cumulative.push(c);
        }
        Ok(ThetaProfile { kernel, mu, supp, k, g_max, s, values, cumulative })
    }

    fn node(k: u32, g_max: i32, i: usize) -> f64 {
        2f64.powf(i as f64 / k as f64 - (g_max + 1) as f64)
    }

    pub fn nodes_per_octave(&self) -> u32 {
        self.k
    }

    pub fn t_floor(&self) -> f64 {
        2f64.powi(-self.g_max - 1)
    }

    pub fn t_ceiling(&self) -> f64 {
        2f64.powi(self.s)
    }

    /// Node index of the octave boundary `2^{-j-1}` for generation `j`.
    fn octave_start(&self, j: i32) -> usize {
        (self.k as i64 * (self.g_max - j) as i64) as usize
    }

    /// `∫_{2^{-j-1}}^{2^{-j}} |θ_t f(x_a)|² dt/t`.
    pub fn octave(&self, a: usize, j: i32) -> f64 {
        let i0 = self.octave_start(j);
        let i1 = i0 + self.k as usize;
        self.cumulative[a][i1] - self.cumulative[a][i0]
    }

    /// `∫_{2^{-g_max-1}}^{2^{-j}} |θ_t f(x_a)|² dt/t`, the Carleson-box t-integral.
    pub fn down_from(&self, a: usize, j: i32) -> f64 {
        self.cumulative[a][self.octave_start(j) + self.k as usize]
    }

    /// Whole-slab t-integral at atom `a`.
    pub fn slab(&self, a: usize) -> f64 {
        *self.cumulative[a].last().expect("at least one node")
    }

    /// Fractional node position of `t`.
    fn position(&self, t: f64) -> f64 {
        (t.log2() + (self.g_max + 1) as f64) * self.k as f64
    }

    /// `∫_{t_lo}^{t_hi} |θ_t f(x_a)|² dt/t` for an interval inside the profile
    /// range. Endpoints off the node lattice get a partial trapezoid panel.
    pub fn integral(&self, a: usize, t_lo: f64, t_hi: f64) -> Result<f64> {
        if !(t_lo > 0.0 && t_hi > t_lo) {
            return Err(Error::EmptyInterval { t_lo, t_hi });
        }
        let tol = 1e-9;
        let (p_lo, p_hi) = (self.position(t_lo), self.position(t_hi));
        let last = (self.values[a].len() - 1) as f64;
        if p_lo < -tol || p_hi > last + tol {
            return Err(Error::InvalidInput(format!(
                "interval ({t_lo}, {t_hi}) leaves the profile range ({}, {})",
                self.t_floor(),
                self.t_ceiling()
            )));
        }
        let snap =
            |p: f64| if (p - p.round()).abs() < tol { Some(p.round().max(0.0).min(last) as usize) } else { None };
        let x = self.mu.point(a);
        let value_at = |t: f64| theta_on(self.kernel, &self.supp, self.mu, x, t).powi(2);
        let (i_lo, head) = match snap(p_lo) {
            Some(i) => (i, 0.0),
            None => {
                let i = p_lo.ceil() as usize;
                let w = (Self::node(self.k, self.g_max, i) / t_lo).ln();
                (i, 0.5 * w * (value_at(t_lo) + self.values[a][i]))
            }
        };
        let (i_hi, tail) = match snap(p_hi) {
            Some(i) => (i, 0.0),
            None => {
                let i = p_hi.floor() as usize;
                let w = (t_hi / Self::node(self.k, self.g_max, i)).ln();
                (i, 0.5 * w * (value_at(t_hi) + self.values[a][i]))
            }
        };
        if i_hi < i_lo {
            // both endpoints inside one panel
            return Ok(0.5 * (t_hi / t_lo).ln() * (value_at(t_lo) + value_at(t_hi)));
        }
        Ok(head + self.cumulative[a][i_hi] - self.cumulative[a][i_lo] + tail)
    }

    /// `∬_region |θ_t f|² dμ dt/t` from the profile.
    pub fn region(&self, region: &Region) -> Result<f64> {
        let mut total = 0.0;
        for (a, x) in self.mu.points().enumerate() {
            if region.cube.contains(x) {
                total += self.mu.mass(a) * self.integral(a, region.t_lo, region.t_hi)?;
            }
        }
        Ok(total)
    }

    /// `∬_{W_R}` for a tracked grid cube.
    pub fn whitney(&self, mg: &MeasuredGrid, key: &CubeKey) -> f64 {
        mg.atoms(key).iter().map(|&a| self.mu.mass(a) * self.octave(a, key.generation)).sum()
    }

    /// `∬_{Q̂}` for a tracked grid cube.
    pub fn carleson(&self, mg: &MeasuredGrid, key: &CubeKey) -> f64 {
        mg.atoms(key).iter().map(|&a| self.mu.mass(a) * self.down_from(a, key.generation)).sum()
    }

    /// The whole-slab integral `Σ_a m_a ∫ |θ_t f(x_a)|² dt/t`.
    pub fn total(&self) -> f64 {
        (0..self.mu.len()).map(|a| self.mu.mass(a) * self.slab(a)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionValue {
    pub generation: i32,
    pub index: Vec<i64>,
    pub kind: RegionKind,
    pub t_lo: f64,
    pub t_hi: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SquareFunctionReport {
    pub per_region: Vec<RegionValue>,
    pub total: f64,
    pub good_only: bool,
    pub t_nodes_per_octave: u32,
    pub s: i32,
    pub g_max: i32,
    pub t_floor: f64,
}

/// `Σ_R ∬_{W_R} |θ_t f|²` over all tracked positive-mass cubes, or over the
/// good ones when `goodness` is given.
pub fn global_norm(profile: &ThetaProfile<'_>, mg: &MeasuredGrid, goodness: Option<&Goodness>) -> SquareFunctionReport {
    let mut per_region = Vec::new();
    let mut total = 0.0;
    for key in mg.keys() {
        if goodness.is_some_and(|g| !g.is_good(&key)) {
            continue;
        }
        let w = whitney(&mg.cube(&key));
        let value = profile.whitney(mg, &key);
        total += value;
        per_region.push(RegionValue {
            generation: key.generation,
            index: key.index,
            kind: RegionKind::Whitney,
            t_lo: w.t_lo,
            t_hi: w.t_hi,
            value,
        });
    }
    SquareFunctionReport {
        per_region,
        total,
        good_only: goodness.is_some(),
        t_nodes_per_octave: profile.nodes_per_octave(),
        s: mg.params().s,
        g_max: mg.params().g_max,
        t_floor: mg.params().t_floor(),
    }
}

/// Tiling-free reference for the slab integral: composite Simpson in `ln t`
/// over `(2^{-g_max-1}, 2^s]` with `nodes_per_octave` panels per octave.
pub fn slab_oracle(
    kernel: &Kernel,
    f: &[f64],
    mu: &DiscreteMeasure,
    params: &GridParams,
    nodes_per_octave: u32,
) -> Result<f64> {
    let (lo, hi) = (params.t_floor().ln(), params.t_ceiling().ln());
    let mut panels = (nodes_per_octave as i64 * (params.s + params.g_max + 1) as i64) as usize;
    if panels % 2 == 1 {
        panels += 1;
    }
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for (a, x) in mu.points().enumerate() {
        let mut acc = 0.0;
        for i in 0..=panels {
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * theta(kernel, f, mu, x, (lo + h * i as f64).exp())?.powi(2);
        }
        total += mu.mass(a) * acc * h / 3.0;
    }
    Ok(total)
}

/// A cube of the testing corpus; grid cubes carry their key.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusCube {
    pub cube: AxisCube,
    pub key: Option<CubeKey>,
}

/// All tracked positive-mass grid cubes plus `random` cubes with centre
/// uniform in the bounding box of `μ` and sidelength `2^u`,
/// `u ~ U[-g_max, s]`.
pub fn default_corpus<R: Rng>(mg: &MeasuredGrid, mu: &DiscreteMeasure, random: usize, rng: &mut R) -> Vec<CorpusCube> {
    let mut out: Vec<CorpusCube> =
        mg.keys().into_iter().map(|key| CorpusCube { cube: mg.cube(&key).geom, key: Some(key) }).collect();
    out.extend(random_cubes(mg.params(), mu, random, rng));
    out
}

pub fn random_cubes<R: Rng>(params: &GridParams, mu: &DiscreteMeasure, count: usize, rng: &mut R) -> Vec<CorpusCube> {
    let Some((lo, hi)) = mu.bounding_box() else {
        return Vec::new();
    };
    (0..count)
        .map(|_| {
            let centre: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect();
            let u = rng.gen_range(-params.g_max as f64..=params.s as f64);
            CorpusCube { cube: AxisCube::centered(&centre, 2f64.powf(u)), key: None }
        })
        .collect()
}

/// Mass of the half-open cube.
pub fn cube_mass(mu: &DiscreteMeasure, cube: &AxisCube) -> f64 {
    mu.points().enumerate().filter(|(_, x)| cube.contains(x)).map(|(a, _)| mu.mass(a)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestingRow {
    pub center: Vec<f64>,
    pub side: f64,
    pub grid_key: Option<String>,
    pub integral: f64,
    pub dilated_mass: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestingReport {
    pub kappa: f64,
    pub value: f64,
    pub rows: Vec<TestingRow>,
    /// Corpus entries skipped for `μ(κQ) = 0`.
    pub skipped: usize,
}

fn carleson_integral(profile: &ThetaProfile<'_>, mg: &MeasuredGrid, c: &CorpusCube) -> Result<f64> {
    match &c.key {
        Some(key) if mg.cell(key).is_some() => Ok(profile.carleson(mg, key)),
        _ => profile.region(&crate::dyadic::carleson_box_free(c.cube.clone(), mg.params())),
    }
}

/// `sup_Q ∬_{Q̂} |θ_t b|² / μ(κQ)` over the corpus, `profile` being that of `b`.
pub fn testing_constant(
    profile: &ThetaProfile<'_>,
    mu: &DiscreteMeasure,
    mg: &MeasuredGrid,
    kappa: f64,
    corpus: &[CorpusCube],
) -> Result<TestingReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(kappa >= 1.0) {
        return Err(Error::InvalidInput(format!("kappa must be at least 1, got {kappa}")));
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut value: f64 = 0.0;
    for c in corpus {
        let dilated_mass = cube_mass(mu, &c.cube.dilate(kappa));
        if dilated_mass == 0.0 {
            skipped += 1;
            continue;
        }
        let integral = carleson_integral(profile, mg, c)?;
        let ratio = integral / dilated_mass;
        value = value.max(ratio);
        rows.push(TestingRow {
            center: c.cube.center(),
            side: c.cube.side,
            grid_key: c.key.as_ref().map(|k| k.to_string()),
            integral,
            dilated_mass,
            ratio,
        });
    }
    Ok(TestingReport { kappa, value, rows, skipped })
}

/// `sup_Q ∬_{Q̂} |θ_t χ_Q|² / μ(Q)` over positive-mass corpus cubes: the
/// testing constant with indicator test functions. Each cube gets its own
/// quadrature, restricted to the atoms of `Q`.
pub fn indicator_testing_constant(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    params: &GridParams,
    quad: &QuadratureSpec,
    corpus: &[CorpusCube],
) -> Result<TestingReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut value: f64 = 0.0;
    for c in corpus {
        let inside: Vec<usize> = (0..mu.len()).filter(|&a| c.cube.contains(mu.point(a))).collect();
        let mass: f64 = inside.iter().map(|&a| mu.mass(a)).sum();
        if mass == 0.0 {
            skipped += 1;
            continue;
        }
        let supp: Vec<(usize, f64)> = inside.iter().map(|&a| (a, mu.mass(a))).collect();
        let mut integral = 0.0;
        for &a in &inside {
            let x = mu.point(a);
            integral += mu.mass(a)
                * log_trapezoid(
                    |t| theta_on(kernel, &supp, mu, x, t).powi(2),
                    params.t_floor(),
                    c.cube.side,
                    quad.t_nodes_per_octave,
                )?;
        }
        let ratio = integral / mass;
        value = value.max(ratio);
        rows.push(TestingRow {
            center: c.cube.center(),
            side: c.cube.side,
            grid_key: c.key.as_ref().map(|k| k.to_string()),
            integral,
            dilated_mass: mass,
            ratio,
        });
    }
    Ok(TestingReport { kappa: 1.0, value, rows, skipped })
}

/// `a_S = Σ_{R good, R^(r) = S} ∬_{W_R} |θ_t b|²` and the Carleson constant
/// `C_carl = max_R Σ_{S ⊂ R} a_S / μ(R)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlesonSequence {
    pub a: BTreeMap<CubeKey, f64>,
    pub c_carl: f64,
    pub worst: Option<CubeKey>,
    /// Good cubes too coarse to have a tracked `R^(r)`.
    pub orphaned: usize,
}

impl CarlesonSequence {
    pub fn total(&self) -> f64 {
        self.a.values().sum()
    }
}

pub fn carleson_sequence(
    profile: &ThetaProfile<'_>,
    mg: &MeasuredGrid,
    goodness: &Goodness,
) -> Result<CarlesonSequence> {
    let p = mg.params();
    let mut a: BTreeMap<CubeKey, f64> = BTreeMap::new();
    let mut orphaned = 0;
    for key in goodness.good_keys() {
        if key.generation - (p.r as i32) < -p.s {
            orphaned += 1;
            continue;
        }
        let s_key = mg.ancestor_key(key, p.r)?;
        *a.entry(s_key).or_insert(0.0) += profile.whitney(mg, key);
    }
    let mut below: BTreeMap<CubeKey, f64> = BTreeMap::new();
    for (s_key, v) in &a {
        for k in 0..=(s_key.generation + p.s) as u32 {
            *below.entry(mg.ancestor_key(s_key, k)?).or_insert(0.0) += v;
        }
    }
    let mut c_carl = 0.0;
    let mut worst = None;
    for key in mg.keys() {
        let ratio = below.get(&key).copied().unwrap_or(0.0) / mg.mass(&key);
        if ratio > c_carl {
            c_carl = ratio;
            worst = Some(key);
        }
    }
    Ok(CarlesonSequence { a, c_carl, worst, orphaned })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub c_emb: f64,
    pub per_sample: Vec<f64>,
    /// Set when `c_emb` exceeds the classical dyadic constant 4.
    pub flagged: bool,
}

/// `Σ_S |⟨f⟩_S|² a_S`.
pub fn embedding_sum(f: &[f64], mu: &DiscreteMeasure, mg: &MeasuredGrid, a: &BTreeMap<CubeKey, f64>) -> Result<f64> {
    let mut total = 0.0;
    for (key, v) in a {
        if *v != 0.0 {
            total += crate::martingale::avg(f, key, mg, mu)?.powi(2) * v;
        }
    }
    Ok(total)
}

/// `C_emb = max_f Σ_S |⟨f⟩_S|² a_S / (C_carl ‖f‖²)`.
pub fn carleson_embedding_check(
    mu: &DiscreteMeasure,
    mg: &MeasuredGrid,
    seq: &CarlesonSequence,
    f_samples: &[Vec<f64>],
) -> Result<EmbeddingReport> {
    if f_samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut per_sample = Vec::with_capacity(f_samples.len());
    for f in f_samples {
        let num = embedding_sum(f, mu, mg, &seq.a)?;
        let norm = mu.norm_sq(f);
        let ratio = if num == 0.0 {
            0.0
        } else {
            assert!(seq.c_carl > 0.0, "non-zero embedding sum with C_carl = 0");
            num / (seq.c_carl * norm)
        };
        per_sample.push(ratio);
    }
    let c_emb = per_sample.iter().copied().fold(0.0, f64::max);
    Ok(EmbeddingReport { c_emb, per_sample, flagged: c_emb > 4.0 })
}

/// Region value straight from a [`Region`], profile-backed.
pub fn region_from_profile(profile: &ThetaProfile<'_>, mg: &MeasuredGrid, region: &Region) -> Result<f64> {
    match (&region.key, region.kind) {
        (Some(key), RegionKind::Whitney) if mg.cell(key).is_some() => Ok(profile.whitney(mg, key)),
        (Some(key), RegionKind::Carleson) if mg.cell(key).is_some() && region.t_lo == mg.params().t_floor() => {
            Ok(profile.carleson(mg, key))
        }
        _ => profile.region(region),
    }
}

/// Carleson box of a tracked cube.
pub fn grid_carleson_box(mg: &MeasuredGrid, key: &CubeKey) -> Region {
    carleson_box(&mg.cube(key), mg.params())
}
