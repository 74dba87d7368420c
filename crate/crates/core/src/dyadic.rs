//! Truncated random dyadic grids.
//!
//! A grid covers the generations `-s ..= g_max`; generation `j` cubes have
//! sidelength `2^-j`. The grid is the standard lattice translated scale by
//! scale: the generation-`j` cube with integer index `k` is the half-open box
//! `[2^-j k + o_j, 2^-j (k + 1) + o_j)` with
//!
//! ```text
//! o_j = Σ_{i > j} 2^-i w_i,   w_i ∈ {0,1}^n,
//! ```
//!
//! summed over every scale index carried by the [`ShiftSequence`]. The
//! sequence runs `tail_bits` scales past `g_max`, standing in for the
//! infinite fine tail of the shift; it moves all cubes together and so never
//! affects goodness, only which cube an atom falls in.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// Default number of shift scales below the finest tracked generation.
pub const DEFAULT_TAIL_BITS: u32 = 16;

/// Largest bit count [`goodness_probability`] will enumerate.
pub const ENUMERATION_LIMIT: u32 = 22;

/// Goodness probability the automatic choice of `r` must exceed at every
/// tracked generation.
pub const AUTO_R_MIN_PROBABILITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Kernel exponent α.
    pub alpha: f64,
    /// Doubling exponent `d = log₂ C_λ`.
    pub d: f64,
    /// `γ = α / (2d + 2α)`.
    pub gamma: f64,
    pub r: u32,
    /// Coarsest generation is `-s` (sidelength `2^s`).
    pub s: i32,
    /// Finest generation (sidelength `2^-g_max`).
    pub g_max: i32,
    pub tail_bits: u32,
}

impl GridParams {
    pub fn gamma_for(alpha: f64, d: f64) -> f64 {
        alpha / (2.0 * d + 2.0 * alpha)
    }

    /// Smallest `r ≥ 1` with `2^{r(1-γ)} ≥ 3`.
    pub fn min_r(gamma: f64) -> u32 {
        let mut r = 1;
        while 2f64.powf(r as f64 * (1.0 - gamma)) < 3.0 {
            r += 1;
        }
        r
    }

    pub fn new(alpha: f64, d: f64, r: u32, s: i32, g_max: i32) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidInput(format!("d must be non-negative, got {d}")));
        }
        if s + g_max <= 0 {
            return Err(Error::InvalidInput(format!("coarsest scale 2^{s} must exceed finest scale 2^-{g_max}")));
        }
        let gamma = Self::gamma_for(alpha, d);
        if 2f64.powf(r as f64 * (1.0 - gamma)) < 3.0 {
            return Err(Error::InvalidInput(format!("r = {r} violates 2^(r(1-γ)) >= 3 for γ = {gamma}")));
        }
        let params = GridParams { alpha, d, gamma, r, s, g_max, tail_bits: DEFAULT_TAIL_BITS };
        params.check_bit_budget()?;
        Ok(params)
    }

    /// Chooses the smallest admissible `r` for which the truncated goodness
    /// probability exceeds [`AUTO_R_MIN_PROBABILITY`] at every tracked
    /// generation.
    pub fn with_auto_r(alpha: f64, d: f64, s: i32, g_max: i32, dim: usize) -> Result<Self> {
        let gamma = Self::gamma_for(alpha, d);
        let mut r = Self::min_r(gamma);
        loop {
            let params = Self::new(alpha, d, r, s, g_max)?;
            if r as i32 > s + g_max {
                return Ok(params);
            }
            let mut ok = true;
            for j in params.safe_window() {
                let mode = if dim as i64 * (j + s) as i64 <= ENUMERATION_LIMIT as i64 {
                    ProbabilityMode::Enumerate
                } else {
                    ProbabilityMode::MonteCarlo { samples: 4000, seed: 0x5eed }
                };
                if goodness_probability(&params, dim, j, mode)?.p <= AUTO_R_MIN_PROBABILITY {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(params);
            }
            r += 1;
        }
    }

    fn check_bit_budget(&self) -> Result<()> {
        // every offset is a multiple of 2^-(g_max + tail) below 2^s: keep it exact in f64
        if self.s as i64 + self.g_max as i64 + self.tail_bits as i64 > 50 {
            return Err(Error::InvalidInput(format!(
                "scale range s + g_max + tail_bits = {} exceeds 50 bits",
                self.s + self.g_max + self.tail_bits as i32
            )));
        }
        Ok(())
    }

    pub fn with_g_max(&self, g_max: i32) -> Result<Self> {
        let mut p = Self::new(self.alpha, self.d, self.r, self.s, g_max)?;
        p.tail_bits = self.tail_bits;
        p.check_bit_budget()?;
        Ok(p)
    }

    pub fn with_tail_bits(mut self, tail_bits: u32) -> Result<Self> {
        self.tail_bits = tail_bits;
        self.check_bit_budget()?;
        Ok(self)
    }

    pub fn generations(&self) -> RangeInclusive<i32> {
        -self.s..=self.g_max
    }

    /// Generations whose cubes have at least one candidate `Q̃` inside the
    /// truncation, i.e. where goodness is not vacuous.
    pub fn safe_window(&self) -> RangeInclusive<i32> {
        (-self.s + self.r as i32)..=self.g_max
    }

    pub fn side(j: i32) -> f64 {
        2f64.powi(-j)
    }

    /// `ℓ(Q)^γ ℓ(Q̃)^{1-γ}`.
    pub fn bad_threshold(&self, small: f64, big: f64) -> f64 {
        small.powf(self.gamma) * big.powf(1.0 - self.gamma)
    }

    /// Lower end `2^{-g_max-1}` of the truncated `t` range.
    pub fn t_floor(&self) -> f64 {
        2f64.powi(-self.g_max - 1)
    }

    pub fn t_ceiling(&self) -> f64 {
        2f64.powi(self.s)
    }

    /// Finest shift scale index.
    pub fn last_scale(&self) -> i32 {
        self.g_max + self.tail_bits as i32
    }
}

/// The random bits `w_i ∈ {0,1}^n` for scale indices `-s < i ≤ g_max + tail`.
/// Bit `k` of `masks[i - first]` is coordinate `k` of `w_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftSequence {
    dim: usize,
    first: i32,
    masks: Vec<u32>,
}

impl ShiftSequence {
    pub fn zeros(params: &GridParams, dim: usize) -> Self {
        let first = -params.s + 1;
        let count = (params.last_scale() - first + 1).max(0) as usize;
        ShiftSequence { dim, first, masks: vec![0; count] }
    }

    pub fn random<R: Rng>(params: &GridParams, dim: usize, rng: &mut R) -> Self {
        let mut seq = Self::zeros(params, dim);
        let full = if dim >= 32 { u32::MAX } else { (1u32 << dim) - 1 };
        for m in seq.masks.iter_mut() {
            *m = rng.gen::<u32>() & full;
        }
        seq
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scales(&self) -> RangeInclusive<i32> {
        self.first..=self.first + self.masks.len() as i32 - 1
    }

    /// `w_i` as a bit mask; zero outside the carried range.
    pub fn bits(&self, i: i32) -> u32 {
        let pos = i - self.first;
        if pos < 0 {
            return 0;
        }
        self.masks.get(pos as usize).copied().unwrap_or(0)
    }

    pub fn set_bits(&mut self, i: i32, mask: u32) {
        let pos = i - self.first;
        assert!(pos >= 0 && (pos as usize) < self.masks.len(), "scale {i} outside shift range");
        self.masks[pos as usize] = mask;
    }

    /// Packs the bits scale-major, coordinate-minor, least significant bit
    /// first, as lowercase hex.
    pub fn to_hex(&self) -> String {
        let nbits = self.masks.len() * self.dim;
        let mut bytes = vec![0u8; nbits.div_ceil(8)];
        for (s, &mask) in self.masks.iter().enumerate() {
            for k in 0..self.dim {
                if mask >> k & 1 == 1 {
                    let b = s * self.dim + k;
                    bytes[b / 8] |= 1 << (b % 8);
                }
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(params: &GridParams, dim: usize, hex: &str) -> Result<Self> {
        let mut seq = Self::zeros(params, dim);
        let nbits = seq.masks.len() * dim;
        if hex.len() != 2 * nbits.div_ceil(8) {
            return Err(Error::InvalidInput(format!(
                "shift hex has {} digits, expected {}",
                hex.len(),
                2 * nbits.div_ceil(8)
            )));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad shift hex: {e}")))?;
        for b in 0..nbits {
            if bytes[b / 8] >> (b % 8) & 1 == 1 {
                seq.masks[b / dim] |= 1 << (b % dim);
            }
        }
        Ok(seq)
    }
}

/// Cube label: generation and integer index within the shifted lattice.
/// Ordered by generation, then index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CubeKey {
    pub generation: i32,
    pub index: Vec<i64>,
}

impl fmt::Display for CubeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}{:?}", self.generation, self.index)
    }
}

/// An axis-parallel cube `[lo, lo + side)` in `R^n`, not necessarily dyadic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisCube {
    pub lo: Vec<f64>,
    pub side: f64,
}

impl AxisCube {
    pub fn new(lo: Vec<f64>, side: f64) -> Self {
        AxisCube { lo, side }
    }

    pub fn centered(center: &[f64], side: f64) -> Self {
        AxisCube { lo: center.iter().map(|c| c - side / 2.0).collect(), side }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn hi(&self, k: usize) -> f64 {
        self.lo[k] + self.side
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().map(|a| a + self.side / 2.0).collect()
    }

    /// Half-open membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(x).all(|(a, v)| *v >= *a && *v < a + self.side)
    }

    /// Closure of `other` lies in the closure of `self`.
    pub fn encloses(&self, other: &AxisCube) -> bool {
        (0..self.dim()).all(|k| other.lo[k] >= self.lo[k] && other.hi(k) <= self.hi(k))
    }

    /// ℓ∞ distance between the closed cubes.
    pub fn dist(&self, other: &AxisCube) -> f64 {
        (0..self.dim()).fold(0.0_f64, |acc, k| {
            let gap = (self.lo[k] - other.hi(k)).max(other.lo[k] - self.hi(k)).max(0.0);
            acc.max(gap)
        })
    }

    /// `D(Q, R) = ℓ(Q) + ℓ(R) + d(Q, R)`.
    pub fn long_dist(&self, other: &AxisCube) -> f64 {
        self.side + other.side + self.dist(other)
    }

    /// ℓ∞ distance from `self` to the topological boundary of `big`.
    pub fn boundary_dist(&self, big: &AxisCube) -> f64 {
        if big.encloses(self) {
            (0..self.dim()).fold(f64::INFINITY, |acc, k| acc.min(self.lo[k] - big.lo[k]).min(big.hi(k) - self.hi(k)))
        } else {
            // overlapping without containment crosses the boundary; disjoint
            // cubes reach the boundary of `big` where they reach `big`
            self.dist(big)
        }
    }

    /// Concentric cube with sidelength `kappa·ℓ`.
    pub fn dilate(&self, kappa: f64) -> AxisCube {
        AxisCube::centered(&self.center(), self.side * kappa)
    }

    /// The `2^n` corners of the closed cube.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| (0..n).map(|k| self.lo[k] + if mask >> k & 1 == 1 { self.side } else { 0.0 }).collect())
            .collect()
    }

    /// Centres of the `2^n` half-size subcubes.
    pub fn subcell_centers(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| (0..n).map(|k| self.lo[k] + self.side * if mask >> k & 1 == 1 { 0.75 } else { 0.25 }).collect())
            .collect()
    }
}

/// A cube of a particular shifted grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    pub key: CubeKey,
    pub geom: AxisCube,
}

impl Cube {
    pub fn generation(&self) -> i32 {
        self.key.generation
    }

    pub fn side(&self) -> f64 {
        self.geom.side
    }

    pub fn center(&self) -> Vec<f64> {
        self.geom.center()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.geom.contains(x)
    }

    pub fn dist(&self, other: &Cube) -> f64 {
        self.geom.dist(&other.geom)
    }

    pub fn long_dist(&self, other: &Cube) -> f64 {
        self.geom.long_dist(&other.geom)
    }

    pub fn boundary_dist(&self, big: &Cube) -> f64 {
        self.geom.boundary_dist(&big.geom)
    }
}

/// One realisation `D(w)` of the truncated random grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedGrid {
    params: GridParams,
    shifts: ShiftSequence,
    // offsets[j + s] = o_j
    offsets: Vec<Vec<f64>>,
}

impl ShiftedGrid {
    pub fn new(params: GridParams, shifts: ShiftSequence) -> Result<Self> {
        if shifts.scales() != (-params.s + 1..=params.last_scale()) {
            return Err(Error::InvalidInput("shift sequence does not match grid parameters".into()));
        }
        let dim = shifts.dim();
        let mut offsets = vec![vec![0.0; dim]; (params.g_max + params.s + 1) as usize];
        let mut acc = vec![0.0; dim];
        for i in (-params.s + 1..=params.last_scale()).rev() {
            if i <= params.g_max {
                offsets[(i + params.s) as usize] = acc.clone();
            }
            let mask = shifts.bits(i);
            let step = 2f64.powi(-i);
            for (k, a) in acc.iter_mut().enumerate() {
                if mask >> k & 1 == 1 {
                    *a += step;
                }
            }
        }
        offsets[0] = acc;
        Ok(ShiftedGrid { params, shifts, offsets })
    }

    /// The unshifted standard grid.
    pub fn standard(params: GridParams, dim: usize) -> Self {
        let shifts = ShiftSequence::zeros(&params, dim);
        Self::new(params, shifts).expect("zero shifts match their own parameters")
    }

    pub fn random<R: Rng>(params: GridParams, dim: usize, rng: &mut R) -> Self {
        let shifts = ShiftSequence::random(&params, dim, rng);
        Self::new(params, shifts).expect("random shifts match their own parameters")
    }

    /// Draws random grids until no atom of `mu` lies on the boundary of a
    /// tracked cube. Returns the grid and the number of rejected draws.
    pub fn draw<R: Rng>(params: &GridParams, mu: &DiscreteMeasure, rng: &mut R) -> Result<(Self, u32)> {
        for rejected in 0..1000 {
            let grid = Self::random(params.clone(), mu.dim(), rng);
            if !grid.atoms_on_boundary(mu) {
                return Ok((grid, rejected));
            }
        }
        Err(Error::Degenerate("1000 consecutive shift draws put an atom on a cube boundary; increase tail_bits".into()))
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.shifts.dim()
    }

    pub fn shifts(&self) -> &ShiftSequence {
        &self.shifts
    }

    pub fn offset(&self, j: i32) -> &[f64] {
        &self.offsets[(j + self.params.s) as usize]
    }

    fn check_generation(&self, j: i32) -> Result<()> {
        if self.params.generations().contains(&j) {
            Ok(())
        } else {
            Err(Error::GenerationOutOfRange { generation: j, min: -self.params.s, max: self.params.g_max })
        }
    }

    pub fn cube(&self, j: i32, index: Vec<i64>) -> Result<Cube> {
        self.check_generation(j)?;
        if index.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "cube index has {} entries, expected {}",
                index.len(),
                self.dim()
            )));
        }
        let side = GridParams::side(j);
        let lo = index.iter().zip(self.offset(j)).map(|(&k, o)| k as f64 * side + o).collect();
        Ok(Cube { key: CubeKey { generation: j, index }, geom: AxisCube { lo, side } })
    }

    pub fn cube_of(&self, key: &CubeKey) -> Result<Cube> {
        self.cube(key.generation, key.index.clone())
    }

    /// Key of the generation-`j` cube containing `x`.
    pub fn locate(&self, j: i32, x: &[f64]) -> Result<CubeKey> {
        self.check_generation(j)?;
        let scale = 2f64.powi(j);
        let index = x.iter().zip(self.offset(j)).map(|(v, o)| ((v - o) * scale).floor() as i64).collect();
        Ok(CubeKey { generation: j, index })
    }

    pub fn children(&self, q: &Cube) -> Result<Vec<Cube>> {
        let j = q.generation() + 1;
        self.check_generation(j)?;
        let w = self.shifts.bits(j);
        let n = self.dim();
        (0..1u32 << n)
            .map(|mask| {
                let index =
                    (0..n).map(|k| 2 * q.key.index[k] + i64::from(w >> k & 1) + i64::from(mask >> k & 1)).collect();
                self.cube(j, index)
            })
            .collect()
    }

    pub fn parent_key(&self, key: &CubeKey) -> Result<CubeKey> {
        let j = key.generation;
        self.check_generation(j - 1)?;
        let w = self.shifts.bits(j);
        let index = key.index.iter().enumerate().map(|(k, &i)| (i - i64::from(w >> k & 1)).div_euclid(2)).collect();
        Ok(CubeKey { generation: j - 1, index })
    }

    pub fn ancestor_key(&self, key: &CubeKey, k: u32) -> Result<CubeKey> {
        let target = key.generation - k as i32;
        self.check_generation(target)?;
        let mut cur = key.clone();
        for _ in 0..k {
            cur = self.parent_key(&cur)?;
        }
        Ok(cur)
    }

    /// `Q^{(k)}`: the generation `gen(Q) - k` cube containing `Q`.
    pub fn ancestor(&self, q: &Cube, k: u32) -> Result<Cube> {
        let key = self.ancestor_key(&q.key, k)?;
        self.cube_of(&key)
    }

    /// Returns a witness `Q̃` with `ℓ(Q̃) ≥ 2^r ℓ(Q)` and
    /// `d(Q, ∂Q̃) ≤ threshold(ℓ(Q), ℓ(Q̃))`, if one exists in the truncation.
    ///
    /// Only ancestors are scanned: for a cube `Q̃` of the same generation as the
    /// ancestor `A` but disjoint from it, any path from `Q` to `∂Q̃` leaves `A`,
    /// so `d(Q, ∂Q̃) ≥ d(Q, ∂A)`.
    pub fn badness_with(&self, q: &Cube, threshold: impl Fn(f64, f64) -> f64) -> Option<Cube> {
        let finest = q.generation() - self.params.r as i32;
        let center = q.center();
        (-self.params.s..=finest).rev().find_map(|jt| {
            let key = self.locate(jt, &center).ok()?;
            let anc = self.cube_of(&key).ok()?;
            (q.boundary_dist(&anc) <= threshold(q.side(), anc.side())).then_some(anc)
        })
    }

    pub fn badness(&self, q: &Cube) -> Option<Cube> {
        self.badness_with(q, |small, big| self.params.bad_threshold(small, big))
    }

    pub fn is_bad(&self, q: &Cube) -> bool {
        self.badness(q).is_some()
    }

    /// True when some atom sits exactly on the boundary of a tracked cube.
    pub fn atoms_on_boundary(&self, mu: &DiscreteMeasure) -> bool {
        self.params.generations().any(|j| {
            let scale = 2f64.powi(j);
            let o = self.offset(j);
            mu.points().any(|p| {
                p.iter().zip(o).any(|(v, off)| {
                    let u = (v - off) * scale;
                    u == u.floor()
                })
            })
        })
    }
}

/// Atoms and mass of one positive-mass cube.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeCell {
    pub atoms: Vec<usize>,
    pub mass: f64,
}

/// A grid together with the positive-mass cubes of a measure, generation by
/// generation.
#[derive(Clone, Debug)]
pub struct MeasuredGrid {
    grid: ShiftedGrid,
    levels: Vec<BTreeMap<Vec<i64>, CubeCell>>,
    atom_index: Vec<Vec<Vec<i64>>>,
}

impl MeasuredGrid {
    pub fn new(grid: ShiftedGrid, mu: &DiscreteMeasure) -> Result<Self> {
        if grid.dim() != mu.dim() {
            return Err(Error::InvalidInput(format!(
                "grid dimension {} differs from measure dimension {}",
                grid.dim(),
                mu.dim()
            )));
        }
        let mut levels = Vec::new();
        let mut atom_index = Vec::new();
        for j in grid.params().generations() {
            let mut level: BTreeMap<Vec<i64>, CubeCell> = BTreeMap::new();
            let mut idx = Vec::with_capacity(mu.len());
            for (a, p) in mu.points().enumerate() {
                let key = grid.locate(j, p)?;
                let cell = level.entry(key.index.clone()).or_insert(CubeCell { atoms: Vec::new(), mass: 0.0 });
                cell.atoms.push(a);
                cell.mass += mu.mass(a);
                idx.push(key.index);
            }
            levels.push(level);
            atom_index.push(idx);
        }
        Ok(MeasuredGrid { grid, levels, atom_index })
    }

    pub fn grid(&self) -> &ShiftedGrid {
        &self.grid
    }

    pub fn params(&self) -> &GridParams {
        self.grid.params()
    }

    fn slot(&self, j: i32) -> Option<usize> {
        self.params().generations().contains(&j).then(|| (j + self.params().s) as usize)
    }

    /// Positive-mass cubes of generation `j`, by index.
    pub fn level(&self, j: i32) -> impl Iterator<Item = (CubeKey, &CubeCell)> + '_ {
        self.slot(j)
            .into_iter()
            .flat_map(move |s| self.levels[s].iter())
            .map(move |(idx, cell)| (CubeKey { generation: j, index: idx.clone() }, cell))
    }

    pub fn cell(&self, key: &CubeKey) -> Option<&CubeCell> {
        self.slot(key.generation).and_then(|s| self.levels[s].get(&key.index))
    }

    /// `μ(Q)`, zero for untracked cubes.
    pub fn mass(&self, key: &CubeKey) -> f64 {
        self.cell(key).map_or(0.0, |c| c.mass)
    }

    pub fn atoms(&self, key: &CubeKey) -> &[usize] {
        self.cell(key).map_or(&[], |c| &c.atoms)
    }

    /// All positive-mass cubes, coarse to fine.
    pub fn keys(&self) -> Vec<CubeKey> {
        self.params().generations().flat_map(|j| self.level(j).map(|(k, _)| k)).collect()
    }

    pub fn cube(&self, key: &CubeKey) -> Cube {
        self.grid.cube_of(key).expect("tracked keys lie in the grid range")
    }

    /// Generation-`j` cube containing atom `a`.
    pub fn atom_key(&self, a: usize, j: i32) -> CubeKey {
        let slot = self.slot(j).expect("generation inside the grid range");
        CubeKey { generation: j, index: self.atom_index[slot][a].clone() }
    }

    /// Positive-mass children of a tracked cube.
    pub fn children(&self, key: &CubeKey) -> Vec<CubeKey> {
        let j = key.generation + 1;
        if self.slot(j).is_none() {
            return Vec::new();
        }
        let mut out: Vec<CubeKey> = self.atoms(key).iter().map(|&a| self.atom_key(a, j)).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn ancestor_key(&self, key: &CubeKey, k: u32) -> Result<CubeKey> {
        self.grid.ancestor_key(key, k)
    }

    /// Good/bad status of every positive-mass cube.
    pub fn classify(&self) -> Goodness {
        Goodness(
            self.keys()
                .into_iter()
                .map(|key| {
                    let good = !self.grid.is_bad(&self.cube(&key));
                    (key, good)
                })
                .collect(),
        )
    }
}

/// Good/bad labels for the positive-mass cubes of a [`MeasuredGrid`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Goodness(pub BTreeMap<CubeKey, bool>);

impl Goodness {
    pub fn is_good(&self, key: &CubeKey) -> bool {
        self.0.get(key).copied().unwrap_or(false)
    }

    pub fn good_keys(&self) -> impl Iterator<Item = &CubeKey> {
        self.0.iter().filter(|(_, g)| **g).map(|(k, _)| k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbabilityMode {
    Enumerate,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub p: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Probability that the generation-`j` cube `Q + w` is good, for uniform
/// i.i.d. shift bits, in the truncated grid.
pub fn goodness_probability(params: &GridParams, dim: usize, j: i32, mode: ProbabilityMode) -> Result<Estimate> {
    if !params.generations().contains(&j) {
        return Err(Error::GenerationOutOfRange { generation: j, min: -params.s, max: params.g_max });
    }
    if j + params.s < params.r as i32 {
        return Ok(Estimate { p: 1.0, stderr: 0.0, samples: 0 });
    }
    // only scales -s < i <= j influence goodness of a generation-j cube
    let local = GridParams { g_max: j, tail_bits: 0, ..params.clone() };
    let origin = vec![0i64; dim];
    match mode {
        ProbabilityMode::Enumerate => {
            let bits = dim as u32 * (j + params.s) as u32;
            if bits > ENUMERATION_LIMIT {
                return Err(Error::EnumerationTooLarge { bits, limit: ENUMERATION_LIMIT });
            }
            let full = (1u32 << dim) - 1;
            let mut good = 0u64;
            for pattern in 0u64..1u64 << bits {
                let mut shifts = ShiftSequence::zeros(&local, dim);
                for (slot, i) in (-params.s + 1..=j).enumerate() {
                    shifts.set_bits(i, (pattern >> (slot * dim)) as u32 & full);
                }
                let grid = ShiftedGrid::new(local.clone(), shifts)?;
                if !grid.is_bad(&grid.cube(j, origin.clone())?) {
                    good += 1;
                }
            }
            Ok(Estimate { p: good as f64 / (1u64 << bits) as f64, stderr: 0.0, samples: 1 << bits })
        }
        ProbabilityMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::NoSamples);
            }
            let mut rng = crate::rng::stream(seed, "goodness", j as u64);
            let mut good = 0u64;
            for _ in 0..samples {
                let grid = ShiftedGrid::random(local.clone(), dim, &mut rng);
                if !grid.is_bad(&grid.cube(j, origin.clone())?) {
                    good += 1;
                }
            }
            let n = samples as f64;
            let p = good as f64 / n;
            Ok(Estimate { p, stderr: (p * (1.0 - p) / n).sqrt(), samples: samples as u64 })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Whitney,
    Carleson,
}

/// A box `Q × (t_lo, t_hi]` in the upper half-space.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub cube: AxisCube,
    pub key: Option<CubeKey>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub kind: RegionKind,
}

/// `W_R = R × (ℓ(R)/2, ℓ(R))`.
pub fn whitney(q: &Cube) -> Region {
    Region {
        cube: q.geom.clone(),
        key: Some(q.key.clone()),
        t_lo: q.side() / 2.0,
        t_hi: q.side(),
        kind: RegionKind::Whitney,
    }
}

/// `Q̂ = Q × (0, ℓ(Q))`, with `0` realised as `2^{-g_max-1}`.
pub fn carleson_box(q: &Cube, params: &GridParams) -> Region {
    Region { key: Some(q.key.clone()), ..carleson_box_free(q.geom.clone(), params) }
}

/// Carleson box over an arbitrary (non-grid) cube.
pub fn carleson_box_free(cube: AxisCube, params: &GridParams) -> Region {
    let t_hi = cube.side;
    Region { cube, key: None, t_lo: params.t_floor(), t_hi, kind: RegionKind::Carleson }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(r: u32, s: i32, g_max: i32) -> GridParams {
        GridParams::new(1.0, 1.0, r, s, g_max).unwrap()
    }

    fn rng(i: u64) -> rand_chacha::ChaCha8Rng {
        crate::rng::stream(11, "dyadic-tests", i)
    }

    #[test]
    fn gamma_identity_holds() {
        for (alpha, d) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.0), (0.3, 1.7)] {
            let g = GridParams::gamma_for(alpha, d);
            assert!((g * d + g * alpha - alpha / 2.0).abs() < 1e-15);
            assert!(g > 0.0 && g <= 0.5);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(GridParams::new(1.0, 1.0, 2, 0, 10).is_err()); // 2^(2·3/4) < 3
        assert!(GridParams::new(1.0, 1.0, 3, 0, 0).is_err());
        assert!(GridParams::new(0.0, 1.0, 3, 0, 5).is_err());
        assert_eq!(GridParams::min_r(0.25), 3);
        assert_eq!(GridParams::min_r(0.5), 4);
    }

    #[test]
    fn zero_shift_cube_is_standard() {
        let g = ShiftedGrid::standard(params(3, 0, 6), 2);
        let q = g.cube(3, vec![2, -1]).unwrap();
        assert_eq!(q.geom.lo, vec![0.25, -0.125]);
        assert_eq!(q.side(), 0.125);
        assert_eq!(q.center(), vec![0.3125, -0.0625]);
    }

    #[test]
    fn single_bit_offset() {
        let p = params(3, 0, 6).with_tail_bits(0).unwrap();
        let mut w = ShiftSequence::zeros(&p, 1);
        w.set_bits(1, 1);
        let g = ShiftedGrid::new(p, w).unwrap();
        assert_eq!(g.offset(0), &[0.5]);
        assert_eq!(g.offset(1), &[0.0]);
        assert_eq!(g.cube(0, vec![0]).unwrap().geom.lo, vec![0.5]);
    }

    #[test]
    fn offsets_telescope_between_generations() {
        let p = params(3, 2, 8);
        for t in 0..10 {
            let g = ShiftedGrid::random(p.clone(), 2, &mut rng(t));
            for j in -2..8 {
                let w = g.shifts().bits(j + 1);
                for k in 0..2 {
                    let expect = g.offset(j + 1)[k] + if w >> k & 1 == 1 { 2f64.powi(-(j + 1)) } else { 0.0 };
                    assert_eq!(g.offset(j)[k], expect);
                }
            }
        }
    }

    #[test]
    fn generation_out_of_range() {
        let g = ShiftedGrid::standard(params(3, 0, 6), 1);
        assert!(matches!(g.cube(7, vec![0]), Err(Error::GenerationOutOfRange { .. })));
        assert!(matches!(g.cube(-1, vec![0]), Err(Error::GenerationOutOfRange { .. })));
        let q = g.cube(0, vec![0]).unwrap();
        assert!(g.ancestor(&q, 1).is_err());
    }

    #[test]
    fn ancestors_on_standard_grid() {
        let g = ShiftedGrid::standard(params(3, 0, 6), 1);
        let q = g.cube(1, vec![0]).unwrap();
        assert_eq!(g.ancestor(&q, 0).unwrap(), q);
        let a = g.ancestor(&q, 1).unwrap();
        assert_eq!(a.geom, AxisCube::new(vec![0.0], 1.0));
    }

    #[test]
    fn ancestors_contain_descendants_for_random_shifts() {
        let p = params(3, 1, 9);
        for t in 0..20 {
            let g = ShiftedGrid::random(p.clone(), 2, &mut rng(100 + t));
            let x = [0.37 + 0.01 * t as f64, 0.61];
            let q = g.cube_of(&g.locate(9, &x).unwrap()).unwrap();
            assert!(q.contains(&x));
            for k in 0..=10 {
                let a = g.ancestor(&q, k).unwrap();
                assert!(a.geom.encloses(&q.geom));
                assert!(a.contains(&x));
                for c in q.geom.corners() {
                    // closed corners of q lie in the closed ancestor
                    assert!((0..2).all(|i| c[i] >= a.geom.lo[i] && c[i] <= a.geom.hi(i)));
                }
            }
            let children = g.children(&g.ancestor(&q, 1).unwrap()).unwrap();
            assert_eq!(children.len(), 4);
            assert_eq!(children.iter().filter(|c| c.key == q.key).count(), 1);
        }
    }

    #[test]
    fn boundary_distance_examples() {
        let qt = AxisCube::new(vec![0.0], 4.0);
        assert_eq!(AxisCube::new(vec![0.0], 1.0).boundary_dist(&qt), 0.0);
        assert_eq!(AxisCube::new(vec![1.0], 1.0).boundary_dist(&qt), 1.0);
        assert_eq!(AxisCube::new(vec![5.0], 1.0).boundary_dist(&qt), 1.0);
        assert_eq!(AxisCube::new(vec![3.5], 1.0).boundary_dist(&qt), 0.0);
        let q = AxisCube::new(vec![0.25, 0.5], 0.25);
        assert_eq!(q.dist(&q), 0.0);
        assert_eq!(q.long_dist(&q), 0.5);
    }

    #[test]
    fn boundary_touching_cube_is_bad_on_standard_grid() {
        let g = ShiftedGrid::standard(params(3, 0, 12), 1);
        let q = g.cube(10, vec![0]).unwrap();
        let w = g.badness(&q).expect("touches the boundary of [0,1)");
        assert_eq!(q.boundary_dist(&w), 0.0);
    }

    #[test]
    fn centred_cube_is_good() {
        // gamma = 1/2 (d = 0), r = 4, s = 0: the only candidate for a
        // generation-4 cube is [0,1). Q = [7/16, 1/2) sits at its centre with
        // boundary distance 1/2 - 1/16 = 7/16 > (1/16)^{1/2} = 1/4.
        let p = GridParams::new(1.0, 0.0, 4, 0, 4).unwrap();
        let g = ShiftedGrid::standard(p.clone(), 1);
        let q = g.cube(4, vec![7]).unwrap();
        let top = g.ancestor(&q, 4).unwrap();
        assert_eq!(q.boundary_dist(&top), 0.5 - q.side());
        assert_eq!(p.bad_threshold(q.side(), top.side()), 0.25);
        assert!(!g.is_bad(&q));
        // one step left: distance 6/16 still exceeds 1/4; three steps: 4/16 does not
        assert!(!g.is_bad(&g.cube(4, vec![6]).unwrap()));
        assert!(g.is_bad(&g.cube(4, vec![4]).unwrap()));
    }

    #[test]
    fn ancestor_scan_agrees_with_neighbourhood_scan() {
        let p = params(3, 1, 8);
        for t in 0..30 {
            let g = ShiftedGrid::random(p.clone(), 2, &mut rng(300 + t));
            for x in [[0.13, 0.77], [0.5, 0.5], [0.91, 0.02]] {
                for j in 2..=8 {
                    let q = g.cube_of(&g.locate(j, &x).unwrap()).unwrap();
                    let mut brute = false;
                    for jt in -1..=(j - 3) {
                        let a = g.locate(jt, &q.center()).unwrap();
                        for dx in -1..=1 {
                            for dy in -1..=1 {
                                let qt = g.cube(jt, vec![a.index[0] + dx, a.index[1] + dy]).unwrap();
                                if q.boundary_dist(&qt) <= p.bad_threshold(q.side(), qt.side()) {
                                    brute = true;
                                }
                            }
                        }
                    }
                    assert_eq!(g.is_bad(&q), brute);
                }
            }
        }
    }

    #[test]
    fn coarse_cubes_are_vacuously_good() {
        let p = params(5, 0, 6);
        let g = ShiftedGrid::random(p.clone(), 1, &mut rng(7));
        for j in 0..5 {
            let q = g.cube(j, vec![0]).unwrap();
            assert!(!g.is_bad(&q));
        }
        let e = goodness_probability(&p, 1, 4, ProbabilityMode::Enumerate).unwrap();
        assert_eq!(e.p, 1.0);
    }

    /// Probability that a generation-j cube avoids the boundary of every
    /// candidate ancestor, by direct integer enumeration of its positions.
    fn touch_free_oracle(r: u32, levels: u32, dim: i32) -> f64 {
        let mut ok = 0u64;
        let total = 1u64 << levels;
        for p in 0..total {
            let touches = (r..=levels).any(|k| {
                let q = p % (1 << k);
                q == 0 || q == (1 << k) - 1
            });
            if !touches {
                ok += 1;
            }
        }
        (ok as f64 / total as f64).powi(dim)
    }

    #[test]
    fn zero_threshold_probability_matches_enumeration() {
        for (dim, j) in [(1usize, 6), (2, 5)] {
            let p = params(3, 0, j);
            let local = p.clone().with_tail_bits(0).unwrap();
            let bits = dim as u32 * j as u32;
            let mut good = 0u64;
            for pattern in 0u64..1 << bits {
                let mut w = ShiftSequence::zeros(&local, dim);
                for slot in 0..j {
                    w.set_bits(slot + 1, (pattern >> (slot as usize * dim)) as u32 & ((1 << dim) - 1));
                }
                let g = ShiftedGrid::new(local.clone(), w).unwrap();
                let q = g.cube(j, vec![0; dim]).unwrap();
                if g.badness_with(&q, |_, _| 0.0).is_none() {
                    good += 1;
                }
            }
            let p_enum = good as f64 / (1u64 << bits) as f64;
            let oracle = touch_free_oracle(3, j as u32, dim as i32);
            assert!((p_enum - oracle).abs() < 1e-12, "{p_enum} vs {oracle}");
            // closed form: (1 - 2^{1-r})^n
            assert!((oracle - (1.0 - 2f64.powi(1 - 3)).powi(dim as i32)).abs() < 1e-12);
        }
    }

    /// Goodness of the index-0 generation-j cube from the integer position
    /// of `Q + w` inside each candidate ancestor (one dimension).
    fn integer_goodness(gamma: f64, r: u32, s: i32, j: i32, bits: &[u32]) -> bool {
        // bits[i + s - 1] = w_i for -s < i <= j
        let levels = (j + s) as u32;
        (r..=levels).all(|k| {
            let v: u64 = (0..k)
                .map(|t| {
                    let i = j - t as i32;
                    u64::from(bits[(i + s - 1) as usize]) << t
                })
                .sum();
            let span = 1u64 << k;
            let pos = (span - v) % span;
            let d = pos.min(span - 1 - pos) as f64;
            d > 2f64.powf(k as f64 * (1.0 - gamma))
        })
    }

    #[test]
    fn classifier_matches_integer_oracle() {
        let p = params(3, 1, 9);
        for t in 0..300 {
            let g = ShiftedGrid::random(p.clone(), 1, &mut rng(1000 + t));
            let bits: Vec<u32> = (0..=9).map(|i| g.shifts().bits(i)).collect();
            for j in 2..=9 {
                let q = g.cube(j, vec![0]).unwrap();
                assert_eq!(!g.is_bad(&q), integer_goodness(p.gamma, p.r, 1, j, &bits), "t={t} j={j}");
            }
        }
    }

    #[test]
    fn whitney_and_carleson_intervals() {
        let p = params(3, 0, 10);
        let g = ShiftedGrid::standard(p.clone(), 1);
        let w = whitney(&g.cube(0, vec![0]).unwrap());
        assert_eq!((w.t_lo, w.t_hi), (0.5, 1.0));
        let c = carleson_box(&g.cube(3, vec![1]).unwrap(), &p);
        assert_eq!((c.t_lo, c.t_hi), (2f64.powi(-11), 0.125));
    }

    #[test]
    fn whitney_regions_tile_the_slab() {
        let p = params(3, 1, 7);
        let g = ShiftedGrid::random(p.clone(), 2, &mut rng(5));
        let mut sampler = rng(6);
        for _ in 0..500 {
            let x = [sampler.gen::<f64>() * 3.0 - 1.0, sampler.gen::<f64>() * 3.0 - 1.0];
            let t = p.t_floor() * (p.t_ceiling() / p.t_floor()).powf(sampler.gen::<f64>());
            let hits = p
                .generations()
                .map(|j| whitney(&g.cube_of(&g.locate(j, &x).unwrap()).unwrap()))
                .filter(|w| w.cube.contains(&x) && t > w.t_lo && t <= w.t_hi)
                .count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn measured_grid_partitions_atoms() {
        let mu = DiscreteMeasure::lebesgue_surrogate(3, 1).unwrap();
        let p = params(3, 0, 9);
        let (g, _) = ShiftedGrid::draw(&p, &mu, &mut rng(9)).unwrap();
        let mg = MeasuredGrid::new(g, &mu).unwrap();
        for j in p.generations() {
            let total: f64 = mg.level(j).map(|(_, c)| c.mass).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let count: usize = mg.level(j).map(|(_, c)| c.atoms.len()).sum();
            assert_eq!(count, 64);
            for (key, cell) in mg.level(j) {
                let q = mg.cube(&key);
                for &a in &cell.atoms {
                    assert!(q.contains(mu.point(a)));
                }
            }
        }
        for (key, _) in mg.level(9) {
            assert_eq!(mg.atoms(&key).len(), 1);
        }
        let key = mg.atom_key(5, 3);
        let kids = mg.children(&key);
        let kid_mass: f64 = kids.iter().map(|k| mg.mass(k)).sum();
        assert!((kid_mass - mg.mass(&key)).abs() < 1e-15);
        for k in &kids {
            assert_eq!(mg.grid().parent_key(k).unwrap(), key);
        }
    }

    #[test]
    fn draw_rejects_boundary_atoms_with_no_tail() {
        let mu = DiscreteMeasure::lebesgue_surrogate(3, 1).unwrap();
        // without tail bits the finest lattice is fixed and (j+1/2)/64 lies on it
        let p = params(3, 0, 9).with_tail_bits(0).unwrap();
        assert!(ShiftedGrid::draw(&p, &mu, &mut rng(1)).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let p = params(3, 2, 6);
        let g = ShiftedGrid::random(p.clone(), 3, &mut rng(77));
        let hex = g.shifts().to_hex();
        assert_eq!(ShiftSequence::from_hex(&p, 3, &hex).unwrap(), *g.shifts());
        assert!(ShiftSequence::from_hex(&p, 3, "00").is_err());
    }

    #[test]
    fn monte_carlo_and_enumeration_agree() {
        let p = params(6, 0, 10);
        for j in 6..=10 {
            let e = goodness_probability(&p, 1, j, ProbabilityMode::Enumerate).unwrap();
            let m = goodness_probability(&p, 1, j, ProbabilityMode::MonteCarlo { samples: 4000, seed: 3 }).unwrap();
            assert!((e.p - m.p).abs() <= 3.0 * m.stderr.max(1e-9), "j={j}: {} vs {} ± {}", e.p, m.p, m.stderr);
        }
        assert!(matches!(
            goodness_probability(&p, 1, 8, ProbabilityMode::MonteCarlo { samples: 0, seed: 0 }),
            Err(Error::NoSamples)
        ));
        let big = params(3, 0, 30).with_tail_bits(0).unwrap();
        assert!(matches!(
            goodness_probability(&big, 1, 30, ProbabilityMode::Enumerate),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn auto_r_keeps_goodness_alive_at_the_finest_generation() {
        let p = GridParams::with_auto_r(1.0, 1.0, 0, 9, 1).unwrap();
        assert!(p.r >= GridParams::min_r(p.gamma));
        for j in p.safe_window() {
            assert!(goodness_probability(&p, 1, j, ProbabilityMode::Enumerate).unwrap().p > AUTO_R_MIN_PROBABILITY);
        }
        let smaller = GridParams::new(1.0, 1.0, p.r - 1, 0, 9).unwrap();
        let worst = smaller
            .safe_window()
            .map(|j| goodness_probability(&smaller, 1, j, ProbabilityMode::Enumerate).unwrap().p)
            .fold(1.0, f64::min);
        assert!(worst <= AUTO_R_MIN_PROBABILITY);
    }

    proptest! {
        #[test]
        fn each_point_in_exactly_one_cube(x in -2.0f64..2.0, y in -2.0f64..2.0, seed in 0u64..1000, j in -1i32..=7) {
            let p = params(3, 1, 7);
            let g = ShiftedGrid::random(p, 2, &mut rng(seed));
            let key = g.locate(j, &[x, y]).unwrap();
            let q = g.cube_of(&key).unwrap();
            prop_assert!(q.contains(&[x, y]));
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 { continue; }
                    let other = g.cube(j, vec![key.index[0] + dx, key.index[1] + dy]).unwrap();
                    prop_assert!(!other.contains(&[x, y]));
                }
            }
        }

        #[test]
        fn goodness_ignores_fine_bits_and_position_ignores_coarse_bits(seed in 0u64..500, j in 3i32..=9, flip in 0u32..4) {
            let p = params(3, 1, 9);
            let g = ShiftedGrid::random(p.clone(), 2, &mut rng(seed));
            let q = g.cube(j, vec![1, 2]).unwrap();
            // toggle a bit strictly finer than ℓ(Q)
            let mut w = g.shifts().clone();
            let fine = j + 1 + (flip as i32 % (p.last_scale() - j));
            w.set_bits(fine, w.bits(fine) ^ 1);
            let g2 = ShiftedGrid::new(p.clone(), w).unwrap();
            let q2 = g2.cube(j, vec![1, 2]).unwrap();
            prop_assert_eq!(g.is_bad(&q), g2.is_bad(&q2));
            // toggle a bit at a scale ≥ ℓ(Q)
            let mut w = g.shifts().clone();
            let coarse = j - (flip as i32 % (j + 1));
            w.set_bits(coarse, w.bits(coarse) ^ 2);
            let g3 = ShiftedGrid::new(p, w).unwrap();
            prop_assert_eq!(g3.cube(j, vec![1, 2]).unwrap().geom, q.geom);
        }

        #[test]
        fn same_grid_cubes_are_nested_or_disjoint(seed in 0u64..500, a in 0usize..64, b in 0usize..64, ja in 0i32..=8, jb in 0i32..=8) {
            let mu = DiscreteMeasure::lebesgue_surrogate(3, 1).unwrap();
            let g = ShiftedGrid::random(params(3, 0, 8), 1, &mut rng(seed));
            let qa = g.cube_of(&g.locate(ja, mu.point(a)).unwrap()).unwrap();
            let qb = g.cube_of(&g.locate(jb, mu.point(b)).unwrap()).unwrap();
            let overlap = qa.geom.lo[0].max(qb.geom.lo[0]) < qa.geom.hi(0).min(qb.geom.hi(0));
            if overlap {
                prop_assert!(qa.geom.encloses(&qb.geom) || qb.geom.encloses(&qa.geom));
            }
        }
    }
}
