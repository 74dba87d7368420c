//! Finite atomic measures on `R^n` under the ℓ∞ metric, dominating functions
//! `λ(x, r)`, and the symmetrized envelope `Λ(x, r) = inf_z λ(z, r + |x - z|)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linf;

/// A finite sum of point masses. Atom order is significant: functions on the
/// measure are stored as one value per atom, in this order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    atoms: Vec<Vec<f64>>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let mut coords = Vec::with_capacity(atoms.len() * dim);
        let mut masses = Vec::with_capacity(atoms.len());
        for (i, (point, mass)) in atoms.into_iter().enumerate() {
            if point.len() != dim {
                return Err(Error::InvalidInput(format!("atom {i} has {} coordinates, expected {dim}", point.len())));
            }
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {i} has non-positive or non-finite mass {mass}")));
            }
            if point.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {i} has a non-finite coordinate")));
            }
            coords.extend(point);
            masses.push(mass);
        }
        let mu = DiscreteMeasure { dim, coords, masses };
        mu.check_distinct()?;
        Ok(mu)
    }

    pub fn empty(dim: usize) -> Self {
        DiscreteMeasure { dim, coords: Vec::new(), masses: Vec::new() }
    }

    fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                return Err(Error::InvalidInput(format!(
                    "atoms {} and {} share the point {:?}",
                    w[0],
                    w[1],
                    self.point(w[0])
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the open ℓ∞ ball `B(x, r)`.
    pub fn ball_mass(&self, x: &[f64], r: f64) -> f64 {
        self.points().zip(&self.masses).filter(|(p, _)| linf(p, x) < r).map(|(_, m)| m).sum()
    }

    /// `∫ f dμ` for a function given by its values on the atoms.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.masses).map(|(v, m)| v * m).sum()
    }

    /// `‖f‖²_{L²(μ)}`.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.masses).map(|(v, m)| v * v * m).sum()
    }

    /// Smallest ℓ∞ distance between two distinct atoms.
    pub fn min_separation(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        if self.dim == 1 {
            let mut xs: Vec<f64> = self.coords.clone();
            xs.sort_by(f64::total_cmp);
            return xs.windows(2).map(|w| w[1] - w[0]).reduce(f64::min);
        }
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(linf(self.point(i), self.point(j)));
            }
        }
        Some(best)
    }

    /// Componentwise `(min, max)` over the atoms.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        let dim = file.dim;
        let atoms = file
            .atoms
            .into_iter()
            .enumerate()
            .map(|(i, mut row)| {
                if row.len() != dim + 1 {
                    return Err(Error::InvalidInput(format!(
                        "atom row {i} has {} entries, expected {} (coordinates then mass)",
                        row.len(),
                        dim + 1
                    )));
                }
                let mass = row.pop().unwrap_or_default();
                Ok((row, mass))
            })
            .collect::<Result<Vec<_>>>()?;
        DiscreteMeasure::new(dim, atoms)
    }

    pub fn to_json(&self) -> String {
        let atoms = self
            .points()
            .zip(&self.masses)
            .map(|(p, &m)| {
                let mut row = p.to_vec();
                row.push(m);
                row
            })
            .collect();
        serde_json::to_string(&MeasureFile { dim: self.dim, atoms }).expect("measure serializes")
    }

    /// `4^k` equal atoms on the centres of a uniform grid in `[0,1]^n`,
    /// total mass 1.
    pub fn lebesgue_surrogate(k: u32, dim: usize) -> Result<Self> {
        let (per_side, _) = surrogate_side(k, dim)?;
        let count = per_side.pow(dim as u32);
        let h = 1.0 / per_side as f64;
        let mass = 1.0 / count as f64;
        let atoms = (0..count)
            .map(|mut flat| {
                let mut p = vec![0.0; dim];
                for c in p.iter_mut() {
                    *c = ((flat % per_side) as f64 + 0.5) * h;
                    flat /= per_side;
                }
                (p, mass)
            })
            .collect();
        DiscreteMeasure::new(dim, atoms)
    }

    /// Depth-`depth` two-piece Cantor construction on `[0,1]` with contraction
    /// `ratio`; one atom of mass `2^-depth` at the centre of every surviving
    /// interval.
    pub fn cantor(depth: u32, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 0.5) {
            return Err(Error::InvalidInput(format!("cantor ratio must lie in (0, 1/2), got {ratio}")));
        }
        let mut intervals = vec![0.0_f64];
        let mut len = 1.0;
        for _ in 0..depth {
            let next = len * ratio;
            intervals = intervals.into_iter().flat_map(|a| [a, a + len - next]).collect();
            len = next;
        }
        let mass = 0.5_f64.powi(depth as i32);
        DiscreteMeasure::new(1, intervals.into_iter().map(|a| (vec![a + len / 2.0], mass)).collect())
    }

    /// `count` uniform random atoms in `[0,1)^n`, equal masses summing to 1.
    pub fn point_cloud<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mass = 1.0 / count as f64;
        let atoms = (0..count).map(|_| ((0..dim).map(|_| rng.gen::<f64>()).collect(), mass)).collect();
        DiscreteMeasure::new(dim, atoms)
    }
}

fn surrogate_side(k: u32, dim: usize) -> Result<(usize, f64)> {
    let count = 4_usize.checked_pow(k).ok_or_else(|| Error::InvalidInput(format!("4^{k} atoms overflow")))?;
    let side = (count as f64).powf(1.0 / dim as f64).round() as usize;
    if side.checked_pow(dim as u32) != Some(count) {
        return Err(Error::InvalidInput(format!(
            "4^{k} atoms cannot be arranged on a uniform grid in dimension {dim}"
        )));
    }
    Ok((side, 1.0 / side as f64))
}

/// Closed form of a dominating function.
#[derive(Clone, Debug, PartialEq)]
pub enum LambdaForm {
    /// `λ(x, r) = c·r^m + floor`, independent of `x`.
    PowerLaw { c: f64, m: f64, floor: f64 },
    /// `Λ(x, r) = min_z λ(z, r + |x - z|_∞)` over a finite candidate set.
    Symmetrized { wrapped: Box<DominatingFunction>, candidates: Vec<Vec<f64>> },
}

/// An upper envelope `μ(B(x, r)) ≤ λ(x, r)` with doubling constant `C_λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DominatingFunction {
    pub form: LambdaForm,
    pub c_lambda: f64,
}

/// JSON form: `{"form":"power_law","c":..,"m":..,"floor":..}` with an optional
/// `"c_lambda"` override.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LambdaSpec {
    PowerLaw {
        c: f64,
        m: f64,
        #[serde(default)]
        floor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_lambda: Option<f64>,
    },
}

impl LambdaSpec {
    pub fn build(&self) -> Result<DominatingFunction> {
        match *self {
            LambdaSpec::PowerLaw { c, m, floor, c_lambda } => {
                let lam = DominatingFunction::power_law(c, m, floor)?;
                Ok(match c_lambda {
                    Some(cl) => lam.with_doubling_constant(cl),
                    None => lam,
                })
            }
        }
    }
}

impl DominatingFunction {
    /// `c·r^m + floor`, with the doubling constant `2^m` (the exact supremum
    /// of `λ(2r)/λ(r)` as `r → ∞`).
    pub fn power_law(c: f64, m: f64, floor: f64) -> Result<Self> {
        let finite = c.is_finite() && m.is_finite() && floor.is_finite();
        if !finite || c < 0.0 || m < 0.0 || floor < 0.0 {
            return Err(Error::InvalidInput(format!(
                "power law needs finite c, m, floor >= 0 (got c={c}, m={m}, floor={floor})"
            )));
        }
        if c == 0.0 && floor == 0.0 {
            return Err(Error::InvalidInput("power law must be positive somewhere: c = floor = 0".into()));
        }
        Ok(DominatingFunction { form: LambdaForm::PowerLaw { c, m, floor }, c_lambda: 2f64.powf(m) })
    }

    pub fn with_doubling_constant(mut self, c_lambda: f64) -> Self {
        self.c_lambda = c_lambda;
        self
    }

    /// Natural λ for [`DiscreteMeasure::lebesgue_surrogate`]:
    /// `2^(n-1)·(2r)^n + 2^n·h^n` with grid spacing `h`. In one dimension this
    /// is `2r + 2h`.
    pub fn lebesgue_surrogate(k: u32, dim: usize) -> Result<Self> {
        let (_, h) = surrogate_side(k, dim)?;
        let n = dim as f64;
        let c = 2f64.powf(n - 1.0) * 2f64.powf(n);
        DominatingFunction::power_law(c, n, 2f64.powf(n) * h.powf(n))
    }

    /// Power law with exponent `m` and floor `floor >= max atom mass`, whose
    /// coefficient is the smallest one making `λ` dominate every ball centred
    /// at an atom, times `2^m` so that balls centred anywhere are covered.
    pub fn calibrated_power_law(mu: &DiscreteMeasure, m: f64, floor: f64) -> Result<Self> {
        let max_mass = mu.masses().iter().copied().fold(0.0, f64::max);
        let floor = floor.max(max_mass);
        let mut c_atoms: f64 = 0.0;
        for i in 0..mu.len() {
            let x = mu.point(i);
            let mut by_dist: Vec<(f64, f64)> = (0..mu.len()).map(|j| (linf(x, mu.point(j)), mu.mass(j))).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            let mut idx = 0;
            while idx < by_dist.len() {
                let d = by_dist[idx].0;
                while idx < by_dist.len() && by_dist[idx].0 == d {
                    acc += by_dist[idx].1;
                    idx += 1;
                }
                if d > 0.0 {
                    c_atoms = c_atoms.max((acc - floor) / d.powf(m));
                }
            }
        }
        let c = c_atoms * 2f64.powf(m);
        if c == 0.0 && floor == 0.0 {
            return Err(Error::Degenerate("empty measure has no calibrated dominating function".into()));
        }
        DominatingFunction::power_law(c, m, floor)
    }

    pub fn eval(&self, x: &[f64], r: f64) -> f64 {
        match &self.form {
            LambdaForm::PowerLaw { c, m, floor } => {
                let rm = if r > 0.0 { crate::pow(r, *m) } else { 0.0 };
                c * rm + floor
            }
            LambdaForm::Symmetrized { wrapped, candidates } => {
                candidates.iter().map(|z| wrapped.eval(z, r + linf(x, z))).fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// True when `λ(x, r)` does not depend on `x`.
    pub fn is_translation_invariant(&self) -> bool {
        matches!(self.form, LambdaForm::PowerLaw { .. })
    }
}

/// `d = log₂ C_λ`.
pub fn doubling_exponent(lam: &DominatingFunction) -> Result<f64> {
    if !(lam.c_lambda >= 1.0) {
        return Err(Error::DoublingConstant(lam.c_lambda));
    }
    Ok(lam.c_lambda.log2())
}

/// `sup λ(x, 2r) / λ(x, r)` over the given sample.
pub fn empirical_doubling(lam: &DominatingFunction, xs: &[Vec<f64>], radii: &[f64]) -> f64 {
    let mut sup: f64 = 0.0;
    for x in xs {
        for &r in radii {
            sup = sup.max(lam.eval(x, 2.0 * r) / lam.eval(x, r));
        }
    }
    sup
}

/// `2^lo, 2^(lo+1), ..., 2^hi`.
pub fn dyadic_radii(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub r: f64,
    pub mass: f64,
    pub lambda: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DominationReport {
    pub max_ratio: f64,
    pub samples: usize,
    pub violations: usize,
    pub dominated: bool,
    /// Worst sample overall, present whenever any sample was evaluated.
    pub worst: Option<Witness>,
    /// Up to 16 worst violating samples.
    pub witnesses: Vec<Witness>,
}

/// Atom locations × radii `2^-fine ..= 2^coarse`.
pub fn default_domination_samples(mu: &DiscreteMeasure, fine: i32, coarse: i32) -> Vec<(Vec<f64>, f64)> {
    let radii = dyadic_radii(-fine, coarse);
    mu.points().flat_map(|p| radii.iter().map(move |&r| (p.to_vec(), r))).collect()
}

/// Checks `μ(B(x, r)) ≤ λ(x, r)` on the sample; never fails, reports.
pub fn verify_domination(
    mu: &DiscreteMeasure,
    lam: &DominatingFunction,
    samples: &[(Vec<f64>, f64)],
) -> DominationReport {
    let mut worst: Option<Witness> = None;
    let mut violating = Vec::new();
    for (x, r) in samples {
        let mass = mu.ball_mass(x, *r);
        let lambda = lam.eval(x, *r);
        let w = Witness { x: x.clone(), r: *r, mass, lambda, ratio: mass / lambda };
        if w.ratio > 1.0 {
            violating.push(w.clone());
        }
        if worst.as_ref().is_none_or(|b| w.ratio > b.ratio) {
            worst = Some(w);
        }
    }
    violating.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));
    let violations = violating.len();
    violating.truncate(16);
    let max_ratio = worst.as_ref().map_or(0.0, |w| w.ratio);
    DominationReport {
        max_ratio,
        samples: samples.len(),
        violations,
        dominated: max_ratio <= 1.0,
        worst,
        witnesses: violating,
    }
}

/// Replaces `λ` by the candidate-set approximation of
/// `Λ(x, r) = inf_z λ(z, r + |x - z|)`.
pub fn symmetrize(lam: &DominatingFunction, candidates: Vec<Vec<f64>>) -> Result<DominatingFunction> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(DominatingFunction {
        c_lambda: lam.c_lambda,
        form: LambdaForm::Symmetrized { wrapped: Box::new(lam.clone()), candidates },
    })
}

/// Atom points plus a uniform grid over the bounding box at resolution
/// `2^-g_max`, coarsened so that the grid has at most 4096 points.
pub fn default_symmetrization_candidates(mu: &DiscreteMeasure, g_max: i32) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = mu.points().map(<[f64]>::to_vec).collect();
    let Some((lo, hi)) = mu.bounding_box() else {
        return out;
    };
    let dim = mu.dim();
    let per_axis_cap = (4096f64.powf(1.0 / dim as f64)).floor().max(1.0) as usize;
    let steps: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| {
            let raw = ((b - a) * 2f64.powi(g_max)).ceil() as usize + 1;
            raw.clamp(1, per_axis_cap)
        })
        .collect();
    let total: usize = steps.iter().product();
    for mut flat in 0..total {
        let mut p = vec![0.0; dim];
        for k in 0..dim {
            let i = flat % steps[k];
            flat /= steps[k];
            p[k] = if steps[k] == 1 { lo[k] } else { lo[k] + (hi[k] - lo[k]) * i as f64 / (steps[k] - 1) as f64 };
        }
        out.push(p);
    }
    out
}
