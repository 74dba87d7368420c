//! `b`-adapted conditional expectations and martingale differences
//!
//! ```text
//! E_Q f = (⟨f⟩_Q / ⟨b⟩_Q) χ_Q b
//! Δ_Q f = Σ_{Q' ∈ ch(Q)} (⟨f⟩_{Q'}/⟨b⟩_{Q'} - ⟨f⟩_Q/⟨b⟩_Q) χ_{Q'} b
//! ```
//!
//! Functions are value-per-atom arrays aligned with the measure. Zero-mass
//! cubes are never touched.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dyadic::{CubeKey, MeasuredGrid};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// Relative size below which `∫_Q b` counts as vanishing.
const VANISHING: f64 = 1e-12;

/// An accretive function `b` with its certified constants on one grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccretiveSystem {
    pub b: Vec<f64>,
    pub sup_norm: f64,
    /// `δ = min_Q |∫_Q b dμ| / μ(Q)` over the tracked positive-mass cubes.
    pub accretivity: f64,
    /// Cube attaining `δ`.
    pub worst: Option<CubeKey>,
}

impl AccretiveSystem {
    /// Scans every tracked positive-mass cube. Fails with the first cube on
    /// which the average of `b` vanishes.
    pub fn certify(b: Vec<f64>, mu: &DiscreteMeasure, mg: &MeasuredGrid) -> Result<Self> {
        if b.len() != mu.len() {
            return Err(Error::InvalidInput(format!("b has {} values for {} atoms", b.len(), mu.len())));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("b has non-finite values".into()));
        }
        let sup_norm = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut accretivity = f64::INFINITY;
        let mut worst = None;
        for key in mg.keys() {
            let avg_b = avg(&b, &key, mg, mu)?;
            if avg_b.abs() <= VANISHING * sup_norm {
                return Err(Error::Accretivity { cube: key, average: avg_b });
            }
            if avg_b.abs() < accretivity {
                accretivity = avg_b.abs();
                worst = Some(key);
            }
        }
        Ok(AccretiveSystem { b, sup_norm, accretivity, worst })
    }

    pub fn one(mu: &DiscreteMeasure, mg: &MeasuredGrid) -> Result<Self> {
        AccretiveSystem::certify(vec![1.0; mu.len()], mu, mg)
    }

    pub fn block_alternating(mu: &DiscreteMeasure, mg: &MeasuredGrid) -> Result<Self> {
        AccretiveSystem::certify(block_alternating_values(mu.len()), mu, mg)
    }
}

/// `1 + 0.5·s` with `s = ±1` alternating on consecutive blocks of 8 atoms.
pub fn block_alternating_values(n: usize) -> Vec<f64> {
    (0..n).map(|a| if (a / 8) % 2 == 0 { 1.5 } else { 0.5 }).collect()
}

fn integral(f: &[f64], atoms: &[usize], mu: &DiscreteMeasure) -> f64 {
    atoms.iter().map(|&a| f[a] * mu.mass(a)).sum()
}

/// `⟨f⟩_Q = μ(Q)^{-1} ∫_Q f dμ`.
pub fn avg(f: &[f64], key: &CubeKey, mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<f64> {
    let cell = mg.cell(key).ok_or_else(|| Error::ZeroMass(key.clone()))?;
    Ok(integral(f, &cell.atoms, mu) / cell.mass)
}

/// `⟨f⟩_Q / ⟨b⟩_Q`, failing on a vanishing denominator.
pub fn adapted_ratio(f: &[f64], b: &[f64], key: &CubeKey, mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<f64> {
    let cell = mg.cell(key).ok_or_else(|| Error::ZeroMass(key.clone()))?;
    let int_b = integral(b, &cell.atoms, mu);
    let scale = cell.atoms.iter().fold(0.0_f64, |m, &a| m.max(b[a].abs())) * cell.mass;
    if int_b.abs() <= VANISHING * scale || int_b == 0.0 {
        return Err(Error::Accretivity { cube: key.clone(), average: int_b / cell.mass });
    }
    Ok(integral(f, &cell.atoms, mu) / int_b)
}

/// A function supported on the atoms of one cube, aligned with
/// [`MeasuredGrid::atoms`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Piece {
    pub atoms: Vec<usize>,
    pub values: Vec<f64>,
}

impl Piece {
    pub fn norm_sq(&self, mu: &DiscreteMeasure) -> f64 {
        self.atoms.iter().zip(&self.values).map(|(&a, v)| v * v * mu.mass(a)).sum()
    }

    pub fn integral(&self, mu: &DiscreteMeasure) -> f64 {
        self.atoms.iter().zip(&self.values).map(|(&a, v)| v * mu.mass(a)).sum()
    }

    pub fn add_to(&self, dense: &mut [f64]) {
        for (&a, v) in self.atoms.iter().zip(&self.values) {
            dense[a] += v;
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.add_to(&mut out);
        out
    }
}

/// `E_Q f`.
pub fn expectation(f: &[f64], b: &[f64], key: &CubeKey, mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<Piece> {
    let ratio = adapted_ratio(f, b, key, mg, mu)?;
    let atoms = mg.atoms(key).to_vec();
    let values = atoms.iter().map(|&a| ratio * b[a]).collect();
    Ok(Piece { atoms, values })
}

/// `Δ_Q f`. Cubes of the finest tracked generation have no children and get
/// an error.
pub fn delta(f: &[f64], b: &[f64], key: &CubeKey, mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<Piece> {
    let p = mg.params();
    if key.generation >= p.g_max {
        return Err(Error::GenerationOutOfRange { generation: key.generation + 1, min: -p.s, max: p.g_max });
    }
    let parent = adapted_ratio(f, b, key, mg, mu)?;
    let mut coef: BTreeMap<usize, f64> = BTreeMap::new();
    for child in mg.children(key) {
        let c = adapted_ratio(f, b, &child, mg, mu)? - parent;
        for &a in mg.atoms(&child) {
            coef.insert(a, c);
        }
    }
    let atoms = mg.atoms(key).to_vec();
    let values = atoms.iter().map(|&a| coef[&a] * b[a]).collect();
    Ok(Piece { atoms, values })
}

/// `Δ_Q f`, or `Δ_Q f + E_Q f` when `Q` is a top cube. On the finest
/// generation only the `E_Q` part (if top) is available.
pub fn delta_full(f: &[f64], b: &[f64], key: &CubeKey, mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<Piece> {
    let top = key.generation == -mg.params().s;
    let finest = key.generation >= mg.params().g_max;
    match (top, finest) {
        (false, _) => delta(f, b, key, mg, mu),
        (true, true) => expectation(f, b, key, mg, mu),
        (true, false) => {
            let mut d = delta(f, b, key, mg, mu)?;
            let e = expectation(f, b, key, mg, mu)?;
            for (v, w) in d.values.iter_mut().zip(&e.values) {
                *v += w;
            }
            Ok(d)
        }
    }
}

/// `f = Σ Δ_Q f + Σ_top E_Q f + residual`, with `Δ_Q` over generations
/// `-s ..= g_max - 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub pieces: BTreeMap<CubeKey, Piece>,
    pub top_pieces: BTreeMap<CubeKey, Piece>,
    pub residual_norm: f64,
    pub f_norm: f64,
}

impl Decomposition {
    pub fn sum(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for p in self.pieces.values().chain(self.top_pieces.values()) {
            p.add_to(&mut out);
        }
        out
    }

    /// `Σ ‖Δ_Q f‖² + Σ ‖E_Q f‖²`.
    pub fn energy(&self, mu: &DiscreteMeasure) -> f64 {
        self.pieces.values().chain(self.top_pieces.values()).map(|p| p.norm_sq(mu)).sum()
    }

    /// `energy / ‖f‖²`, or `None` for `f = 0`.
    pub fn norm_ratio(&self, mu: &DiscreteMeasure) -> Option<f64> {
        (self.f_norm > 0.0).then(|| self.energy(mu) / (self.f_norm * self.f_norm))
    }
}

pub fn decompose(f: &[f64], b: &[f64], mg: &MeasuredGrid, mu: &DiscreteMeasure) -> Result<Decomposition> {
    if f.len() != mu.len() || b.len() != mu.len() {
        return Err(Error::InvalidInput(format!(
            "function lengths ({}, {}) differ from the atom count {}",
            f.len(),
            b.len(),
            mu.len()
        )));
    }
    let p = mg.params().clone();
    let mut pieces = BTreeMap::new();
    let mut top_pieces = BTreeMap::new();
    for (key, _) in mg.level(-p.s) {
        top_pieces.insert(key.clone(), expectation(f, b, &key, mg, mu)?);
    }
    for j in -p.s..p.g_max {
        for (key, _) in mg.level(j) {
            pieces.insert(key.clone(), delta(f, b, &key, mg, mu)?);
        }
    }
    let mut d = Decomposition { pieces, top_pieces, residual_norm: 0.0, f_norm: mu.norm_sq(f).sqrt() };
    let sum = d.sum(mu.len());
    let diff: Vec<f64> = f.iter().zip(&sum).map(|(a, s)| a - s).collect();
    d.residual_norm = mu.norm_sq(&diff).sqrt();
    Ok(d)
}

fn check_k(key: &CubeKey, k: u32, mg: &MeasuredGrid) -> Result<()> {
    let p = mg.params();
    let top = (key.generation + p.s) as i64;
    if k == 0 || k as i64 > top {
        return Err(Error::InvalidInput(format!("ancestor order k = {k} outside 1..={top} for cube {key}")));
    }
    Ok(())
}

/// `B_{R^(k-1)} = ⟨Δ_{R^(k)} f / b⟩_{R^(k-1)}`, evaluated by the two-branch
/// formula: `⟨f⟩/⟨b⟩` on `R^(k-1)` minus the same on `R^(k)`, except for
/// `k = s + gen(R)` where `R^(k)` is a top cube and the second term is absent.
pub fn b_coefficient(
    f: &[f64],
    b: &[f64],
    r_key: &CubeKey,
    k: u32,
    mg: &MeasuredGrid,
    mu: &DiscreteMeasure,
) -> Result<f64> {
    check_k(r_key, k, mg)?;
    let child = mg.ancestor_key(r_key, k - 1)?;
    let parent = mg.ancestor_key(r_key, k)?;
    let first = adapted_ratio(f, b, &child, mg, mu)?;
    if parent.generation == -mg.params().s {
        Ok(first)
    } else {
        Ok(first - adapted_ratio(f, b, &parent, mg, mu)?)
    }
}

/// `Δ_{R^(k)} f = -B χ_{R^n \ R^(k-1)} b + Σ_{S ∈ ch(R^(k)), S ≠ R^(k-1)} χ_S Δ_{R^(k)} f + B b`,
/// as dense per-atom arrays.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaSplit {
    pub coefficient: f64,
    pub outer: Vec<f64>,
    pub siblings: Vec<f64>,
    pub bulk: Vec<f64>,
}

impl DeltaSplit {
    pub fn sum(&self) -> Vec<f64> {
        self.outer.iter().zip(&self.siblings).zip(&self.bulk).map(|((a, b), c)| a + b + c).collect()
    }
}

pub fn delta_split(
    f: &[f64],
    b: &[f64],
    r_key: &CubeKey,
    k: u32,
    mg: &MeasuredGrid,
    mu: &DiscreteMeasure,
) -> Result<DeltaSplit> {
    let coefficient = b_coefficient(f, b, r_key, k, mg, mu)?;
    let inner = mg.ancestor_key(r_key, k - 1)?;
    let big = mg.ancestor_key(r_key, k)?;
    let n = mu.len();
    let mut in_inner = vec![false; n];
    for &a in mg.atoms(&inner) {
        in_inner[a] = true;
    }
    let full = delta_full(f, b, &big, mg, mu)?;
    let mut siblings = vec![0.0; n];
    for (&a, v) in full.atoms.iter().zip(&full.values) {
        if !in_inner[a] {
            siblings[a] = *v;
        }
    }
    let outer = (0..n).map(|a| if in_inner[a] { 0.0 } else { -coefficient * b[a] }).collect();
    let bulk = b.iter().map(|v| coefficient * v).collect();
    Ok(DeltaSplit { coefficient, outer, siblings, bulk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{GridParams, ShiftedGrid};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn setup(seed: u64) -> (DiscreteMeasure, MeasuredGrid) {
        let mu = DiscreteMeasure::lebesgue_surrogate(3, 1).unwrap();
        let p = GridParams::with_auto_r(1.0, 1.0, 3, 9, 1).unwrap();
        let (g, _) = ShiftedGrid::draw(&p, &mu, &mut stream(seed, "martingale-tests", 0)).unwrap();
        let mg = MeasuredGrid::new(g, &mu).unwrap();
        (mu, mg)
    }

    fn random_f(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "martingale-f", 0);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn two_atoms() -> (DiscreteMeasure, MeasuredGrid) {
        let mu = DiscreteMeasure::new(1, vec![(vec![0.25], 1.0), (vec![0.75], 3.0)]).unwrap();
        let p = GridParams::new(1.0, 1.0, 3, 0, 2).unwrap();
        let mg = MeasuredGrid::new(ShiftedGrid::standard(p, 1), &mu).unwrap();
        (mu, mg)
    }

    #[test]
    fn averages() {
        let (mu, mg) = two_atoms();
        let top = CubeKey { generation: 0, index: vec![0] };
        assert_eq!(avg(&[0.0, 4.0], &top, &mg, &mu).unwrap(), 3.0);
        assert_eq!(avg(&[2.0, 2.0], &top, &mg, &mu).unwrap(), 2.0);
        let single = CubeKey { generation: 1, index: vec![1] };
        assert_eq!(avg(&[0.0, 4.0], &single, &mg, &mu).unwrap(), 4.0);
        let empty = CubeKey { generation: 2, index: vec![0] };
        assert!(matches!(avg(&[0.0, 4.0], &empty, &mg, &mu), Err(Error::ZeroMass(_))));
    }

    #[test]
    fn adapted_function_has_no_differences() {
        let (mu, mg) = setup(1);
        let b = block_alternating_values(mu.len());
        let d = decompose(&b, &b, &mg, &mu).unwrap();
        for piece in d.pieces.values() {
            assert!(piece.values.iter().all(|v| v.abs() < 1e-14));
        }
        let sum = d.sum(mu.len());
        for (s, v) in sum.iter().zip(&b) {
            assert!((s - v).abs() < 1e-14);
        }
        let zero = decompose(&vec![0.0; mu.len()], &b, &mg, &mu).unwrap();
        assert!(zero.pieces.values().all(|p| p.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn decomposition_telescopes_at_single_atom_depth() {
        let (mu, mg) = setup(2);
        for b in [vec![1.0; mu.len()], block_alternating_values(mu.len())] {
            for seed in 0..5 {
                let f = random_f(mu.len(), seed);
                let d = decompose(&f, &b, &mg, &mu).unwrap();
                assert!(d.residual_norm <= 1e-12 * d.f_norm, "{}", d.residual_norm);
            }
        }
    }

    #[test]
    fn differences_integrate_to_zero_and_are_b_multiples() {
        let (mu, mg) = setup(3);
        let b = block_alternating_values(mu.len());
        let f = random_f(mu.len(), 7);
        let d = decompose(&f, &b, &mg, &mu).unwrap();
        let f_sup = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (key, piece) in &d.pieces {
            if key.generation > -mg.params().s {
                assert!(piece.integral(&mu).abs() <= 1e-12 * mg.mass(key) * f_sup.max(1.0));
            }
            for child in mg.children(key) {
                let ratios: Vec<f64> = piece
                    .atoms
                    .iter()
                    .zip(&piece.values)
                    .filter(|(a, _)| mg.atoms(&child).contains(a))
                    .map(|(&a, v)| v / b[a])
                    .collect();
                assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-12));
            }
        }
    }

    /// Textbook conditional expectations: group atoms by the cube they fall in
    /// by direct floor division, average, and difference consecutive levels.
    fn classical_differences(f: &[f64], mu: &DiscreteMeasure, mg: &MeasuredGrid) -> BTreeMap<CubeKey, Vec<f64>> {
        let g = mg.grid();
        let p = mg.params();
        let cond = |j: i32| -> Vec<f64> {
            let side = GridParams::side(j);
            let off = g.offset(j)[0];
            let mut sums: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
            let cell: Vec<i64> = mu.points().map(|x| ((x[0] - off) / side).floor() as i64).collect();
            for (a, &c) in cell.iter().enumerate() {
                let e = sums.entry(c).or_insert((0.0, 0.0));
                e.0 += f[a] * mu.mass(a);
                e.1 += mu.mass(a);
            }
            cell.iter().map(|c| sums[c].0 / sums[c].1).collect()
        };
        let mut out = BTreeMap::new();
        for j in -p.s..p.g_max {
            let (coarse, fine) = (cond(j), cond(j + 1));
            for (key, cell) in mg.level(j) {
                let mut v = vec![0.0; mu.len()];
                for &a in &cell.atoms {
                    v[a] = fine[a] - coarse[a];
                }
                out.insert(key, v);
            }
        }
        out
    }

    #[test]
    fn b_one_matches_classical_martingale() {
        let (mu, mg) = setup(4);
        let one = vec![1.0; mu.len()];
        for seed in 0..3 {
            let f = random_f(mu.len(), 100 + seed);
            let d = decompose(&f, &one, &mg, &mu).unwrap();
            let oracle = classical_differences(&f, &mu, &mg);
            assert_eq!(oracle.len(), d.pieces.len());
            for (key, piece) in &d.pieces {
                let dense = piece.to_dense(mu.len());
                for (x, y) in dense.iter().zip(&oracle[key]) {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
            let ratio = d.norm_ratio(&mu).unwrap();
            assert!((ratio - 1.0).abs() < 1e-12, "{ratio}");
        }
    }

    #[test]
    fn block_alternating_norm_equivalence_is_reported() {
        let (mu, mg) = setup(5);
        let sys = AccretiveSystem::block_alternating(&mu, &mg).unwrap();
        assert!(sys.accretivity >= 0.5);
        assert_eq!(sys.sup_norm, 1.5);
        let d = decompose(&random_f(mu.len(), 9), &sys.b, &mg, &mu).unwrap();
        let ratio = d.norm_ratio(&mu).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }

    #[test]
    fn delta_is_a_projection_on_its_cube() {
        let (mu, mg) = setup(6);
        let b = block_alternating_values(mu.len());
        let f = random_f(mu.len(), 11);
        let d = decompose(&f, &b, &mg, &mu).unwrap();
        let keys: Vec<&CubeKey> = d.pieces.keys().collect();
        for (i, key) in keys.iter().enumerate().step_by(5) {
            let own = d.pieces[*key].to_dense(mu.len());
            let again = delta(&own, &b, key, &mg, &mu).unwrap();
            for (x, y) in again.to_dense(mu.len()).iter().zip(&own) {
                assert!((x - y).abs() < 1e-12);
            }
            let other = keys[(i + 1) % keys.len()];
            if other.generation == key.generation {
                let theirs = d.pieces[other].to_dense(mu.len());
                let cross = delta(&theirs, &b, key, &mg, &mu).unwrap();
                assert!(cross.values.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn accretivity_violation_is_reported() {
        let (mu, mg) = two_atoms();
        let err = AccretiveSystem::certify(vec![3.0, -1.0], &mu, &mg).unwrap_err();
        assert!(matches!(err, Error::Accretivity { .. }));
        assert!(AccretiveSystem::certify(vec![1.0], &mu, &mg).is_err());
    }

    #[test]
    fn b_coefficients_of_b_and_telescoping() {
        let (mu, mg) = setup(7);
        let p = mg.params().clone();
        let b = block_alternating_values(mu.len());
        let f = random_f(mu.len(), 13);
        let good = mg.classify();
        let mut checked = 0;
        for key in good.good_keys() {
            let top_k = (key.generation + p.s) as u32;
            if top_k < p.r + 1 {
                continue;
            }
            for k in p.r + 1..=top_k {
                let bb = b_coefficient(&b, &b, key, k, &mg, &mu).unwrap();
                let expected = if k == top_k { 1.0 } else { 0.0 };
                assert!((bb - expected).abs() < 1e-14);
            }
            let sum: f64 = (p.r + 1..=top_k).map(|k| b_coefficient(&f, &b, key, k, &mg, &mu).unwrap()).sum();
            let target = adapted_ratio(&f, &b, &mg.ancestor_key(key, p.r).unwrap(), &mg, &mu).unwrap();
            assert!((sum - target).abs() <= 1e-12 * target.abs().max(1.0));
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn b_coefficient_is_the_average_of_delta_over_b() {
        let (mu, mg) = setup(8);
        let b = block_alternating_values(mu.len());
        let f = random_f(mu.len(), 17);
        let key = mg.atom_key(5, 6);
        for k in 1..=(6 + mg.params().s) as u32 {
            let coef = b_coefficient(&f, &b, &key, k, &mg, &mu).unwrap();
            let big = mg.ancestor_key(&key, k).unwrap();
            let inner = mg.ancestor_key(&key, k - 1).unwrap();
            let d = delta_full(&f, &b, &big, &mg, &mu).unwrap().to_dense(mu.len());
            let quotient: Vec<f64> = d.iter().zip(&b).map(|(x, y)| x / y).collect();
            let direct = avg(&quotient, &inner, &mg, &mu).unwrap();
            assert!((coef - direct).abs() < 1e-12);
            // Cauchy-Schwarz: |B| ≤ ‖Δ‖ / (|⟨b⟩| μ^{1/2}) on the inner cube
            let bound = mu.norm_sq(&d).sqrt() / (avg(&b, &inner, &mg, &mu).unwrap().abs() * mg.mass(&inner).sqrt());
            assert!(coef.abs() <= bound * (1.0 + 1e-12) + 1e-15);
        }
        assert!(b_coefficient(&f, &b, &key, 0, &mg, &mu).is_err());
        assert!(b_coefficient(&f, &b, &key, (7 + mg.params().s) as u32, &mg, &mu).is_err());
    }

    #[test]
    fn delta_split_reassembles() {
        let (mu, mg) = setup(9);
        let b = block_alternating_values(mu.len());
        let f = random_f(mu.len(), 19);
        let key = mg.atom_key(20, 7);
        for k in 1..=(7 + mg.params().s) as u32 {
            let split = delta_split(&f, &b, &key, k, &mg, &mu).unwrap();
            let big = mg.ancestor_key(&key, k).unwrap();
            let inner = mg.ancestor_key(&key, k - 1).unwrap();
            let direct = delta_full(&f, &b, &big, &mg, &mu).unwrap().to_dense(mu.len());
            for (x, y) in split.sum().iter().zip(&direct) {
                assert!((x - y).abs() <= 1e-12);
            }
            let in_big = mg.atoms(&big);
            for a in 0..mu.len() {
                let inside = mg.atoms(&inner).contains(&a);
                if inside {
                    assert_eq!(split.outer[a], 0.0);
                    assert_eq!(split.siblings[a], 0.0);
                    assert_eq!(split.bulk[a], split.coefficient * b[a]);
                } else if !in_big.contains(&a) {
                    assert_eq!(split.siblings[a], 0.0);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn decomposition_is_linear(seed in 0u64..1000, c in -3.0f64..3.0) {
            let (mu, mg) = setup(10);
            let b = block_alternating_values(mu.len());
            let f = random_f(mu.len(), seed);
            let g = random_f(mu.len(), seed + 5000);
            let h: Vec<f64> = f.iter().zip(&g).map(|(x, y)| c * x + y).collect();
            let (df, dg, dh) = (
                decompose(&f, &b, &mg, &mu).unwrap(),
                decompose(&g, &b, &mg, &mu).unwrap(),
                decompose(&h, &b, &mg, &mu).unwrap(),
            );
            for (key, ph) in &dh.pieces {
                for ((x, y), z) in df.pieces[key].values.iter().zip(&dg.pieces[key].values).zip(&ph.values) {
                    prop_assert!((c * x + y - z).abs() < 1e-12);
                }
            }
        }
    }
}
