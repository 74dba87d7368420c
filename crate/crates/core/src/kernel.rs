//! Kernels `s_t(x, y)` and sampled certification of the size and Hölder
//! conditions
//!
//! ```text
//! |s_t(x,y)|            ≤ C_size   · t^α        / (t^α λ(x,t) + |x-y|^α λ(x,|x-y|))
//! |s_t(x,y) - s_t(x,z)| ≤ C_holder · |y-z|^α    / (t^α λ(x,t) + |x-y|^α λ(x,|x-y|))   for |y-z| < t/2
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linf;
use crate::measure::DominatingFunction;
use crate::pow;

/// Kernel values sampled on a `(t, ρ)` lattice with `ρ = |x - y|_∞`.
///
/// Evaluation is bilinear. `t` is clamped to the table range, `ρ` below the
/// first node is clamped, and the kernel vanishes for `ρ` past the last node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
    /// `values[i][k]` is the kernel at `(t[i], rho[k])`.
    pub values: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn new(t: Vec<f64>, rho: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let table = KernelTable { t, rho, values };
        table.validate()?;
        Ok(table)
    }

    /// The zero kernel on a small lattice.
    pub fn zeros() -> Self {
        KernelTable { t: vec![1e-6, 1e6], rho: vec![0.0, 1e6], values: vec![vec![0.0; 2]; 2] }
    }

    fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if self.t.is_empty() || self.rho.is_empty() {
            return Err(Error::InvalidInput("kernel table needs at least one t and one rho node".into()));
        }
        if !increasing(&self.t) || !increasing(&self.rho) || self.t[0] <= 0.0 || self.rho[0] < 0.0 {
            return Err(Error::InvalidInput(
                "kernel table nodes must be finite and strictly increasing, with t > 0 and rho >= 0".into(),
            ));
        }
        if self.values.len() != self.t.len() || self.values.iter().any(|row| row.len() != self.rho.len()) {
            return Err(Error::InvalidInput(format!(
                "kernel table values must be {}x{}",
                self.t.len(),
                self.rho.len()
            )));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel table has non-finite values".into()));
        }
        Ok(())
    }

    fn bracket(nodes: &[f64], x: f64) -> (usize, usize, f64) {
        if nodes.len() == 1 || x <= nodes[0] {
            return (0, 0, 0.0);
        }
        let last = nodes.len() - 1;
        if x >= nodes[last] {
            return (last, last, 0.0);
        }
        let hi = nodes.partition_point(|&n| n <= x);
        let lo = hi - 1;
        (lo, hi, (x - nodes[lo]) / (nodes[hi] - nodes[lo]))
    }

    pub fn interp(&self, t: f64, rho: f64) -> f64 {
        if rho > *self.rho.last().expect("validated") {
            return 0.0;
        }
        let (i0, i1, wt) = Self::bracket(&self.t, t);
        let (k0, k1, wr) = Self::bracket(&self.rho, rho);
        let v = &self.values;
        let a = v[i0][k0] * (1.0 - wr) + v[i0][k1] * wr;
        let b = v[i1][k0] * (1.0 - wr) + v[i1][k1] * wr;
        a * (1.0 - wt) + b * wt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    /// `t^α / (t^α λ(x,t) + |x-y|^α λ(x,|x-y|))`
    Canonical,
    /// `λ(x,t)^{-1} · max(0, 1 - |x-y|_∞ / t)`
    LipschitzBump,
    UserTable(KernelTable),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Canonical,
    LipschitzBump,
    UserTable,
}

/// JSON form `{"family": .., "alpha": .., "table": ..}`; the dominating
/// function is supplied separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: FamilyName,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<KernelTable>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { family: FamilyName::Canonical, alpha: 1.0, table: None }
    }
}

impl KernelSpec {
    pub fn build(&self, lam: DominatingFunction) -> Result<Kernel> {
        let family = match self.family {
            FamilyName::Canonical => KernelFamily::Canonical,
            FamilyName::LipschitzBump => KernelFamily::LipschitzBump,
            FamilyName::UserTable => {
                let table = self
                    .table
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("user_table kernel needs a \"table\"".into()))?;
                table.validate()?;
                KernelFamily::UserTable(table)
            }
        };
        Kernel::new(family, self.alpha, lam)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub family: KernelFamily,
    pub alpha: f64,
    pub lam: DominatingFunction,
}

impl Kernel {
    pub fn new(family: KernelFamily, alpha: f64, lam: DominatingFunction) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel exponent alpha must be positive, got {alpha}")));
        }
        Ok(Kernel { family, alpha, lam })
    }

    pub fn canonical(alpha: f64, lam: DominatingFunction) -> Result<Self> {
        Kernel::new(KernelFamily::Canonical, alpha, lam)
    }

    pub fn spec(&self) -> KernelSpec {
        let (family, table) = match &self.family {
            KernelFamily::Canonical => (FamilyName::Canonical, None),
            KernelFamily::LipschitzBump => (FamilyName::LipschitzBump, None),
            KernelFamily::UserTable(t) => (FamilyName::UserTable, Some(t.clone())),
        };
        KernelSpec { family, alpha: self.alpha, table }
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveScale(t));
        }
        Ok(self.at(t, x).eval(y))
    }

    /// Evaluator for fixed `(t, x)`.
    pub fn at<'a>(&'a self, t: f64, x: &'a [f64]) -> KernelRow<'a> {
        KernelRow { kernel: self, x, t, t_alpha: pow(t, self.alpha), lam_t: self.lam.eval(x, t) }
    }

    /// `t^α λ(x,t) + |x-y|^α λ(x,|x-y|)`, the denominator of both conditions.
    pub fn size_denominator(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.at(t, x).denominator(linf(x, y))
    }
}

/// A kernel with `t` and `x` fixed, caching `t^α` and `λ(x,t)`.
#[derive(Clone, Copy, Debug)]
pub struct KernelRow<'a> {
    kernel: &'a Kernel,
    x: &'a [f64],
    t: f64,
    t_alpha: f64,
    lam_t: f64,
}

impl KernelRow<'_> {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.eval_rho(linf(self.x, y))
    }

    /// Value at distance `ρ = |x - y|_∞`; every family depends on `y` only
    /// through `ρ`.
    pub fn eval_rho(&self, rho: f64) -> f64 {
        match &self.kernel.family {
            KernelFamily::Canonical => self.t_alpha / self.denominator(rho),
            KernelFamily::LipschitzBump => (1.0 - rho / self.t).max(0.0) / self.lam_t,
            KernelFamily::UserTable(table) => table.interp(self.t, rho),
        }
    }

    pub fn denominator(&self, rho: f64) -> f64 {
        let far = if rho > 0.0 { pow(rho, self.kernel.alpha) * self.kernel.lam.eval(self.x, rho) } else { 0.0 };
        self.t_alpha * self.lam_t + far
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeReport {
    pub c_size: f64,
    pub samples: usize,
    /// `(t, |x-y|)` where the supremum was attained.
    pub worst: Option<(f64, f64)>,
}

/// `C_size`: the sampled supremum of `|s_t(x,y)|` over the size bound.
pub fn check_size(kernel: &Kernel, samples: &[(f64, Vec<f64>, Vec<f64>)]) -> Result<SizeReport> {
    let mut report = SizeReport { c_size: 0.0, samples: samples.len(), worst: None };
    for (t, x, y) in samples {
        if !(*t > 0.0) {
            return Err(Error::NonPositiveScale(*t));
        }
        let row = kernel.at(*t, x);
        let rho = linf(x, y);
        let bound = row.t_alpha / row.denominator(rho);
        let ratio = row.eval_rho(rho).abs() / bound;
        if ratio > report.c_size || report.worst.is_none() {
            report.c_size = report.c_size.max(ratio);
            report.worst = Some((*t, rho));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderReport {
    pub c_holder: f64,
    pub samples: usize,
    /// `(t, |x-y|, |y-z|)` where the supremum was attained.
    pub worst: Option<(f64, f64, f64)>,
}

/// One Hölder sample `(t, x, y, z)`.
pub type HolderSample = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// `C_holder`: the sampled supremum of the `y`-difference over the Hölder
/// bound. Samples with `y = z` contribute 0.
pub fn check_holder(kernel: &Kernel, samples: &[HolderSample]) -> Result<HolderReport> {
    let mut report = HolderReport { c_holder: 0.0, samples: samples.len(), worst: None };
    for (t, x, y, z) in samples {
        if !(*t > 0.0) {
            return Err(Error::NonPositiveScale(*t));
        }
        let sep = linf(y, z);
        if sep >= t / 2.0 {
            return Err(Error::HolderSample { separation: sep, t: *t });
        }
        if sep == 0.0 {
            continue;
        }
        let row = kernel.at(*t, x);
        let rho = linf(x, y);
        let bound = pow(sep, kernel.alpha) / row.denominator(rho);
        let ratio = (row.eval(y) - row.eval(z)).abs() / bound;
        if ratio > report.c_holder || report.worst.is_none() {
            report.c_holder = report.c_holder.max(ratio);
            report.worst = Some((*t, rho, sep));
        }
    }
    Ok(report)
}

/// Log lattice: `t = 2^{k/density}` for `k/density ∈ [t_exp_lo, t_exp_hi]`,
/// `ρ = 0` and `ρ = t·2^{i/density}` for `i/density ∈ [-6, 6]`, with `y`
/// displaced from each base point along the first axis.
pub fn default_size_samples(
    points: &[Vec<f64>],
    t_exp_lo: i32,
    t_exp_hi: i32,
    density: u32,
) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let density = density.max(1) as i32;
    let mut out = Vec::new();
    for x in points {
        for k in t_exp_lo * density..=t_exp_hi * density {
            let t = 2f64.powf(k as f64 / density as f64);
            out.push((t, x.clone(), x.clone()));
            for i in -6 * density..=6 * density {
                let rho = t * 2f64.powf(i as f64 / density as f64);
                let mut y = x.clone();
                y[0] += rho;
                out.push((t, x.clone(), y));
            }
        }
    }
    out
}

/// For every size sample, `z` on the ℓ∞ spheres of radius `t/4, t/8, t/16`
/// around `y`: the `2n` axis points and the two main-diagonal corners.
pub fn default_holder_samples(size_samples: &[(f64, Vec<f64>, Vec<f64>)]) -> Vec<HolderSample> {
    let mut out = Vec::new();
    for (t, x, y) in size_samples {
        let n = y.len();
        for frac in [4.0, 8.0, 16.0] {
            let h = t / frac;
            let mut push = |z: Vec<f64>| out.push((*t, x.clone(), y.clone(), z));
            for k in 0..n {
                for sign in [-1.0, 1.0] {
                    let mut z = y.clone();
                    z[k] += sign * h;
                    push(z);
                }
            }
            if n > 1 {
                for sign in [-1.0, 1.0] {
                    push(y.iter().map(|c| c + sign * h).collect());
                }
            }
        }
    }
    out
}
