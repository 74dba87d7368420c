//! Constructive machinery for local Tb theorems for square functions on
//! non-homogeneous spaces.
//!
//! The crate works with finite atomic measures on `R^n` (ℓ∞ metric) that are
//! dominated by a doubling function `λ(x, r)`. On top of that it provides
//! random shifted dyadic grids with the good/bad cube classification,
//! `b`-adapted martingale differences, Whitney-region quadrature of
//! `∬ |θ_t f|² dμ dt/t`, and a set of experiments that check every identity
//! of the argument exactly and every inequality empirically.
//!
//! Module map:
//!
//! - [`measure`]: atomic measures, dominating functions, symmetrization.
//! - [`dyadic`]: shifted grids, cubes, goodness, Whitney regions.
//! - [`kernel`]: kernel families and their size/Hölder certification.
//! - [`martingale`]: `E_Q`, `Δ_Q`, decompositions, `B` coefficients.
//! - [`sqfn`]: `θ_t`, region quadrature, testing constants, Carleson sequences.
//! - [`verify`]: the experiment layer.
//! - [`config`] and [`runner`]: batch orchestration behind the CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dyadic;
pub mod error;
pub mod kernel;
pub mod martingale;
pub mod measure;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sqfn;
pub mod verify;

pub use error::{Error, Result};

/// Version tag written into every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;

/// ℓ∞ distance between two points of the same dimension.
#[inline]
pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `x.powf(e)` with the exponents that show up in practice special-cased.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 0.0 {
        1.0
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else {
        x.powf(e)
    }
}
