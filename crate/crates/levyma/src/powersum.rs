//! Exact convolution algebra on finite sums of power functions.
//!
//! A [`PowerSum`] represents `t ↦ Σ cᵢ t^{αᵢ}` on `t > 0` with every
//! exponent strictly greater than −1, so each term is locally integrable
//! and the Volterra convolution stays inside the class:
//!
//! ```text
//! (c₁ t^a) * (c₂ t^b) = c₁ c₂ B(a+1, b+1) t^{a+b+1}
//! ```
//!
//! with `B` the Beta function. Cancellations are therefore decidable
//! exactly here, where the grid pipeline can only bound them; tests of the
//! grid path use this module as the ground truth.

use crate::gridfn::{GridFunction, MatrixGridFunction};
use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Exponents closer than this are merged into one term.
const EXPONENT_MERGE_TOL: f64 = 1e-9;

/// A coefficient is dropped as exact cancellation when it is this small
/// relative to the total magnitude that contributed to it.
const CANCELLATION_DROP: f64 = 1e-11;

/// Beta function `B(a, b) = Γ(a)Γ(b) / Γ(a+b)` for positive arguments.
///
/// Small integer arguments take an exact factorial-ratio path so that
/// identities such as `2 B(2,4) = 3 B(3,3)` cancel to machine precision;
/// everything else goes through compensated log-gamma.
pub fn beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid("a", format!("Beta argument must be positive, got {a}")));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid("b", format!("Beta argument must be positive, got {b}")));
    }
    if a.fract() == 0.0 && b.fract() == 0.0 && a + b <= 34.0 {
        // (a-1)! (b-1)! / (a+b-1)! exactly in u128, one final rounding.
        let m = a as u128;
        let n = b as u128;
        let fact = |k: u128| -> u128 { (1..=k).product::<u128>().max(1) };
        let num = fact(m - 1) * fact(n - 1);
        let den = fact(m + n - 1);
        return Ok(num as f64 / den as f64);
    }
    let ln = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let value = ln.exp();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("Beta({a}, {b}) overflowed")));
    }
    Ok(value)
}

/// Finite sum `Σ cᵢ t^{αᵢ}` with distinct exponents `αᵢ > −1`, sorted
/// ascending, zero coefficients removed.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSum {
    terms: Vec<(f64, f64)>,
}

impl PowerSum {
    /// Builds a sum from `(coefficient, exponent)` pairs, merging duplicate
    /// exponents and dropping zero coefficients.
    pub fn new(terms: &[(f64, f64)]) -> Result<Self> {
        for &(c, e) in terms {
            if !c.is_finite() {
                return Err(Error::invalid("coeff", format!("non-finite coefficient {c}")));
            }
            if !(e > -1.0) || !e.is_finite() {
                return Err(Error::invalid(
                    "exponent",
                    format!("exponent must exceed -1 for local integrability, got {e}"),
                ));
            }
        }
        Ok(Self::merge(terms.iter().map(|&(c, e)| (c, e, c.abs()))))
    }

    /// The zero function (no terms).
    pub fn zero() -> Self {
        PowerSum { terms: Vec::new() }
    }

    /// Single term `c t^a`.
    pub fn monomial(coeff: f64, exponent: f64) -> Result<Self> {
        PowerSum::new(&[(coeff, exponent)])
    }

    /// `(coefficient, exponent)` pairs, exponents strictly ascending.
    pub fn terms(&self) -> &[(f64, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Lowest-exponent term, if any.
    pub fn leading(&self) -> Option<(f64, f64)> {
        self.terms.first().copied()
    }

    /// Pointwise value at `t ≥ 0`; negative exponents give `±∞` at zero.
    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(c, e)| c * t.powf(e)).sum()
    }

    pub fn add(&self, other: &PowerSum) -> PowerSum {
        let it = self
            .terms
            .iter()
            .chain(other.terms.iter())
            .map(|&(c, e)| (c, e, c.abs()));
        Self::merge(it)
    }

    pub fn scale(&self, factor: f64) -> PowerSum {
        if factor == 0.0 {
            return PowerSum::zero();
        }
        PowerSum { terms: self.terms.iter().map(|&(c, e)| (factor * c, e)).collect() }
    }

    pub fn neg(&self) -> PowerSum {
        self.scale(-1.0)
    }

    /// Merges `(coeff, exponent, magnitude)` contributions: exponents within
    /// [`EXPONENT_MERGE_TOL`] coalesce under compensated summation, and a
    /// merged coefficient far below its contributed magnitude is treated as
    /// exact cancellation and removed.
    fn merge(contributions: impl Iterator<Item = (f64, f64, f64)>) -> PowerSum {
        let mut items: Vec<(f64, f64, f64)> = contributions.collect();
        items.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        let mut terms: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < items.len() {
            let exponent = items[i].1;
            // Kahan-compensated sum over the group sharing this exponent.
            let mut sum = 0.0;
            let mut comp = 0.0;
            let mut magnitude = 0.0;
            let mut j = i;
            while j < items.len() && items[j].1 - exponent <= EXPONENT_MERGE_TOL {
                let y = items[j].0 - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
                magnitude += items[j].2;
                j += 1;
            }
            if sum != 0.0 && sum.abs() > CANCELLATION_DROP * magnitude {
                terms.push((sum, exponent));
            }
            i = j;
        }
        PowerSum { terms }
    }

    /// Samples onto a uniform grid of `len` points with spacing `step`,
    /// recording the terms as the end behaviour near zero. Negative
    /// exponents store 0 at `t = 0`; the stored end behaviour carries the
    /// true singularity for downstream quadrature.
    pub fn sample(&self, step: f64, len: usize) -> Result<GridFunction> {
        let singular = self.terms.first().is_some_and(|&(_, e)| e < 0.0);
        let mut values = Vec::with_capacity(len);
        for k in 0..len {
            if k == 0 && singular {
                values.push(0.0);
            } else {
                values.push(self.eval(step * k as f64));
            }
        }
        GridFunction::with_end_terms(step, values, self.terms.clone())
    }
}

impl std::fmt::Display for PowerSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, &(c, e)) in self.terms.iter().enumerate() {
            if idx == 0 {
                write!(f, "{c:.6} t^{e}")?;
            } else if c < 0.0 {
                write!(f, " - {:.6} t^{e}", -c)?;
            } else {
                write!(f, " + {c:.6} t^{e}")?;
            }
        }
        Ok(())
    }
}

/// Exact Volterra convolution: every term pair `(c₁, a) × (c₂, b)`
/// contributes `(c₁ c₂ B(a+1, b+1), a+b+1)`.
pub fn power_conv(p: &PowerSum, q: &PowerSum) -> Result<PowerSum> {
    let mut contributions = Vec::with_capacity(p.terms.len() * q.terms.len());
    for &(c1, a) in &p.terms {
        for &(c2, b) in &q.terms {
            let beta = beta_fn(a + 1.0, b + 1.0)?;
            let coeff = c1 * c2 * beta;
            contributions.push((coeff, a + b + 1.0, coeff.abs()));
        }
    }
    Ok(PowerSum::merge(contributions.into_iter()))
}

/// Square matrix of [`PowerSum`] entries, row-major.
#[derive(Debug, Clone)]
pub struct PowerMatrix {
    dim: usize,
    entries: Vec<PowerSum>,
}

impl PowerMatrix {
    /// Builds a `dim × dim` matrix from row-major entries.
    pub fn new(dim: usize, entries: Vec<PowerSum>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "matrix dimension must be at least 1"));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimMismatch(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(PowerMatrix { dim, entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> PowerSum) -> Result<Self> {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        PowerMatrix::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> &PowerSum {
        &self.entries[row * self.dim + col]
    }

    pub fn transpose(&self) -> PowerMatrix {
        let d = self.dim;
        PowerMatrix::from_fn(d, |i, j| self.entry(j, i).clone()).unwrap()
    }

    /// Samples every entry onto the same grid.
    pub fn sample(&self, step: f64, len: usize) -> Result<MatrixGridFunction> {
        let mut grids = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            grids.push(e.sample(step, len)?);
        }
        MatrixGridFunction::new(self.dim, grids)
    }
}

/// Exact convolution determinant `Σ_σ sgn(σ) Φ_{1,σ(1)} * ⋯ * Φ_{d,σ(d)}`
/// over the permutation sum, sharing row-prefix convolutions.
///
/// Supported up to `dim = 8`; the factorial permutation sum is pointless
/// beyond that for a symbolic oracle.
pub fn power_conv_determinant(phi: &PowerMatrix) -> Result<PowerSum> {
    let d = phi.dim;
    if d > 8 {
        return Err(Error::Unsupported(format!(
            "symbolic convolution determinant limited to dimension 8, got {d}"
        )));
    }
    let mut acc = PowerSum::zero();
    let mut used = vec![false; d];
    dfs_det(phi, 0, &mut used, None, 1.0, &mut acc)?;
    Ok(acc)
}

fn dfs_det(
    phi: &PowerMatrix,
    row: usize,
    used: &mut [bool],
    prefix: Option<&PowerSum>,
    sign: f64,
    acc: &mut PowerSum,
) -> Result<()> {
    let d = phi.dim;
    if row == d {
        if let Some(p) = prefix {
            *acc = acc.add(&p.scale(sign));
        }
        return Ok(());
    }
    for col in 0..d {
        if used[col] {
            continue;
        }
        let entry = phi.entry(row, col);
        if entry.is_zero() {
            continue;
        }
        // Parity flips once per used column that precedes this one.
        let inversions = used[..col].iter().filter(|&&u| u).count();
        let sign_here = if (col - inversions) % 2 == 1 { -sign } else { sign };
        let next = match prefix {
            None => entry.clone(),
            Some(p) => power_conv(p, entry)?,
        };
        used[col] = true;
        dfs_det(phi, row + 1, used, Some(&next), sign_here, acc)?;
        used[col] = false;
    }
    Ok(())
}
