//! Volterra convolution algebra on uniformly sampled functions.
//!
//! A [`GridFunction`] carries samples `values[k] ≈ f(k·step)` of a function
//! on `[0, horizon]`, implicitly extended by zero to negative arguments.
//! The convolution
//!
//! ```text
//! (f * g)(t) = ∫₀ᵗ f(t−u) g(u) du
//! ```
//!
//! is evaluated by an endpoint-corrected trapezoid rule: the plain lattice
//! sum is augmented with generalized Euler–Maclaurin terms built from the
//! Riemann zeta function, driven by each operand's power behaviour near
//! zero. For smooth operands the correction reduces to the classical
//! trapezoid endpoint weights plus the first derivative term; for operands
//! like `t^α` with `α ∈ (−1/2, 4]` it keeps the relative error of chained
//! convolutions near one percent even five cells from the origin.
//!
//! Matrix-valued functions support convolution determinants
//! `Σ_σ sgn(σ) Φ_{1,σ(1)} * ⋯ * Φ_{d,σ(d)}`, convolution adjugates, and
//! numerical Laplace transforms with a truncation warning.

use crate::powersum::beta_fn;
use crate::{Error, Result};
use rayon::prelude::*;
use statrs::function::gamma::gamma;
use std::fmt::Write as _;
use std::path::Path;

/// Relative tolerance for deciding two grids share a step.
const STEP_MATCH_TOL: f64 = 1e-12;

/// End-behaviour terms with exponents above this bound are dropped; their
/// first-cell contribution is far below the quadrature error.
const END_EXPONENT_CAP: f64 = 8.0;

/// Maximum number of retained end-behaviour terms per function.
const END_TERM_CAP: usize = 8;

/// Riemann zeta on `s < 1`: Borwein's alternating series for the right
/// half, completed by the functional equation for `s ≤ 0.5`.
fn riemann_zeta(s: f64) -> f64 {
    debug_assert!(s < 1.0, "zeta evaluated only left of the pole, got {s}");
    if s == 0.0 {
        return -0.5;
    }
    if s > 0.5 {
        return zeta_borwein(s);
    }
    // ζ(s) = 2^s π^{s−1} sin(πs/2) Γ(1−s) ζ(1−s); the sine factor makes
    // the trivial zeros at negative even integers exact.
    let pi = std::f64::consts::PI;
    let reflected = zeta_borwein(1.0 - s);
    let sine = (pi * s / 2.0).sin();
    if sine == 0.0 {
        return 0.0;
    }
    2f64.powf(s) * pi.powf(s - 1.0) * sine * gamma(1.0 - s) * reflected
}

/// Borwein's algorithm for `ζ(s)`, valid for `s > 0`, `s ≠ 1`.
fn zeta_borwein(s: f64) -> f64 {
    const N: usize = 32;
    let mut d = [0.0f64; N + 1];
    // d_k = n Σ_{i≤k} (n+i−1)! 4^i / ((n−i)! (2i)!), built from term ratios.
    let mut term = 1.0 / N as f64;
    let mut partial = term;
    d[0] = N as f64 * partial;
    for i in 0..N {
        let (ni, i_f) = (N as f64 + i as f64, i as f64);
        term *= 4.0 * (ni) * (N as f64 - i_f) / ((2.0 * i_f + 1.0) * (2.0 * i_f + 2.0));
        partial += term;
        d[i + 1] = N as f64 * partial;
    }
    let mut sum = 0.0;
    for k in 0..N {
        let contribution = (d[k] - d[N]) / ((k + 1) as f64).powf(s);
        sum += if k % 2 == 0 { contribution } else { -contribution };
    }
    -sum / (d[N] * (1.0 - 2f64.powf(1.0 - s)))
}

/// Comparison tolerance for grid values: `|a − b| ≤ abs + rel·max(|a|,|b|)`.
#[derive(Debug, Clone, Copy)]
pub struct GridTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for GridTolerance {
    fn default() -> Self {
        GridTolerance { abs: 1e-12, rel: 1e-9 }
    }
}

impl GridTolerance {
    pub fn close(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.abs + self.rel * a.abs().max(b.abs())
    }

    /// True when both grids match in shape and every sample is close.
    pub fn grid_close(&self, f: &GridFunction, g: &GridFunction) -> bool {
        f.len() == g.len()
            && self.close(f.step(), g.step())
            && f.values.iter().zip(&g.values).all(|(&a, &b)| self.close(a, b))
    }
}

/// Real function sampled on the uniform grid `0, h, 2h, …, (len−1)·h`.
///
/// `end_terms` optionally records the behaviour near zero as
/// `(coefficient, exponent)` pairs of `Σ c t^α`; quadrature uses it to
/// correct the first cells. Functions sampled from a
/// [`crate::powersum::PowerSum`] carry their exact terms; plain
/// constructions get a smooth two-term Taylor profile derived from the
/// samples at convolution time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    step: f64,
    values: Vec<f64>,
    end_terms: Vec<(f64, f64)>,
}

impl GridFunction {
    /// Builds from samples; at least two points, positive step, finite values.
    pub fn from_values(step: f64, values: Vec<f64>) -> Result<Self> {
        GridFunction::with_end_terms(step, values, Vec::new())
    }

    /// Builds from samples plus explicit `(coefficient, exponent)` end
    /// behaviour near zero.
    pub fn with_end_terms(step: f64, values: Vec<f64>, end_terms: Vec<(f64, f64)>) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid("step", format!("grid step must be positive, got {step}")));
        }
        if values.len() < 2 {
            return Err(Error::invalid("values", "grid needs at least two points"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite grid sample {bad}")));
        }
        for &(c, e) in &end_terms {
            if !c.is_finite() || !e.is_finite() || e <= -1.0 {
                return Err(Error::invalid(
                    "end_terms",
                    format!("end term ({c}, {e}) must be finite with exponent > -1"),
                ));
            }
        }
        Ok(GridFunction { step, values, end_terms })
    }

    /// Samples `f` at `k·step` for `k = 0..len`.
    pub fn from_fn(step: f64, len: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..len).map(|k| f(step * k as f64)).collect();
        GridFunction::from_values(step, values)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rightmost grid time `step·(len−1)`.
    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.step * k as f64
    }

    /// Declared end behaviour, empty when none was attached.
    pub fn end_terms(&self) -> &[(f64, f64)] {
        &self.end_terms
    }

    /// The zero function on the given grid.
    pub fn zeros(step: f64, len: usize) -> Result<Self> {
        GridFunction::from_values(step, vec![0.0; len])
    }

    /// True when all samples and declared end terms vanish.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0) && self.end_terms.iter().all(|&(c, _)| c == 0.0)
    }

    /// Pointwise sum on a shared grid; end behaviours merge.
    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        check_same_grid(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        let mut end = Vec::new();
        if !self.end_terms.is_empty() || !other.end_terms.is_empty() {
            // A missing profile on either side would misstate the sum's
            // end behaviour, so synthesize the smooth default before merging.
            end = merge_end_terms(
                smooth_or_declared(self).into_iter().chain(smooth_or_declared(other)),
            );
        }
        GridFunction::with_end_terms(self.step, values, end)
    }

    /// Pointwise scaling; end behaviour scales along.
    pub fn scale(&self, factor: f64) -> GridFunction {
        GridFunction {
            step: self.step,
            values: self.values.iter().map(|&v| factor * v).collect(),
            end_terms: self.end_terms.iter().map(|&(c, e)| (factor * c, e)).collect(),
        }
    }

    /// Writes `t,value` rows with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::with_capacity(self.values.len() * 48 + 16);
        out.push_str("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e}", self.time(k), v);
        }
        std::fs::write(path, out)
    }

    /// Reads a `t,value` file written by [`GridFunction::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Numeric(format!("cannot read {}: {e}", path.display())))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let t = parse_field(cols.next(), lineno, path)?;
            let v = parse_field(cols.next(), lineno, path)?;
            times.push(t);
            values.push(v);
        }
        grid_from_times(&times, path)
            .and_then(|step| GridFunction::from_values(step, values))
    }
}

fn parse_field(field: Option<&str>, lineno: usize, path: &Path) -> Result<f64> {
    field
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| {
            Error::Numeric(format!("bad numeric field at line {} of {}", lineno + 1, path.display()))
        })
}

/// Validates that parsed times form a uniform grid from zero and returns
/// the step.
fn grid_from_times(times: &[f64], path: &Path) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Numeric(format!("{} holds fewer than two rows", path.display())));
    }
    let step = times[1] - times[0];
    if !(step > 0.0) {
        return Err(Error::Numeric(format!("{} has a nonpositive step", path.display())));
    }
    for (k, &t) in times.iter().enumerate() {
        let expect = times[0] + step * k as f64;
        if (t - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
            return Err(Error::Numeric(format!("{} is not uniformly gridded", path.display())));
        }
    }
    if times[0].abs() > 1e-12 {
        return Err(Error::Numeric(format!("{} does not start at t = 0", path.display())));
    }
    Ok(step)
}

fn check_same_grid(f: &GridFunction, g: &GridFunction) -> Result<()> {
    if (f.step - g.step).abs() > STEP_MATCH_TOL * f.step.max(g.step) {
        return Err(Error::GridMismatch(format!("steps {} and {} differ", f.step, g.step)));
    }
    if f.values.len() != g.values.len() {
        return Err(Error::GridMismatch(format!(
            "lengths {} and {} differ",
            f.values.len(),
            g.values.len()
        )));
    }
    Ok(())
}

/// Declared end terms, or the smooth two-term Taylor profile read off the
/// first samples.
fn smooth_or_declared(f: &GridFunction) -> Vec<(f64, f64)> {
    if !f.end_terms.is_empty() {
        return f.end_terms.clone();
    }
    let v = &f.values;
    let h = f.step;
    let slope = if v.len() >= 3 {
        (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    } else {
        (v[1] - v[0]) / h
    };
    vec![(v[0], 0.0), (slope, 1.0)]
}

fn merge_end_terms(terms: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut items: Vec<(f64, f64)> = terms
        .filter(|&(c, e)| c != 0.0 && e <= END_EXPONENT_CAP)
        .collect();
    items.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (c, e) in items {
        match merged.last_mut() {
            Some(last) if e - last.1 <= 1e-9 => last.0 += c,
            _ => merged.push((c, e)),
        }
    }
    merged.retain(|&(c, _)| c != 0.0);
    merged.truncate(END_TERM_CAP);
    merged
}

/// Zeta-weighted end profile of one operand, in grid units
/// (`c_grid = c·h^α` so that `f[k] ≈ Σ c_grid k^α` near zero).
struct EndProfile {
    /// Grid-unit `(coefficient, exponent)` pairs.
    terms: Vec<(f64, f64)>,
    /// `Σ c_grid ζ(−α)`.
    zeta0: f64,
    /// `Σ c_grid ζ(−α−1)`.
    zeta1: f64,
}

fn end_profile(f: &GridFunction) -> EndProfile {
    let h = f.step;
    let terms: Vec<(f64, f64)> = smooth_or_declared(f)
        .into_iter()
        .filter(|&(c, e)| c != 0.0 && e <= END_EXPONENT_CAP)
        .map(|(c, e)| (c * h.powf(e), e))
        .collect();
    let zeta0 = terms.iter().map(|&(c, e)| c * riemann_zeta(-e)).sum();
    let zeta1 = terms.iter().map(|&(c, e)| c * riemann_zeta(-e - 1.0)).sum();
    EndProfile { terms, zeta0, zeta1 }
}

/// Lattice sum `Σ_{k=1}^{m−1} f[m−k]·g[k]` with a fixed four-accumulator
/// association, so results are bit-stable across runs and thread counts.
fn lattice_dot(f: &[f64], g: &[f64], m: usize) -> f64 {
    let (mut a0, mut a1, mut a2, mut a3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut j = 1usize;
    while j + 4 <= m {
        a0 += f[j] * g[m - j];
        a1 += f[j + 1] * g[m - j - 1];
        a2 += f[j + 2] * g[m - j - 2];
        a3 += f[j + 3] * g[m - j - 3];
        j += 4;
    }
    while j < m {
        a0 += f[j] * g[m - j];
        j += 1;
    }
    (a0 + a1) + (a2 + a3)
}

/// Volterra convolution `(f*g)(t) = ∫₀ᵗ f(t−u)g(u)du` on the shared grid.
///
/// Endpoint corrections: with `f[k] ≈ Σᵢ aᵢ k^{αᵢ}` and
/// `g[k] ≈ Σⱼ bⱼ k^{βⱼ}` near zero (grid units),
///
/// ```text
/// out[m]/h = Σ_{k=1}^{m−1} f[m−k]g[k]
///          − (Σⱼ bⱼ ζ(−βⱼ))·f[m] − (Σᵢ aᵢ ζ(−αᵢ))·g[m]
///          − (Σⱼ bⱼ ζ(−βⱼ−1))·f'[m] − (Σᵢ aᵢ ζ(−αᵢ−1))·g'[m]
/// ```
///
/// where `f'[m]` is the one-sided difference of `k ↦ f[m−k]` at `k = 0`.
/// For smooth operands this is the trapezoid rule with its first
/// Euler–Maclaurin derivative term; power-law ends get their exact
/// zeta-function weights instead.
pub fn conv_scalar(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    check_same_grid(f, g)?;
    let h = f.step;
    let n = f.values.len();
    let pf = end_profile(f);
    let pg = end_profile(g);

    let mut out = vec![0.0f64; n];
    if n > 1 {
        // First cell by term-pair product integration, exact on power pairs.
        let mut first = 0.0;
        for &(a, ea) in &pf.terms {
            for &(b, eb) in &pg.terms {
                first += a * b * beta_fn(ea + 1.0, eb + 1.0)?;
            }
        }
        out[1] = h * first;
    }
    let fv = &f.values;
    let gv = &g.values;
    for m in 2..n {
        let s = lattice_dot(fv, gv, m);
        let (dphi, dpsi) = if m >= 3 {
            (
                -(3.0 * fv[m] - 4.0 * fv[m - 1] + fv[m - 2]) / 2.0,
                -(3.0 * gv[m] - 4.0 * gv[m - 1] + gv[m - 2]) / 2.0,
            )
        } else {
            (-(fv[m] - fv[m - 1]), -(gv[m] - gv[m - 1]))
        };
        out[m] = h * (s - pg.zeta0 * fv[m] - pf.zeta0 * gv[m] - pg.zeta1 * dphi - pf.zeta1 * dpsi);
    }

    // Exact end behaviour of the output: termwise Beta products.
    let mut end = Vec::new();
    for &(a, ea) in &smooth_or_declared(f) {
        for &(b, eb) in &smooth_or_declared(g) {
            if a != 0.0 && b != 0.0 {
                end.push((a * b * beta_fn(ea + 1.0, eb + 1.0)?, ea + eb + 1.0));
            }
        }
    }
    GridFunction::with_end_terms(h, out, merge_end_terms(end.into_iter()))
}

/// Square matrix of grid functions on one shared grid, row-major.
#[derive(Debug, Clone)]
pub struct MatrixGridFunction {
    dim: usize,
    entries: Vec<GridFunction>,
}

impl MatrixGridFunction {
    pub fn new(dim: usize, entries: Vec<GridFunction>) -> Result<Self> {
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
        for e in &entries[1..] {
            check_same_grid(&entries[0], e)?;
        }
        Ok(MatrixGridFunction { dim, entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> GridFunction) -> Result<Self> {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        MatrixGridFunction::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.entries[0].step()
    }

    pub fn len(&self) -> usize {
        self.entries[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.entries[0].horizon()
    }

    pub fn entry(&self, row: usize, col: usize) -> &GridFunction {
        &self.entries[row * self.dim + col]
    }

    pub fn transpose(&self) -> MatrixGridFunction {
        MatrixGridFunction::from_fn(self.dim, |i, j| self.entry(j, i).clone()).unwrap()
    }

    /// Writes `t,e_1_1,…,e_d_d` rows (row-major entries), 17 significant
    /// digits.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let n = self.len();
        let mut out = String::with_capacity(n * (self.dim * self.dim + 1) * 24 + 64);
        out.push('t');
        for i in 1..=self.dim {
            for j in 1..=self.dim {
                let _ = write!(out, ",e_{i}_{j}");
            }
        }
        out.push('\n');
        for k in 0..n {
            let _ = write!(out, "{:.16e}", self.entries[0].time(k));
            for e in &self.entries {
                let _ = write!(out, ",{:.16e}", e.value(k));
            }
            out.push('\n');
        }
        std::fs::write(path, out)
    }

    /// Reads a file written by [`MatrixGridFunction::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Numeric(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Numeric(format!("{} is empty", path.display())))?;
        let cols = header.split(',').count();
        let dim_sq = cols.saturating_sub(1);
        let dim = (dim_sq as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != dim_sq {
            return Err(Error::Numeric(format!(
                "{} header implies a non-square entry count {dim_sq}",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); dim_sq];
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            times.push(parse_field(fields.next(), lineno + 1, path)?);
            for col in columns.iter_mut() {
                col.push(parse_field(fields.next(), lineno + 1, path)?);
            }
        }
        let step = grid_from_times(&times, path)?;
        let entries = columns
            .into_iter()
            .map(|v| GridFunction::from_values(step, v))
            .collect::<Result<Vec<_>>>()?;
        MatrixGridFunction::new(dim, entries)
    }
}

/// Matrix convolution `(G*H)_{i,j} = Σ_k G_{i,k} * H_{k,j}`.
///
/// Entries are evaluated in parallel; each entry's inner sum keeps a fixed
/// order, so the result is identical to sequential evaluation.
pub fn conv_matrix(g: &MatrixGridFunction, h: &MatrixGridFunction) -> Result<MatrixGridFunction> {
    if g.dim != h.dim {
        return Err(Error::DimMismatch(format!("dimensions {} and {} differ", g.dim, h.dim)));
    }
    check_same_grid(&g.entries[0], &h.entries[0])?;
    let d = g.dim;
    let entries: Vec<GridFunction> = (0..d * d)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / d, idx % d);
            let mut acc: Option<GridFunction> = None;
            for k in 0..d {
                let term = conv_scalar(g.entry(i, k), h.entry(k, j))?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => a.add(&term)?,
                });
            }
            Ok(acc.expect("dim >= 1"))
        })
        .collect::<Result<Vec<_>>>()?;
    MatrixGridFunction::new(d, entries)
}

/// Convolution determinant `Σ_σ sgn(σ) Φ_{1,σ(1)} * ⋯ * Φ_{d,σ(d)}`.
///
/// Dimensions up to 5 run the permutation sum with shared row-prefix
/// convolutions and zero-entry pruning; larger dimensions switch to a
/// cofactor recursion memoized over column subsets, which needs
/// `O(d·2^d)` convolutions instead of `O(d!)`.
pub fn conv_determinant(phi: &MatrixGridFunction) -> Result<GridFunction> {
    let d = phi.dim;
    if d == 1 {
        return Ok(phi.entry(0, 0).clone());
    }
    if d <= 5 {
        let mut acc = GridFunction::zeros(phi.step(), phi.len())?;
        let mut used = vec![false; d];
        det_dfs(phi, 0, &mut used, None, 1.0, &mut acc)?;
        Ok(acc)
    } else {
        let mut memo: std::collections::HashMap<u32, GridFunction> =
            std::collections::HashMap::new();
        let full = (1u32 << d) - 1;
        det_cofactor(phi, full, &mut memo)
    }
}

fn det_dfs(
    phi: &MatrixGridFunction,
    row: usize,
    used: &mut [bool],
    prefix: Option<&GridFunction>,
    sign: f64,
    acc: &mut GridFunction,
) -> Result<()> {
    let d = phi.dim;
    if row == d {
        if let Some(p) = prefix {
            *acc = acc.add(&p.scale(sign))?;
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
        let inversions = used[..col].iter().filter(|&&u| u).count();
        let sign_here = if (col - inversions) % 2 == 1 { -sign } else { sign };
        let next = match prefix {
            None => entry.clone(),
            Some(p) => conv_scalar(p, entry)?,
        };
        used[col] = true;
        det_dfs(phi, row + 1, used, Some(&next), sign_here, acc)?;
        used[col] = false;
    }
    Ok(())
}

/// Determinant of the submatrix formed by the last `popcount(mask)` rows
/// and the columns in `mask`, expanded along its first row.
fn det_cofactor(
    phi: &MatrixGridFunction,
    mask: u32,
    memo: &mut std::collections::HashMap<u32, GridFunction>,
) -> Result<GridFunction> {
    if let Some(hit) = memo.get(&mask) {
        return Ok(hit.clone());
    }
    let d = phi.dim;
    let k = mask.count_ones() as usize;
    let row = d - k;
    let result = if k == 1 {
        let col = mask.trailing_zeros() as usize;
        phi.entry(row, col).clone()
    } else {
        let mut acc = GridFunction::zeros(phi.step(), phi.len())?;
        let mut position = 0usize;
        for col in 0..d {
            if mask & (1 << col) == 0 {
                continue;
            }
            let entry = phi.entry(row, col);
            if !entry.is_zero() {
                let minor = det_cofactor(phi, mask & !(1 << col), memo)?;
                let signed = conv_scalar(entry, &minor)?;
                let sign = if position % 2 == 0 { 1.0 } else { -1.0 };
                acc = acc.add(&signed.scale(sign))?;
            }
            position += 1;
        }
        acc
    };
    memo.insert(mask, result.clone());
    Ok(result)
}

/// Convolution adjugate: entry `(r, i)` is the `(i, r)` convolution
/// cofactor, the signed determinant of the minor with row `i` and column
/// `r` removed. In dimension 1 there is no convolution identity element,
/// so no adjugate exists.
pub fn conv_adjugate(phi: &MatrixGridFunction) -> Result<MatrixGridFunction> {
    let d = phi.dim;
    if d < 2 {
        return Err(Error::Unsupported(
            "convolution adjugate needs dimension at least 2; the convolution algebra has no unit"
                .into(),
        ));
    }
    let indices: Vec<(usize, usize)> =
        (0..d).flat_map(|r| (0..d).map(move |i| (r, i))).collect();
    let entries: Vec<GridFunction> = indices
        .into_par_iter()
        .map(|(r, i)| {
            let minor = MatrixGridFunction::from_fn(d - 1, |a, b| {
                let src_row = if a < i { a } else { a + 1 };
                let src_col = if b < r { b } else { b + 1 };
                phi.entry(src_row, src_col).clone()
            })?;
            let det = conv_determinant(&minor)?;
            let sign = if (i + r) % 2 == 0 { 1.0 } else { -1.0 };
            Ok(det.scale(sign))
        })
        .collect::<Result<Vec<_>>>()?;
    MatrixGridFunction::new(d, entries)
}

/// Result of a numerical Laplace transform over the finite grid horizon.
#[derive(Debug, Clone, Copy)]
pub struct LaplaceValue {
    pub value: f64,
    /// Set when `e^{−s·horizon}·max|f|` exceeds `1e−8`, meaning the
    /// discarded tail may matter at the queried accuracy.
    pub truncated: bool,
}

/// `∫₀^horizon e^{−st} f(t) dt` with the same zero-end correction as
/// [`conv_scalar`] and a trapezoid weight at the far end.
pub fn laplace(f: &GridFunction, s: f64) -> Result<LaplaceValue> {
    if !(s >= 0.0) {
        return Err(Error::invalid("s", format!("Laplace abscissa must be nonnegative, got {s}")));
    }
    let h = f.step;
    let n = f.values.len();
    let pf = end_profile(f);
    let decay = (-s * h).exp();
    // Plain lattice sum with half weight at the truncation end.
    let mut sum = 0.0;
    let mut weight = decay;
    for k in 1..n {
        let w = if k == n - 1 { 0.5 } else { 1.0 };
        sum += w * weight * f.values[k];
        weight *= decay;
    }
    // Zero-end correction against the analytic factor e^{−st}.
    let phi0 = 1.0;
    let dphi = -(3.0 - 4.0 * decay + decay * decay) / 2.0;
    let value = h * (sum - pf.zeta0 * phi0 - pf.zeta1 * dphi);
    let max_abs = f.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let truncated = (-s * f.horizon()).exp() * max_abs > 1e-8;
    Ok(LaplaceValue { value, truncated })
}
