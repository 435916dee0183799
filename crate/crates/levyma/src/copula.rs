//! Lévy copulas: dependence structures for multivariate jump measures.
//!
//! A Lévy copula plays the role a distributional copula plays for
//! probability laws, but for tail integrals of Lévy measures: it couples
//! one-dimensional marginal tail integrals into a multivariate tail
//! integral. The objects here are extended-real functions on `[-inf, inf]^d`
//! that are grounded (zero when any argument is zero), d-increasing
//! (nonnegative rectangle increments), and have uniform one-dimensional
//! margins.
//!
//! The module provides an Archimedean family built from a strictly
//! increasing generator, rectangle increments via the inclusion-exclusion
//! corner sum, lower-dimensional margins via a numerically probed limit,
//! marginal tail integrals, the coupled jump measure they induce, and a
//! randomized check of strict d-increase.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::levymeasure::{LevyModel, Marginal1d};
use crate::streams::{substream, StreamKind};
use crate::{Error, Result};

/// Bisection bracket edge for generator inversion; the inverse lives in
/// the open interval `(-1, 1)`.
const INVERT_EDGE: f64 = 1.0 - 1e-15;
/// Absolute bisection tolerance for generator inversion.
const INVERT_TOL: f64 = 1e-13;
/// Near and far anchor points for the margin limit probe.
const MARGIN_NEAR: f64 = -1e6;
const MARGIN_FAR: f64 = -1e8;
/// Relative agreement required between the far anchor and the
/// extrapolated limit.
const MARGIN_RTOL: f64 = 1e-6;
/// Recursion depth of the rejection-free part of the annulus sampler.
const SAMPLER_DEPTH: usize = 20;

// ---------------------------------------------------------------------------
// Generators and copulas
// ---------------------------------------------------------------------------

/// Strictly increasing generator on `[-1, 1]` with `phi(0) = 0` and
/// `phi(±1) = ±inf`.
#[derive(Clone)]
pub struct Generator {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fm, "Generator({})", self.name)
    }
}

impl Generator {
    pub fn new(name: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Generator { name: name.into(), eval: Arc::new(eval) }
    }

    /// The ratio generator `x / (1 - |x|)`, strict with all orders of
    /// d-increase.
    pub fn ratio() -> Self {
        Generator::new("ratio", |x: f64| {
            if x >= 1.0 {
                f64::INFINITY
            } else if x <= -1.0 {
                f64::NEG_INFINITY
            } else {
                x / (1.0 - x.abs())
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

#[derive(Clone)]
enum CopulaKind {
    Archimedean(Generator),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

/// A Lévy copula on `[-inf, inf]^d`.
#[derive(Clone)]
pub struct LevyCopula {
    dim: usize,
    kind: CopulaKind,
}

impl std::fmt::Debug for LevyCopula {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            CopulaKind::Archimedean(g) => write!(fm, "LevyCopula(dim={}, archimedean {})", self.dim, g.name),
            CopulaKind::Custom(_) => write!(fm, "LevyCopula(dim={}, custom)", self.dim),
        }
    }
}

/// Archimedean Lévy copula `C(x) = phi(prod_i phitilde^{-1}(x_i))` with
/// `phitilde(t) = 2^{d-2} (phi(t) - phi(-t))`.
///
/// The construction validates the generator on a probe grid: `phi(0) = 0`,
/// strict increase, and blow-up toward the interval ends.
pub fn archimedean_copula(dim: usize, generator: Generator) -> Result<LevyCopula> {
    if dim < 2 {
        return Err(Error::invalid("dim", "archimedean copulas need dimension at least 2"));
    }
    let g0 = generator.eval(0.0);
    if !(g0.abs() <= 1e-12) {
        return Err(Error::invalid("generator", format!("phi(0) = {g0}, expected 0")));
    }
    let probes = 400;
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=probes {
        let x = -1.0 + 2.0 * k as f64 / probes as f64;
        let v = generator.eval(x.clamp(-INVERT_EDGE, INVERT_EDGE));
        if !(v > prev) {
            return Err(Error::invalid(
                "generator",
                format!("not strictly increasing near x = {x}"),
            ));
        }
        prev = v;
    }
    if generator.eval(INVERT_EDGE) < 1e6 || generator.eval(-INVERT_EDGE) > -1e6 {
        return Err(Error::invalid("generator", "must blow up toward the interval ends"));
    }
    Ok(LevyCopula { dim, kind: CopulaKind::Archimedean(generator) })
}

impl LevyCopula {
    /// Copula from a raw evaluator on `[-inf, inf]^d`. The evaluator is
    /// trusted: no copula properties are verified at construction.
    pub fn custom(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "need dimension at least 1"));
        }
        Ok(LevyCopula { dim, kind: CopulaKind::Custom(Arc::new(f)) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluate at a point of `[-inf, inf]^d`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "point of length {} for a copula of dimension {}",
                x.len(),
                self.dim
            )));
        }
        match &self.kind {
            CopulaKind::Custom(f) => Ok(f(x)),
            CopulaKind::Archimedean(g) => {
                // Groundedness is exact: any zero argument gives zero.
                if x.iter().any(|&v| v == 0.0) {
                    return Ok(0.0);
                }
                let mut t = 1.0f64;
                for &xi in x {
                    t *= invert_odd_part(g, self.dim, xi);
                }
                Ok(g.eval(t.clamp(-1.0, 1.0)))
            }
        }
    }

    /// Rectangle increment over `prod (a_i, b_i]`; nonnegative for a
    /// d-increasing evaluator.
    pub fn increment(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::DimMismatch("rectangle endpoints".into()));
        }
        let mut corner = vec![0.0; self.dim];
        let mut sum = 0.0;
        for mask in 0..(1u32 << self.dim) {
            let mut ones = 0;
            for i in 0..self.dim {
                if mask >> i & 1 == 1 {
                    corner[i] = b[i];
                    ones += 1;
                } else {
                    corner[i] = a[i];
                }
            }
            let sign = if (self.dim - ones) % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * self.eval(&corner)?;
        }
        Ok(sum)
    }
}

/// Inverse of `phitilde(t) = 2^{d-2} (phi(t) - phi(-t))` by bisection;
/// infinite arguments map to the interval ends.
fn invert_odd_part(g: &Generator, dim: usize, x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return -1.0;
    }
    let scale = 2.0f64.powi(dim as i32 - 2);
    let odd = |t: f64| scale * (g.eval(t) - g.eval(-t));
    let (mut lo, mut hi) = (-INVERT_EDGE, INVERT_EDGE);
    // phitilde is odd and strictly increasing, so the root is bracketed.
    while hi - lo > INVERT_TOL {
        let mid = 0.5 * (lo + hi);
        if odd(mid) < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Rectangle increments of raw evaluators
// ---------------------------------------------------------------------------

/// Inclusion-exclusion rectangle increment of an arbitrary evaluator over
/// `prod (a_i, b_i]`: the corner sum with sign `(-1)^(d - #upper corners)`.
pub fn rect_increment(f: &dyn Fn(&[f64]) -> f64, a: &[f64], b: &[f64]) -> Result<f64> {
    let d = a.len();
    if b.len() != d || d == 0 {
        return Err(Error::DimMismatch("rectangle endpoints".into()));
    }
    if d > 30 {
        return Err(Error::Unsupported("rectangle increments beyond dimension 30".into()));
    }
    if a.iter().zip(b).any(|(x, y)| x > y) {
        return Err(Error::invalid("rectangle", "needs a <= b componentwise"));
    }
    let mut corner = vec![0.0; d];
    let mut sum = 0.0;
    for mask in 0..(1u32 << d) {
        let mut ones = 0;
        for i in 0..d {
            if mask >> i & 1 == 1 {
                corner[i] = b[i];
                ones += 1;
            } else {
                corner[i] = a[i];
            }
        }
        let sign = if (d - ones) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * f(&corner);
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Margins
// ---------------------------------------------------------------------------

/// Lower-dimensional margin of a copula: the complement coordinates are sent
/// to `-inf` through a probed limit.
pub struct Margin<'a> {
    copula: &'a LevyCopula,
    keep: Vec<usize>,
}

/// Margin onto the coordinates in `keep` (sorted, deduplicated).
pub fn margin<'a>(copula: &'a LevyCopula, keep: &[usize]) -> Result<Margin<'a>> {
    if keep.is_empty() {
        return Err(Error::invalid("keep", "need at least one coordinate"));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.last().copied().unwrap() >= copula.dim() {
        return Err(Error::invalid("keep", "coordinate out of range"));
    }
    Ok(Margin { copula, keep })
}

impl Margin<'_> {
    /// Evaluate the margin at a point indexed by the kept coordinates.
    ///
    /// The defining limit sends the complement coordinates to `-inf`; it is
    /// probed at two anchors and completed by extrapolation in `1/u`. When
    /// the probe shows no sign of convergence the margin is reported as
    /// divergent, as happens for evaluators that are not grounded copulas.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.keep.len() {
            return Err(Error::DimMismatch("margin point".into()));
        }
        if self.keep.len() == self.copula.dim() {
            return self.copula.eval(x);
        }
        let near = self.corner_sum(x, MARGIN_NEAR)?;
        let far = self.corner_sum(x, MARGIN_FAR)?;
        if !near.is_finite() || !far.is_finite() {
            return Err(Error::Divergent("margin limit probe is non-finite".into()));
        }
        // One Richardson step for a 1/u error model with anchor ratio 100.
        let limit = far + (far - near) / 99.0;
        if (limit - far).abs() > MARGIN_RTOL * limit.abs().max(1.0) {
            return Err(Error::Divergent(format!(
                "margin limit probe has not converged: {near} at u = {MARGIN_NEAR}, {far} at u = {MARGIN_FAR}"
            )));
        }
        Ok(limit)
    }

    /// Signed corner sum over complement assignments to `{u, +inf}`.
    fn corner_sum(&self, x: &[f64], u: f64) -> Result<f64> {
        let d = self.copula.dim();
        let rest: Vec<usize> = (0..d).filter(|i| !self.keep.contains(i)).collect();
        let mut point = vec![0.0; d];
        for (k, &i) in self.keep.iter().enumerate() {
            point[i] = x[k];
        }
        let mut sum = 0.0;
        for mask in 0..(1u32 << rest.len()) {
            let mut low = 0;
            for (k, &i) in rest.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    point[i] = u;
                    low += 1;
                } else {
                    point[i] = f64::INFINITY;
                }
            }
            let sign = if low % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * self.copula.eval(&point)?;
        }
        Ok(sum)
    }
}

// ---------------------------------------------------------------------------
// Tail integrals and coupled measures
// ---------------------------------------------------------------------------

/// Marginal tail integral: `J(x) = lambda((x, inf))` for `x > 0` and
/// `J(x) = -lambda((-inf, x])` for `x < 0`.
pub fn tail_integral(marginal: &Marginal1d, x: f64) -> Result<f64> {
    marginal.tail(x)
}

/// A jump measure specified by marginal tail integrals and a coupling
/// Lévy copula: the tail integral of the measure is the copula composed
/// with the marginal tail integrals.
#[derive(Clone, Debug)]
pub struct CopulaMeasure {
    copula: LevyCopula,
    marginals: Vec<Marginal1d>,
}

/// Couple one-dimensional marginals through a Lévy copula.
pub fn copula_measure(copula: LevyCopula, marginals: Vec<Marginal1d>) -> Result<LevyModel> {
    if marginals.len() != copula.dim() {
        return Err(Error::DimMismatch(format!(
            "{} marginals for a copula of dimension {}",
            marginals.len(),
            copula.dim()
        )));
    }
    Ok(crate::levymeasure::copula_defined(CopulaMeasure { copula, marginals }))
}

impl CopulaMeasure {
    pub fn dim(&self) -> usize {
        self.copula.dim()
    }

    pub fn copula(&self) -> &LevyCopula {
        &self.copula
    }

    pub fn marginals(&self) -> &[Marginal1d] {
        &self.marginals
    }

    /// Mass of the half-open box `prod (lo_i, hi_i]`, which must not cross
    /// a coordinate hyperplane. The box is translated to tail coordinates
    /// and evaluated as a copula rectangle increment; in dimension one this
    /// telescopes to a difference of tail integrals.
    pub fn rect_mass(&self, lo: &[f64], hi: &[f64]) -> Result<f64> {
        let d = self.dim();
        if lo.len() != d || hi.len() != d {
            return Err(Error::DimMismatch("box endpoints".into()));
        }
        for i in 0..d {
            if lo[i] > hi[i] {
                return Err(Error::invalid("box", "needs lo <= hi componentwise"));
            }
            if lo[i] == hi[i] {
                return Ok(0.0);
            }
            // Same-sign constraint; tail coordinates are undefined at zero.
            if !(lo[i] * hi[i] > 0.0) {
                return Err(Error::invalid(
                    "box",
                    format!("coordinate {i} spans ({}, {}], which crosses a hyperplane", lo[i], hi[i]),
                ));
            }
        }
        // Tail coordinates reverse orientation: the upper evaluation corner
        // comes from lo and the lower one from hi.
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for i in 0..d {
            let upper = self.marginals[i].tail(lo[i])?;
            let lower = self.marginals[i].tail(hi[i])?;
            // Monotonicity can be lost to quadrature noise on thin boxes.
            a[i] = lower.min(upper);
            b[i] = upper;
        }
        if a.iter().zip(&b).any(|(x, y)| x == y) {
            return Ok(0.0);
        }
        self.copula.increment(&a, &b)
    }

    /// Draw one jump from the normalized restriction to the annulus
    /// `inner <= |x| <= outer`.
    ///
    /// Recursive rectangle subdivision with mass-proportional descent over
    /// the same-sign orthant boxes of `[-outer, outer]^d`, followed by a
    /// uniform draw in the final cell and annulus rejection. Slabs within
    /// `1e-3 * inner` of a coordinate hyperplane are excluded, which biases
    /// the law by at most their mass.
    pub fn sample_annulus(&self, inner: f64, outer: f64, rng: &mut ChaCha12Rng) -> Result<DVector<f64>> {
        if !(inner > 0.0) || inner > outer || !outer.is_finite() {
            return Err(Error::invalid("annulus", format!("[{inner}, {outer}]")));
        }
        let d = self.dim();
        let floor = 1e-3 * inner;
        for _ in 0..4096 {
            // Orthant selection, mass-proportional.
            let mut boxes = Vec::with_capacity(1 << d);
            let mut masses = Vec::with_capacity(1 << d);
            for pattern in 0..(1u32 << d) {
                let mut lo = vec![0.0; d];
                let mut hi = vec![0.0; d];
                for i in 0..d {
                    if pattern >> i & 1 == 1 {
                        lo[i] = floor;
                        hi[i] = outer;
                    } else {
                        lo[i] = -outer;
                        hi[i] = -floor;
                    }
                }
                let m = self.rect_mass(&lo, &hi)?.max(0.0);
                boxes.push((lo, hi));
                masses.push(m);
            }
            let total: f64 = masses.iter().sum();
            if !(total > 0.0) {
                return Err(Error::invalid("sample region", "zero mass"));
            }
            let mut target = rng.gen::<f64>() * total;
            let mut pick = 0;
            for (k, m) in masses.iter().enumerate() {
                if target <= *m {
                    pick = k;
                    break;
                }
                target -= m;
            }
            let (mut lo, mut hi) = boxes[pick].clone();

            // Mass-proportional bisection along the widest coordinate.
            for _ in 0..SAMPLER_DEPTH {
                let (mut widest, mut width) = (0, 0.0);
                for i in 0..d {
                    let w = hi[i] - lo[i];
                    if w > width {
                        width = w;
                        widest = i;
                    }
                }
                let mid = 0.5 * (lo[widest] + hi[widest]);
                let mut hi_left = hi.clone();
                hi_left[widest] = mid;
                let m_left = self.rect_mass(&lo, &hi_left)?.max(0.0);
                let mut lo_right = lo.clone();
                lo_right[widest] = mid;
                let m_right = self.rect_mass(&lo_right, &hi)?.max(0.0);
                let m_tot = m_left + m_right;
                if !(m_tot > 0.0) {
                    break;
                }
                if rng.gen::<f64>() * m_tot <= m_left {
                    hi[widest] = mid;
                } else {
                    lo[widest] = mid;
                }
            }

            // Uniform draw in the final cell, then annulus rejection.
            let x = DVector::from_fn(d, |i, _| lo[i] + rng.gen::<f64>() * (hi[i] - lo[i]));
            let n = x.norm();
            if n >= inner && n <= outer {
                return Ok(x);
            }
        }
        Err(Error::Numeric("annulus rejection exhausted on the copula sampler".into()))
    }
}

// ---------------------------------------------------------------------------
// Strict d-increase
// ---------------------------------------------------------------------------

/// Verdict of the randomized strict d-increase check.
#[derive(Clone, Debug)]
pub enum IncreaseVerdict {
    Holds { trials: usize, min_increment: f64 },
    Fails { a: Vec<f64>, b: Vec<f64>, increment: f64 },
}

/// Probe strict d-increase on random nondegenerate rectangles inside
/// `prod (lo_i, hi_i)`: every rectangle increment must be strictly
/// positive. The first nonpositive increment is returned as a witness.
pub fn check_strict_increasing(
    copula: &LevyCopula,
    trials: usize,
    lo: &[f64],
    hi: &[f64],
    seed: u64,
) -> Result<IncreaseVerdict> {
    let d = copula.dim();
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimMismatch("probe box endpoints".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::invalid("probe box", "needs lo < hi componentwise"));
    }
    let mut rng = substream(seed, StreamKind::Auxiliary, 17);
    let mut min_increment = f64::INFINITY;
    for _ in 0..trials {
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for i in 0..d {
            let p = lo[i] + rng.gen::<f64>() * (hi[i] - lo[i]);
            let q = lo[i] + rng.gen::<f64>() * (hi[i] - lo[i]);
            a[i] = p.min(q);
            b[i] = p.max(q);
        }
        if a.iter().zip(&b).any(|(x, y)| x == y) {
            continue;
        }
        let inc = copula.increment(&a, &b)?;
        if !(inc > 0.0) {
            return Ok(IncreaseVerdict::Fails { a, b, increment: inc });
        }
        min_increment = min_increment.min(inc);
    }
    Ok(IncreaseVerdict::Holds { trials, min_increment })
}

// ---------------------------------------------------------------------------
// Reference copulas
// ---------------------------------------------------------------------------

/// Independence Lévy copula: mass on the coordinate axes only. It is
/// d-increasing but not strictly, so finite rectangles have zero increment.
pub fn independence_copula(dim: usize) -> Result<LevyCopula> {
    if dim < 2 {
        return Err(Error::invalid("dim", "need dimension at least 2"));
    }
    LevyCopula::custom(dim, move |x: &[f64]| {
        let mut sum = 0.0;
        for i in 0..x.len() {
            let others_infinite = (0..x.len()).all(|j| j == i || x[j] == f64::INFINITY);
            if others_infinite {
                sum += x[i];
            }
        }
        sum
    })
}

/// Complete positive dependence on the positive quadrant:
/// `C(x) = min_i max(x_i, 0)`. d-increasing but not strictly.
pub fn comonotone_copula(dim: usize) -> Result<LevyCopula> {
    if dim < 2 {
        return Err(Error::invalid("dim", "need dimension at least 2"));
    }
    LevyCopula::custom(dim, move |x: &[f64]| {
        x.iter().map(|&v| v.max(0.0)).fold(f64::INFINITY, f64::min)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levymeasure::{check_jumps, mass, JumpsStatus, Region};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ratio2() -> LevyCopula {
        archimedean_copula(2, Generator::ratio()).unwrap()
    }

    fn two_sided_exp() -> Marginal1d {
        Marginal1d::density(|x: f64| (-x.abs()).exp(), f64::NEG_INFINITY, f64::INFINITY).unwrap()
    }

    #[test]
    fn rect_increment_of_product_form() {
        // F(x, y) = x y has second difference (b1-a1)(b2-a2).
        let f = |x: &[f64]| x[0] * x[1];
        let inc = rect_increment(&f, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(inc, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rect_increment_one_dimensional_telescopes() {
        let f = |x: &[f64]| x[0] * x[0] * x[0];
        let inc = rect_increment(&f, &[1.0], &[2.0]).unwrap();
        assert_abs_diff_eq!(inc, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn archimedean_is_grounded_exactly() {
        let c = ratio2();
        for v in [-5.0, -1.0, 0.5, 3.0, f64::INFINITY] {
            assert_eq!(c.eval(&[v, 0.0]).unwrap(), 0.0);
            assert_eq!(c.eval(&[0.0, v]).unwrap(), 0.0);
        }
    }

    #[test]
    fn archimedean_margins_are_uniform() {
        let c = ratio2();
        let m0 = margin(&c, &[0]).unwrap();
        let m1 = margin(&c, &[1]).unwrap();
        for x in [-10.0, -1.0, -0.1, 0.1, 1.0, 10.0] {
            assert_abs_diff_eq!(m0.eval(&[x]).unwrap(), x, epsilon = 1e-9);
            assert_abs_diff_eq!(m1.eval(&[x]).unwrap(), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn three_dimensional_margins_are_uniform() {
        let c = archimedean_copula(3, Generator::ratio()).unwrap();
        let m = margin(&c, &[1]).unwrap();
        for x in [-1.0, 0.5, 4.0] {
            assert_abs_diff_eq!(m.eval(&[x]).unwrap(), x, epsilon = 1e-8);
        }
        // Two-dimensional margin of the three-dimensional copula.
        let m01 = margin(&c, &[0, 1]).unwrap();
        let v = m01.eval(&[1.0, 1.0]).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn full_margin_is_the_copula() {
        let c = ratio2();
        let m = margin(&c, &[0, 1]).unwrap();
        assert_eq!(m.eval(&[1.0, 2.0]).unwrap(), c.eval(&[1.0, 2.0]).unwrap());
    }

    #[test]
    fn product_form_margin_diverges() {
        let c = LevyCopula::custom(2, |x: &[f64]| x[0] * x[1]).unwrap();
        let m = margin(&c, &[0]).unwrap();
        assert!(matches!(m.eval(&[1.0]), Err(Error::Divergent(_))));
    }

    #[test]
    fn archimedean_increments_strictly_positive() {
        let c = ratio2();
        let verdict =
            check_strict_increasing(&c, 10_000, &[-50.0, -50.0], &[50.0, 50.0], 42).unwrap();
        match verdict {
            IncreaseVerdict::Holds { trials, min_increment } => {
                assert_eq!(trials, 10_000);
                assert!(min_increment > 0.0);
            }
            IncreaseVerdict::Fails { a, b, increment } => {
                panic!("unexpected failure on ({a:?}, {b:?}]: {increment}")
            }
        }
    }

    #[test]
    fn independence_copula_fails_strict_increase() {
        let c = independence_copula(2).unwrap();
        let verdict =
            check_strict_increasing(&c, 1000, &[-50.0, -50.0], &[50.0, 50.0], 42).unwrap();
        let IncreaseVerdict::Fails { increment, .. } = verdict else {
            panic!("independence copula should fail strict d-increase");
        };
        assert_eq!(increment, 0.0);
    }

    #[test]
    fn independence_copula_margins_are_uniform() {
        let c = independence_copula(2).unwrap();
        let m = margin(&c, &[0]).unwrap();
        for x in [-3.0, 0.25, 7.0] {
            assert_abs_diff_eq!(m.eval(&[x]).unwrap(), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn comonotone_copula_fails_strict_increase() {
        let c = comonotone_copula(2).unwrap();
        let verdict =
            check_strict_increasing(&c, 1000, &[-50.0, -50.0], &[50.0, 50.0], 42).unwrap();
        assert!(matches!(verdict, IncreaseVerdict::Fails { .. }));
    }

    #[test]
    fn non_monotone_generator_rejected() {
        let g = Generator::new("sin", |x: f64| (6.0 * x).sin());
        assert!(archimedean_copula(2, g).is_err());
        let g = Generator::new("shifted", |x: f64| x / (1.0 - x.abs()) + 0.5);
        assert!(archimedean_copula(2, g).is_err());
        let g = Generator::new("bounded", |x: f64| x);
        assert!(archimedean_copula(2, g).is_err());
    }

    #[test]
    fn tail_integral_examples() {
        let m = Marginal1d::density(|u: f64| (-u).exp(), 0.0, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(tail_integral(&m, 1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-9);
        assert_eq!(tail_integral(&m, -1.0).unwrap(), 0.0);
        let a = Marginal1d::atoms(vec![(1.0, 2.0)]).unwrap();
        assert_eq!(tail_integral(&a, 0.5).unwrap(), 2.0);
        assert_eq!(tail_integral(&a, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn coupled_measure_one_dimensional_telescope() {
        let c = LevyCopula::custom(1, |x: &[f64]| x[0]).unwrap();
        let m = Marginal1d::atoms(vec![(0.5, 1.0), (1.0, 2.0), (2.0, 0.25), (-1.0, 5.0)]).unwrap();
        let model = copula_measure(c, vec![m.clone()]).unwrap();
        for (a, b) in [(0.4, 0.6), (0.25, 1.0), (0.75, 2.5), (1.0, 2.0), (-1.5, -0.25)] {
            let box_mass = mass(&model, &Region::Rect { lo: vec![a], hi: vec![b] }).unwrap().value;
            let want = m.tail(a).unwrap() - m.tail(b).unwrap();
            assert_abs_diff_eq!(box_mass, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn coupled_measure_boxes_in_all_orthants() {
        let model = copula_measure(ratio2(), vec![two_sided_exp(), two_sided_exp()]).unwrap();
        let eps = 1.0;
        let s = eps / 3.0f64.sqrt();
        for (sx, sy) in [(1.0f64, 1.0f64), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let lo = vec![sx.min(sx * 0.5), sy.min(sy * 0.5)];
            let hi = vec![sx.max(sx * 0.5), sy.max(sy * 0.5)];
            let lo: Vec<f64> = lo.iter().map(|v| v * s).collect();
            let hi: Vec<f64> = hi.iter().map(|v| v * s).collect();
            let m = mass(&model, &Region::Rect { lo, hi }).unwrap().value;
            assert!(m > 0.0, "orthant ({sx}, {sy}) has mass {m}");
        }
    }

    #[test]
    fn one_sided_marginal_empties_negative_boxes() {
        let pos = Marginal1d::density(|u: f64| (-u).exp(), 0.0, f64::INFINITY).unwrap();
        let model = copula_measure(ratio2(), vec![pos, two_sided_exp()]).unwrap();
        let m = mass(
            &model,
            &Region::Rect { lo: vec![-1.0, 0.25], hi: vec![-0.25, 1.0] },
        )
        .unwrap()
        .value;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coupled_mass_additive_under_box_split() {
        let model = copula_measure(ratio2(), vec![two_sided_exp(), two_sided_exp()]).unwrap();
        let whole = Region::Rect { lo: vec![0.25, 0.25], hi: vec![2.0, 1.5] };
        let left = Region::Rect { lo: vec![0.25, 0.25], hi: vec![1.0, 1.5] };
        let right = Region::Rect { lo: vec![1.0, 0.25], hi: vec![2.0, 1.5] };
        let w = mass(&model, &whole).unwrap().value;
        let sum = mass(&model, &left).unwrap().value + mass(&model, &right).unwrap().value;
        assert!(w > 0.0);
        assert_abs_diff_eq!(w, sum, epsilon = 1e-9 * w.max(1.0));
    }

    #[test]
    fn atoms_on_box_corners_follow_brackets() {
        // Mass sits exactly on the evaluation corners: the half-open
        // bracket keeps the upper corner and excludes the lower one.
        let c = LevyCopula::custom(1, |x: &[f64]| x[0]).unwrap();
        let m = Marginal1d::atoms(vec![(1.0, 2.0), (2.0, 3.0)]).unwrap();
        let model = copula_measure(c, vec![m]).unwrap();
        let mass_at = |a: f64, b: f64| {
            mass(&model, &Region::Rect { lo: vec![a], hi: vec![b] }).unwrap().value
        };
        assert_abs_diff_eq!(mass_at(1.0, 2.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mass_at(0.5, 1.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mass_at(0.5, 2.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn crossing_box_rejected() {
        let model = copula_measure(ratio2(), vec![two_sided_exp(), two_sided_exp()]).unwrap();
        let err = mass(&model, &Region::Rect { lo: vec![-1.0, 0.5], hi: vec![1.0, 1.5] });
        assert!(matches!(err, Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn coupled_two_sided_measure_passes_origin_check() {
        let model = copula_measure(ratio2(), vec![two_sided_exp(), two_sided_exp()]).unwrap();
        let verdict = check_jumps(&model, &[0.5, 2.0], 64, 100, 5).unwrap();
        assert!(verdict.all_hold());
    }

    #[test]
    fn one_sided_coupled_measure_fails_origin_check() {
        let pos = Marginal1d::density(|u: f64| (-u).exp(), 0.0, f64::INFINITY).unwrap();
        let model = copula_measure(ratio2(), vec![pos, two_sided_exp()]).unwrap();
        let verdict = check_jumps(&model, &[0.5], 64, 100, 5).unwrap();
        let v = &verdict.per_epsilon[0];
        assert_eq!(v.status, JumpsStatus::Fails);
        let w = v.witness.as_ref().unwrap();
        assert!((w - DVector::from_vec(vec![-1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn annulus_sampler_respects_region_and_signs() {
        let model_cm = CopulaMeasure {
            copula: ratio2(),
            marginals: vec![two_sided_exp(), two_sided_exp()],
        };
        let mut rng = substream(31, StreamKind::Trial, 4);
        let (inner, outer) = (0.5, 3.0);
        let mut counts = [0usize; 4];
        let n = 4000;
        for _ in 0..n {
            let x = model_cm.sample_annulus(inner, outer, &mut rng).unwrap();
            let r = x.norm();
            assert!(r >= inner && r <= outer);
            assert!(x[0] != 0.0 && x[1] != 0.0);
            let q = (x[0] > 0.0) as usize * 2 + (x[1] > 0.0) as usize;
            counts[q] += 1;
        }
        // A strict copula with symmetric two-sided marginals populates
        // every quadrant.
        for (q, &cnt) in counts.iter().enumerate() {
            assert!(cnt > n / 20, "quadrant {q} has {cnt} of {n} draws");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn archimedean_increments_nonnegative(
            x0 in -20.0f64..20.0,
            y0 in -20.0f64..20.0,
            wx in 0.01f64..10.0,
            wy in 0.01f64..10.0,
        ) {
            let c = ratio2();
            let inc = c.increment(&[x0, y0], &[x0 + wx, y0 + wy]).unwrap();
            prop_assert!(inc >= -1e-10, "increment {inc}");
        }
    }
}
