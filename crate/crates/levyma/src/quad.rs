//! Small quadrature helpers: adaptive Simpson on finite intervals, an
//! improper-integral driver with dyadic divergence detection near the
//! endpoints, and power-law tail extrapolation.

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let mut budget: u32 = 25_000;
    simpson_step(f, a, b, fa, fb, fc, simpson(a, b, fa, fc, fb), tol, 50, &mut budget)
}

fn simpson(a: f64, b: f64, fa: f64, fc: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fc + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let lm = 0.5 * (a + c);
    let rm = 0.5 * (c + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, c, fa, flm, fc);
    let right = simpson(c, b, fc, frm, fb);
    let delta = left + right - whole;
    *budget = budget.saturating_sub(1);
    // Refinement stops on: the requested tolerance; a delta already at the
    // rounding level of the estimate itself; non-finite data, which no
    // comparison can resolve; or an exhausted depth or node budget, which
    // keeps noisy integrands from recursing without bound.
    if depth == 0
        || *budget == 0
        || !delta.is_finite()
        || delta.abs() <= 15.0 * tol
        || delta.abs() <= 1e-12 * whole.abs()
    {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, flm, left, 0.5 * tol, depth - 1, budget)
            + simpson_step(f, c, b, fc, fb, frm, right, 0.5 * tol, depth - 1, budget)
    }
}

/// Outcome of an improper-integral evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improper {
    /// Convergent with the given value and an upper bound on the
    /// truncated-tail contribution.
    Convergent { value: f64, tail_bound: f64 },
    /// Dyadic window sums do not decay: the integral diverges.
    Divergent,
}

/// Integral of a nonnegative integrand over `(0, ref_scale]`, with dyadic
/// refinement toward the origin.
///
/// Windows `[ref_scale·2^{-k-1}, ref_scale·2^{-k}]` are summed until they
/// fall below `tol`; geometric growth of consecutive windows signals
/// divergence.
pub fn integral_near_zero(f: &dyn Fn(f64) -> f64, ref_scale: f64, tol: f64) -> Improper {
    let mut total = 0.0;
    let mut hi = ref_scale;
    let mut prev = f64::INFINITY;
    let mut last = f64::INFINITY;
    let mut growing = 0u32;
    for _ in 0..200 {
        let lo = 0.5 * hi;
        let piece = adaptive_simpson(f, lo, hi, tol * 1e-3);
        if !piece.is_finite() {
            return Improper::Divergent;
        }
        total += piece;
        if piece > last * 1.001 && piece > tol {
            // Sustained growth of shrinking windows: the singularity wins.
            growing += 1;
            if growing >= 8 {
                return Improper::Divergent;
            }
        } else {
            growing = 0;
        }
        if piece < tol && last < tol {
            return Improper::Convergent { value: total, tail_bound: 2.0 * piece.max(last) };
        }
        prev = last;
        last = piece;
        hi = lo;
    }
    // Window sums did not decay below tol: decide by the last decay ratio
    // and extrapolate the remainder geometrically. Singularities within
    // about 1e-3 of the integrable boundary are reported divergent.
    ratio_verdict(total, last, window_ratio(prev, last))
}

/// Last observed window ratio, defaulting to no-decay when unavailable.
fn window_ratio(prev: f64, last: f64) -> f64 {
    if prev > 0.0 && prev.is_finite() {
        last / prev
    } else {
        1.0
    }
}

/// Cap-time decision: extrapolate a geometric remainder when the windows
/// decay, otherwise report divergence.
fn ratio_verdict(total: f64, last: f64, ratio: f64) -> Improper {
    if !(ratio < 0.999) || !last.is_finite() {
        return Improper::Divergent;
    }
    let rest = last * ratio / (1.0 - ratio);
    Improper::Convergent { value: total + rest, tail_bound: rest + last }
}

/// Integral of a nonnegative integrand over `[a, ∞)`, with dyadic windows
/// toward infinity and a power-law extrapolation of the remainder.
pub fn integral_to_infinity(f: &dyn Fn(f64) -> f64, a: f64, tol: f64) -> Improper {
    assert!(a > 0.0, "tail integration needs a positive left endpoint");
    let mut total = 0.0;
    let mut lo = a;
    let mut prev = f64::INFINITY;
    let mut last = f64::INFINITY;
    let mut growing = 0u32;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        let piece = adaptive_simpson(f, lo, hi, tol * 1e-3);
        if !piece.is_finite() {
            return Improper::Divergent;
        }
        total += piece;
        if piece > last * 1.001 && piece > tol {
            // Doubling windows legitimately grow while the width outruns
            // the decay, so the streak allowed here spans a transient hump
            // out to 2^16 a; growth sustained past that is real.
            growing += 1;
            if growing >= 16 {
                return Improper::Divergent;
            }
        } else {
            growing = 0;
        }
        if piece < tol && last < tol {
            // Remaining windows are bounded by a geometric series with the
            // observed ratio, capped at 1/2 per doubling for safety.
            let ratio = if last > 0.0 { (piece / last).min(0.9) } else { 0.5 };
            let bound = if ratio < 1.0 { piece * ratio / (1.0 - ratio) } else { piece };
            return Improper::Convergent { value: total, tail_bound: bound };
        }
        prev = last;
        last = piece;
        lo = hi;
    }
    ratio_verdict(total, last, window_ratio(prev, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simpson_matches_polynomials() {
        let f = |t: f64| 3.0 * t * t - t + 2.0;
        assert_abs_diff_eq!(adaptive_simpson(&f, 0.0, 2.0, 1e-12), 8.0 - 2.0 + 4.0, epsilon = 1e-10);
    }

    #[test]
    fn near_zero_integrates_integrable_power() {
        // ∫_0^1 t^{-1/2} dt = 2
        match integral_near_zero(&|t: f64| t.powf(-0.5), 1.0, 1e-10) {
            Improper::Convergent { value, .. } => assert_abs_diff_eq!(value, 2.0, epsilon = 1e-6),
            Improper::Divergent => panic!("should converge"),
        }
    }

    #[test]
    fn near_zero_detects_divergence() {
        assert_eq!(integral_near_zero(&|t: f64| t.powf(-1.5), 1.0, 1e-10), Improper::Divergent);
    }

    #[test]
    fn tail_integrates_exponential() {
        match integral_to_infinity(&|t: f64| (-t).exp(), 1.0, 1e-12) {
            Improper::Convergent { value, tail_bound } => {
                assert_abs_diff_eq!(value, (-1.0f64).exp(), epsilon = 1e-8);
                assert!(tail_bound < 1e-10);
            }
            Improper::Divergent => panic!("should converge"),
        }
    }

    #[test]
    fn tail_detects_divergence() {
        assert_eq!(integral_to_infinity(&|t: f64| 1.0 / t, 1.0, 1e-10), Improper::Divergent);
    }
}
