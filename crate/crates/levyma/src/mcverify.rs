//! Monte Carlo verification of small-ball behaviour: tube probabilities,
//! conditional tube probabilities from a frozen past, reachable targets of
//! the form `f = Phi * h`, and ball-hitting probabilities, all reported
//! with Wilson 95% confidence intervals.
//!
//! Every estimator simulates fresh-future paths `Xbar_t = int_{t0}^t
//! Phi(t-u) dL_u` on a uniform grid and renders its event on the grid
//! nodes, sharpened in two regimes where plain node checking is visibly
//! biased. For purely Gaussian drivers under a constant scalar kernel the
//! path between nodes is a Brownian bridge, and barrier crossings between
//! nodes are resolved by the exact bridge-crossing probability. For
//! drivers with no Gaussian part the path is evaluated on a refinement
//! subgrid with every logged jump placed at its exact time, which is an
//! exact supremum for piecewise-constant paths and factor-four tighter
//! monitoring otherwise.
//!
//! Trials run in parallel with one counter-derived substream per trial and
//! are combined as an order-free count, so every estimate is bit-identical
//! for a fixed seed and trial count, whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::gridfn::GridFunction;
use crate::kernels::Kernel;
use crate::levymeasure::LevyModel;
use crate::simulate::{decompose, ma_path, sample_driver_from, DriverPath, DriverStreams, SimConfig};
use crate::streams::{substream, StreamKind};
use crate::{Error, Result};

/// Two-sided 95% normal quantile behind every interval.
const Z95: f64 = 1.959963984540054;

/// Relative slack when matching grids.
const GRID_SNAP: f64 = 1e-9;

/// Inter-node refinement factor for jump-driven paths.
const REFINE: usize = 4;

// ---------------------------------------------------------------------------
// Estimates and intervals
// ---------------------------------------------------------------------------

/// Outcome of one Monte Carlo experiment.
#[derive(Clone, Debug)]
pub struct TubeEstimate {
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    /// Wilson 95% interval; for zero hits the upper limit is the
    /// rule-of-three bound `3/N`.
    pub wilson95: (f64, f64),
    /// Wall-clock seconds spent on the trials.
    pub runtime: f64,
    /// FNV-1a hash of the experiment parameters.
    pub config_hash: u64,
}

/// Wilson 95% interval for `hits` successes in `trials`; zero hits report
/// the rule-of-three upper bound `3/N`.
pub fn wilson95(hits: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    if hits == 0 {
        return (0.0, (3.0 / n).min(1.0));
    }
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    (((center - half).max(0.0)).min(p), ((center + half).min(1.0)).max(p))
}

/// FNV-1a hash of a byte string, for config fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn finish(hits: u64, trials: u64, started: Instant, config_hash: u64) -> TubeEstimate {
    TubeEstimate {
        hits,
        trials,
        p_hat: hits as f64 / trials as f64,
        wilson95: wilson95(hits, trials),
        runtime: started.elapsed().as_secs_f64(),
        config_hash,
    }
}

// ---------------------------------------------------------------------------
// Tube specification and reachable targets
// ---------------------------------------------------------------------------

/// A tube experiment: stay within `epsilon` of the target on `[t0, t_end]`.
#[derive(Clone, Debug)]
pub struct TubeSpec {
    pub t0: f64,
    pub t_end: f64,
    pub epsilon: f64,
    /// Target components on the window grid; node `k` is `t0 + k * step`.
    pub target: Vec<GridFunction>,
}

impl TubeSpec {
    /// Validates window, radius and target; the target must start at zero.
    pub fn new(t0: f64, t_end: f64, epsilon: f64, target: Vec<GridFunction>) -> Result<Self> {
        if !(t0 >= 0.0) || !(t_end > t0) || !t_end.is_finite() {
            return Err(Error::invalid("t0", format!("window [{t0}, {t_end}] is not ordered")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid("epsilon", format!("{epsilon}")));
        }
        if target.is_empty() {
            return Err(Error::invalid("target", "needs at least one component"));
        }
        let step = target[0].step();
        let len = target[0].len();
        for g in &target {
            if (g.step() - step).abs() > GRID_SNAP * step || g.len() != len {
                return Err(Error::GridMismatch("target components on different grids".into()));
            }
            if g.value(0) != 0.0 {
                return Err(Error::invalid("target", "must vanish at the window start"));
            }
        }
        if len < 2 {
            return Err(Error::invalid("target", "needs at least two nodes"));
        }
        let dur = t_end - t0;
        if ((len - 1) as f64 * step - dur).abs() > GRID_SNAP * dur.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "target horizon {} against window length {dur}",
                (len - 1) as f64 * step
            )));
        }
        Ok(TubeSpec { t0, t_end, epsilon, target })
    }

    /// Centered tube: target identically zero.
    pub fn centered(t0: f64, t_end: f64, epsilon: f64, dim: usize, step: f64) -> Result<Self> {
        let n = ((t_end - t0) / step).round() as usize;
        let zero = GridFunction::zeros(step, n + 1)?;
        TubeSpec::new(t0, t_end, epsilon, vec![zero; dim])
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn step(&self) -> f64 {
        self.target[0].step()
    }

    /// Number of grid nodes including both window ends.
    pub fn nodes(&self) -> usize {
        self.target[0].len()
    }

    fn node_targets(&self) -> Vec<DVector<f64>> {
        let d = self.target.len();
        (0..self.nodes())
            .map(|k| DVector::from_fn(d, |i, _| self.target[i].value(k)))
            .collect()
    }
}

/// Discretization knobs shared by the estimators. `history` is the frozen
/// window length used by the conditional designs; the unconditional tube
/// ignores it.
#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub step: f64,
    pub delta: f64,
    pub history: f64,
}

/// Target reachable by a control: `f(t) = sum_{s < t} Phi(t - s) h(s) ds`
/// as a left-node Riemann sum on the control grid, which starts at zero by
/// construction and never evaluates the kernel at lag zero.
pub fn reachable_target(kernel: &Kernel, control: &[GridFunction]) -> Result<Vec<GridFunction>> {
    let d = kernel.dim();
    if control.len() != d {
        return Err(Error::DimMismatch(format!(
            "{} control components for a dimension-{d} kernel",
            control.len()
        )));
    }
    let step = control[0].step();
    let len = control[0].len();
    for g in control {
        if (g.step() - step).abs() > GRID_SNAP * step || g.len() != len {
            return Err(Error::GridMismatch("control components on different grids".into()));
        }
    }
    let grid = kernel.phi_grid(step, len)?;
    let phi: Vec<DMatrix<f64>> = (0..len)
        .map(|k| DMatrix::from_fn(d, d, |i, j| grid.entry(i, j).value(k)))
        .collect();
    if phi[1..].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("kernel", "non-finite kernel value on the control grid"));
    }
    let controls: Vec<DVector<f64>> = (0..len)
        .map(|k| DVector::from_fn(d, |i, _| control[i].value(k)))
        .collect();
    let mut nodes = Vec::with_capacity(len);
    nodes.push(DVector::zeros(d));
    for m in 1..len {
        let mut f = DVector::zeros(d);
        for j in 0..m {
            f.gemv(step, &phi[m - j], &controls[j], 1.0);
        }
        nodes.push(f);
    }
    (0..d)
        .map(|i| GridFunction::from_values(step, nodes.iter().map(|v| v[i]).collect()))
        .collect()
}

// ---------------------------------------------------------------------------
// Path engine
// ---------------------------------------------------------------------------

/// Kernel weights on the lag grid, with the constant case split off so
/// paths under it reduce to prefix sums.
enum Weights {
    Constant(DMatrix<f64>),
    Varying(Vec<DMatrix<f64>>),
}

fn lag_weights(kernel: &Kernel, step: f64, len: usize) -> Result<Weights> {
    let grid = kernel.phi_grid(step, len)?;
    let d = grid.dim();
    let mats: Vec<DMatrix<f64>> = (0..len)
        .map(|k| DMatrix::from_fn(d, d, |i, j| grid.entry(i, j).value(k)))
        .collect();
    if mats.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("kernel", "non-finite kernel value on the simulation grid"));
    }
    if mats.iter().all(|m| m == &mats[0]) {
        Ok(Weights::Constant(mats[0].clone()))
    } else {
        Ok(Weights::Varying(mats))
    }
}

/// Fresh-future node values `x_k = sum_{i < k} phi[k-1-i] inc_i`,
/// `k = 0..=cells`.
fn forward_nodes(weights: &Weights, inc: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let dim = if inc.is_empty() { 0 } else { inc[0].len() };
    let mut values = Vec::with_capacity(inc.len() + 1);
    match weights {
        Weights::Constant(c) => {
            let mut x = DVector::zeros(dim);
            values.push(x.clone());
            for dl in inc {
                x.gemv(1.0, c, dl, 1.0);
                values.push(x.clone());
            }
        }
        Weights::Varying(phi) => {
            values.push(DVector::zeros(dim));
            for k in 1..=inc.len() {
                let mut x = DVector::zeros(dim);
                for (i, dl) in inc.iter().enumerate().take(k) {
                    x.gemv(1.0, &phi[k - 1 - i], dl, 1.0);
                }
                values.push(x);
            }
        }
    }
    values
}

/// How the event is rendered between grid nodes.
enum SupMode {
    /// Grid nodes only.
    Nodes,
    /// Purely Gaussian scalar driver under a constant kernel: exact
    /// Brownian-bridge crossing probabilities between nodes, one uniform
    /// per step drawn unconditionally so common random numbers stay
    /// aligned across nested radii.
    Bridge { var_step: f64 },
    /// Driver without a Gaussian part: evaluate on a `REFINE`-times finer
    /// grid with logged jumps at their exact times.
    Subgrid { fine: Vec<DMatrix<f64>> },
}

fn sup_mode(
    kernel: &Kernel,
    model: &LevyModel,
    weights: &Weights,
    step: f64,
    cells: usize,
) -> SupMode {
    let gauss = model.gaussian();
    if gauss.iter().all(|v| *v == 0.0) {
        let fine_len = REFINE * cells;
        return match lag_weights(kernel, step / REFINE as f64, fine_len) {
            Ok(Weights::Constant(c)) => SupMode::Subgrid { fine: vec![c] },
            Ok(Weights::Varying(v)) => SupMode::Subgrid { fine: v },
            // A kernel singular at lag zero keeps plain node checking.
            Err(_) => SupMode::Nodes,
        };
    }
    if model.zero_jump_measure() && model.dim() == 1 {
        if let Weights::Constant(c) = weights {
            let v = c[(0, 0)] * c[(0, 0)] * gauss[(0, 0)] * step;
            if v > 0.0 {
                return SupMode::Bridge { var_step: v };
            }
        }
    }
    SupMode::Nodes
}

/// Kernel weight at an off-grid lag, interpolated on the fine lag grid.
fn fine_weight(fine: &[DMatrix<f64>], lag_steps: f64) -> DMatrix<f64> {
    if fine.len() == 1 {
        return fine[0].clone();
    }
    let k = lag_steps.floor() as usize;
    let k = k.min(fine.len() - 1);
    let k1 = (k + 1).min(fine.len() - 1);
    let w = (lag_steps - k as f64).clamp(0.0, 1.0);
    &fine[k] * (1.0 - w) + &fine[k1] * w
}

/// Target at an off-node position by linear interpolation.
fn interp_target(g: &[DVector<f64>], pos: f64) -> DVector<f64> {
    let k = (pos.floor() as usize).min(g.len() - 1);
    let k1 = (k + 1).min(g.len() - 1);
    let w = (pos - k as f64).clamp(0.0, 1.0);
    &g[k] * (1.0 - w) + &g[k1] * w
}

/// Evaluate the jump-driven path on the fine grid and at the logged jump
/// times (with their left limits) and report whether any checked point
/// satisfies the predicate `pred(distance_to_target)`.
fn subgrid_any(
    fine: &[DMatrix<f64>],
    driver: &DriverPath,
    g: &[DVector<f64>],
    pred: impl Fn(f64) -> bool,
) -> bool {
    let h = driver.step();
    let fine_h = h / REFINE as f64;
    let cells = driver.cells();
    let dim = driver.dim();
    let constant = fine.len() == 1;
    // Per-cell deterministic residue: the increment minus its logged
    // jumps, applied at the cell's right node like the node path does.
    let mut residue: Vec<DVector<f64>> = driver.increments().to_vec();
    for ev in driver.jumps() {
        residue[ev.cell] -= &ev.size;
    }

    // `pos` indexes the coarse target grid, in units of the coarse step.
    let check = |x: &DVector<f64>, pos: f64| -> bool {
        let target = interp_target(g, pos);
        pred((x - target).norm())
    };

    if constant {
        // Piecewise-linear path: exact supremum from the breakpoints,
        // which are the fine nodes plus each jump's two one-sided values.
        let c = &fine[0];
        let mut x = DVector::zeros(dim);
        let mut jp = 0usize;
        let jumps = driver.jumps();
        for q in 0..=REFINE * cells {
            let tau = q as f64 * fine_h;
            while jp < jumps.len() && jumps[jp].time <= tau {
                let s = jumps[jp].time / h;
                if check(&x, s) {
                    return true;
                }
                x += c * &jumps[jp].size;
                if check(&x, s) {
                    return true;
                }
                jp += 1;
            }
            if q > 0 && q % REFINE == 0 {
                x += c * &residue[q / REFINE - 1];
            }
            if check(&x, q as f64 / REFINE as f64) {
                return true;
            }
        }
        false
    } else {
        for q in 0..=REFINE * cells {
            let tau = q as f64 * fine_h;
            let mut x = DVector::zeros(dim);
            for (i, r) in residue.iter().enumerate() {
                let node = REFINE * (i + 1);
                if node <= q {
                    x.gemv(1.0, &fine[q - node], r, 1.0);
                }
            }
            for ev in driver.jumps() {
                if ev.time <= tau {
                    let w = fine_weight(fine, (tau - ev.time) / fine_h);
                    x.gemv(1.0, &w, &ev.size, 1.0);
                }
            }
            if check(&x, q as f64 / REFINE as f64) {
                return true;
            }
        }
        false
    }
}

/// Which event a trial scores.
#[derive(Clone, Copy)]
enum HitRule {
    /// Stay within `radius` of the target at every time.
    StayWithin,
    /// Come within `radius` of the target at some time.
    Enter,
}

struct Experiment<'a> {
    model: &'a LevyModel,
    cfg: SimConfig,
    weights: Weights,
    mode: SupMode,
    targets: Vec<DVector<f64>>,
    radius: f64,
    rule: HitRule,
    seed: u64,
}

impl Experiment<'_> {
    fn run_trial(&self, index: u64) -> Result<bool> {
        let mut streams = DriverStreams {
            past: substream(self.seed, StreamKind::Auxiliary, index),
            future: substream(self.seed, StreamKind::Trial, index),
        };
        let driver = sample_driver_from(self.model, self.cfg, &mut streams, self.seed)?;
        let xs = forward_nodes(&self.weights, driver.increments());
        let r = self.radius;
        let inside =
            |k: usize| (xs[k].clone() - &self.targets[k]).norm_squared() < r * r;

        match self.rule {
            HitRule::StayWithin => {
                let mut hit = (0..xs.len()).all(inside);
                match &self.mode {
                    SupMode::Nodes => {}
                    SupMode::Bridge { var_step } => {
                        // One uniform per step, drawn whether or not the
                        // trial is still alive, so nested radii see the
                        // same randomness.
                        for m in 0..xs.len() - 1 {
                            let u: f64 = streams.future.gen();
                            if !hit {
                                continue;
                            }
                            let (a, b) = (xs[m][0], xs[m + 1][0]);
                            let (ga, gb) = (self.targets[m][0], self.targets[m + 1][0]);
                            let up = (-2.0 * (ga + r - a) * (gb + r - b) / var_step).exp();
                            let dn = (-2.0 * (a - ga + r) * (b - gb + r) / var_step).exp();
                            if u < (up + dn).min(1.0) {
                                hit = false;
                            }
                        }
                    }
                    SupMode::Subgrid { fine } => {
                        if hit && subgrid_any(fine, &driver, &self.targets, |d| d >= r) {
                            hit = false;
                        }
                    }
                }
                Ok(hit)
            }
            HitRule::Enter => {
                let mut hit = (0..xs.len()).any(inside);
                match &self.mode {
                    SupMode::Nodes => {}
                    SupMode::Bridge { var_step } => {
                        for m in 0..xs.len() - 1 {
                            let u: f64 = streams.future.gen();
                            if hit {
                                continue;
                            }
                            let (a, b) = (xs[m][0], xs[m + 1][0]);
                            let (lo_a, lo_b) =
                                (self.targets[m][0] - r, self.targets[m + 1][0] - r);
                            let (hi_a, hi_b) =
                                (self.targets[m][0] + r, self.targets[m + 1][0] + r);
                            // Both nodes on one side: bridge reach of the
                            // nearer edge; nodes on opposite sides passed
                            // through the ball for sure.
                            let p = if a <= lo_a && b <= lo_b {
                                (-2.0 * (lo_a - a) * (lo_b - b) / var_step).exp()
                            } else if a >= hi_a && b >= hi_b {
                                (-2.0 * (a - hi_a) * (b - hi_b) / var_step).exp()
                            } else {
                                1.0
                            };
                            if u < p {
                                hit = true;
                            }
                        }
                    }
                    SupMode::Subgrid { fine } => {
                        if !hit && subgrid_any(fine, &driver, &self.targets, |d| d < r) {
                            hit = true;
                        }
                    }
                }
                Ok(hit)
            }
        }
    }

    fn run(&self, trials: u64) -> Result<u64> {
        (0..trials)
            .into_par_iter()
            .map(|i| self.run_trial(i).map(u64::from))
            .try_reduce(|| 0u64, |a, b| Ok(a + b))
    }
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

fn experiment_hash(label: &str, parts: &[(&str, f64)], ints: &[(&str, u64)]) -> u64 {
    let mut s = String::from(label);
    for (k, v) in parts {
        let _ = write!(s, "|{k}={v:?}");
    }
    for (k, v) in ints {
        let _ = write!(s, "|{k}={v}");
    }
    fnv1a64(s.as_bytes())
}

/// Probability that a fresh-future path stays within `tube.epsilon` of the
/// target over the whole window.
pub fn tube_probability(
    kernel: &Kernel,
    model: &LevyModel,
    tube: &TubeSpec,
    trials: u64,
    mc: &McConfig,
    seed: u64,
) -> Result<TubeEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one"));
    }
    if (tube.step() - mc.step).abs() > GRID_SNAP * mc.step {
        return Err(Error::GridMismatch("target grid against simulation step".into()));
    }
    let started = Instant::now();
    let cells = tube.nodes() - 1;
    let cfg = SimConfig::new(0.0, tube.duration(), mc.step, mc.delta);
    let weights = lag_weights(kernel, mc.step, cells.max(2))?;
    let mode = sup_mode(kernel, model, &weights, mc.step, cells);
    let exp = Experiment {
        model,
        cfg,
        weights,
        mode,
        targets: tube.node_targets(),
        radius: tube.epsilon,
        rule: HitRule::StayWithin,
        seed,
    };
    let hits = exp.run(trials)?;
    let hash = experiment_hash(
        "tube",
        &[
            ("eps", tube.epsilon),
            ("t0", tube.t0),
            ("T", tube.t_end),
            ("step", mc.step),
            ("delta", mc.delta),
        ],
        &[("n", trials), ("seed", seed), ("dim", kernel.dim() as u64)],
    );
    Ok(finish(hits, trials, started, hash))
}

/// Conditional tube probability given one frozen past: the window is
/// relabelled so the conditioning time is zero, all increments up to it
/// are drawn once from `past_seed`, the past influence is computed once,
/// and fresh futures are scored against the shifted target.
pub fn conditional_tube(
    kernel: &Kernel,
    model: &LevyModel,
    past_seed: u64,
    tube: &TubeSpec,
    trials: u64,
    mc: &McConfig,
) -> Result<TubeEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one"));
    }
    if (tube.step() - mc.step).abs() > GRID_SNAP * mc.step {
        return Err(Error::GridMismatch("target grid against simulation step".into()));
    }
    let started = Instant::now();
    let cells = tube.nodes() - 1;

    let frozen_cfg =
        SimConfig::new(mc.history + tube.t0, tube.duration(), mc.step, mc.delta);
    let mut frozen_streams = DriverStreams {
        past: substream(past_seed, StreamKind::FrozenPast, 0),
        future: substream(past_seed, StreamKind::FrozenPast, 1),
    };
    let frozen = sample_driver_from(model, frozen_cfg, &mut frozen_streams, past_seed)?;
    let (past_influence, _) = decompose(kernel, &frozen, 0.0)?;

    let targets: Vec<DVector<f64>> = tube
        .node_targets()
        .into_iter()
        .zip(past_influence.values())
        .map(|(f, a)| f - a)
        .collect();

    let cfg = SimConfig::new(0.0, tube.duration(), mc.step, mc.delta);
    let weights = lag_weights(kernel, mc.step, cells.max(2))?;
    let mode = sup_mode(kernel, model, &weights, mc.step, cells);
    let exp = Experiment {
        model,
        cfg,
        weights,
        mode,
        targets,
        radius: tube.epsilon,
        rule: HitRule::StayWithin,
        seed: past_seed,
    };
    let hits = exp.run(trials)?;
    let hash = experiment_hash(
        "conditional",
        &[
            ("eps", tube.epsilon),
            ("t0", tube.t0),
            ("T", tube.t_end),
            ("step", mc.step),
            ("delta", mc.delta),
            ("history", mc.history),
        ],
        &[("n", trials), ("seed", past_seed), ("dim", kernel.dim() as u64)],
    );
    Ok(finish(hits, trials, started, hash))
}

/// Probability that the process enters the open ball `B(center, radius)`
/// within `(tau, tau + window]`, including being inside already at `tau`,
/// with the past up to `tau` frozen from the seed's frozen-past stream.
#[allow(clippy::too_many_arguments)]
pub fn hitting_probability(
    kernel: &Kernel,
    model: &LevyModel,
    center: &DVector<f64>,
    radius: f64,
    tau: f64,
    window: f64,
    trials: u64,
    mc: &McConfig,
    seed: u64,
) -> Result<TubeEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid("radius", format!("{radius}")));
    }
    if center.len() != kernel.dim() {
        return Err(Error::DimMismatch("ball center against kernel dimension".into()));
    }
    let started = Instant::now();
    let h = mc.step;
    let n_win = count_cells(window, h, "window")?;
    let n_tau = count_cells(tau, h, "tau")?;
    let n_past = count_cells(mc.history, h, "history")?;

    // Frozen segment up to tau, padded so the lag grid always has two
    // points; increments past tau are never read.
    let n_frozen = n_tau.max(1).max(2usize.saturating_sub(n_past));
    let frozen_cfg = SimConfig::new(mc.history, n_frozen as f64 * h, h, mc.delta);
    let mut frozen_streams = DriverStreams {
        past: substream(seed, StreamKind::FrozenPast, 0),
        future: substream(seed, StreamKind::FrozenPast, 1),
    };
    let frozen = sample_driver_from(model, frozen_cfg, &mut frozen_streams, seed)?;
    let base = ma_path(kernel, &frozen, tau)?.value(0).clone();

    // Influence of the frozen increments on later times.
    let c0 = frozen.past_cells() + n_tau;
    let grid = kernel.phi_grid(h, (c0 + n_win).max(2))?;
    let d = kernel.dim();
    let phi: Vec<DMatrix<f64>> = (0..c0 + n_win)
        .map(|k| DMatrix::from_fn(d, d, |i, j| grid.entry(i, j).value(k)))
        .collect();
    if phi.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("kernel", "non-finite kernel value on the simulation grid"));
    }
    let inc = frozen.increments();
    let mut targets = Vec::with_capacity(n_win + 1);
    for m in 0..=n_win {
        let mut a = DVector::zeros(d);
        if m > 0 {
            for i in 0..c0 {
                a.gemv(1.0, &(&phi[c0 - 1 - i + m] - &phi[c0 - 1 - i]), &inc[i], 1.0);
            }
        }
        targets.push(center - &base - a);
    }

    let cfg = SimConfig::new(0.0, n_win as f64 * h, h, mc.delta);
    let weights = lag_weights(kernel, h, n_win.max(2))?;
    let mode = sup_mode(kernel, model, &weights, h, n_win);
    let exp = Experiment {
        model,
        cfg,
        weights,
        mode,
        targets,
        radius,
        rule: HitRule::Enter,
        seed,
    };
    let hits = exp.run(trials)?;
    let hash = experiment_hash(
        "hitting",
        &[
            ("radius", radius),
            ("tau", tau),
            ("window", window),
            ("step", h),
            ("delta", mc.delta),
            ("history", mc.history),
        ],
        &[("n", trials), ("seed", seed), ("dim", d as u64)],
    );
    Ok(finish(hits, trials, started, hash))
}

fn count_cells(span: f64, step: f64, name: &'static str) -> Result<usize> {
    if !(span >= 0.0) || !span.is_finite() {
        return Err(Error::invalid(name, format!("{span}")));
    }
    let n = (span / step).round();
    if (span - n * step).abs() > GRID_SNAP * span.max(1.0) {
        return Err(Error::invalid(name, format!("{span} is not a whole multiple of step {step}")));
    }
    if name == "window" && n == 0.0 {
        return Err(Error::invalid(name, "must cover at least one cell"));
    }
    Ok(n as usize)
}

// ---------------------------------------------------------------------------
// Results table
// ---------------------------------------------------------------------------

/// One labelled experiment outcome for the results table.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub experiment: String,
    pub epsilon: f64,
    pub t0: f64,
    pub t_end: f64,
    pub seed: u64,
    pub estimate: TubeEstimate,
}

/// Writes `experiment,epsilon,t0,T,N,hits,p_hat,ci_lo,ci_hi,seed,runtime_s`
/// rows.
pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str("experiment,epsilon,t0,T,N,hits,p_hat,ci_lo,ci_hi,seed,runtime_s\n");
    for r in rows {
        let e = &r.estimate;
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{},{:.3}",
            r.experiment,
            r.epsilon,
            r.t0,
            r.t_end,
            e.trials,
            e.hits,
            e.p_hat,
            e.wilson95.0,
            e.wilson95.1,
            r.seed,
            e.runtime,
        );
    }
    std::fs::write(path, out)
}
