//! Path simulation: two-sided driver sampling with jump truncation, the
//! moving-average discretization, its past/future decomposition, and the
//! exact Ornstein-Uhlenbeck recursion.
//!
//! A driver is sampled on a uniform cell grid over `[-history, horizon]`.
//! Each cell `(u - step, u]` stores the full increment of the driver over
//! that cell: the drift net of the small-jump compensator, the Gaussian
//! part, and every sampled jump that falls inside. Jumps of norm at least
//! the truncation `delta` are sampled individually and also logged with
//! their exact times; smaller jumps enter only through the compensator
//! drift, or optionally through a variance-matching Gaussian substitute.
//!
//! Moving-average paths evaluate the kernel weight at each cell's right
//! node, so kernels that are indicators on the grid telescope exactly.
//! Negative time is generated from an independent substream, which makes a
//! frozen past combinable with arbitrarily many fresh futures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;

use crate::gridfn::MatrixGridFunction;
use crate::kernels::Kernel;
use crate::levymeasure::{mass, sample_jump, JumpSpec, LevyModel, Region};
use crate::linalg::{matexp, psd_factor, spectral_abscissa};
use crate::streams::{substream, StreamKind};
use crate::{Error, Result};

/// Relative slack when snapping a time span to a whole number of cells.
const GRID_SNAP: f64 = 1e-9;

/// Discretization of the simulation window `[-history, horizon]`.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Length of negative time kept, `>= 0`; a whole multiple of `step`.
    pub history: f64,
    /// Length of nonnegative time, at least one cell; a whole multiple of
    /// `step`.
    pub horizon: f64,
    /// Cell width, `> 0`.
    pub step: f64,
    /// Jump truncation: jumps of norm `>= delta` are sampled individually.
    pub delta: f64,
    /// Replace the discarded small jumps by a Gaussian with the same
    /// covariance instead of dropping them.
    pub small_jump_gaussian: bool,
}

impl SimConfig {
    pub fn new(history: f64, horizon: f64, step: f64, delta: f64) -> Self {
        SimConfig { history, horizon, step, delta, small_jump_gaussian: false }
    }

    fn cell_counts(&self) -> Result<(usize, usize)> {
        let past = whole_cells(self.history, self.step, "history")?;
        let future = whole_cells(self.horizon, self.step, "horizon")?;
        if future == 0 {
            return Err(Error::invalid("horizon", "must cover at least one cell"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta", format!("{}", self.delta)));
        }
        Ok((past, future))
    }
}

fn whole_cells(span: f64, step: f64, name: &'static str) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("step", format!("{step}")));
    }
    if !(span >= 0.0) || !span.is_finite() {
        return Err(Error::invalid(name, format!("{span}")));
    }
    let n = (span / step).round();
    if (span - n * step).abs() > GRID_SNAP * span.max(1.0) {
        return Err(Error::invalid(name, format!("{span} is not a whole multiple of step {step}")));
    }
    Ok(n as usize)
}

/// One logged jump: exact time, the cell whose increment carries it, size.
#[derive(Clone, Debug)]
pub struct JumpEvent {
    pub time: f64,
    pub cell: usize,
    pub size: DVector<f64>,
}

/// Sampled two-sided driver increments on a uniform cell grid.
#[derive(Clone, Debug)]
pub struct DriverPath {
    step: f64,
    past_cells: usize,
    increments: Vec<DVector<f64>>,
    jumps: Vec<JumpEvent>,
    delta: f64,
    compensator: DVector<f64>,
    seed: u64,
}

impl DriverPath {
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Total number of cells across both sides.
    pub fn cells(&self) -> usize {
        self.increments.len()
    }

    pub fn past_cells(&self) -> usize {
        self.past_cells
    }

    pub fn dim(&self) -> usize {
        self.increments[0].len()
    }

    /// Length of the negative-time window.
    pub fn history(&self) -> f64 {
        self.past_cells as f64 * self.step
    }

    /// End of the simulated window.
    pub fn end_time(&self) -> f64 {
        (self.cells() - self.past_cells) as f64 * self.step
    }

    /// Right node of cell `i`; cell `i` covers `(node_time(i) - step,
    /// node_time(i)]`.
    pub fn node_time(&self, i: usize) -> f64 {
        (i as f64 + 1.0 - self.past_cells as f64) * self.step
    }

    /// Increment of the driver over each cell, oldest first.
    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    /// Sampled jumps in time order.
    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    /// The truncation the driver was sampled with.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Small-jump compensator `int_{delta < |x| <= 1} x` against the jump
    /// measure; each cell's deterministic part is `(drift - compensator) *
    /// step`.
    pub fn compensator(&self) -> &DVector<f64> {
        &self.compensator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// The two generator streams behind one driver draw. [`sample_driver`]
/// derives both from a single seed; conditional designs freeze `past` while
/// varying `future`.
pub struct DriverStreams {
    pub past: ChaCha12Rng,
    pub future: ChaCha12Rng,
}

impl DriverStreams {
    /// Both streams derived from one seed.
    pub fn from_seed(seed: u64) -> Self {
        DriverStreams {
            past: substream(seed, StreamKind::DriverPast, 0),
            future: substream(seed, StreamKind::DriverFuture, 0),
        }
    }
}

/// Sample a two-sided driver path; negative time comes from an independent
/// substream of the same seed.
pub fn sample_driver(model: &LevyModel, cfg: SimConfig, seed: u64) -> Result<DriverPath> {
    let mut streams = DriverStreams::from_seed(seed);
    sample_driver_from(model, cfg, &mut streams, seed)
}

/// Sample a driver from explicitly supplied past/future streams. The
/// `seed_label` is recorded on the path for reporting only.
pub fn sample_driver_from(
    model: &LevyModel,
    cfg: SimConfig,
    streams: &mut DriverStreams,
    seed_label: u64,
) -> Result<DriverPath> {
    let (past, future) = cfg.cell_counts()?;
    let dim = model.dim();
    let h = cfg.step;

    let rate = if model.zero_jump_measure() {
        0.0
    } else {
        mass(model, &Region::Annulus { inner: cfg.delta, outer: f64::INFINITY })?.value
    };
    if !rate.is_finite() {
        return Err(Error::Unsupported(
            "jump intensity above the truncation is not finite; raise delta".into(),
        ));
    }

    let compensator = truncation_compensator(model, cfg.delta)?;
    if compensator.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergent("small-jump compensator".into()));
    }

    let mut cov = model.gaussian().clone();
    if cfg.small_jump_gaussian {
        cov += small_jump_cov(model, cfg.delta)?;
    }
    let root = psd_factor(&cov)?;
    let root = if root.iter().any(|v| *v != 0.0) { Some(root) } else { None };
    let net_drift = (model.drift() - &compensator) * h;

    let cells = past + future;
    let mut increments = vec![DVector::zeros(dim); cells];
    let mut jumps = Vec::new();
    if past > 0 {
        fill_side(
            model,
            rate,
            cfg.delta,
            -(past as f64) * h,
            h,
            &net_drift,
            root.as_ref(),
            &mut streams.past,
            &mut increments[..past],
            0,
            &mut jumps,
        )?;
    }
    fill_side(
        model,
        rate,
        cfg.delta,
        0.0,
        h,
        &net_drift,
        root.as_ref(),
        &mut streams.future,
        &mut increments[past..],
        past,
        &mut jumps,
    )?;

    Ok(DriverPath {
        step: h,
        past_cells: past,
        increments,
        jumps,
        delta: cfg.delta,
        compensator,
        seed: seed_label,
    })
}

/// Fill one side of the window. Draw order is fixed: jump count, jump
/// times, jump sizes, then one Gaussian vector per cell, so a stream's
/// output never depends on another side or on threading.
#[allow(clippy::too_many_arguments)]
fn fill_side(
    model: &LevyModel,
    rate: f64,
    delta: f64,
    start: f64,
    step: f64,
    net_drift: &DVector<f64>,
    root: Option<&DMatrix<f64>>,
    rng: &mut ChaCha12Rng,
    increments: &mut [DVector<f64>],
    cell_offset: usize,
    jumps: &mut Vec<JumpEvent>,
) -> Result<()> {
    let dim = net_drift.len();
    let cells = increments.len();
    let len = cells as f64 * step;

    let mut side_jumps: Vec<JumpEvent> = Vec::new();
    let mean = rate * len;
    if mean > 0.0 {
        let count = Poisson::new(mean)
            .map_err(|e| Error::invalid("delta", format!("jump rate rejected: {e}")))?
            .sample(rng);
        if !count.is_finite() {
            return Err(Error::Numeric("jump count draw".into()));
        }
        let count = count as usize;
        let region = Region::Annulus { inner: delta, outer: f64::INFINITY };
        let mut times = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.gen();
            times.push(start + (1.0 - u) * len);
        }
        for &t in &times {
            let size = sample_jump(model, &region, rng)?;
            let cell = cell_offset + local_cell(t, start, step, cells);
            side_jumps.push(JumpEvent { time: t, cell, size });
        }
        side_jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    }

    let sqrt_h = step.sqrt();
    for inc in increments.iter_mut() {
        *inc += net_drift;
        if let Some(r) = root {
            let z = DVector::from_fn(dim, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                v
            });
            *inc += r * z * sqrt_h;
        }
    }
    for ev in &side_jumps {
        increments[ev.cell - cell_offset] += &ev.size;
    }
    jumps.extend(side_jumps);
    Ok(())
}

/// Cell of a time in `(start, start + cells * step]`.
fn local_cell(t: f64, start: f64, step: f64, cells: usize) -> usize {
    let c = ((t - start) / step).ceil();
    if c <= 1.0 {
        0
    } else {
        ((c as usize) - 1).min(cells - 1)
    }
}

/// Drift correction `int_{delta < |x| <= 1} x` against the jump measure:
/// sampling the band `(delta, 1]` raw, instead of compensated, shifts the
/// mean by exactly this amount.
fn truncation_compensator(model: &LevyModel, delta: f64) -> Result<DVector<f64>> {
    let dim = model.dim();
    if delta >= 1.0 || model.zero_jump_measure() {
        return Ok(DVector::zeros(dim));
    }
    match model.jumps() {
        JumpSpec::Atoms(list) => {
            let mut b = DVector::zeros(dim);
            for (x, r) in list {
                let n = x.norm();
                if n > delta && n <= 1.0 {
                    b += x * *r;
                }
            }
            Ok(b)
        }
        JumpSpec::IndependentMarginals(ms) => {
            let mut b = DVector::zeros(dim);
            for (j, m) in ms.iter().enumerate() {
                b[j] = m.signed_band(delta, 1.0)?;
            }
            Ok(b)
        }
        _ => Err(Error::Unsupported(
            "the small-jump compensator needs an atomic or independent-marginal jump measure"
                .into(),
        )),
    }
}

/// Covariance `int_{0 < |x| <= delta} x x^T` of the discarded small jumps.
fn small_jump_cov(model: &LevyModel, delta: f64) -> Result<DMatrix<f64>> {
    let dim = model.dim();
    let mut c = DMatrix::zeros(dim, dim);
    if delta <= 0.0 || model.zero_jump_measure() {
        return Ok(c);
    }
    match model.jumps() {
        JumpSpec::Atoms(list) => {
            for (x, r) in list {
                if x.norm() <= delta {
                    c += x * x.transpose() * *r;
                }
            }
        }
        JumpSpec::IndependentMarginals(ms) => {
            for (j, m) in ms.iter().enumerate() {
                c[(j, j)] = m.second_band(delta)?;
            }
        }
        _ => {
            return Err(Error::Unsupported(
                "the small-jump Gaussian substitute needs an atomic or independent-marginal jump \
                 measure"
                    .into(),
            ))
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergent("small-jump covariance".into()));
    }
    Ok(c)
}

/// A simulated path on a uniform value grid starting at `start`.
#[derive(Clone, Debug)]
pub struct ProcessPath {
    step: f64,
    start: f64,
    values: Vec<DVector<f64>>,
    history: f64,
    tail_bound: Option<f64>,
}

impl ProcessPath {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn value(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// History length of the driver behind the path.
    pub fn history(&self) -> f64 {
        self.history
    }

    /// Energy of the kernel band the finite history discards, when the
    /// quadrature can certify it.
    pub fn tail_bound(&self) -> Option<f64> {
        self.tail_bound
    }

    /// Largest Euclidean distance between two paths on their shared grid.
    pub fn sup_distance(&self, other: &ProcessPath) -> Result<f64> {
        if (self.step - other.step).abs() > GRID_SNAP * self.step
            || (self.start - other.start).abs() > GRID_SNAP * self.step
            || self.len() != other.len()
        {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Writes `t,x_1,...,x_d` rows with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let d = self.dim();
        let mut out = String::with_capacity(self.values.len() * 24 * (d + 1));
        out.push_str("t");
        for j in 1..=d {
            let _ = write!(out, ",x_{j}");
        }
        out.push('\n');
        for (k, v) in self.values.iter().enumerate() {
            let _ = write!(out, "{:.16e}", self.time(k));
            for j in 0..d {
                let _ = write!(out, ",{:.16e}", v[j]);
            }
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// Long-format ensemble dump: `path_id,t,x_1,...,x_d` rows.
pub fn write_ensemble_csv(paths: &[ProcessPath], path: &Path) -> std::io::Result<()> {
    let d = if paths.is_empty() { 0 } else { paths[0].dim() };
    let mut out = String::new();
    out.push_str("path_id,t");
    for j in 1..=d {
        let _ = write!(out, ",x_{j}");
    }
    out.push('\n');
    for (id, p) in paths.iter().enumerate() {
        for (k, v) in p.values.iter().enumerate() {
            let _ = write!(out, "{id},{:.16e}", p.time(k));
            for j in 0..d {
                let _ = write!(out, ",{:.16e}", v[j]);
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)
}

/// Kernel weights on the lag grid, one matrix per whole-step lag.
fn lag_matrices(g: &MatrixGridFunction) -> Vec<DMatrix<f64>> {
    let d = g.dim();
    (0..g.len()).map(|k| DMatrix::from_fn(d, d, |i, j| g.entry(i, j).value(k))).collect()
}

fn finite_weights(mats: &[DMatrix<f64>]) -> bool {
    mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
}

/// Moving-average path `X_t = sum_i K(t, u_i) dL_i` over the driver cells,
/// on the value grid from `t0` to the driver's end. The weight `K(t, u) =
/// Phi(t - u) - Psi(-u)` is evaluated at each cell's right node `u_i`, so
/// kernels that are indicators on the grid telescope exactly.
pub fn ma_path(kernel: &Kernel, driver: &DriverPath, t0: f64) -> Result<ProcessPath> {
    let dim = kernel.dim();
    if dim != driver.dim() {
        return Err(Error::DimMismatch(format!(
            "kernel dimension {dim} against driver dimension {}",
            driver.dim()
        )));
    }
    let h = driver.step();
    let past = driver.past_cells();
    let cells = driver.cells();
    let k0 = past + whole_cells(t0, h, "t0")?;
    if k0 > cells {
        return Err(Error::invalid("t0", "beyond the simulated horizon"));
    }

    let phi = lag_matrices(&kernel.phi_grid(h, cells)?);
    let psi = if past > 0 { lag_matrices(&kernel.psi_grid(h, past)?) } else { Vec::new() };
    if !finite_weights(&phi) || !finite_weights(&psi) {
        return Err(Error::invalid("kernel", "non-finite kernel value on the simulation grid"));
    }

    // Sum_i Psi(-u_i) dL_i does not depend on the observation time; only
    // cells with a nonnegative argument contribute.
    let inc = driver.increments();
    let mut psi_sum = DVector::zeros(dim);
    for i in 0..past {
        psi_sum.gemv(1.0, &psi[past - 1 - i], &inc[i], 1.0);
    }

    let mut values = Vec::with_capacity(cells - k0 + 1);
    for k in k0..=cells {
        let mut x = -psi_sum.clone();
        for i in 0..k {
            x.gemv(1.0, &phi[k - 1 - i], &inc[i], 1.0);
        }
        values.push(x);
    }
    if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("path value is not finite".into()));
    }

    let tail_bound = if past > 0 {
        kernel.history_tail_energy(driver.history(), driver.end_time().max(0.0))
    } else {
        None
    };
    Ok(ProcessPath {
        step: h,
        start: t0,
        values,
        history: driver.history(),
        tail_bound,
    })
}

/// Split the path at `t0 >= 0` into the past influence and the fresh part:
/// `A_t` sums `(Phi(t - u) - Phi(t0 - u)) dL_u` over cells up to `t0`,
/// `Xbar_t` sums `Phi(t - u) dL_u` over later cells, and
/// `X_t = X_{t0} + A_t + Xbar_t` exactly on the value grid.
pub fn decompose(
    kernel: &Kernel,
    driver: &DriverPath,
    t0: f64,
) -> Result<(ProcessPath, ProcessPath)> {
    let dim = kernel.dim();
    if dim != driver.dim() {
        return Err(Error::DimMismatch(format!(
            "kernel dimension {dim} against driver dimension {}",
            driver.dim()
        )));
    }
    let h = driver.step();
    let past = driver.past_cells();
    let cells = driver.cells();
    let k0 = past + whole_cells(t0, h, "t0")?;
    if k0 > cells {
        return Err(Error::invalid("t0", "beyond the simulated horizon"));
    }

    let phi = lag_matrices(&kernel.phi_grid(h, cells)?);
    if !finite_weights(&phi) {
        return Err(Error::invalid("kernel", "non-finite kernel value on the simulation grid"));
    }

    let inc = driver.increments();
    let n = cells - k0 + 1;
    let mut a_values = Vec::with_capacity(n);
    let mut xbar_values = Vec::with_capacity(n);
    for k in k0..=cells {
        let mut a = DVector::zeros(dim);
        for i in 0..k0 {
            a.gemv(1.0, &(&phi[k - 1 - i] - &phi[k0 - 1 - i]), &inc[i], 1.0);
        }
        let mut xbar = DVector::zeros(dim);
        for i in k0..k {
            xbar.gemv(1.0, &phi[k - 1 - i], &inc[i], 1.0);
        }
        a_values.push(a);
        xbar_values.push(xbar);
    }

    let tail_bound = if past > 0 {
        kernel.history_tail_energy(driver.history(), driver.end_time().max(0.0))
    } else {
        None
    };
    let a = ProcessPath {
        step: h,
        start: t0,
        values: a_values,
        history: driver.history(),
        tail_bound,
    };
    let xbar = ProcessPath {
        step: h,
        start: t0,
        values: xbar_values,
        history: 0.0,
        tail_bound: None,
    };
    Ok((a, xbar))
}

/// Exact Ornstein-Uhlenbeck recursion over the driver cells:
/// `X_{t+h} = e^{Ah} X_t + sum e^{A(t+h-s)} Sigma dL_s`, with jump times
/// taken from the driver's jump log and the remaining (drift, Gaussian,
/// compensator) part of each cell applied at the cell's right node.
///
/// With `start = None`, the recursion begins at zero state at the oldest
/// cell, so the driver's history doubles as the warm-up window; the path
/// covers `[0, horizon]` either way.
pub fn ou_exact(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    driver: &DriverPath,
    start: Option<DVector<f64>>,
) -> Result<ProcessPath> {
    let dim = driver.dim();
    if a.nrows() != dim || a.ncols() != dim || sigma.nrows() != dim || sigma.ncols() != dim {
        return Err(Error::DimMismatch("state matrices must match the driver dimension".into()));
    }
    if !(spectral_abscissa(a) < 0.0) {
        return Err(Error::invalid("a", "spectral abscissa must be negative"));
    }
    let h = driver.step();
    let past = driver.past_cells();
    let cells = driver.cells();
    let prop = matexp(&(a * h));

    let (first_cell, mut x) = match start {
        Some(v) => {
            if v.len() != dim {
                return Err(Error::DimMismatch("start state length".into()));
            }
            (past, v)
        }
        None => (0, DVector::zeros(dim)),
    };

    let jumps = driver.jumps();
    let mut jp = jumps.partition_point(|ev| ev.cell < first_cell);

    let mut values = Vec::with_capacity(cells - past + 1);
    if first_cell == past {
        values.push(x.clone());
    }
    for i in first_cell..cells {
        let cell_end = driver.node_time(i);
        x = &prop * x;
        let mut cont = driver.increments()[i].clone();
        while jp < jumps.len() && jumps[jp].cell == i {
            let ev = &jumps[jp];
            cont -= &ev.size;
            let dt = (cell_end - ev.time).max(0.0);
            x += matexp(&(a * dt)) * (sigma * &ev.size);
            jp += 1;
        }
        x += sigma * cont;
        if i + 1 >= past {
            values.push(x.clone());
        }
    }
    if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("path value is not finite".into()));
    }
    Ok(ProcessPath {
        step: h,
        start: 0.0,
        values,
        history: driver.history(),
        tail_bound: None,
    })
}
