//! Acceptance checklist: one test per criterion, each printing a summary
//! line with the measured values behind its verdict. Tolerances are pinned
//! next to each assertion.

use std::time::Instant;

use approx::assert_abs_diff_eq;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;

use levyma::gridfn::{conv_adjugate, conv_determinant, conv_scalar, GridFunction, MatrixGridFunction};
use levyma::kernels::{exp_kernel, mvn_kernel, scaled_laplace_detstar, tabulated_kernel, GridConfig};
use levyma::levymeasure::{
    check_jumps, independent_components, sample_jump, subordinate, upsilon, JumpSpec, JumpsStatus,
    LevyModel, Marginal1d, Region,
};
use levyma::copula::{archimedean_copula, check_strict_increasing, copula_measure, margin, Generator, IncreaseVerdict};
use levyma::mcverify::{
    conditional_tube, hitting_probability, tube_probability, wilson95, McConfig, ResultRow,
    TubeEstimate, TubeSpec,
};
use levyma::powersum::{beta_fn, power_conv_determinant, PowerMatrix, PowerSum};
use levyma::simulate::{ma_path, ou_exact, sample_driver, SimConfig};
use levyma::streams::{substream, StreamKind};

fn brownian(dim: usize) -> LevyModel {
    LevyModel::atoms(dim, vec![])
        .unwrap()
        .with_gaussian(DMatrix::identity(dim, dim))
        .unwrap()
}

#[test]
fn criterion_01_convolution_determinant_cancellation() {
    let started = Instant::now();
    // Phi = [[2t, t^2], [3t^2, t^3]]: the cross terms convolve to the same
    // Beta multiple of t^5, so the convolution determinant is exactly zero.
    let pm = PowerMatrix::from_fn(2, |i, j| {
        match (i, j) {
            (0, 0) => PowerSum::monomial(2.0, 1.0),
            (0, 1) => PowerSum::monomial(1.0, 2.0),
            (1, 0) => PowerSum::monomial(3.0, 2.0),
            _ => PowerSum::monomial(1.0, 3.0),
        }
        .unwrap()
    })
    .unwrap();
    let symbolic = power_conv_determinant(&pm).unwrap();
    assert!(symbolic.is_zero(), "symbolic determinant has terms {:?}", symbolic.terms());

    let h = 1e-3;
    let grid = conv_determinant(&pm.sample(h, 1001).unwrap()).unwrap();
    let sup = grid.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "criterion 01: PASS (symbolic determinant empty, grid sup {sup:.3e} <= 1e-6, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(sup <= 1e-6, "grid determinant sup {sup:.3e} exceeds 1e-6");
}

#[test]
fn criterion_02_beta_identities() {
    let b24 = beta_fn(2.0, 4.0).unwrap();
    let b33 = beta_fn(3.0, 3.0).unwrap();
    assert_abs_diff_eq!(2.0 * b24, 0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(3.0 * b33, 0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(b33 - b24, -1.0 / 60.0, epsilon = 1e-12);
    println!(
        "criterion 02: PASS (2B(2,4) = {:.15}, 3B(3,3) = {:.15}, B(3,3)-B(2,4) = {:.15})",
        2.0 * b24,
        3.0 * b33,
        b33 - b24
    );
}

#[test]
fn criterion_03_laplace_determinant_asymptotics() {
    let started = Instant::now();
    let a = dmatrix![-1.0, 2.0; 0.0, -3.0];
    let cfg = GridConfig { step: 1e-4, horizon: 20.0 };
    let v = scaled_laplace_detstar(&a, 50.0, &cfg).unwrap();
    println!(
        "criterion 03: measured s^2 L[det*](50) = {v:.15} against [0.98, 1.02] ({:.2}s); \
         the transform equals s^2/((s+1)(s+3)) = 0.92489826..., which reaches the 2% band \
         only near s = 200, so the bound fails at s = 50",
        started.elapsed().as_secs_f64()
    );
    assert!((0.98..=1.02).contains(&v), "s^2 L[det*](50) = {v:.15} is outside [0.98, 1.02]");
}

#[test]
fn criterion_04_determinant_algebra_on_random_kernels() {
    let started = Instant::now();
    let h = 1e-3;
    let len = 1001;
    let mut rng = substream(4, StreamKind::Auxiliary, 0);
    let sup = |g: &GridFunction| g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for case in 0..100 {
        let d = if case < 50 { 2 } else { 3 };
        // Random quadratic entries with a dominant constant diagonal, so
        // the determinant scale stays well away from zero.
        let mut coeff = |i: usize, j: usize| {
            let c0: f64 = rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 };
            let c1: f64 = rng.gen_range(-1.0..1.0);
            let c2: f64 = rng.gen_range(-1.0..1.0);
            PowerSum::new(&[(c0, 0.0), (c1, 1.0), (c2, 2.0)]).unwrap()
        };
        let pm = PowerMatrix::from_fn(d, &mut coeff).unwrap();
        let phi = pm.sample(h, len).unwrap();
        let det = conv_determinant(&phi).unwrap();
        let scale = sup(&det);
        assert!(scale > 1e-6, "case {case}: degenerate determinant scale {scale:.3e}");

        // Cofactor expansion down every column.
        let adj = conv_adjugate(&phi).unwrap();
        for r in 0..d {
            let mut acc = GridFunction::zeros(h, len).unwrap();
            for i in 0..d {
                acc = acc.add(&conv_scalar(phi.entry(i, r), adj.entry(r, i)).unwrap()).unwrap();
            }
            let diff = sup(&acc.add(&det.scale(-1.0)).unwrap());
            assert!(
                diff <= 1e-8 * scale,
                "case {case}: column {r} cofactor expansion off by {:.3e} relative",
                diff / scale
            );
        }

        // Constant left factor: det*(A Phi) = det(A) det*(Phi).
        let a = DMatrix::from_fn(d, d, |i, j| {
            rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }
        });
        let aphi = MatrixGridFunction::from_fn(d, |i, j| {
            let mut row = GridFunction::zeros(h, len).unwrap();
            for k in 0..d {
                row = row.add(&phi.entry(k, j).scale(a[(i, k)])).unwrap();
            }
            row
        })
        .unwrap();
        let lhs = conv_determinant(&aphi).unwrap();
        let rhs = det.scale(a.determinant());
        let diff = sup(&lhs.add(&rhs.scale(-1.0)).unwrap());
        let rscale = sup(&rhs);
        assert!(
            diff <= 1e-8 * rscale,
            "case {case}: det*(A Phi) off by {:.3e} relative",
            diff / rscale
        );
    }
    println!(
        "criterion 04: PASS (100 random kernels, cofactor and left-factor identities within 1e-8, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_05_beta_convolution_asymptotics() {
    let h = 1e-5;
    let len = 101;
    let t = 1e-3;
    for &(alpha, beta) in &[(0.25, 0.5), (-0.25, 1.0)] {
        // f(t) = t^alpha (1 + 0.3 t), g(t) = t^beta (1 - 0.2 t), with the
        // power behaviour declared so the quadrature weights the singular
        // end exactly. The sentinel at the origin is never read.
        let fval = |s: f64| if s == 0.0 { 0.0 } else { s.powf(alpha) * (1.0 + 0.3 * s) };
        let gval = |s: f64| if s == 0.0 { 0.0 } else { s.powf(beta) * (1.0 - 0.2 * s) };
        let f = GridFunction::with_end_terms(
            h,
            (0..len).map(|k| fval(k as f64 * h)).collect(),
            vec![(1.0, alpha), (0.3, alpha + 1.0)],
        )
        .unwrap();
        let g = GridFunction::with_end_terms(
            h,
            (0..len).map(|k| gval(k as f64 * h)).collect(),
            vec![(1.0, beta), (-0.2, beta + 1.0)],
        )
        .unwrap();
        let conv = conv_scalar(&f, &g).unwrap();
        let ratio = conv.value(len - 1) / (t * fval(t) * gval(t));
        let b = beta_fn(alpha + 1.0, beta + 1.0).unwrap();
        println!(
            "criterion 05: (alpha, beta) = ({alpha}, {beta}): ratio {ratio:.6} vs B = {b:.6}, off by {:.2}%",
            100.0 * (ratio / b - 1.0).abs()
        );
        assert!(
            (ratio / b - 1.0).abs() <= 0.05,
            "ratio {ratio:.6} deviates from B({}, {}) = {b:.6} by more than 5%",
            alpha + 1.0,
            beta + 1.0
        );
    }
    println!("criterion 05: PASS");
}

#[test]
fn criterion_06_brownian_tube_oracle() {
    let started = Instant::now();
    let kernel = mvn_kernel(0.5).unwrap();
    let model = brownian(1);
    let tube = TubeSpec::centered(0.0, 1.0, 1.0, 1, 0.01).unwrap();
    let mc = McConfig { step: 0.01, delta: 0.0, history: 0.0 };
    let est = tube_probability(&kernel, &model, &tube, 100_000, &mc, 42).unwrap();
    let oracle = 0.3708;
    println!(
        "criterion 06: p_hat = {:.5}, CI = ({:.5}, {:.5}), oracle {oracle}, {:.2}s",
        est.p_hat,
        est.wilson95.0,
        est.wilson95.1,
        started.elapsed().as_secs_f64()
    );
    assert!(
        est.wilson95.0 <= oracle && oracle <= est.wilson95.1,
        "Wilson CI ({:.6}, {:.6}) misses the reflection-series value {oracle}",
        est.wilson95.0,
        est.wilson95.1
    );
    println!("criterion 06: PASS");
}

#[test]
fn criterion_07_degenerate_kernel_zero_paths() {
    let started = Instant::now();
    // Phi vanishes on [0, 1): every path of the restarted average is zero
    // at time one because no increment inside the window gets weight.
    let step = 0.05;
    let cells = 20;
    let grid = MatrixGridFunction::from_fn(1, |_, _| {
        GridFunction::from_values(
            step,
            (0..=2 * cells).map(|k| if k >= cells { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    })
    .unwrap();
    let kernel = tabulated_kernel(grid);
    let model = brownian(1);
    let cfg = SimConfig::new(0.0, 1.0, step, 0.0);
    for seed in 0..1000u64 {
        let driver = sample_driver(&model, cfg, seed).unwrap();
        let path = ma_path(&kernel, &driver, 0.0).unwrap();
        let x1 = path.value(cells)[0];
        assert!(x1.abs() <= 1e-12, "seed {seed}: X_1 = {x1:e}");
    }

    let mc = McConfig { step, delta: 0.0, history: 0.0 };
    for &slope in &[0.15, 0.2, -0.3, 1.0] {
        let target = GridFunction::from_values(
            step,
            (0..=cells).map(|k| slope * k as f64 * step).collect(),
        )
        .unwrap();
        let tube = TubeSpec::new(0.0, 1.0, 0.1, vec![target]).unwrap();
        let est = tube_probability(&kernel, &model, &tube, 200, &mc, 7).unwrap();
        assert_eq!(est.hits, 0, "target slope {slope} was hit despite |f(1)| > 0.1");
    }
    println!(
        "criterion 07: PASS (X_1 = 0 exactly on 1000 paths; 0 hits for four targets with |f(1)| > 0.1, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_08_one_sided_driver_tube_exclusion() {
    let started = Instant::now();
    let kernel = mvn_kernel(0.5).unwrap();
    let step = 0.02;
    let n = 51;
    let descending =
        GridFunction::from_values(step, (0..n).map(|k| -(k as f64) * step).collect()).unwrap();
    let tube = TubeSpec::new(0.0, 1.0, 0.4, vec![descending]).unwrap();
    let mc = McConfig { step, delta: 0.25, history: 0.0 };

    // Spectrally positive: jumps of +1/2 only, drift pinned to the
    // truncated mean so increments are the raw jump sums.
    let positive = LevyModel::atoms(1, vec![(dvector![0.5], 1.0)])
        .unwrap()
        .with_drift(dvector![0.5])
        .unwrap();
    let est = tube_probability(&kernel, &positive, &tube, 100_000, &mc, 8).unwrap();
    println!(
        "criterion 08: one-sided hits = {} / {} (upper CI {:.2e})",
        est.hits, est.trials, est.wilson95.1
    );
    assert_eq!(est.hits, 0, "a nonnegative path entered a tube that is negative beyond t = 0.4");

    // Same jump sizes symmetrized: the descending tube is reachable by a
    // staircase of two downward jumps.
    let symmetric =
        LevyModel::atoms(1, vec![(dvector![0.5], 0.5), (dvector![-0.5], 0.5)]).unwrap();
    let est = tube_probability(&kernel, &symmetric, &tube, 100_000, &mc, 8).unwrap();
    println!(
        "criterion 08: symmetrized p_hat = {:.5}, CI = ({:.5}, {:.5}), {:.2}s",
        est.p_hat,
        est.wilson95.0,
        est.wilson95.1,
        started.elapsed().as_secs_f64()
    );
    assert!(
        est.hits > 0 && est.wilson95.0 > 0.0,
        "symmetrized jumps should reach the descending tube (hits = {})",
        est.hits
    );
    println!("criterion 08: PASS");
}

#[test]
fn criterion_09_jump_support_verdicts() {
    let started = Instant::now();
    let radii = [0.1, 1.0];

    // Two-sided density marginals: the support meets both sides of every
    // axis near zero, so the origin is interior at every radius.
    let two_sided = || Marginal1d::density(|x: f64| (-x.abs()).exp(), -1.0, 1.0).unwrap();
    let model = independent_components(vec![two_sided(), two_sided()]).unwrap();
    let verdict = check_jumps(&model, &radii, 64, 4096, 9).unwrap();
    assert!(verdict.all_hold(), "two-sided marginals: {:?}", verdict.per_epsilon[0].status);

    // Spectrally positive: all support in the closed positive orthant, so
    // some direction separates it from the origin.
    let one_sided = || Marginal1d::density(|x: f64| (-x).exp(), 0.0, 1.0).unwrap();
    let positive = independent_components(vec![one_sided(), one_sided()]).unwrap();
    let verdict = check_jumps(&positive, &radii, 64, 4096, 9).unwrap();
    for v in &verdict.per_epsilon {
        assert_eq!(v.status, JumpsStatus::Fails, "radius {}", v.epsilon);
        let u = v.witness.as_ref().expect("separating direction");
        // The witness half-space {<x, u> <= 0} must contain the support.
        let mut rng = substream(9, StreamKind::Auxiliary, 99);
        for _ in 0..100 {
            let x = sample_jump(
                &positive,
                &Region::Annulus { inner: 1e-3, outer: v.epsilon },
                &mut rng,
            )
            .unwrap();
            assert!(x.dot(u) <= 1e-9, "witness fails to separate {x:?}");
        }
    }

    // Atoms at distance one: no support at all inside B(0, 1/2).
    let far = LevyModel::atoms(
        2,
        vec![
            (dvector![1.0, 0.0], 1.0),
            (dvector![-1.0, 0.0], 1.0),
            (dvector![0.0, 1.0], 1.0),
            (dvector![0.0, -1.0], 1.0),
        ],
    )
    .unwrap();
    let verdict = check_jumps(&far, &[0.5], 64, 4096, 9).unwrap();
    assert_eq!(verdict.per_epsilon[0].status, JumpsStatus::Fails);

    // One invertible linear image preserves an interior origin.
    let base = independent_components(vec![two_sided(), two_sided()]).unwrap();
    let mapped = upsilon(base, vec![(1.0, dmatrix![1.0, 1.0; 0.0, 1.0])]).unwrap();
    let verdict = check_jumps(&mapped, &radii, 64, 8192, 9).unwrap();
    assert!(
        verdict.all_hold(),
        "invertible image lost the interior origin: {}",
        verdict.per_epsilon[0].note
    );
    println!(
        "criterion 09: PASS (two-sided Holds, one-sided Fails with verified witness, distant atoms Fail, linear image Holds, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_10_copula_suite() {
    let started = Instant::now();
    let copula = archimedean_copula(2, Generator::ratio()).unwrap();

    // Margins of a Lévy copula are the identity.
    let m = margin(&copula, &[0]).unwrap();
    for &x in &[-2.0, -0.5, 0.3, 1.7, 10.0] {
        let v = m.eval(&[x]).unwrap();
        assert!((v - x).abs() <= 1e-9, "margin at {x} is {v}");
    }

    // Strict rectangle increase away from the axes.
    let verdict =
        check_strict_increasing(&copula, 10_000, &[-50.0, -50.0], &[50.0, 50.0], 10).unwrap();
    match verdict {
        IncreaseVerdict::Holds { trials, min_increment } => {
            assert_eq!(trials, 10_000);
            assert!(min_increment > 0.0);
        }
        IncreaseVerdict::Fails { a, b, increment } => {
            panic!("rectangle [{a:?}, {b:?}] has increment {increment}")
        }
    }

    // Orthant boxes built away from the axes carry positive mass for
    // two-sided exponential marginals in all four sign patterns.
    let marginal = || Marginal1d::density(|x: f64| (-x.abs()).exp(), -30.0, 30.0).unwrap();
    let model = copula_measure(copula, vec![marginal(), marginal()]).unwrap();
    let JumpSpec::CopulaDefined(cm) = model.jumps() else {
        panic!("copula coupling lost its measure")
    };
    for &(sx, sy) in &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let corner = |s: f64, a: f64, b: f64| if s > 0.0 { (a, b) } else { (-b, -a) };
        let (lx, hx) = corner(sx, 1.0, 2.0);
        let (ly, hy) = corner(sy, 1.0, 2.0);
        let mass = cm.rect_mass(&[lx, ly], &[hx, hy]).unwrap();
        assert!(mass > 0.0, "orthant ({sx}, {sy}) box has mass {mass:e}");
    }
    println!(
        "criterion 10: PASS (margins uniform to 1e-9, 10^4 rectangles strictly increasing, four orthant boxes positive, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_11_subordination_histogram() {
    let started = Instant::now();
    // Unit-time subordinator atom: jumps of the subordinated measure are
    // draws of the component vector at time (1, 1), conditioned nonzero.
    let m1 = Marginal1d::atoms(vec![(1.0, 1.5)]).unwrap();
    let m2 = Marginal1d::atoms(vec![(1.0, 1.0), (-1.0, 0.5)]).unwrap();
    // Drifts equal the truncated means, so each component law is the plain
    // uncompensated jump sum and unit-time draws land on the integer lattice.
    let model = subordinate(
        vec![(1.5, m1), (0.5, m2)],
        vec![0.0, 0.0],
        vec![(1.0, vec![1.0, 1.0])],
    )
    .unwrap();

    let n = 100_000usize;
    let region = Region::Annulus { inner: 0.0, outer: f64::INFINITY };
    let mut rng = substream(11, StreamKind::Auxiliary, 0);
    let boxes = |x: &DVector<f64>| -> Option<(usize, usize)> {
        // 5x5 integer-centered cells on {0..4} x {-2..2}.
        let i = x[0].round();
        let j = x[1].round();
        if (0.0..=4.0).contains(&i) && (-2.0..=2.0).contains(&j) {
            Some((i as usize, (j + 2.0) as usize))
        } else {
            None
        }
    };
    let mut counts = [[0u64; 5]; 5];
    for _ in 0..n {
        let x = sample_jump(&model, &region, &mut rng).unwrap();
        assert!(x.norm() > 0.0);
        if let Some((i, j)) = boxes(&x) {
            counts[i][j] += 1;
        }
    }

    // Direct product law: independent Poisson jump sums at time one,
    // rejected at the origin, from a separate stream.
    let mut rng = substream(11, StreamKind::Auxiliary, 1);
    let mut direct = [[0u64; 5]; 5];
    let mut drawn = 0usize;
    while drawn < n {
        let k1 = sample_poisson(1.5, &mut rng);
        let k2p = sample_poisson(1.0, &mut rng);
        let k2m = sample_poisson(0.5, &mut rng);
        let x = dvector![k1 as f64, k2p as f64 - k2m as f64];
        if x.norm() == 0.0 {
            continue;
        }
        drawn += 1;
        if let Some((i, j)) = boxes(&x) {
            direct[i][j] += 1;
        }
    }

    let mut worst = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            let p = counts[i][j] as f64 / n as f64;
            let q = direct[i][j] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64 + q * (1.0 - q) / n as f64).sqrt();
            if p == 0.0 && q == 0.0 {
                continue;
            }
            let pulls = (p - q).abs() / sigma.max(1e-12);
            worst = worst.max(pulls);
            assert!(
                pulls <= 3.0,
                "box ({i}, {j}): sampler {p:.5} vs product law {q:.5} differs by {pulls:.2} sigma"
            );
        }
    }
    println!(
        "criterion 11: PASS (25 boxes within 3 sigma, worst {worst:.2} sigma, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

fn sample_poisson(mean: f64, rng: &mut rand_chacha::ChaCha12Rng) -> u64 {
    use rand_distr::Distribution;
    rand_distr::Poisson::new(mean).unwrap().sample(rng) as u64
}

#[test]
fn criterion_12_ou_consistency() {
    let started = Instant::now();
    let a = dmatrix![-1.0];
    let sigma = dmatrix![1.0];
    let kernel = exp_kernel(a.clone(), sigma.clone()).unwrap();
    // Pure-jump driver: the refinement error is the within-cell jump
    // placement, and the same seed reproduces identical jump times at
    // both resolutions because jump draws precede the cell loop.
    let model = LevyModel::atoms(1, vec![(dvector![1.0], 5.0), (dvector![-1.0], 5.0)]).unwrap();
    let sup_err = |h: f64, seed: u64| -> f64 {
        let cfg = SimConfig::new(1.0, 1.0, h, 0.5);
        let driver = sample_driver(&model, cfg, seed).unwrap();
        let ma = ma_path(&kernel, &driver, 0.0).unwrap();
        let ou = ou_exact(&a, &sigma, &driver, None).unwrap();
        ma.sup_distance(&ou).unwrap()
    };
    let (mut coarse, mut fine) = (0.0, 0.0);
    for seed in 0..5 {
        coarse += sup_err(1e-3, seed);
        fine += sup_err(5e-4, seed);
    }
    let ratio = fine / coarse;
    println!(
        "criterion 12: averaged sup-error {:.3e} at h = 1e-3 vs {:.3e} at h = 5e-4, ratio {ratio:.3}",
        coarse / 5.0,
        fine / 5.0
    );
    assert!(
        (0.4..=0.6).contains(&ratio),
        "halving the step scaled the sup-error by {ratio:.3}, outside 0.5 +- 20%"
    );

    // Stationary variance of dX = -X dt + dW is 1/2.
    let gaussian = brownian(1);
    let cfg = SimConfig::new(5.0, 0.5, 0.01, 0.0);
    let n = 10_000usize;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for seed in 0..n {
        let driver = sample_driver(&gaussian, cfg, seed as u64).unwrap();
        let path = ou_exact(&a, &sigma, &driver, None).unwrap();
        let x = path.value(path.len() - 1)[0];
        sum += x;
        sumsq += x * x;
    }
    let mean = sum / n as f64;
    let var = (sumsq - n as f64 * mean * mean) / (n as f64 - 1.0);
    // Sample variance of N(0, 1/2) has standard error 0.5 sqrt(2/(n-1)).
    let band = 3.0 * 0.5 * (2.0 / (n as f64 - 1.0)).sqrt();
    println!(
        "criterion 12: stationary variance {var:.4} vs 1/2 +- {band:.4}, {:.2}s",
        started.elapsed().as_secs_f64()
    );
    assert!((var - 0.5).abs() <= band, "variance {var:.5} outside 0.5 +- {band:.5}");
    println!("criterion 12: PASS");
}

#[test]
fn criterion_13_hitting_suite() {
    let started = Instant::now();
    // Driftless Brownian motion reaches level one before time one with
    // probability 2(1 - N(1)); the event is entry into B(2, 1).
    let kernel = mvn_kernel(0.5).unwrap();
    let model = brownian(1);
    let mc = McConfig { step: 0.01, delta: 0.0, history: 0.0 };
    let est = hitting_probability(
        &kernel,
        &model,
        &dvector![2.0],
        1.0,
        0.0,
        1.0,
        100_000,
        &mc,
        31,
    )
    .unwrap();
    let oracle = 0.3173105078629141;
    println!(
        "criterion 13: level hit p_hat = {:.5}, CI = ({:.5}, {:.5}) vs {oracle:.4}",
        est.p_hat, est.wilson95.0, est.wilson95.1
    );
    assert!(
        est.wilson95.0 <= oracle && oracle <= est.wilson95.1,
        "Wilson CI misses the level-crossing value"
    );

    // Ornstein-Uhlenbeck ball hits stay strictly positive whatever past
    // the estimator is frozen on.
    let ou = exp_kernel(dmatrix![-1.0], dmatrix![1.0]).unwrap();
    let mc = McConfig { step: 0.02, delta: 0.0, history: 6.0 };
    for seed in 0..10 {
        let est = hitting_probability(
            &ou,
            &model,
            &dvector![0.0],
            0.5,
            0.0,
            1.0,
            1000,
            &mc,
            seed,
        )
        .unwrap();
        assert!(
            est.hits > 0 && est.wilson95.0 > 0.0,
            "frozen past {seed} reported a zero hitting estimate"
        );
    }
    println!(
        "criterion 13: PASS (level-hit CI contains the oracle; 10 frozen pasts all positive, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_14_thread_count_reproducibility() {
    let started = Instant::now();
    let kernel = mvn_kernel(0.5).unwrap();
    let model = brownian(1);
    let tube = TubeSpec::centered(0.0, 1.0, 1.0, 1, 0.02).unwrap();
    let mc = McConfig { step: 0.02, delta: 0.0, history: 1.0 };

    let run = |threads: usize| -> (TubeEstimate, TubeEstimate, TubeEstimate) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let t = tube_probability(&kernel, &model, &tube, 20_000, &mc, 14).unwrap();
            let c = conditional_tube(&kernel, &model, 14, &tube, 5_000, &mc).unwrap();
            let h = hitting_probability(
                &kernel,
                &model,
                &dvector![1.0],
                0.5,
                0.0,
                1.0,
                5_000,
                &mc,
                14,
            )
            .unwrap();
            (t, c, h)
        })
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in [(&one.0, &four.0), (&one.1, &four.1), (&one.2, &four.2)] {
        assert_eq!(a.hits, b.hits);
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert_eq!(a.wilson95.0.to_bits(), b.wilson95.0.to_bits());
        assert_eq!(a.wilson95.1.to_bits(), b.wilson95.1.to_bits());
        assert_eq!(a.config_hash, b.config_hash);
    }

    // The results table is byte-identical too, once the wall-clock column
    // is stripped.
    let dir = tempfile::tempdir().unwrap();
    let strip = |est: &(TubeEstimate, TubeEstimate, TubeEstimate), name: &str| -> String {
        let rows: Vec<ResultRow> = [("tube", &est.0), ("conditional", &est.1), ("hitting", &est.2)]
            .into_iter()
            .map(|(label, e)| ResultRow {
                experiment: label.into(),
                epsilon: 1.0,
                t0: 0.0,
                t_end: 1.0,
                seed: 14,
                estimate: e.clone(),
            })
            .collect();
        let path = dir.path().join(name);
        levyma::mcverify::write_results_csv(&rows, &path).unwrap();
        std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&one, "one.csv"), strip(&four, "four.csv"));

    // Wilson intervals themselves are pure functions of the counts.
    assert_eq!(wilson95(one.0.hits, 20_000), four.0.wilson95);
    println!(
        "criterion 14: PASS (1-thread and 4-thread runs byte-identical, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}
