mod common;

use common::*;
use magray_core::dynamics::{Flow, PhasePoint};
use magray_core::geometry::ForceField;
use magray_core::lifting::{fiber_inner, fiber_norm, FiberFunction};
use magray_core::normal_op::*;
use magray_core::spectral::SpectralField;
use magray_core::tensor::{pair_inner, pair_norm, SymTensorField, TensorPair};
use magray_core::MagrayError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_fiber(surface: &magray_core::geometry::ConformalSurface, band: usize, rng: &mut ChaCha8Rng) -> FiberFunction {
    let mut terms = Vec::new();
    for kx in -2i32..=2 {
        for ky in -2i32..=2 {
            for j in 0..=band as i32 {
                terms.push((kx as f64, ky as f64, j as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..TWO_PI)));
            }
        }
    }
    FiberFunction::from_fn(surface, band, move |x, y, th| {
        terms.iter().map(|(a, b, j, c, p)| c * (a * x + b * y + j * th + p).cos()).sum()
    })
}

#[test]
fn constant_function_on_flat_torus() {
    let s = flat(8);
    let field = ForceField::zero(&s);
    let cfg = NormalOpConfig::new(1.5, 64, 16).unwrap();
    let chi_integral: f64 = cfg.cutoff.values.iter().sum::<f64>() * cfg.cutoff.step;
    let f = TensorPair::new(SymTensorField::constant(&s, 1.0), None).unwrap();
    let out = normal_apply(&s, &field, &f, &cfg).unwrap();
    let expect = TWO_PI * (chi_integral + 1.0);
    for v in &out.p.comps[0] {
        assert!((v - expect).abs() < 1e-10, "{v} vs {expect}");
    }
}

#[test]
fn cutoff_integral_matches_continuous_autocorrelation() {
    // int chi = (int psi)^2 / int psi^2 for a bump psi of half-width epsilon / 2
    let eps = 2.0;
    let c = CutoffProfile::new(eps, 256).unwrap();
    let bump = |s: f64| if s.abs() < 1.0 { (-1.0 / (1.0 - s * s)).exp() } else { 0.0 };
    let n = 200_000;
    let h = 2.0 / n as f64;
    let (mut i1, mut i2) = (0.0, 0.0);
    for i in 0..=n {
        let b = bump(-1.0 + i as f64 * h);
        i1 += b * h;
        i2 += b * b * h;
    }
    let expect = (eps / 2.0) * i1 * i1 / i2;
    assert!((c.integral() - expect).abs() < 1e-6 * expect, "{} vs {expect}", c.integral());
}

#[test]
fn averaging_a_derivative_integrates_by_parts() {
    let mut r = rng(3);
    let s = random_surface(16, 0.2, &mut r);
    let field = random_magnetic(0.7, 0.2, &mut r);
    let cfg = NormalOpConfig::new(1.5, 128, 16).unwrap();
    let flow = Flow::new(&s, &field);
    let w = |z: [f64; 3]| z[0].sin() * (2.0 * z[1]).cos() + (z[0] - z[1] + z[2]).cos();
    let grad = |z: [f64; 3]| {
        let a = z[0] - z[1] + z[2];
        [z[0].cos() * (2.0 * z[1]).cos() - a.sin(), -2.0 * z[0].sin() * (2.0 * z[1]).sin() + a.sin(), -a.sin()]
    };
    let dchi = cfg.cutoff.derivative();
    for z in [PhasePoint::new(0.3, 1.1, 0.4), PhasePoint::new(4.0, 2.5, 2.9)] {
        let lhs = flow_average_at(&s, &field, z, &cfg, |p| {
            let g = grad(p);
            let v = flow.rhs(p);
            g[0] * v[0] + g[1] * v[1] + g[2] * v[2]
        })
        .unwrap();
        let states = orbit_samples(&s, &field, z, &cfg).unwrap();
        let rhs: f64 = -cfg.cutoff.step * states.iter().zip(&dchi).map(|(p, d)| d * w(*p)).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }
}

#[test]
fn flow_average_is_positive() {
    let mut r = rng(5);
    let s = random_surface(8, 0.2, &mut r);
    let field = random_magnetic(0.8, 0.3, &mut r);
    let mut cfg = NormalOpConfig::new(1.0, 64, 16).unwrap();
    cfg.substeps = 1;
    for _ in 0..10 {
        let u = random_fiber(&s, 2, &mut r);
        let au = truncated_flow_average(&s, &field, &u, &cfg).unwrap();
        let q = fiber_inner(&s, &au, &u) / fiber_norm(&s, &u).powi(2);
        assert!(q >= -1e-8, "{q}");
    }
}

#[test]
fn normal_operator_is_self_adjoint_and_positive() {
    let mut r = rng(7);
    let s = random_surface(12, 0.2, &mut r);
    let field = random_magnetic(0.8, 0.2, &mut r);
    let mut cfg = NormalOpConfig::new(1.0, 64, 16).unwrap();
    cfg.substeps = 1;
    for m in [0, 1] {
        let f = TensorPair::random(&s, m, 2, &mut r);
        let h = TensorPair::random(&s, m, 2, &mut r);
        let nf = normal_apply(&s, &field, &f, &cfg).unwrap();
        let nh = normal_apply(&s, &field, &h, &cfg).unwrap();
        let scale = pair_norm(&s, &f) * pair_norm(&s, &h);
        let defect = (pair_inner(&s, &nf, &h) - pair_inner(&s, &f, &nh)).abs() / scale;
        assert!(defect < 1e-6, "m = {m}: {defect}");
        assert!(pair_inner(&s, &nf, &f) > 0.0);
    }
}

#[test]
fn dense_matrix_matches_matrix_free_apply() {
    let mut r = rng(11);
    let s = random_surface(12, 0.2, &mut r);
    let field = random_magnetic(0.8, 0.2, &mut r);
    let cfg = NormalOpConfig::new(1.0, 64, 16).unwrap();
    let mat = normal_matrix(&s, &field, 1, &cfg).unwrap();
    let f = TensorPair::random(&s, 1, 3, &mut r);
    let direct = normal_apply(&s, &field, &f, &cfg).unwrap().to_vec();
    let dense = &mat * nalgebra::DVector::from_vec(f.to_vec());
    let err = direct.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let size = direct.iter().map(|a| a.abs()).fold(0.0, f64::max);
    assert!(err < 1e-10 * size, "{err}");
}

#[test]
fn injective_on_solenoidal_pairs() {
    let mut r = rng(13);
    let s = random_surface(12, 0.2, &mut r);
    let field = random_magnetic(0.8, 0.2, &mut r);
    let cfg = NormalOpConfig::new(1.0, 64, 16).unwrap();
    let spec = injectivity_spectrum(&s, &field, 1, 12, &cfg).unwrap();
    // 3 x 121 Nyquist-free pairs minus the 120 nonconstant functions hit by div
    assert_eq!(spec.solenoidal_dim, 243);
    assert!(spec.smallest_solenoidal > 1e-3, "{}", spec.smallest_solenoidal);
    assert!(spec.coercivity_min > 1e-3, "{}", spec.coercivity_min);
    assert!(matches!(injectivity_spectrum(&s, &field, 1, 32, &cfg), Err(MagrayError::TooLarge { .. })));
}

#[test]
fn thermostat_path() {
    let mut r = rng(17);
    let s = random_surface(8, 0.2, &mut r);
    let cfg = NormalOpConfig::new(1.0, 64, 16).unwrap();
    let f = SymTensorField::random(&s, 0, 2, &mut r);
    let pair = TensorPair::new(f.clone(), None).unwrap();

    let zero_thermo = ForceField::constant_thermostat(&s, 0.0);
    let zero_mag = ForceField::zero(&s);
    let a = thermostat_normal_apply(&s, &zero_thermo, &f, &cfg).unwrap();
    let b = normal_apply(&s, &zero_mag, &pair, &cfg).unwrap();
    let diff = a.output.sub(&b.p).max_abs();
    assert!(diff < 1e-10, "{diff}");

    let mut l0 = SpectralField::constant(TWO_PI, TWO_PI, 0.3);
    l0.push(1, 0, 0.1.into());
    l0.push(-1, 0, 0.1.into());
    let l1 = SpectralField::constant(TWO_PI, TWO_PI, 0.2);
    let thermo = ForceField::thermostat(vec![l0, l1]).unwrap();
    let out = thermostat_normal_apply(&s, &thermo, &f, &cfg).unwrap();
    assert!(out.jacobian_defect < 1e-6, "{}", out.jacobian_defect);
    assert!(matches!(thermostat_normal_apply(&s, &zero_mag, &f, &cfg), Err(MagrayError::Unsupported { .. })));
}

#[test]
fn symbol_of_flat_normal_operator() {
    let s = flat(128);
    let field = ForceField::zero(&s);
    let cfg = NormalOpConfig::new(2.0, 1024, 1024).unwrap();
    let probes: Vec<SymbolProbe> =
        [8, 16, 32].iter().map(|&k| symbol_probe(&s, &field, 0, [k, 0], &cfg).unwrap()).collect();
    for p in &probes {
        let e = &p.entries[0];
        let kn = p.k[0] as f64;
        // stationary phase at the two directions orthogonal to k
        let predicted = 2.0 * TWO_PI / kn;
        assert!((e.predicted.unwrap() - predicted).abs() < 1e-12);
        assert!(e.rel_err.unwrap() < 0.12, "{:?}", e);
    }
    let slope = homogeneity_slope(&probes, (0, 0), 0).unwrap();
    assert!((slope + 1.0).abs() < 0.05, "{slope}");

    let p1 = symbol_probe(&s, &field, 1, [8, 0], &cfg).unwrap();
    assert!(p1.off_diagonal_ratio < 0.05, "{}", p1.off_diagonal_ratio);
    assert!(p1.entries.iter().filter_map(|e| e.rel_err).all(|e| e < 0.12));

    let too_low = NormalOpConfig::new(0.5, 128, 64).unwrap();
    assert!(matches!(symbol_probe(&s, &field, 0, [8, 0], &too_low), Err(MagrayError::Config(_))));
    assert!(matches!(symbol_probe(&s, &field, 0, [40, 0], &cfg), Err(MagrayError::Config(_))));
}
