mod common;

use std::f64::consts::PI;

use common::*;
use magray_core::dynamics::{Flow, PhasePoint};
use magray_core::geometry::ForceField;
use magray_core::lifting::*;
use magray_core::spectral::SpectralField;
use magray_core::tensor::*;

#[test]
fn pullback_examples() {
    let s = flat(8);
    let f = SymTensorField::scalar(s.grid.sample(|x, _| x.cos()));
    let u = pullback(&s, &f);
    assert_eq!(u.band, 0);
    assert_eq!(u.modes[0][5].re, f.comps[0][5]);

    let dx = SymTensorField::from_comps(1, vec![vec![1.0; 64], vec![0.0; 64]]).unwrap();
    let u = pullback(&s, &dx);
    assert!((u.mode(1).unwrap()[0].re - 0.5).abs() < 1e-15);
    assert!((u.mode(-1).unwrap()[0].re - 0.5).abs() < 1e-15);

    let mut r = rng(1);
    let cs = random_surface(16, 0.3, &mut r);
    let g = pullback(&cs, &SymTensorField::metric(&cs));
    for n in 0..cs.grid.len() {
        for t in [0.0, 0.4, 2.0] {
            assert!((g.eval(n, t) - 1.0).abs() < 1e-13);
        }
    }
}

#[test]
fn pushforward_examples() {
    let s = flat(8);
    let one = FiberFunction::from_fn(&s, 2, |_, _, _| 1.0);
    let p0 = pushforward(&s, &one, 0);
    assert!(p0.comps[0].iter().all(|v| (v - 2.0 * PI).abs() < 1e-13));
    let cos = FiberFunction::from_fn(&s, 2, |_, _, t| t.cos());
    let p1 = pushforward(&s, &cos, 1);
    assert!(p1.comps[0].iter().all(|v| (v - PI).abs() < 1e-13));
    assert!(p1.comps[1].iter().all(|v| v.abs() < 1e-13));
    let p2 = pushforward(&s, &one, 2);
    let expected = [PI, 0.0, PI];
    for k in 0..3 {
        assert!(p2.comps[k].iter().all(|v| (v - expected[k]).abs() < 1e-13));
    }
}

#[test]
fn pullback_and_pushforward_are_adjoint() {
    let mut r = rng(2);
    let s = random_surface(32, 0.3, &mut r);
    for m in 0..4 {
        let h = SymTensorField::random(&s, m, 3, &mut r);
        let u = FiberFunction::from_fn(&s, 5, |x, y, t| (x + 2.0 * t).sin() + (y - t).cos() * (3.0 * t).sin());
        let lhs = inner(&s, &pushforward(&s, &u, m), &h);
        let rhs = fiber_inner(&s, &u, &pullback(&s, &h));
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "m = {m}: {lhs} vs {rhs}");
    }
}

#[test]
fn parity_of_lifts() {
    let mut r = rng(3);
    let s = random_surface(16, 0.3, &mut r);
    for m in 0..4 {
        let u = pullback(&s, &SymTensorField::random(&s, m, 2, &mut r));
        for j in -(m as i64)..=m as i64 {
            if (j - m as i64).rem_euclid(2) == 1 {
                assert!(u.mode(j).unwrap().iter().all(|c| c.norm() == 0.0));
            }
        }
        // opposite parity is annihilated by the pushforward
        if m >= 1 {
            let h = pushforward(&s, &u, m - 1);
            assert!(h.max_abs() < 1e-12);
        }
    }
}

#[test]
fn generator_examples() {
    let s = flat(16);
    let b1 = ForceField::constant_magnetic(&s, 1.0);
    let c = FiberFunction::from_fn(&s, 1, |_, _, _| 3.0);
    assert!(apply_generator(&s, &b1, &c).unwrap().max_abs() < 1e-15);

    let sin = FiberFunction::from_fn(&s, 1, |_, _, t| t.sin());
    let fu = apply_generator(&s, &b1, &sin).unwrap();
    for n in [0, 40, 100] {
        for t in [0.1, 1.3, 4.0] {
            assert!((fu.eval(n, t) - t.cos()).abs() < 1e-14);
        }
    }

    let zero = ForceField::zero(&s);
    let dx = SymTensorField::from_comps(1, vec![vec![1.0; 256], vec![0.0; 256]]).unwrap();
    assert!(apply_generator(&s, &zero, &pullback(&s, &dx)).unwrap().max_abs() < 1e-15);
}

#[test]
fn generator_matches_derivative_along_flow() {
    let mut r = rng(4);
    let s = random_surface(32, 0.2, &mut r);
    let mut lam = SpectralField::random_real(TWO_PI, TWO_PI, 2, 0.3, &mut r);
    lam.push(0, 0, 0.4.into());
    let mut lam1 = SpectralField::random_real(TWO_PI, TWO_PI, 1, 0.2, &mut r);
    lam1.terms.iter_mut().for_each(|t| t.c *= num_complex::Complex64::new(0.3, 0.7));
    let fields = [random_magnetic(0.5, 0.3, &mut r), ForceField::thermostat(vec![lam, lam1]).unwrap()];
    let u = FiberFunction::from_fn(&s, 3, |x, y, t| (x + t).sin() * (y.cos() + 0.3 * (2.0 * t).cos()));
    let spec = u.to_spectral(&s, 0.0);
    let eval = |p: PhasePoint| -> f64 {
        spec.iter()
            .enumerate()
            .map(|(i, m)| (m.eval_c(p.x, p.y) * num_complex::Complex64::from_polar(1.0, (i as f64 - 3.0) * p.theta)).re)
            .sum()
    };
    for field in &fields {
        let fu = apply_generator(&s, field, &u).unwrap();
        let flow = Flow::new(&s, field);
        for n in [3, 300, 777] {
            let (ix, iy) = (n / 32, n % 32);
            for theta in [0.3, 2.5] {
                let p = PhasePoint::new(s.grid.x(ix), s.grid.y(iy), theta);
                let h = 1e-4;
                let plus = flow.flow_to(p, h, h / 4.0).unwrap();
                let minus = flow.flow_to(p, -h, h / 4.0).unwrap();
                let fd = (eval(plus) - eval(minus)) / (2.0 * h);
                assert!((fd - fu.eval(n, theta)).abs() < 1e-5, "{fd} vs {}", fu.eval(n, theta));
            }
        }
    }
}

#[test]
fn truncation_beyond_band_limit() {
    let s = flat(16);
    let b1 = ForceField::constant_magnetic(&s, 1.0);
    let u = FiberFunction::from_fn(&s, 4, |x, _, t| x.sin() * (4.0 * t).cos()).with_limit(4);
    let err = apply_generator(&s, &b1, &u).unwrap_err();
    assert!(matches!(err, magray_core::MagrayError::Truncation { .. }));
    // only theta-derivative content at the top mode: no growth, nothing dropped
    let v = FiberFunction::from_fn(&s, 4, |_, _, t| (4.0 * t).cos()).with_limit(4);
    let fv = apply_generator(&s, &b1, &v).unwrap();
    assert_eq!(fv.band, 4);
}

#[test]
fn commutation_with_generator() {
    let mut r = rng(5);
    let s = random_surface(64, 0.2, &mut r);
    let f = random_magnetic(0.5, 0.3, &mut r);
    for m in 1..=3 {
        let a = TensorPair::random(&s, m, 3, &mut r);
        let res = commutation_residual(&s, &f, &a).unwrap();
        assert!(res < 1e-8, "m = {m}: {res:.3e}");
        if m >= 2 {
            let bad = commutation_residual_with(&s, &f, &a, ProductMode::Unsymmetrized).unwrap();
            assert!(bad > 1e-3, "m = {m}: negative control {bad:.3e}");
        }
    }
    let s = flat(16);
    let b1 = ForceField::constant_magnetic(&s, 1.0);
    let dx = SymTensorField::from_comps(1, vec![vec![1.0; 256], vec![0.0; 256]]).unwrap();
    let a = TensorPair::new(dx, Some(SymTensorField::zeros(&s, 0))).unwrap();
    assert!(commutation_residual(&s, &b1, &a).unwrap() < 1e-8);
    assert_eq!(commutation_residual(&s, &b1, &TensorPair::zeros(&s, 2)).unwrap(), 0.0);
}
