mod common;

use common::*;
use magray_core::geometry::{ConformalSurface, FourierMode};
use magray_core::tensor::*;

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

/// Full-tensor oracle: symmetrized tensor product by explicit permutation averaging.
fn brute_sym_product(a: &[f64], ra: usize, b: &[f64], rb: usize) -> Vec<f64> {
    let m = ra + rb;
    let perms = permutations(m);
    let full = |t: &[usize]| {
        let ka = t[..ra].iter().filter(|&&i| i == 1).count();
        let kb = t[ra..].iter().filter(|&&i| i == 1).count();
        a[ka] * b[kb]
    };
    (0..=m)
        .map(|k| {
            let mut t = vec![0; m - k];
            t.extend(std::iter::repeat_n(1, k));
            let s: f64 = perms.iter().map(|p| full(&p.iter().map(|&i| t[i]).collect::<Vec<_>>())).sum();
            s / perms.len() as f64
        })
        .collect()
}

#[test]
fn sym_product_matches_permutation_average() {
    let s = flat(8);
    let mut r = rng(3);
    for (ra, rb) in [(1, 1), (2, 1), (1, 2), (2, 2), (3, 1)] {
        let a = SymTensorField::random(&s, ra, 2, &mut r);
        let b = SymTensorField::random(&s, rb, 2, &mut r);
        let out = sym_product(&a, &b);
        for n in [0, 17, 40] {
            let av: Vec<f64> = a.comps.iter().map(|c| c[n]).collect();
            let bv: Vec<f64> = b.comps.iter().map(|c| c[n]).collect();
            let oracle = brute_sym_product(&av, ra, &bv, rb);
            for k in 0..=ra + rb {
                assert!((out.comps[k][n] - oracle[k]).abs() < 1e-13, "ranks ({ra},{rb}) comp {k}");
            }
        }
    }
}

#[test]
fn double_jmap_of_one() {
    let s = flat(8);
    let gg = jmap(&s, &jmap(&s, &SymTensorField::constant(&s, 1.0)));
    let expected = [1.0, 0.0, 1.0 / 3.0, 0.0, 1.0];
    for k in 0..5 {
        assert!(gg.comps[k].iter().all(|v| (v - expected[k]).abs() < 1e-15));
    }
}

#[test]
fn trace_of_jmap_against_oracle() {
    // For u of rank j in two dimensions, tr S(g (x) u) = (2 + 2 (j + 1)... ) computed by
    // permutation averaging and contracting the first two slots.
    let s = flat(8);
    let mut r = rng(5);
    for j in 0..3 {
        let u = SymTensorField::random(&s, j, 2, &mut r);
        let t = trace(&s, &jmap(&s, &u)).unwrap();
        let n = 9;
        let uv: Vec<f64> = u.comps.iter().map(|c| c[n]).collect();
        let full = brute_sym_product(&[1.0, 0.0, 1.0], 2, &uv, j);
        for k in 0..=j {
            let oracle = full[k] + full[k + 2];
            assert!((t.comps[k][n] - oracle).abs() < 1e-13);
        }
        // lower-order term vanishes for j <= 1, so the trace is a multiple of u
        if j <= 1 {
            let c = t.comps[0][n] / u.comps[0][n];
            for k in 0..=j {
                assert!((t.comps[k][n] - c * u.comps[k][n]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn derivative_of_dx_on_cosine_profile() {
    let a = 0.3;
    let s = ConformalSurface::from_modes(16, 16, TWO_PI, TWO_PI, &[FourierMode::new(1, 0, a, 0.0)]).unwrap();
    let dx = SymTensorField::from_comps(1, vec![vec![1.0; 256], vec![0.0; 256]]).unwrap();
    let d = sym_derivative(&s, &dx);
    for ix in 0..16 {
        let x = s.grid.x(ix);
        let n = s.grid.idx(ix, 3);
        // (D dx)_11 = -Gamma^1_11 = -phi_x, (D dx)_22 = -Gamma^1_22 = phi_x
        assert!((d.comps[0][n] - a * x.sin()).abs() < 1e-12);
        assert!(d.comps[1][n].abs() < 1e-12);
        assert!((d.comps[2][n] + a * x.sin()).abs() < 1e-12);
    }
}

#[test]
fn divergence_is_adjoint_of_derivative() {
    let mut r = rng(11);
    let s = random_surface(32, 0.3, &mut r);
    for m in 0..3 {
        let t = SymTensorField::random(&s, m, 3, &mut r);
        let u = SymTensorField::random(&s, m + 1, 3, &mut r);
        let lhs = inner(&s, &sym_derivative(&s, &t), &u);
        let rhs = inner(&s, &t, &divergence(&s, &u).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * norm(&s, &t) * norm(&s, &u), "m = {m}");
    }
}

#[test]
fn dmu_star_is_adjoint_of_dmu() {
    let mut r = rng(12);
    let s = random_surface(32, 0.3, &mut r);
    let f = random_magnetic(0.7, 0.3, &mut r);
    for m in 1..=3 {
        let a = TensorPair::random(&s, m - 1, 3, &mut r);
        let g = TensorPair::random(&s, m, 3, &mut r);
        let lhs = pair_inner(&s, &dmu(&s, &f, &a).unwrap(), &g);
        let rhs = pair_inner(&s, &a, &dmu_star(&s, &f, &g).unwrap());
        let scale = pair_norm(&s, &a) * pair_norm(&s, &g);
        assert!((lhs - rhs).abs() <= 1e-10 * scale, "m = {m}: {lhs} vs {rhs}");
    }
}

#[test]
fn dmu_of_zero_is_zero() {
    let s = flat(8);
    let f = magnetic_constant(&s);
    for r in 0..3 {
        assert_eq!(dmu(&s, &f, &TensorPair::zeros(&s, r)).unwrap().max_abs(), 0.0);
        assert_eq!(dmu_star(&s, &f, &TensorPair::zeros(&s, r + 1)).unwrap().max_abs(), 0.0);
    }
}

fn magnetic_constant(s: &ConformalSurface) -> magray_core::geometry::ForceField {
    magray_core::geometry::ForceField::constant_magnetic(s, 1.0)
}

#[test]
fn dmu_on_functions() {
    let s = flat(16);
    let f = magnetic_constant(&s);
    let xi = SymTensorField::scalar(s.grid.sample(|x, y| x.sin() * y.cos()));
    let out = dmu(&s, &f, &TensorPair::new(xi.clone(), None).unwrap()).unwrap();
    assert_eq!(out.p, sym_derivative(&s, &xi));
    // a function has no Lorentz partner: the lower entry is zero
    assert_eq!(out.q.unwrap().max_abs(), 0.0);
}

#[test]
fn kernel_elements_are_annihilated() {
    let mut r = rng(13);
    let s = random_surface(64, 0.3, &mut r);
    let f = random_magnetic(0.5, 0.3, &mut r);
    for m in 0..4 {
        let k = kernel_element(&s, m);
        assert!((pair_norm(&s, &k) - 1.0).abs() < 1e-12);
        let d = dmu(&s, &f, &k).unwrap();
        assert!(d.max_abs() < 1e-9, "m = {m}: {}", d.max_abs());
    }
}

#[test]
fn trace_of_lorentz_on_two_tensors_vanishes() {
    let mut r = rng(14);
    let s = random_surface(16, 0.3, &mut r);
    let f = random_magnetic(0.5, 0.5, &mut r);
    let p = SymTensorField::random(&s, 2, 3, &mut r);
    let t = trace(&s, &lorentz_on_tensors(&s, &f, &p).unwrap()).unwrap();
    assert!(t.max_abs() < 1e-12);
    // m = 2 data: the lower-left entry of the adjoint vanishes
    let pair = TensorPair::new(p, Some(SymTensorField::zeros(&s, 1))).unwrap();
    let out = dmu_star(&s, &f, &pair).unwrap();
    assert_eq!(out.q.unwrap().max_abs(), 0.0);
}

#[test]
fn trace_commutes_with_lorentz_up_to_factor() {
    // m tr Y(p) = (m - 2) Y(tr p)
    let mut r = rng(15);
    let s = random_surface(16, 0.3, &mut r);
    let f = random_magnetic(0.5, 0.5, &mut r);
    for m in 2..6 {
        let p = SymTensorField::random(&s, m, 3, &mut r);
        let lhs = trace(&s, &lorentz_on_tensors(&s, &f, &p).unwrap()).unwrap().scaled(m as f64);
        let rhs = lorentz_on_tensors(&s, &f, &trace(&s, &p).unwrap()).unwrap().scaled((m - 2) as f64);
        assert!(lhs.sub(&rhs).max_abs() < 1e-12 * (1.0 + p.max_abs()), "m = {m}");
    }
}

#[test]
fn contraction_projectors() {
    let p1 = contraction_projector([1.0, 0.0], 1).unwrap();
    let dy = p1.apply_raw(&[0.0, 1.0]);
    assert!((dy[1] - 1.0).abs() < 1e-15 && dy[0].abs() < 1e-15);
    let p2 = contraction_projector([1.0, 0.0], 2).unwrap();
    let pol = p2.polarization();
    assert!(pol[0].abs() < 1e-15 && pol[1].abs() < 1e-15 && (pol[2].abs() - 1.0).abs() < 1e-15);
    assert!((p2.matrix.trace() - 1.0).abs() < 1e-14);
    let mut r = rng(16);
    for m in 0..5 {
        use rand::Rng;
        let xi = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let p = contraction_projector(xi, m).unwrap();
        assert!((&p.matrix * &p.matrix - &p.matrix).amax() < 1e-12);
        assert!((p.matrix.transpose() - &p.matrix).amax() < 1e-12);
        // range is annihilated by contraction with xi
        if m >= 1 {
            let v = p.polarization();
            for k in 0..m {
                assert!((xi[0] * v[k] + xi[1] * v[k + 1]).abs() < 1e-12);
            }
        }
    }
    assert!(contraction_projector([0.0, 0.0], 1).is_err());
}

#[test]
fn decomposition_of_potential_input() {
    let mut r = rng(17);
    let s = random_surface(32, 0.2, &mut r);
    let f = random_magnetic(0.6, 0.2, &mut r);
    for m in 1..=3 {
        let a = TensorPair::random(&s, m - 1, 3, &mut r);
        let data = dmu(&s, &f, &a).unwrap();
        let tol = 1e-10;
        let out = ps_decompose(&s, &f, &data, tol, default_max_iter(&s)).unwrap();
        let fnorm = pair_norm(&s, &data);
        assert!(pair_norm(&s, &out.solenoidal) <= 10.0 * tol * fnorm, "m = {m}");
    }
}

#[test]
fn decomposition_of_random_input() {
    let mut r = rng(18);
    let s = random_surface(64, 0.2, &mut r);
    let f = random_magnetic(0.6, 0.2, &mut r);
    for m in 1..=3 {
        let data = TensorPair::random(&s, m, 3, &mut r);
        let tol = 1e-10;
        let out = ps_decompose(&s, &f, &data, tol, default_max_iter(&s)).unwrap();
        let fnorm = pair_norm(&s, &data);
        let recon = dmu(&s, &f, &out.potential).unwrap().add(&out.solenoidal);
        assert!(recon.sub(&data).max_abs() < 1e-13 * (1.0 + data.max_abs()));
        let dh = dmu_star(&s, &f, &out.solenoidal).unwrap();
        assert!(pair_norm(&s, &dh) <= 10.0 * tol * fnorm, "m = {m}");
        // idempotence
        let again = ps_decompose(&s, &f, &out.solenoidal, tol, default_max_iter(&s)).unwrap();
        assert!(pair_norm(&s, &again.potential) <= 10.0 * tol * pair_norm(&s, &out.solenoidal));
    }
}

#[test]
fn decomposition_rejects_thermostat_and_bad_tolerance() {
    let s = flat(8);
    let th = magray_core::geometry::ForceField::constant_thermostat(&s, 0.3);
    let data = TensorPair::zeros(&s, 1);
    assert!(ps_decompose(&s, &th, &data, 1e-10, 10).is_err());
    let mg = magnetic_constant(&s);
    assert!(ps_decompose(&s, &mg, &data, 0.0, 10).is_err());
}

#[test]
fn decomposition_reports_nonconvergence() {
    let mut r = rng(19);
    let s = random_surface(16, 0.2, &mut r);
    let f = random_magnetic(0.6, 0.2, &mut r);
    let data = TensorPair::random(&s, 2, 3, &mut r);
    let err = ps_decompose(&s, &f, &data, 1e-12, 2).unwrap_err();
    assert!(err.is_nonconvergence());
}

#[test]
fn laplacian_has_one_dimensional_kernel() {
    let mut r = rng(20);
    let s = random_surface(12, 0.2, &mut r);
    let f = random_magnetic(0.8, 0.2, &mut r);
    for m in 1..=2 {
        let bare = laplacian_singular_values(&s, &f, m, false).unwrap();
        let small = bare.iter().filter(|&&v| v < 1e-6).count();
        assert_eq!(small, 1, "m = {m}: {:?}", &bare[..3]);
        let full = laplacian_singular_values(&s, &f, m, true).unwrap();
        assert!(full[0] > 1e-6, "m = {m}: {}", full[0]);
    }
}
