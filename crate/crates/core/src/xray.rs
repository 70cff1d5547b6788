//! Closed orbits in free homotopy classes, the ray transforms `I` and `I_m`,
//! and the magnetic action `A(gamma) = 1/2 int |gamma'|^2 + T/2 - int alpha`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, Flow, PhasePoint, Trajectory};
use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};
use crate::lifting::{pullback_pair, FiberFunction};
use crate::spectral::Grid;
use crate::tensor::{pair_norm, ps_decompose, TensorPair};

/// Free homotopy class on the torus, as the lifted displacement in periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HomotopyClass {
    pub p: i64,
    pub q: i64,
}

impl HomotopyClass {
    pub fn new(p: i64, q: i64) -> Self {
        Self { p, q }
    }

    pub fn is_trivial(&self) -> bool {
        self.p == 0 && self.q == 0
    }

    pub fn offset(&self, lx: f64, ly: f64) -> [f64; 2] {
        [self.p as f64 * lx, self.q as f64 * ly]
    }

    pub fn reversed(&self) -> Self {
        Self::new(-self.p, -self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedOrbit {
    /// Even number of uniform steps over one period.
    pub trajectory: Trajectory,
    pub period: f64,
    pub class: HomotopyClass,
    /// `|z(T) - z(0) - (p Lx, q Ly, 2 pi k)|` over the sampled orbit.
    pub closure_defect: f64,
    /// Magnetic action when the field admits one.
    pub action: Option<f64>,
}

impl ClosedOrbit {
    pub fn start(&self) -> PhasePoint {
        self.trajectory.start()
    }
}

/// Orbit search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSearch {
    pub n_nodes: usize,
    /// Required closure defect of the certified orbit.
    pub tol: f64,
    /// Integrator step bound.
    pub step: f64,
    pub max_descent: usize,
    pub max_newton: usize,
}

impl Default for OrbitSearch {
    fn default() -> Self {
        Self { n_nodes: 64, tol: 1e-8, step: 2e-3, max_descent: 4000, max_newton: 40 }
    }
}

fn require_action(field: &ForceField) -> Result<()> {
    field.require_magnetic("magnetic action")?;
    if field.alpha.is_none() && !field.b.is_zero() {
        return Err(MagrayError::Config(
            "the magnetic action needs a primitive alpha; use shooting for non-exact fields".into(),
        ));
    }
    Ok(())
}

fn alpha_and_jacobian(field: &ForceField, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    match &field.alpha {
        Some([ax, ay]) => {
            let gx = ax.eval_grad(x, y);
            let gy = ay.eval_grad(x, y);
            // jac[i][j] = d_i alpha_j
            ([gx[0], gy[0]], [[gx[1], gy[1]], [gx[2], gy[2]]])
        }
        None => ([0.0; 2], [[0.0; 2]; 2]),
    }
}

/// Discrete free-time action of the closed polygon `nodes` (last node joined
/// to the first shifted by `offset`), with the period eliminated:
/// `A = sqrt(n sum |d_i|_g^2) - sum alpha(m_i) d_i`. Returns the value, the
/// gradient, and the optimal period.
fn discrete_action(
    surface: &ConformalSurface,
    field: &ForceField,
    nodes: &[[f64; 2]],
    offset: [f64; 2],
) -> (f64, Vec<[f64; 2]>, f64) {
    let n = nodes.len();
    let mut e2 = 0.0;
    let mut grad_e = vec![[0.0; 2]; n];
    let mut a = 0.0;
    let mut grad_a = vec![[0.0; 2]; n];
    for k in 0..n {
        let x0 = nodes[k];
        let mut x1 = nodes[(k + 1) % n];
        if k + 1 == n {
            x1 = [x1[0] + offset[0], x1[1] + offset[1]];
        }
        let d = [x1[0] - x0[0], x1[1] - x0[1]];
        let mid = [0.5 * (x0[0] + x1[0]), 0.5 * (x0[1] + x1[1])];
        let g = surface.phi.eval_grad(mid[0], mid[1]);
        let w = (2.0 * g[0]).exp();
        let dd = d[0] * d[0] + d[1] * d[1];
        e2 += n as f64 * w * dd;
        let (al, jal) = alpha_and_jacobian(field, mid[0], mid[1]);
        a += al[0] * d[0] + al[1] * d[1];
        let (i0, i1) = (k, (k + 1) % n);
        for c in 0..2 {
            let common = n as f64 * w * dd * g[1 + c];
            grad_e[i1][c] += n as f64 * w * 2.0 * d[c] + common;
            grad_e[i0][c] += -(n as f64) * w * 2.0 * d[c] + common;
            let half = 0.5 * (jal[c][0] * d[0] + jal[c][1] * d[1]);
            grad_a[i1][c] += al[c] + half;
            grad_a[i0][c] += -al[c] + half;
        }
    }
    let len = e2.sqrt();
    let grad = (0..n)
        .map(|i| [grad_e[i][0] / (2.0 * len) - grad_a[i][0], grad_e[i][1] / (2.0 * len) - grad_a[i][1]])
        .collect();
    (len - a, grad, len)
}

/// Applies `(circulant Laplacian + shift)^{-1}` to each coordinate of a node vector.
fn smooth(g: &[[f64; 2]], planner: &mut FftPlanner<f64>) -> Vec<[f64; 2]> {
    let n = g.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = vec![[0.0; 2]; n];
    for c in 0..2 {
        let mut buf: Vec<Complex64> = g.iter().map(|v| Complex64::new(v[c], 0.0)).collect();
        fwd.process(&mut buf);
        for (k, b) in buf.iter_mut().enumerate() {
            let lam = 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos() + 1.0 / n as f64;
            *b /= lam * n as f64;
        }
        inv.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            o[c] = b.re;
        }
    }
    out
}

/// Preconditioned gradient descent with Armijo backtracking on the discrete action.
fn descend(
    surface: &ConformalSurface,
    field: &ForceField,
    class: HomotopyClass,
    start: [f64; 2],
    cfg: &OrbitSearch,
) -> (Vec<[f64; 2]>, f64, f64) {
    let n = cfg.n_nodes;
    let offset = class.offset(surface.lx(), surface.ly());
    let mut nodes: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            [start[0] + s * offset[0], start[1] + s * offset[1]]
        })
        .collect();
    let mut planner = FftPlanner::new();
    let (mut val, mut grad, mut len) = discrete_action(surface, field, &nodes, offset);
    let mut step: f64 = 1.0;
    for _ in 0..cfg.max_descent {
        let dir = smooth(&grad, &mut planner);
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g[0] * d[0] + g[1] * d[1]).sum();
        if slope <= 1e-26 * (1.0 + val.abs()) {
            break;
        }
        step = (step * 2.0).min(1e3);
        let mut accepted = false;
        while step > 1e-14 {
            let trial: Vec<[f64; 2]> =
                nodes.iter().zip(&dir).map(|(x, d)| [x[0] - step * d[0], x[1] - step * d[1]]).collect();
            let (v, g, l) = discrete_action(surface, field, &trial, offset);
            if v <= val - 1e-4 * step * slope {
                nodes = trial;
                val = v;
                grad = g;
                len = l;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (nodes, val, len)
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Flow endpoint and Jacobian with exactly `n` uniform steps.
fn shoot(flow: &Flow, z: [f64; 3], t: f64, n: usize) -> Result<([f64; 3], Matrix3<f64>)> {
    let h = t / n as f64;
    let mut z = z;
    let mut m = Matrix3::identity();
    for i in 0..n {
        let (zn, mn) = flow.step_linearized(z, m, h);
        if !zn.iter().all(|v| v.is_finite()) {
            return Err(MagrayError::Integration { t: i as f64 * h });
        }
        z = zn;
        m = mn;
    }
    Ok((z, m))
}

fn even_steps(t: f64, step: f64) -> usize {
    let n = (t / step).ceil().max(2.0) as usize;
    n + n % 2
}

/// Gauss-Newton shooting on `(x0, y0, theta0, T)` for `phi_T(z) = z + (p Lx, q Ly, 2 pi k)`.
pub fn shoot_closed_orbit(
    surface: &ConformalSurface,
    field: &ForceField,
    class: HomotopyClass,
    guess: PhasePoint,
    period: f64,
    cfg: &OrbitSearch,
) -> Result<ClosedOrbit> {
    if class.is_trivial() {
        return Err(MagrayError::Domain("orbit search needs a non-trivial class".into()));
    }
    let flow = Flow::new(surface, field);
    let offset = class.offset(surface.lx(), surface.ly());
    let n = even_steps(period, cfg.step);
    let mut z = guess.as_array();
    let mut t = period;
    let residual =
        |end: [f64; 3], z: [f64; 3]| [end[0] - z[0] - offset[0], end[1] - z[1] - offset[1], wrap_angle(end[2] - z[2])];
    let mut best = f64::INFINITY;
    for _ in 0..cfg.max_newton {
        let (end, m) = shoot(&flow, z, t, n)?;
        let r = residual(end, z);
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        best = best.min(norm);
        if norm < 1e-13 * (1.0 + t) {
            break;
        }
        let f_end = flow.rhs(end);
        let mut j = DMatrix::zeros(3, 4);
        for a in 0..3 {
            for b in 0..3 {
                j[(a, b)] = m[(a, b)] - if a == b { 1.0 } else { 0.0 };
            }
            j[(a, 3)] = f_end[a];
        }
        let rhs = DVector::from_vec(r.iter().map(|v| -v).collect());
        let delta = j
            .svd(true, true)
            .solve(&rhs, 1e-10)
            .map_err(|e| MagrayError::Search { reason: e.to_string(), best_defect: best })?;
        for a in 0..3 {
            z[a] += delta[a];
        }
        t += delta[3];
        if !(t > 0.0) {
            return Err(MagrayError::Search { reason: "period became non-positive".into(), best_defect: best });
        }
    }
    let trajectory = integrate(surface, field, PhasePoint::from_array(z), t, t / n as f64)?;
    let end = trajectory.end().as_array();
    let r = residual(end, z);
    let closure_defect = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if !(closure_defect < cfg.tol) {
        return Err(MagrayError::Search {
            reason: "shooting did not close the orbit".into(),
            best_defect: closure_defect,
        });
    }
    let action = if require_action(field).is_ok() {
        Some(magnetic_action(surface, field, &CurveSamples::from_trajectory(surface, &trajectory))?)
    } else {
        None
    };
    Ok(ClosedOrbit { trajectory, period: t, class, closure_defect, action })
}

/// Two-stage search: action descent from a straight loop through `start`,
/// then shooting. Needs an exact magnetic field.
pub fn find_closed_orbit_from(
    surface: &ConformalSurface,
    field: &ForceField,
    class: HomotopyClass,
    start: [f64; 2],
    cfg: &OrbitSearch,
) -> Result<ClosedOrbit> {
    require_action(field)?;
    if class.is_trivial() {
        return Err(MagrayError::Domain("orbit search needs a non-trivial class".into()));
    }
    if cfg.n_nodes < 8 {
        return Err(MagrayError::Domain("orbit search needs at least 8 nodes".into()));
    }
    let (nodes, _, len) = descend(surface, field, class, start, cfg);
    let offset = class.offset(surface.lx(), surface.ly());
    let next = if nodes.len() > 1 { nodes[1] } else { [nodes[0][0] + offset[0], nodes[0][1] + offset[1]] };
    let theta = (next[1] - nodes[0][1]).atan2(next[0] - nodes[0][0]);
    let guess = PhasePoint::new(nodes[0][0], nodes[0][1], theta);
    shoot_closed_orbit(surface, field, class, guess, len, cfg)
}

pub fn find_closed_orbit(
    surface: &ConformalSurface,
    field: &ForceField,
    class: HomotopyClass,
    cfg: &OrbitSearch,
) -> Result<ClosedOrbit> {
    find_closed_orbit_from(surface, field, class, [0.37 * surface.lx(), 0.23 * surface.ly()], cfg)
}

/// Orbits for all classes with `|p|, |q| <= pmax`, searched in parallel;
/// failed searches are skipped and duplicates (same class and action within
/// `1e-6`) removed.
pub fn find_orbit_set(
    surface: &ConformalSurface,
    field: &ForceField,
    pmax: i64,
    cfg: &OrbitSearch,
) -> Vec<ClosedOrbit> {
    let classes: Vec<HomotopyClass> = (-pmax..=pmax)
        .flat_map(|p| (-pmax..=pmax).map(move |q| HomotopyClass::new(p, q)))
        .filter(|c| !c.is_trivial())
        .collect();
    let found: Vec<ClosedOrbit> =
        classes.par_iter().filter_map(|&c| find_closed_orbit(surface, field, c, cfg).ok()).collect();
    let mut out: Vec<ClosedOrbit> = Vec::new();
    for o in found {
        let dup = out
            .iter()
            .any(|e| e.class == o.class && (e.action.unwrap_or(e.period) - o.action.unwrap_or(o.period)).abs() < 1e-6);
        if !dup {
            out.push(o);
        }
    }
    out
}

/// Samples of a parametrized curve with velocities, for action evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    pub t: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
}

impl CurveSamples {
    pub fn from_trajectory(surface: &ConformalSurface, traj: &Trajectory) -> Self {
        let vel = traj
            .states
            .iter()
            .map(|z| {
                let s = (-surface.phi.eval(z[0], z[1])).exp();
                [s * z[2].cos(), s * z[2].sin()]
            })
            .collect();
        Self { t: traj.times.clone(), pos: traj.states.iter().map(|z| [z[0], z[1]]).collect(), vel }
    }
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// `1/2 int |gamma'|_g^2 dt + T/2 - int alpha(gamma')` by the trapezoid rule.
pub fn magnetic_action(surface: &ConformalSurface, field: &ForceField, curve: &CurveSamples) -> Result<f64> {
    require_action(field)?;
    let kinetic: Vec<f64> = curve
        .pos
        .iter()
        .zip(&curve.vel)
        .map(|(p, v)| (2.0 * surface.phi.eval(p[0], p[1])).exp() * (v[0] * v[0] + v[1] * v[1]))
        .collect();
    let alpha: Vec<f64> = curve
        .pos
        .iter()
        .zip(&curve.vel)
        .map(|(p, v)| {
            let (a, _) = alpha_and_jacobian(field, p[0], p[1]);
            a[0] * v[0] + a[1] * v[1]
        })
        .collect();
    let duration = curve.t.last().copied().unwrap_or(0.0) - curve.t.first().copied().unwrap_or(0.0);
    Ok(0.5 * trapezoid(&curve.t, &kinetic) + 0.5 * duration - trapezoid(&curve.t, &alpha))
}

/// Composite Simpson weights for `n` (even) uniform intervals of width `h`.
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// The linear functional `u -> int_0^T u(phi_t z) dt` on fiber functions of
/// band at most `band`, stored against the grid Fourier coefficients:
/// `W_j(k) = int e^{i k . x(t)} e^{i j theta(t)} dt`.
#[derive(Debug, Clone)]
pub struct RayFunctional {
    pub band: usize,
    pub period: f64,
    pub class: HomotopyClass,
    nx: usize,
    ny: usize,
    weights: Vec<Vec<Complex64>>,
}

impl RayFunctional {
    pub fn new(surface: &ConformalSurface, orbit: &ClosedOrbit, band: usize) -> Self {
        let grid = &surface.grid;
        let traj = &orbit.trajectory;
        let n = traj.len() - 1;
        let w = simpson_weights(n, traj.step);
        let (kx_max, ky_max) = (grid.nx as i64 / 2, grid.ny as i64 / 2);
        let weights: Vec<Vec<Complex64>> = (-(band as i64)..=band as i64)
            .into_par_iter()
            .map(|j| {
                let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
                let mut ex = vec![Complex64::new(0.0, 0.0); grid.nx];
                let mut ey = vec![Complex64::new(0.0, 0.0); grid.ny];
                for (s, z) in traj.states.iter().enumerate() {
                    let ws = Complex64::from_polar(w[s], j as f64 * z[2]);
                    for ix in 0..grid.nx {
                        let k = Grid::signed_index(ix, grid.nx);
                        ex[ix] = if k.abs() == kx_max {
                            Complex64::new(0.0, 0.0)
                        } else {
                            Complex64::from_polar(1.0, 2.0 * PI * k as f64 * z[0] / grid.lx)
                        };
                    }
                    for iy in 0..grid.ny {
                        let k = Grid::signed_index(iy, grid.ny);
                        ey[iy] = if k.abs() == ky_max {
                            Complex64::new(0.0, 0.0)
                        } else {
                            Complex64::from_polar(1.0, 2.0 * PI * k as f64 * z[1] / grid.ly)
                        };
                    }
                    for ix in 0..grid.nx {
                        let a = ws * ex[ix];
                        let row = &mut acc[ix * grid.ny..(ix + 1) * grid.ny];
                        for (r, e) in row.iter_mut().zip(&ey) {
                            *r += a * e;
                        }
                    }
                }
                acc
            })
            .collect();
        Self { band, period: orbit.period, class: orbit.class, nx: grid.nx, ny: grid.ny, weights }
    }

    /// `int_0^T u(phi_t z) dt`.
    pub fn apply(&self, surface: &ConformalSurface, u: &FiberFunction) -> Result<f64> {
        let grid = &surface.grid;
        if grid.nx != self.nx || grid.ny != self.ny {
            return Err(MagrayError::Domain("ray functional built on a different grid".into()));
        }
        if u.band > self.band {
            return Err(MagrayError::Domain(format!(
                "fiber band {} exceeds the functional band {}",
                u.band, self.band
            )));
        }
        let scale = 1.0 / grid.len() as f64;
        let mut total = 0.0;
        for j in -(u.band as i64)..=u.band as i64 {
            let mut coeffs = u.mode(j).expect("mode inside band").to_vec();
            grid.fft(&mut coeffs);
            let w = &self.weights[(j + self.band as i64) as usize];
            total += coeffs.iter().zip(w).map(|(c, w)| (c * w).re).sum::<f64>() * scale;
        }
        Ok(total)
    }

    pub fn apply_pair(&self, surface: &ConformalSurface, f: &TensorPair) -> Result<f64> {
        self.apply(surface, &pullback_pair(surface, f))
    }
}

/// `I u` along the orbit.
pub fn ray_transform(surface: &ConformalSurface, orbit: &ClosedOrbit, u: &FiberFunction) -> Result<f64> {
    RayFunctional::new(surface, orbit, u.band).apply(surface, u)
}

/// `I_m [p, q] = I(pi_m^* p + pi_{m-1}^* q)`.
pub fn ray_transform_pair(surface: &ConformalSurface, orbit: &ClosedOrbit, f: &TensorPair) -> Result<f64> {
    ray_transform(surface, orbit, &pullback_pair(surface, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub sup_transform: f64,
    pub sol_norm: f64,
}

/// `sup |I_m f|` over the orbit functionals and the norm of the solenoidal part of `f`.
pub fn stability_experiment(
    surface: &ConformalSurface,
    field: &ForceField,
    functionals: &[RayFunctional],
    f: &TensorPair,
    tol: f64,
) -> Result<StabilityReport> {
    if functionals.is_empty() {
        return Err(MagrayError::Domain("stability experiment needs at least one orbit".into()));
    }
    let u = pullback_pair(surface, f);
    let mut sup: f64 = 0.0;
    for w in functionals {
        sup = sup.max(w.apply(surface, &u)?.abs());
    }
    let dec = ps_decompose(surface, field, f, tol, crate::tensor::default_max_iter(surface))?;
    Ok(StabilityReport { sup_transform: sup, sol_norm: pair_norm(surface, &dec.solenoidal) })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
