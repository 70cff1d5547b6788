//! Functions on the unit tangent bundle as fiber Fourier series, the lifts
//! `pi_m^*`, the fiber integrals `pi_{m*}`, and the generator `F` acting on
//! mode data.
//!
//! A [`FiberFunction`] stores complex base grids `u_j` for `|j| <= band`, with
//! `u(x, y, theta) = sum_j u_j(x, y) e^{i j theta}`. The `L^2(SM)` product uses
//! the Liouville measure `e^{2 phi} dx dy dtheta`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};
use crate::spectral::SpectralField;
use crate::tensor::{binom, dmu_with, pair_norm, ProductMode, SymTensorField, TensorPair};

/// Default cap on the fiber band.
pub const DEFAULT_BAND_LIMIT: usize = 32;

/// Relative dropped mass above which truncation to the band limit is an error.
pub const TRUNCATION_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct FiberFunction {
    pub band: usize,
    pub limit: usize,
    /// `modes[j + band]` is the grid of `u_j`.
    pub modes: Vec<Vec<Complex64>>,
}

impl FiberFunction {
    pub fn zeros(len: usize, band: usize) -> Self {
        Self { band, limit: DEFAULT_BAND_LIMIT.max(band), modes: vec![vec![ZERO; len]; 2 * band + 1] }
    }

    /// Samples `f(x, y, theta)` on `4 band + 4` fiber nodes and keeps `|j| <= band`.
    pub fn from_fn(surface: &ConformalSurface, band: usize, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let grid = &surface.grid;
        let nodes = 4 * band + 4;
        let mut out = Self::zeros(grid.len(), band);
        let thetas: Vec<f64> = (0..nodes).map(|i| 2.0 * PI * i as f64 / nodes as f64).collect();
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let n = grid.idx(ix, iy);
                let (x, y) = (grid.x(ix), grid.y(iy));
                let vals: Vec<f64> = thetas.iter().map(|&t| f(x, y, t)).collect();
                for j in -(band as i64)..=band as i64 {
                    let c: Complex64 =
                        vals.iter().zip(&thetas).map(|(v, t)| Complex64::from_polar(*v, -(j as f64) * t)).sum();
                    out.modes[(j + band as i64) as usize][n] = c / nodes as f64;
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.modes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self, j: i64) -> Option<&[Complex64]> {
        (j.unsigned_abs() as usize <= self.band).then(|| self.modes[(j + self.band as i64) as usize].as_slice())
    }

    fn mode_or_zero(&self, j: i64, n: usize) -> Complex64 {
        if j.unsigned_abs() as usize <= self.band {
            self.modes[(j + self.band as i64) as usize][n]
        } else {
            ZERO
        }
    }

    /// Copy with a different band; modes beyond it are discarded.
    pub fn with_band(&self, band: usize) -> Self {
        let mut out = Self::zeros(self.len(), band);
        out.limit = self.limit.max(band);
        for j in -(band as i64)..=band as i64 {
            if let Some(m) = self.mode(j) {
                out.modes[(j + band as i64) as usize].copy_from_slice(m);
            }
        }
        out
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = limit.max(self.band);
        self
    }

    /// Value at grid point `n` and angle `theta` (real part).
    pub fn eval(&self, n: usize, theta: f64) -> f64 {
        let b = self.band as i64;
        (-b..=b).map(|j| (self.mode_or_zero(j, n) * Complex64::from_polar(1.0, j as f64 * theta)).re).sum()
    }

    /// Sparse Fourier series of each mode `j = -band..=band`, for off-grid evaluation.
    pub fn to_spectral(&self, surface: &ConformalSurface, rel_tol: f64) -> Vec<SpectralField> {
        self.modes.iter().map(|m| SpectralField::from_grid_c(&surface.grid, m, rel_tol)).collect()
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        let band = self.band.max(other.band);
        if band > self.band {
            *self = self.with_band(band);
        }
        for j in -(other.band as i64)..=other.band as i64 {
            let dst = &mut self.modes[(j + band as i64) as usize];
            let src = other.mode(j).expect("mode inside band");
            for (a, b) in dst.iter_mut().zip(src) {
                *a += s * b;
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            for v in m.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Largest violation of `u_{-j} = conj(u_j)`.
    pub fn reality_defect(&self) -> f64 {
        let b = self.band as i64;
        let mut d: f64 = 0.0;
        for j in 0..=b {
            let (p, m) = (self.mode(j).unwrap(), self.mode(-j).unwrap());
            for (a, c) in p.iter().zip(m) {
                d = d.max((a - c.conj()).norm());
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.modes.iter().flatten().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// `L^2(SM)` inner product (real part).
pub fn fiber_inner(surface: &ConformalSurface, u: &FiberFunction, w: &FiberFunction) -> f64 {
    let band = u.band.min(w.band) as i64;
    let mut acc = 0.0;
    for j in -band..=band {
        let (a, b) = (u.mode(j).unwrap(), w.mode(j).unwrap());
        for n in 0..surface.grid.len() {
            acc += surface.e2phi[n] * (a[n] * b[n].conj()).re;
        }
    }
    2.0 * PI * acc * surface.grid.cell_area()
}

pub fn fiber_norm(surface: &ConformalSurface, u: &FiberFunction) -> f64 {
    fiber_inner(surface, u, u).max(0.0).sqrt()
}

/// Fiber Fourier coefficients of `cos^a(theta) sin^b(theta)`, indexed `j + a + b`.
pub fn trig_monomial(a: usize, b: usize) -> Vec<Complex64> {
    // cos = (z + 1/z) / 2, sin = (z - 1/z) / (2i), as Laurent polynomials in z
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    let mul = |p: &[Complex64], lo: Complex64, hi: Complex64| {
        let mut out = vec![ZERO; p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            out[i] += c * lo;
            out[i + 1] += c * hi;
        }
        out
    };
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, -0.5);
    for _ in 0..a {
        poly = mul(&poly, half, half);
    }
    for _ in 0..b {
        poly = mul(&poly, -half_i, half_i);
    }
    // entry i is the coefficient of z^{2i - (a + b)}; spread to unit spacing
    let d = a + b;
    let mut out = vec![ZERO; 2 * d + 1];
    for (i, c) in poly.into_iter().enumerate() {
        out[2 * i] = c;
    }
    out
}

/// `pi_m^* h` with `v = e^{-phi} (cos theta, sin theta)`.
pub fn pullback(surface: &ConformalSurface, h: &SymTensorField) -> FiberFunction {
    let m = h.rank;
    let len = surface.grid.len();
    let mut out = FiberFunction::zeros(len, m);
    let scale: Vec<f64> = surface.phi_grid.iter().map(|p| (-(m as f64) * p).exp()).collect();
    for k in 0..=m {
        let coeffs = trig_monomial(m - k, k);
        let c = binom(m, k);
        for (j, cj) in coeffs.iter().enumerate() {
            if cj.norm() == 0.0 {
                continue;
            }
            let dst = &mut out.modes[j];
            for n in 0..len {
                dst[n] += cj * (c * scale[n] * h.comps[k][n]);
            }
        }
    }
    out
}

/// Lift of a pair, `pi_m^* p + pi_{m-1}^* q`.
pub fn pullback_pair(surface: &ConformalSurface, f: &TensorPair) -> FiberFunction {
    let mut u = pullback(surface, &f.p);
    if let Some(q) = &f.q {
        u.axpy(1.0, &pullback(surface, q));
    }
    u
}

/// `pi_{m*} u`, component `k` equal to `e^{m phi} int u cos^{m-k} sin^k dtheta`.
pub fn pushforward(surface: &ConformalSurface, u: &FiberFunction, m: usize) -> SymTensorField {
    let len = surface.grid.len();
    let scale: Vec<f64> = surface.phi_grid.iter().map(|p| (m as f64 * p).exp()).collect();
    let comps = (0..=m)
        .map(|k| {
            let coeffs = trig_monomial(m - k, k);
            let mut out = vec![0.0; len];
            for (i, c) in coeffs.iter().enumerate() {
                if c.norm() == 0.0 {
                    continue;
                }
                // int e^{i j theta} e^{i l theta} = 2 pi delta_{j, -l}
                let l = i as i64 - m as i64;
                for n in 0..len {
                    out[n] += (c * u.mode_or_zero(-l, n)).re;
                }
            }
            out.iter_mut().zip(&scale).for_each(|(o, s)| *o *= 2.0 * PI * s);
            out
        })
        .collect();
    SymTensorField { rank: m, comps }
}

/// `[pi_{m*} u, pi_{(m-1)*} u]`.
pub fn pushforward_pair(surface: &ConformalSurface, u: &FiberFunction, m: usize) -> TensorPair {
    TensorPair { p: pushforward(surface, u, m), q: (m >= 1).then(|| pushforward(surface, u, m - 1)) }
}

/// Fiber modes `lambda_l`, `l = 0..=L`, of the effective Lorentz coefficient on the grid.
fn force_modes(surface: &ConformalSurface, field: &ForceField) -> Vec<Vec<Complex64>> {
    if field.is_magnetic() {
        vec![field.b.to_grid_c(&surface.grid)]
    } else {
        field.lambda.iter().map(|l| l.to_grid_c(&surface.grid)).collect()
    }
}

/// `F u`. Modes beyond `u.limit` are dropped if their mass is below
/// [`TRUNCATION_TOL`] relative to `|u|`, and reported as an error otherwise.
pub fn apply_generator(surface: &ConformalSurface, field: &ForceField, u: &FiberFunction) -> Result<FiberFunction> {
    let grid = &surface.grid;
    let len = grid.len();
    let lam = force_modes(surface, field);
    let big_l = lam.len().saturating_sub(1);
    let jb = u.band as i64;
    let out_band = u.band + 1.max(big_l);
    let ob = out_band as i64;

    let a: Vec<f64> = surface.phi_grid.iter().map(|p| (-p).exp()).collect();
    let ux: Vec<Vec<Complex64>> = u.modes.iter().map(|m| grid.dx_c(m)).collect();
    let uy: Vec<Vec<Complex64>> = u.modes.iter().map(|m| grid.dy_c(m)).collect();
    let pick = |v: &Vec<Vec<Complex64>>, j: i64, n: usize| -> Complex64 {
        if j.abs() <= jb {
            v[(j + jb) as usize][n]
        } else {
            ZERO
        }
    };
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    let lam_at = |l: i64, n: usize| -> Complex64 {
        let idx = l.unsigned_abs() as usize;
        if idx > big_l {
            ZERO
        } else if l >= 0 {
            lam[idx][n]
        } else {
            lam[idx][n].conj()
        }
    };

    let mut out = FiberFunction::zeros(len, out_band);
    out.limit = u.limit;
    for j in -ob..=ob {
        let dst = &mut out.modes[(j + ob) as usize];
        for n in 0..len {
            // cos w -> (w_{j-1} + w_{j+1}) / 2, sin w -> (w_{j-1} - w_{j+1}) / (2i)
            let cos_ux = half * (pick(&ux, j - 1, n) + pick(&ux, j + 1, n));
            let sin_uy = -half_i * (pick(&uy, j - 1, n) - pick(&uy, j + 1, n));
            let ut = |k: i64| Complex64::new(0.0, k as f64) * u.mode_or_zero(k, n);
            let sin_ut = -half_i * (ut(j - 1) - ut(j + 1));
            let cos_ut = half * (ut(j - 1) + ut(j + 1));
            let mut v = a[n] * (cos_ux + sin_uy + (-surface.phi_x[n]) * sin_ut + surface.phi_y[n] * cos_ut);
            for l in -(big_l as i64)..=big_l as i64 {
                v += lam_at(l, n) * ut(j - l);
            }
            dst[n] = v;
        }
    }
    truncate(surface, out, u)
}

fn truncate(surface: &ConformalSurface, out: FiberFunction, input: &FiberFunction) -> Result<FiberFunction> {
    if out.band <= out.limit {
        return Ok(out);
    }
    let kept = out.with_band(out.limit);
    let dropped = fiber_norm(surface, &out.sub(&kept));
    let norm = fiber_norm(surface, input);
    if dropped > TRUNCATION_TOL * norm {
        return Err(MagrayError::Truncation { dropped, norm });
    }
    Ok(kept)
}

/// `|F(pi_m^* p + pi_{m-1}^* q) - (pi_{m+1}^* r + pi_m^* s)| / |[p, q]|` with `[r, s] = D_mu [p, q]`.
pub fn commutation_residual(surface: &ConformalSurface, field: &ForceField, a: &TensorPair) -> Result<f64> {
    commutation_residual_with(surface, field, a, ProductMode::Symmetrized)
}

pub fn commutation_residual_with(
    surface: &ConformalSurface,
    field: &ForceField,
    a: &TensorPair,
    mode: ProductMode,
) -> Result<f64> {
    field.require_magnetic("commutation_residual")?;
    let norm = pair_norm(surface, a);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let lhs = apply_generator(surface, field, &pullback_pair(surface, a))?;
    let rhs = pullback_pair(surface, &dmu_with(surface, field, a, mode)?);
    Ok(fiber_norm(surface, &lhs.sub(&rhs)) / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_monomials() {
        let c = trig_monomial(1, 0);
        assert_eq!(c.len(), 3);
        assert!((c[0].re - 0.5).abs() < 1e-15 && (c[2].re - 0.5).abs() < 1e-15);
        let s = trig_monomial(0, 1);
        // sin = (z - 1/z) / (2i): coefficient of z is -i/2
        assert!((s[2] - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((s[0] - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let cs = trig_monomial(1, 1);
        // cos sin = sin(2 theta) / 2
        assert!((cs[4] - Complex64::new(0.0, -0.25)).norm() < 1e-15);
        assert!(cs[2].norm() < 1e-15);
    }
}
