//! Conformal flat-chart tori and the force fields acting on them.
//!
//! The metric is `g = exp(2 phi) (dx^2 + dy^2)` on `[0, lx) x [0, ly)`. The
//! rotation `J(v1, v2) = (-v2, v1)` is a `g`-isometry, and `v^perp = J v` fixes
//! the orientation used everywhere downstream.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MagrayError, Result};
use crate::spectral::{Grid, SpectralField};

/// One entry of a mode list; a real field is `sum Re[(re + i im) exp(i k.x)]`
/// with `k = 2 pi (kx / lx, ky / ly)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub kx: i64,
    pub ky: i64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl FourierMode {
    pub fn new(kx: i64, ky: i64, re: f64, im: f64) -> Self {
        Self { kx, ky, re, im }
    }
}

fn tuples(modes: &[FourierMode]) -> Vec<(i64, i64, f64, f64)> {
    modes.iter().map(|m| (m.kx, m.ky, m.re, m.im)).collect()
}

pub fn real_field(lx: f64, ly: f64, modes: &[FourierMode]) -> SpectralField {
    SpectralField::from_real_modes(lx, ly, &tuples(modes))
}

pub fn complex_field(lx: f64, ly: f64, modes: &[FourierMode]) -> SpectralField {
    SpectralField::from_complex_modes(lx, ly, &tuples(modes))
}

/// `phi` and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGeometry {
    pub phi: f64,
    pub phi_x: f64,
    pub phi_y: f64,
    pub phi_xx: f64,
    pub phi_xy: f64,
    pub phi_yy: f64,
}

impl PointGeometry {
    pub fn conformal_factor(&self) -> f64 {
        (2.0 * self.phi).exp()
    }

    /// Gaussian curvature `-exp(-2 phi) (phi_xx + phi_yy)`.
    pub fn curvature(&self) -> f64 {
        -(-2.0 * self.phi).exp() * (self.phi_xx + self.phi_yy)
    }
}

/// Christoffel symbols indexed `[k][i][j]` for `Gamma^k_{ij}`.
pub type Christoffels = [[[f64; 2]; 2]; 2];

fn conformal_christoffels(px: f64, py: f64) -> Christoffels {
    let mut c = [[[0.0; 2]; 2]; 2];
    c[0][0][0] = px;
    c[0][0][1] = py;
    c[0][1][0] = py;
    c[0][1][1] = -px;
    c[1][0][0] = -py;
    c[1][0][1] = px;
    c[1][1][0] = px;
    c[1][1][1] = py;
    c
}

/// A torus chart with metric `exp(2 phi) (dx^2 + dy^2)`.
#[derive(Debug, Clone)]
pub struct ConformalSurface {
    pub grid: Grid,
    pub phi: SpectralField,
    pub phi_grid: Vec<f64>,
    pub e2phi: Vec<f64>,
    pub phi_x: Vec<f64>,
    pub phi_y: Vec<f64>,
    pub phi_xx: Vec<f64>,
    pub phi_xy: Vec<f64>,
    pub phi_yy: Vec<f64>,
}

impl ConformalSurface {
    pub fn new(grid: Grid, phi: SpectralField) -> Result<Self> {
        if grid.nx < 8 || grid.ny < 8 {
            return Err(MagrayError::Domain(format!(
                "surface grids need at least 8 points per side, got {}x{}",
                grid.nx, grid.ny
            )));
        }
        if (phi.lx - grid.lx).abs() > 1e-14 * grid.lx || (phi.ly - grid.ly).abs() > 1e-14 * grid.ly {
            return Err(MagrayError::Domain("phi periods differ from the grid periods".into()));
        }
        let values = phi.to_grid_c(&grid);
        let scale = values.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if values.iter().any(|c| c.im.abs() > 1e-12 * scale) {
            return Err(MagrayError::Domain("phi must be real-valued".into()));
        }
        let phi_grid: Vec<f64> = values.iter().map(|c| c.re).collect();
        let phi_x = grid.dx(&phi_grid);
        let phi_y = grid.dy(&phi_grid);
        let phi_xx = grid.dx(&phi_x);
        let phi_xy = grid.dy(&phi_x);
        let phi_yy = grid.dy(&phi_y);
        let e2phi = phi_grid.iter().map(|p| (2.0 * p).exp()).collect();
        Ok(Self { grid, phi, phi_grid, e2phi, phi_x, phi_y, phi_xx, phi_xy, phi_yy })
    }

    pub fn from_modes(nx: usize, ny: usize, lx: f64, ly: f64, modes: &[FourierMode]) -> Result<Self> {
        Self::new(Grid::new(nx, ny, lx, ly)?, real_field(lx, ly, modes))
    }

    pub fn flat(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::from_modes(nx, ny, lx, ly, &[])
    }

    pub fn is_flat(&self) -> bool {
        self.phi.is_constant()
    }

    /// Same metric sampled at another resolution.
    pub fn resampled(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(self.grid.resized(nx, ny)?, self.phi.clone())
    }

    pub fn lx(&self) -> f64 {
        self.grid.lx
    }

    pub fn ly(&self) -> f64 {
        self.grid.ly
    }

    pub fn at(&self, x: f64, y: f64) -> PointGeometry {
        let h = self.phi.eval_hess(x, y);
        PointGeometry { phi: h[0], phi_x: h[1], phi_y: h[2], phi_xx: h[3], phi_xy: h[4], phi_yy: h[5] }
    }

    pub fn christoffels(&self, x: f64, y: f64) -> Christoffels {
        let g = self.at(x, y);
        conformal_christoffels(g.phi_x, g.phi_y)
    }

    /// `Gamma^k_{ij}` at grid index `n`.
    #[inline]
    pub fn gamma(&self, k: usize, i: usize, j: usize, n: usize) -> f64 {
        let (px, py) = (self.phi_x[n], self.phi_y[n]);
        conformal_christoffels(px, py)[k][i][j]
    }

    pub fn gauss_curvature(&self) -> Vec<f64> {
        self.phi_grid
            .iter()
            .zip(self.phi_xx.iter().zip(&self.phi_yy))
            .map(|(p, (a, b))| -(-2.0 * p).exp() * (a + b))
            .collect()
    }

    /// `int f dVol_g` by the grid rule.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.e2phi).map(|(a, w)| a * w).sum::<f64>() * self.grid.cell_area()
    }

    pub fn area(&self) -> f64 {
        self.e2phi.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn inner(&self, x: f64, y: f64, v: [f64; 2], w: [f64; 2]) -> f64 {
        (2.0 * self.phi.eval(x, y)).exp() * (v[0] * w[0] + v[1] * w[1])
    }

    pub fn norm(&self, x: f64, y: f64, v: [f64; 2]) -> f64 {
        self.inner(x, y, v, v).sqrt()
    }

    /// Unit vector `exp(-phi) (cos theta, sin theta)`.
    pub fn unit_vector(&self, x: f64, y: f64, theta: f64) -> [f64; 2] {
        let s = (-self.phi.eval(x, y)).exp();
        [s * theta.cos(), s * theta.sin()]
    }
}

#[inline]
pub fn rotate(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceKind {
    Magnetic,
    Thermostat,
}

impl ForceKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Magnetic => "magnetic",
            Self::Thermostat => "thermostat",
        }
    }
}

/// Magnetic intensity `b` (with `Omega = b dVol_g`) or thermostat coefficient
/// `lambda(x, theta) = sum_j lambda_j(x) exp(i j theta)`.
#[derive(Debug, Clone)]
pub struct ForceField {
    pub kind: ForceKind,
    pub b: SpectralField,
    /// `lambda_j` for `j >= 0`; negative modes are the conjugates.
    pub lambda: Vec<SpectralField>,
    /// Primitive `alpha = ax dx + ay dy` with `d alpha = Omega`.
    pub alpha: Option<[SpectralField; 2]>,
}

impl ForceField {
    pub fn magnetic(b: SpectralField) -> Self {
        Self { kind: ForceKind::Magnetic, b, lambda: Vec::new(), alpha: None }
    }

    pub fn zero(surface: &ConformalSurface) -> Self {
        let alpha = [SpectralField::zero(surface.lx(), surface.ly()), SpectralField::zero(surface.lx(), surface.ly())];
        let mut f = Self::magnetic(SpectralField::zero(surface.lx(), surface.ly()));
        f.alpha = Some(alpha);
        f
    }

    pub fn constant_magnetic(surface: &ConformalSurface, b: f64) -> Self {
        Self::magnetic(SpectralField::constant(surface.lx(), surface.ly(), b))
    }

    /// Thermostat with `lambda[j]` the `j`-th fiber mode, `j = 0, 1, ...`.
    pub fn thermostat(lambda: Vec<SpectralField>) -> Result<Self> {
        let lx = lambda.first().map_or(1.0, |f| f.lx);
        let ly = lambda.first().map_or(1.0, |f| f.ly);
        if let Some(l0) = lambda.first() {
            // lambda_0 must be real
            let conj = l0.conj();
            for t in &l0.terms {
                let partner: Complex64 = conj.terms.iter().filter(|s| s.nx == t.nx && s.ny == t.ny).map(|s| s.c).sum();
                if (partner - t.c).norm() > 1e-12 * (1.0 + t.c.norm()) {
                    return Err(MagrayError::Domain("lambda_0 must be real-valued".into()));
                }
            }
        }
        Ok(Self { kind: ForceKind::Thermostat, b: SpectralField::zero(lx, ly), lambda, alpha: None })
    }

    pub fn constant_thermostat(surface: &ConformalSurface, c: f64) -> Self {
        Self {
            kind: ForceKind::Thermostat,
            b: SpectralField::zero(surface.lx(), surface.ly()),
            lambda: vec![SpectralField::constant(surface.lx(), surface.ly(), c)],
            alpha: None,
        }
    }

    pub fn is_magnetic(&self) -> bool {
        self.kind == ForceKind::Magnetic
    }

    pub fn require_magnetic(&self, op: &'static str) -> Result<()> {
        if self.is_magnetic() {
            Ok(())
        } else {
            Err(MagrayError::Unsupported { op, kind: self.kind.name() })
        }
    }

    pub fn fiber_band(&self) -> usize {
        self.lambda.len().saturating_sub(1)
    }

    /// Attaches a primitive after checking `d alpha = b dVol_g` on the surface grid.
    pub fn with_alpha(mut self, surface: &ConformalSurface, alpha: [SpectralField; 2]) -> Result<Self> {
        let defect = exactness_defect(surface, &self.b, &alpha);
        if defect > 1e-10 {
            return Err(MagrayError::Config(format!(
                "alpha is not a primitive of b dVol (relative defect {defect:.3e})"
            )));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    /// Computes the co-exact primitive `alpha = *d Delta^{-1}(b e^{2 phi})`.
    pub fn with_exact_primitive(self, surface: &ConformalSurface) -> Result<Self> {
        let grid = &surface.grid;
        let bg = self.b.to_grid(grid);
        let omega: Vec<f64> = bg.iter().zip(&surface.e2phi).map(|(b, w)| b * w).collect();
        let scale = omega.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mean = omega.iter().sum::<f64>() / omega.len() as f64;
        if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(MagrayError::Config(format!(
                "Omega = b dVol has nonzero mean {mean:.3e}; it is not exact on the torus"
            )));
        }
        let inv_lap = |kx: f64, ky: f64| {
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / k2, 0.0)
            }
        };
        let psi = grid.multiplier(&omega, inv_lap);
        let ax: Vec<f64> = grid.dy(&psi).iter().map(|v| -v).collect();
        let ay = grid.dx(&psi);
        let alpha = [SpectralField::from_grid(grid, &ax, 1e-16), SpectralField::from_grid(grid, &ay, 1e-16)];
        self.with_alpha(surface, alpha)
    }

    pub fn b_at(&self, x: f64, y: f64) -> [f64; 3] {
        self.b.eval_grad(x, y)
    }

    /// `lambda(x, theta)` for thermostats.
    pub fn lambda_at(&self, x: f64, y: f64, theta: f64) -> f64 {
        let mut out = 0.0;
        for (j, lj) in self.lambda.iter().enumerate() {
            let v = lj.eval_c(x, y) * Complex64::from_polar(1.0, j as f64 * theta);
            out += if j == 0 { v.re } else { 2.0 * v.re };
        }
        out
    }

    /// `[lambda, d_x lambda, d_y lambda, d_theta lambda]` of the effective rate.
    pub fn lambda_eff_derivs(&self, x: f64, y: f64, theta: f64) -> [f64; 4] {
        match self.kind {
            ForceKind::Magnetic => {
                let b = self.b.eval_grad(x, y);
                [b[0], b[1], b[2], 0.0]
            }
            ForceKind::Thermostat => {
                let mut out = [0.0; 4];
                for (j, lj) in self.lambda.iter().enumerate() {
                    let g = lj.eval_grad_c(x, y);
                    let e = Complex64::from_polar(1.0, j as f64 * theta);
                    let w = if j == 0 { 1.0 } else { 2.0 };
                    out[0] += w * (g[0] * e).re;
                    out[1] += w * (g[1] * e).re;
                    out[2] += w * (g[2] * e).re;
                    out[3] += w * (g[0] * e * Complex64::new(0.0, j as f64)).re;
                }
                out
            }
        }
    }

    /// The scalar multiplying `v^perp` in `Y(x, v)`.
    pub fn lambda_eff(&self, x: f64, y: f64, theta: f64) -> f64 {
        match self.kind {
            ForceKind::Magnetic => self.b.eval(x, y),
            ForceKind::Thermostat => self.lambda_at(x, y, theta),
        }
    }

    /// `Y(x, v)`; thermostat fields require `|v|_g = 1`.
    pub fn lorentz_force(&self, surface: &ConformalSurface, x: f64, y: f64, v: [f64; 2]) -> Result<[f64; 2]> {
        let scale = match self.kind {
            ForceKind::Magnetic => self.b.eval(x, y),
            ForceKind::Thermostat => {
                let n = surface.norm(x, y, v);
                if (n - 1.0).abs() > 1e-8 {
                    return Err(MagrayError::Domain(format!("thermostat force needs a unit vector, |v|_g = {n}")));
                }
                self.lambda_at(x, y, v[1].atan2(v[0]))
            }
        };
        let r = rotate(v);
        Ok([scale * r[0], scale * r[1]])
    }

    pub fn b_grid(&self, surface: &ConformalSurface) -> Vec<f64> {
        self.b.to_grid(&surface.grid)
    }

    /// `int alpha(gamma')` contribution at a point.
    pub fn alpha_at(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.alpha.as_ref().map(|[ax, ay]| [ax.eval(x, y), ay.eval(x, y)])
    }
}

/// `max |d alpha - b e^{2 phi}| / max(|b e^{2 phi}|, |d alpha|)` on the grid.
pub fn exactness_defect(surface: &ConformalSurface, b: &SpectralField, alpha: &[SpectralField; 2]) -> f64 {
    let grid = &surface.grid;
    let ax = alpha[0].to_grid(grid);
    let ay = alpha[1].to_grid(grid);
    let da: Vec<f64> = grid.dx(&ay).iter().zip(grid.dy(&ax)).map(|(a, b)| a - b).collect();
    let omega: Vec<f64> = b.to_grid(grid).iter().zip(&surface.e2phi).map(|(b, w)| b * w).collect();
    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = sup(&omega).max(sup(&da));
    if scale == 0.0 {
        return 0.0;
    }
    let err = da.iter().zip(&omega).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cos_surface(a: f64) -> ConformalSurface {
        ConformalSurface::from_modes(32, 16, 2.0 * PI, 2.0 * PI, &[FourierMode::new(1, 0, a, 0.0)]).unwrap()
    }

    #[test]
    fn christoffels_vanish_for_constant_phi() {
        let s = ConformalSurface::from_modes(8, 8, 1.0, 2.0, &[FourierMode::new(0, 0, 0.7, 0.0)]).unwrap();
        let c = s.christoffels(0.3, 0.9);
        assert!(c.iter().flatten().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn christoffels_of_cosine_profile() {
        let s = cos_surface(0.3);
        let c0 = s.christoffels(0.0, 0.0);
        assert!(c0[0][0][0].abs() < 1e-15 && c0[1][0][0].abs() < 1e-15);
        let c = s.christoffels(PI / 2.0, 0.0);
        assert!((c[0][0][0] + 0.3).abs() < 1e-14);
        assert!((c[1][0][1] + 0.3).abs() < 1e-14);
        assert!((c[0][1][1] - 0.3).abs() < 1e-14);
        for k in 0..2 {
            assert_eq!(c[k][0][1], c[k][1][0]);
        }
    }

    #[test]
    fn curvature_of_cosine_profile() {
        let a = 0.25;
        let s = cos_surface(a);
        let k = s.gauss_curvature();
        for ix in 0..s.grid.nx {
            let x = s.grid.x(ix);
            let expected = a * x.cos() * (-2.0 * a * x.cos()).exp();
            assert!((k[s.grid.idx(ix, 3)] - expected).abs() < 1e-12);
        }
        assert!(s.integrate(&k).abs() < 1e-10);
    }

    #[test]
    fn thermostat_force_rejects_non_unit_vectors() {
        let s = ConformalSurface::flat(8, 8, 1.0, 1.0).unwrap();
        let f = ForceField::constant_thermostat(&s, 0.3);
        assert!(matches!(f.lorentz_force(&s, 0.1, 0.2, [2.0, 0.0]), Err(MagrayError::Domain(_))));
        let y = f.lorentz_force(&s, 0.1, 0.2, [0.0, 1.0]).unwrap();
        assert!((y[0] + 0.3).abs() < 1e-15 && y[1].abs() < 1e-15);
    }

    #[test]
    fn primitive_of_zero_mean_field() {
        let s = cos_surface(0.1);
        let b = real_field(s.lx(), s.ly(), &[FourierMode::new(0, 1, 0.2, 0.0)]);
        // b e^{2 phi} has zero mean because b has no x-constant part independent of y
        let f = ForceField::magnetic(b).with_exact_primitive(&s).unwrap();
        let alpha = f.alpha.clone().unwrap();
        assert!(exactness_defect(&s, &f.b, &alpha) < 1e-12);
    }

    #[test]
    fn nonexact_field_is_rejected() {
        let s = ConformalSurface::flat(8, 8, 1.0, 1.0).unwrap();
        let err = ForceField::constant_magnetic(&s, 1.0).with_exact_primitive(&s).unwrap_err();
        assert!(matches!(err, MagrayError::Config(_)));
    }
}
