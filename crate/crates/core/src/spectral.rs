//! Periodic grids, FFT differentiation and sparse Fourier series.
//!
//! Grid values are stored row-major with index `ix * ny + iy`, where
//! `x = ix * lx / nx` and `y = iy * ly / ny`. Derivatives act on the
//! Nyquist-free part of a field: the Nyquist row and column are dropped
//! before differentiating, which keeps the discrete derivative real and
//! skew-symmetric.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{MagrayError, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Uniform periodic grid on `[0, lx) x [0, ly)` with cached FFT plans.
#[derive(Clone)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .finish()
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(MagrayError::Domain(format!("grid sizes must be even and at least 4, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(MagrayError::Domain(format!("period lengths must be positive, got ({lx}, {ly})")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.lx / self.nx as f64
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.lx * self.ly / self.len() as f64
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Same periods, different resolution.
    pub fn resized(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, self.lx, self.ly)
    }

    /// Signed wavenumber index of FFT bin `i` for a length-`n` transform.
    #[inline]
    pub fn signed_index(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    fn is_nyquist(&self, ix: usize, iy: usize) -> bool {
        ix == self.nx / 2 || iy == self.ny / 2
    }

    /// Angular wavenumbers of FFT bin `(ix, iy)`.
    #[inline]
    pub fn wavenumber(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            2.0 * PI * Self::signed_index(ix, self.nx) as f64 / self.lx,
            2.0 * PI * Self::signed_index(iy, self.ny) as f64 / self.ly,
        )
    }

    /// Unnormalized 2-D forward DFT.
    pub fn fft(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd_x, &self.fwd_y);
    }

    /// Inverse 2-D DFT including the `1/(nx ny)` normalization.
    pub fn ifft(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv_x, &self.inv_y);
        let s = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn transform(&self, data: &mut [Complex64], tx: &Arc<dyn Fft<f64>>, ty: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        ty.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); self.nx];
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                col[ix] = data[ix * self.ny + iy];
            }
            tx.process(&mut col);
            for ix in 0..self.nx {
                data[ix * self.ny + iy] = col[ix];
            }
        }
    }

    pub fn to_complex(f: &[f64]) -> Vec<Complex64> {
        f.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    }

    /// Applies a Fourier multiplier `m(kx, ky)` to a complex field; Nyquist bins are zeroed.
    pub fn multiplier_c(&self, f: &[Complex64], m: impl Fn(f64, f64) -> Complex64) -> Vec<Complex64> {
        let mut h = f.to_vec();
        self.fft(&mut h);
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                let k = self.idx(ix, iy);
                if self.is_nyquist(ix, iy) {
                    h[k] = Complex64::new(0.0, 0.0);
                } else {
                    let (kx, ky) = self.wavenumber(ix, iy);
                    h[k] *= m(kx, ky);
                }
            }
        }
        self.ifft(&mut h);
        h
    }

    /// Real-field version of [`Grid::multiplier_c`]; `m` must be Hermitian.
    pub fn multiplier(&self, f: &[f64], m: impl Fn(f64, f64) -> Complex64) -> Vec<f64> {
        self.multiplier_c(&Self::to_complex(f), m).into_iter().map(|c| c.re).collect()
    }

    pub fn dx(&self, f: &[f64]) -> Vec<f64> {
        self.multiplier(f, |kx, _| I * kx)
    }

    pub fn dy(&self, f: &[f64]) -> Vec<f64> {
        self.multiplier(f, |_, ky| I * ky)
    }

    pub fn dx_c(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.multiplier_c(f, |kx, _| I * kx)
    }

    pub fn dy_c(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.multiplier_c(f, |_, ky| I * ky)
    }

    /// Flat Laplacian `dxx + dyy`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.multiplier(f, |kx, ky| Complex64::new(-(kx * kx + ky * ky), 0.0))
    }

    /// Drops the Nyquist row and column.
    pub fn nyquist_free(&self, f: &[f64]) -> Vec<f64> {
        self.multiplier(f, |_, _| Complex64::new(1.0, 0.0))
    }

    /// 2/3-rule filter: keeps modes with `|n_x| <= nx/3` and `|n_y| <= ny/3`.
    pub fn dealias(&self, f: &[f64]) -> Vec<f64> {
        let (cx, cy) = ((self.nx / 3) as f64, (self.ny / 3) as f64);
        let (lx, ly) = (self.lx, self.ly);
        self.multiplier(f, |kx, ky| {
            let nx = (kx * lx / (2.0 * PI)).abs().round();
            let ny = (ky * ly / (2.0 * PI)).abs().round();
            if nx <= cx && ny <= cy {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Riemann sum `sum f * cell_area`, exact for trigonometric polynomials below Nyquist.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_area()
    }

    /// Samples a closure on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                out.push(f(self.x(ix), self.y(iy)));
            }
        }
        out
    }
}

/// One term `c * exp(i 2 pi (nx x / lx + ny y / ly))` of a Fourier series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub nx: i64,
    pub ny: i64,
    pub c: Complex64,
}

/// Sparse Fourier series on the torus, evaluable at arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub lx: f64,
    pub ly: f64,
    pub terms: Vec<Term>,
}

/// Per-point table of `exp(i 2 pi n x / l)` shared across several fields.
pub struct PhaseTable {
    mx: i64,
    my: i64,
    ex: Vec<Complex64>,
    ey: Vec<Complex64>,
}

impl PhaseTable {
    pub fn new(lx: f64, ly: f64, mx: i64, my: i64, x: f64, y: f64) -> Self {
        fn powers(m: i64, theta: f64) -> Vec<Complex64> {
            let mut out = vec![Complex64::new(1.0, 0.0); (2 * m + 1) as usize];
            let step = Complex64::from_polar(1.0, theta);
            for n in 1..=m {
                // direct evaluation every 16 steps bounds recurrence drift
                let p = if n % 16 == 0 {
                    Complex64::from_polar(1.0, theta * n as f64)
                } else {
                    out[(m + n - 1) as usize] * step
                };
                out[(m + n) as usize] = p;
                out[(m - n) as usize] = p.conj();
            }
            out
        }
        Self { mx, my, ex: powers(mx, 2.0 * PI * x / lx), ey: powers(my, 2.0 * PI * y / ly) }
    }

    #[inline]
    pub fn phase(&self, nx: i64, ny: i64) -> Complex64 {
        self.ex[(nx + self.mx) as usize] * self.ey[(ny + self.my) as usize]
    }
}

impl SpectralField {
    pub fn zero(lx: f64, ly: f64) -> Self {
        Self { lx, ly, terms: Vec::new() }
    }

    pub fn constant(lx: f64, ly: f64, c: f64) -> Self {
        Self { lx, ly, terms: vec![Term { nx: 0, ny: 0, c: Complex64::new(c, 0.0) }] }
    }

    /// Real field `sum Re[(re + i im) exp(i k.x)]` from a mode list.
    pub fn from_real_modes(lx: f64, ly: f64, modes: &[(i64, i64, f64, f64)]) -> Self {
        let mut f = Self::zero(lx, ly);
        for &(kx, ky, re, im) in modes {
            let c = Complex64::new(re, im);
            if kx == 0 && ky == 0 {
                f.push(0, 0, Complex64::new(re, 0.0));
            } else {
                f.push(kx, ky, 0.5 * c);
                f.push(-kx, -ky, 0.5 * c.conj());
            }
        }
        f
    }

    /// Complex field `sum (re + i im) exp(i k.x)`.
    pub fn from_complex_modes(lx: f64, ly: f64, modes: &[(i64, i64, f64, f64)]) -> Self {
        let mut f = Self::zero(lx, ly);
        for &(kx, ky, re, im) in modes {
            f.push(kx, ky, Complex64::new(re, im));
        }
        f
    }

    /// Adds `c exp(2 pi i (nx x / Lx + ny y / Ly))`, merging with an existing term.
    pub fn push(&mut self, nx: i64, ny: i64, c: Complex64) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.nx == nx && t.ny == ny) {
            t.c += c;
        } else {
            self.terms.push(Term { nx, ny, c });
        }
    }

    /// Fourier coefficients of a grid field, Nyquist dropped, small terms pruned.
    pub fn from_grid_c(grid: &Grid, f: &[Complex64], rel_tol: f64) -> Self {
        let mut h = f.to_vec();
        grid.fft(&mut h);
        let s = 1.0 / grid.len() as f64;
        let max = h.iter().map(|c| c.norm()).fold(0.0, f64::max) * s;
        let mut terms = Vec::new();
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                if grid.is_nyquist(ix, iy) {
                    continue;
                }
                let c = h[grid.idx(ix, iy)] * s;
                if c.norm() > rel_tol * max && c.norm() > 0.0 {
                    terms.push(Term { nx: Grid::signed_index(ix, grid.nx), ny: Grid::signed_index(iy, grid.ny), c });
                }
            }
        }
        Self { lx: grid.lx, ly: grid.ly, terms }
    }

    pub fn from_grid(grid: &Grid, f: &[f64], rel_tol: f64) -> Self {
        Self::from_grid_c(grid, &Grid::to_complex(f), rel_tol)
    }

    pub fn max_index(&self) -> (i64, i64) {
        self.terms.iter().fold((0, 0), |(a, b), t| (a.max(t.nx.abs()), b.max(t.ny.abs())))
    }

    #[inline]
    fn k(&self, t: &Term) -> (f64, f64) {
        (2.0 * PI * t.nx as f64 / self.lx, 2.0 * PI * t.ny as f64 / self.ly)
    }

    /// Calls `f(term, exp(i k.x))` for every term, sharing trig evaluations
    /// through a phase table once there are more than a few terms.
    #[inline]
    fn for_each_phase(&self, x: f64, y: f64, mut f: impl FnMut(&Term, Complex64)) {
        if self.terms.len() <= 3 {
            for t in &self.terms {
                let (kx, ky) = self.k(t);
                f(t, Complex64::from_polar(1.0, kx * x + ky * y));
            }
        } else {
            let (mx, my) = self.max_index();
            let table = PhaseTable::new(self.lx, self.ly, mx, my, x, y);
            for t in &self.terms {
                f(t, table.phase(t.nx, t.ny));
            }
        }
    }

    pub fn eval_c(&self, x: f64, y: f64) -> Complex64 {
        let mut out = Complex64::new(0.0, 0.0);
        self.for_each_phase(x, y, |t, p| out += t.c * p);
        out
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.eval_c(x, y).re
    }

    /// Evaluation through a precomputed phase table covering this field's indices.
    #[inline]
    pub fn eval_table(&self, table: &PhaseTable) -> Complex64 {
        self.terms.iter().map(|t| t.c * table.phase(t.nx, t.ny)).sum()
    }

    /// Value and first derivatives (real parts).
    pub fn eval_grad(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        self.for_each_phase(x, y, |t, p| {
            let (kx, ky) = self.k(t);
            let v = t.c * p;
            out[0] += v.re;
            out[1] += (I * kx * v).re;
            out[2] += (I * ky * v).re;
        });
        out
    }

    /// Complex value and first derivatives.
    pub fn eval_grad_c(&self, x: f64, y: f64) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        self.for_each_phase(x, y, |t, p| {
            let (kx, ky) = self.k(t);
            let v = t.c * p;
            out[0] += v;
            out[1] += I * kx * v;
            out[2] += I * ky * v;
        });
        out
    }

    /// Value, gradient and Hessian `[f, fx, fy, fxx, fxy, fyy]` (real parts).
    pub fn eval_hess(&self, x: f64, y: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        self.for_each_phase(x, y, |t, p| {
            let (kx, ky) = self.k(t);
            let v = t.c * p;
            out[0] += v.re;
            out[1] += -kx * v.im;
            out[2] += -ky * v.im;
            out[3] += -kx * kx * v.re;
            out[4] += -kx * ky * v.re;
            out[5] += -ky * ky * v.re;
        });
        out
    }

    pub fn to_grid_c(&self, grid: &Grid) -> Vec<Complex64> {
        let (mx, my) = self.max_index();
        let mut out = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let table = PhaseTable::new(self.lx, self.ly, mx, my, grid.x(ix), grid.y(iy));
                out.push(self.eval_table(&table));
            }
        }
        out
    }

    pub fn to_grid(&self, grid: &Grid) -> Vec<f64> {
        self.to_grid_c(grid).into_iter().map(|c| c.re).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.c.norm() == 0.0)
    }

    /// True when only the mean term is present.
    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| (t.nx == 0 && t.ny == 0) || t.c.norm() == 0.0)
    }

    pub fn mean(&self) -> Complex64 {
        self.terms.iter().filter(|t| t.nx == 0 && t.ny == 0).map(|t| t.c).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.c *= s;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for t in &other.terms {
            out.push(t.nx, t.ny, t.c);
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            *t = Term { nx: -t.nx, ny: -t.ny, c: t.c.conj() };
        }
        out
    }

    /// Random real trigonometric polynomial with `|n_x|, |n_y| <= kmax`.
    ///
    /// Coefficients are uniform in the unit square and damped by `1 / (1 + |n|^2)`.
    pub fn random_real<R: Rng + ?Sized>(lx: f64, ly: f64, kmax: i64, amplitude: f64, rng: &mut R) -> Self {
        let mut f = Self::zero(lx, ly);
        for nx in 0..=kmax {
            for ny in -kmax..=kmax {
                if nx == 0 && ny < 0 {
                    continue;
                }
                let damp = amplitude / (1.0 + (nx * nx + ny * ny) as f64);
                let re = rng.gen_range(-1.0..1.0) * damp;
                if nx == 0 && ny == 0 {
                    f.push(0, 0, Complex64::new(re, 0.0));
                } else {
                    let c = Complex64::new(re, rng.gen_range(-1.0..1.0) * damp);
                    f.push(nx, ny, c);
                    f.push(-nx, -ny, c.conj());
                }
            }
        }
        f
    }
}
