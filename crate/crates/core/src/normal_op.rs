//! Truncated flow averages and the normal operator
//! `N_m = pi_{m*} (A + 1 (x) 1) pi_m^*` on tensor pairs.
//!
//! `A u(z) = int chi(t) u(phi_t z) dt` is discretized by the trapezoid rule on
//! the cutoff nodes, orbits by RK4, and the fiber integral of the pushforward by
//! the trapezoid rule on `n_theta` equispaced angles. The cutoff is the
//! autocorrelation of a sampled bump, which keeps its discrete Fourier
//! transform nonnegative and hence `A` positive semidefinite.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::dense;
use crate::dynamics::{linearized_flow, Flow, PhasePoint};
use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};
use crate::lifting::{pushforward_pair, FiberFunction};
use crate::spectral::{PhaseTable, SpectralField};
use crate::tensor::{binom, dmu_star, pair_inner, pair_weights, SymTensorField, TensorPair};

/// Largest RK4 substep used when sampling orbits at the cutoff nodes.
const MAX_SUBSTEP: f64 = 0.01;

/// Even cutoff `chi` sampled at `t_i = (i - K) h`, `i = 0..=2K`, with
/// `chi(0) = 1` and `chi(+-epsilon) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffProfile {
    pub epsilon: f64,
    pub half: usize,
    pub step: f64,
    pub values: Vec<f64>,
}

impl CutoffProfile {
    /// At least `n_t` nodes on `[-epsilon, epsilon]`.
    pub fn new(epsilon: f64, n_t: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MagrayError::Config(format!("cutoff radius must be positive, got {epsilon}")));
        }
        if n_t < 64 {
            return Err(MagrayError::Config(format!("need at least 64 time nodes, got {n_t}")));
        }
        // K even so the bump sits on nodes -K/2..=K/2
        let half = n_t.div_ceil(2).next_multiple_of(2);
        let step = epsilon / half as f64;
        let q = half / 2;
        let bump: Vec<f64> = (0..=2 * q)
            .map(|i| {
                let s = (i as f64 - q as f64) / q as f64;
                if s.abs() < 1.0 {
                    (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let norm: f64 = bump.iter().map(|b| b * b).sum();
        let values = (0..=2 * half)
            .map(|i| {
                let lag = i.abs_diff(half);
                (0..bump.len().saturating_sub(lag)).map(|j| bump[j] * bump[j + lag]).sum::<f64>() / norm
            })
            .collect();
        Ok(Self { epsilon, half, step, values })
    }

    pub fn nodes(&self) -> usize {
        self.values.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.half as f64) * self.step
    }

    /// Trapezoid value of `int chi dt`.
    pub fn integral(&self) -> f64 {
        self.step * self.values.iter().sum::<f64>()
    }

    /// `sum_i chi_i cos(omega t_i)`; nonnegative for every `omega`.
    pub fn dtft(&self, omega: f64) -> f64 {
        (0..self.nodes()).map(|i| self.values[i] * (omega * self.time(i)).cos()).sum()
    }

    /// `chi'` at the nodes by spectral differentiation of the zero-padded samples.
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.nodes();
        let len = 4 * n;
        let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); len];
        for (i, v) in self.values.iter().enumerate() {
            buf[i] = Complex64::new(*v, 0.0);
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(len).process(&mut buf);
        let period = len as f64 * self.step;
        for (i, c) in buf.iter_mut().enumerate() {
            let k = if i < len / 2 {
                i as f64
            } else if i == len / 2 {
                0.0
            } else {
                i as f64 - len as f64
            };
            *c *= Complex64::new(0.0, 2.0 * PI * k / period) / len as f64;
        }
        planner.plan_fft_inverse(len).process(&mut buf);
        buf[..n].iter().map(|c| c.re).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalOpConfig {
    pub cutoff: CutoffProfile,
    pub n_theta: usize,
    /// RK4 substeps per cutoff node spacing.
    pub substeps: usize,
}

impl NormalOpConfig {
    pub fn new(epsilon: f64, n_t: usize, n_theta: usize) -> Result<Self> {
        let cutoff = CutoffProfile::new(epsilon, n_t)?;
        if n_theta < 8 {
            return Err(MagrayError::Config(format!("need at least 8 fiber nodes, got {n_theta}")));
        }
        let substeps = (cutoff.step / MAX_SUBSTEP).ceil().max(1.0) as usize;
        Ok(Self { cutoff, n_theta, substeps })
    }

    fn check_band(&self, band: usize) -> Result<()> {
        if self.n_theta < 4 * band.max(1) {
            return Err(MagrayError::Config(format!("n_theta = {} is below 4 x fiber band {}", self.n_theta, band)));
        }
        Ok(())
    }

    fn theta(&self, a: usize) -> f64 {
        2.0 * PI * a as f64 / self.n_theta as f64
    }
}

/// States `phi_{t_i} z` at every cutoff node.
pub fn orbit_samples(
    surface: &ConformalSurface,
    field: &ForceField,
    z: PhasePoint,
    cfg: &NormalOpConfig,
) -> Result<Vec<[f64; 3]>> {
    let flow = Flow::new(surface, field);
    let c = &cfg.cutoff;
    let mut out = vec![[0.0; 3]; c.nodes()];
    out[c.half] = z.as_array();
    let h = c.step / cfg.substeps as f64;
    for dir in [1.0, -1.0] {
        let mut s = z.as_array();
        for i in 1..=c.half {
            for _ in 0..cfg.substeps {
                s = flow.step(s, dir * h);
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(MagrayError::Integration { t: dir * i as f64 * c.step });
            }
            let idx = if dir > 0.0 { c.half + i } else { c.half - i };
            out[idx] = s;
        }
    }
    Ok(out)
}

fn average<F>(
    surface: &ConformalSurface,
    field: &ForceField,
    z: PhasePoint,
    cfg: &NormalOpConfig,
    f: &F,
) -> Result<Complex64>
where
    F: Fn([f64; 3]) -> Complex64,
{
    let states = orbit_samples(surface, field, z, cfg)?;
    let c = &cfg.cutoff;
    Ok(states.iter().zip(&c.values).map(|(s, w)| f(*s) * *w).sum::<Complex64>() * c.step)
}

/// `A u` at a single phase point.
pub fn flow_average_at<F>(
    surface: &ConformalSurface,
    field: &ForceField,
    z: PhasePoint,
    cfg: &NormalOpConfig,
    f: F,
) -> Result<f64>
where
    F: Fn([f64; 3]) -> f64,
{
    Ok(average(surface, field, z, cfg, &|s| Complex64::new(f(s), 0.0))?.re)
}

/// Off-grid evaluation of `pi^* f` for a tensor pair.
struct LiftedPair {
    lx: f64,
    ly: f64,
    mx: i64,
    my: i64,
    parts: Vec<(usize, usize, f64, SpectralField)>,
}

impl LiftedPair {
    fn new(surface: &ConformalSurface, f: &TensorPair) -> Self {
        let mut parts = Vec::new();
        for t in f.fields() {
            for (k, c) in t.comps.iter().enumerate() {
                let s = SpectralField::from_grid(&surface.grid, c, 1e-14);
                if !s.is_zero() {
                    parts.push((t.rank, k, binom(t.rank, k), s));
                }
            }
        }
        let (mx, my) = parts.iter().fold((0, 0), |(a, b), p| {
            let (x, y) = p.3.max_index();
            (a.max(x), b.max(y))
        });
        Self { lx: surface.lx(), ly: surface.ly(), mx, my, parts }
    }

    fn eval(&self, surface: &ConformalSurface, z: [f64; 3]) -> f64 {
        if self.parts.is_empty() {
            return 0.0;
        }
        let table = PhaseTable::new(self.lx, self.ly, self.mx, self.my, z[0], z[1]);
        let phi = surface.phi.eval(z[0], z[1]);
        let (sn, cs) = z[2].sin_cos();
        self.parts
            .iter()
            .map(|(r, k, c, h)| {
                let r = *r as i32;
                let k = *k as i32;
                (-(r as f64) * phi).exp() * c * h.eval_table(&table).re * cs.powi(r - k) * sn.powi(k)
            })
            .sum()
    }
}

/// `A u` sampled at every grid point and `n_theta` angles, returned as fiber
/// modes `|j| < n_theta / 2`.
pub fn truncated_flow_average(
    surface: &ConformalSurface,
    field: &ForceField,
    u: &FiberFunction,
    cfg: &NormalOpConfig,
) -> Result<FiberFunction> {
    cfg.check_band(u.band)?;
    let modes = u.to_spectral(surface, 1e-14);
    let band = u.band as i64;
    let eval = |s: [f64; 3]| -> f64 {
        (-band..=band)
            .map(|j| (modes[(j + band) as usize].eval_c(s[0], s[1]) * Complex64::from_polar(1.0, j as f64 * s[2])).re)
            .sum()
    };
    let grid = &surface.grid;
    let nt = cfg.n_theta;
    let values: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let (x, y) = (grid.x(n / grid.ny), grid.y(n % grid.ny));
            (0..nt).map(|a| flow_average_at(surface, field, PhasePoint::new(x, y, cfg.theta(a)), cfg, eval)).collect()
        })
        .collect::<Result<_>>()?;
    let out_band = nt / 2 - 1;
    let mut out = FiberFunction::zeros(grid.len(), out_band);
    for (n, vals) in values.iter().enumerate() {
        for j in -(out_band as i64)..=out_band as i64 {
            let c: Complex64 = vals
                .iter()
                .enumerate()
                .map(|(a, v)| *v * Complex64::from_polar(1.0, -(j as f64) * cfg.theta(a)))
                .sum::<Complex64>()
                / nt as f64;
            out.modes[(j + out_band as i64) as usize][n] = c;
        }
    }
    Ok(out)
}

/// `cos^{r-k} sin^k` at `theta`.
fn monomial(r: usize, k: usize, theta: f64) -> f64 {
    let (sn, cs) = theta.sin_cos();
    cs.powi((r - k) as i32) * sn.powi(k as i32)
}

/// Ranks of the components of a rank-`m` pair, in storage order.
fn pair_layout(m: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..=m).map(|k| (m, k)).collect();
    if m >= 1 {
        out.extend((0..m).map(|k| (m - 1, k)));
    }
    out
}

/// `pi_* 1`, the image of the constant fiber function.
fn pushforward_one(surface: &ConformalSurface, m: usize) -> TensorPair {
    let mut one = FiberFunction::zeros(surface.grid.len(), 0);
    one.modes[0].iter_mut().for_each(|c| *c = Complex64::new(1.0, 0.0));
    pushforward_pair(surface, &one, m)
}

fn sm_volume(surface: &ConformalSurface) -> f64 {
    2.0 * PI * surface.area()
}

/// `N_m f = pi_{m*} (A + 1 (x) 1) pi_m^* f` on the surface grid. The rank-one
/// term is the normalized mean `<u, 1> / vol(SM)`.
pub fn normal_apply(
    surface: &ConformalSurface,
    field: &ForceField,
    f: &TensorPair,
    cfg: &NormalOpConfig,
) -> Result<TensorPair> {
    let m = f.rank();
    cfg.check_band(m)?;
    let lift = LiftedPair::new(surface, f);
    let layout = pair_layout(m);
    let grid = &surface.grid;
    let nt = cfg.n_theta;
    let dtheta = 2.0 * PI / nt as f64;
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let (x, y) = (grid.x(n / grid.ny), grid.y(n % grid.ny));
            let mut acc = vec![0.0; layout.len()];
            for a in 0..nt {
                let th = cfg.theta(a);
                let v = flow_average_at(surface, field, PhasePoint::new(x, y, th), cfg, |s| lift.eval(surface, s))?;
                for (slot, (r, k)) in acc.iter_mut().zip(&layout) {
                    *slot += v * monomial(*r, *k, th);
                }
            }
            for (slot, (r, _)) in acc.iter_mut().zip(&layout) {
                *slot *= dtheta * (*r as f64 * surface.phi_grid[n]).exp();
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut out = TensorPair::zeros(surface, m);
    {
        let mut fields: Vec<&mut SymTensorField> = vec![&mut out.p];
        if let Some(q) = out.q.as_mut() {
            fields.push(q);
        }
        let mut slot = 0;
        for t in fields {
            for k in 0..=t.rank {
                for (n, row) in rows.iter().enumerate() {
                    t.comps[k][n] = row[slot];
                }
                slot += 1;
            }
        }
    }
    let one = pushforward_one(surface, m);
    let mean = pair_inner(surface, f, &one) / sm_volume(surface);
    out.axpy(mean, &one);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermostatNormal {
    pub output: SymTensorField,
    /// `max |J(x, 0, theta) - 1|` over the sampled base points and angles.
    pub jacobian_defect: f64,
}

/// `N_0` for a thermostat, together with the change-of-variables check at `t = 0`.
pub fn thermostat_normal_apply(
    surface: &ConformalSurface,
    field: &ForceField,
    f: &SymTensorField,
    cfg: &NormalOpConfig,
) -> Result<ThermostatNormal> {
    if field.is_magnetic() {
        return Err(MagrayError::Unsupported { op: "thermostat_normal_apply", kind: "magnetic" });
    }
    if f.rank != 0 {
        return Err(MagrayError::Rank(format!("thermostat normal operator acts on functions, got rank {}", f.rank)));
    }
    let pair = TensorPair::new(f.clone(), None)?;
    let output = normal_apply(surface, field, &pair, cfg)?.p;
    let grid = &surface.grid;
    let stride = (grid.len() / 16).max(1);
    let defects: Vec<f64> = (0..grid.len())
        .step_by(stride)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let (x, y) = (grid.x(n / grid.ny), grid.y(n % grid.ny));
            (0..8)
                .map(
                    |a| Ok((jacobian_at_zero(surface, field, PhasePoint::new(x, y, PI * a as f64 / 4.0))? - 1.0).abs()),
                )
                .try_fold(0.0, |m: f64, d: Result<f64>| Ok(m.max(d?)))
        })
        .collect::<Result<_>>()?;
    Ok(ThermostatNormal { output, jacobian_defect: defects.into_iter().fold(0.0, f64::max) })
}

/// `J(x, t, theta) = |det dP/d(t, theta)| e^{2 phi(x)} / r` for the base
/// projection `P` of `phi_t(x, theta)`, with `r` the distance from `x` in the
/// metric frozen at `x`.
pub fn change_of_variables_jacobian(
    surface: &ConformalSurface,
    field: &ForceField,
    z: PhasePoint,
    t: f64,
) -> Result<f64> {
    let state = linearized_flow(surface, field, z, t, t / 16.0)?;
    let end = state.end.as_array();
    let v = Flow::new(surface, field).rhs(end);
    let dth = [state.jac[(0, 2)], state.jac[(1, 2)]];
    let det = (v[0] * dth[1] - v[1] * dth[0]).abs();
    let phi = surface.phi.eval(z.x, z.y);
    let r = phi.exp() * (end[0] - z.x).hypot(end[1] - z.y);
    Ok(det * (2.0 * phi).exp() / r)
}

/// `J(x, 0, theta)` by Richardson extrapolation from three small times.
pub fn jacobian_at_zero(surface: &ConformalSurface, field: &ForceField, z: PhasePoint) -> Result<f64> {
    let d = 1e-3;
    let j1 = change_of_variables_jacobian(surface, field, z, d)?;
    let j2 = change_of_variables_jacobian(surface, field, z, d / 2.0)?;
    let j4 = change_of_variables_jacobian(surface, field, z, d / 4.0)?;
    Ok((8.0 * j4 - 6.0 * j2 + j1) / 3.0)
}

/// `C_{n,m} = sqrt(pi) Gamma((n-1)/2 + m) / Gamma(n/2 + m)`.
pub fn c_nm(n: usize, m: usize) -> f64 {
    use statrs::function::gamma::gamma;
    let (n, m) = (n as f64, m as f64);
    PI.sqrt() * gamma((n - 1.0) / 2.0 + m) / gamma(n / 2.0 + m)
}

/// One measured entry of the principal symbol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolEntry {
    /// `(output rank, input rank)`.
    pub block: (usize, usize),
    pub component: usize,
    pub measured_re: f64,
    pub measured_im: f64,
    /// Flat-metric stationary-phase value; absent for off-diagonal blocks.
    pub predicted: Option<f64>,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolProbe {
    pub k: [i64; 2],
    pub m: usize,
    pub entries: Vec<SymbolEntry>,
    /// Largest off-diagonal block response relative to the smallest diagonal one.
    pub off_diagonal_ratio: f64,
}

/// Applies `N_m` to `e^{i k.x}` times a polarization in `ker i_k` and reads
/// off the block responses at a few grid points.
pub fn symbol_probe(
    surface: &ConformalSurface,
    field: &ForceField,
    m: usize,
    k: [i64; 2],
    cfg: &NormalOpConfig,
) -> Result<SymbolProbe> {
    let grid = &surface.grid;
    let xi = [2.0 * PI * k[0] as f64 / grid.lx, 2.0 * PI * k[1] as f64 / grid.ly];
    let kn = xi[0].hypot(xi[1]);
    let index_norm = (k[0] as f64).hypot(k[1] as f64);
    if kn * cfg.cutoff.epsilon < 8.0 {
        return Err(MagrayError::Config(format!(
            "|k| epsilon = {:.3} is below 8; the probe is not in the high-frequency regime",
            kn * cfg.cutoff.epsilon
        )));
    }
    if index_norm > grid.nx.min(grid.ny) as f64 / 4.0 {
        return Err(MagrayError::Config(format!("|k| = {index_norm} exceeds a quarter of the grid size")));
    }
    cfg.check_band(m)?;
    let ranks: Vec<usize> = if m == 0 { vec![0] } else { vec![m, m - 1] };
    let perp = [-xi[1] / kn, xi[0] / kn];
    let points = [0, grid.idx(grid.nx / 3, grid.ny / 5), grid.idx(grid.nx / 2, grid.ny / 7)];
    let nt = cfg.n_theta;
    let dtheta = 2.0 * PI / nt as f64;
    let scale = 2.0 * PI / kn;
    let mut entries = Vec::new();
    let mut diag_min = f64::INFINITY;
    let mut off_max: f64 = 0.0;
    for &r_in in &ranks {
        let pol = crate::tensor::contraction_projector(xi, r_in)?.polarization();
        let lifted_pol = |th: f64| -> f64 { (0..=r_in).map(|c| binom(r_in, c) * pol[c] * monomial(r_in, c, th)).sum() };
        let input = |s: [f64; 3]| -> Complex64 {
            let phase = Complex64::from_polar(1.0, xi[0] * s[0] + xi[1] * s[1]);
            phase * (-(r_in as f64) * surface.phi.eval(s[0], s[1])).exp() * lifted_pol(s[2])
        };
        // per probe point, the carrier-free response of every output block
        let responses: Vec<Vec<Vec<Complex64>>> = points
            .par_iter()
            .map(|&n| {
                let (x, y) = (grid.x(n / grid.ny), grid.y(n % grid.ny));
                let carrier = Complex64::from_polar(1.0, xi[0] * x + xi[1] * y);
                let mut acc: Vec<Vec<Complex64>> =
                    ranks.iter().map(|r| vec![Complex64::new(0.0, 0.0); r + 1]).collect();
                for a in 0..nt {
                    let th = cfg.theta(a);
                    let v = average(surface, field, PhasePoint::new(x, y, th), cfg, &input)?;
                    for (block, &r_out) in acc.iter_mut().zip(&ranks) {
                        for (c, slot) in block.iter_mut().enumerate() {
                            *slot += v * monomial(r_out, c, th);
                        }
                    }
                }
                Ok(acc
                    .into_iter()
                    .zip(&ranks)
                    .map(|(block, &r_out)| {
                        let s = dtheta * (r_out as f64 * surface.phi_grid[n]).exp();
                        block.into_iter().map(|v| v * s / carrier).collect()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (bi, &r_out) in ranks.iter().enumerate() {
            for c in 0..=r_out {
                let mean = responses.iter().map(|r| r[bi][c]).sum::<Complex64>() / points.len() as f64;
                if r_out == r_in {
                    if pol[c].abs() < 1e-8 {
                        continue;
                    }
                    let measured = mean / pol[c];
                    let predicted = scale
                        * [1.0, -1.0]
                            .iter()
                            .map(|s| {
                                let th = (s * perp[1]).atan2(s * perp[0]);
                                monomial(r_in, c, th) * lifted_pol(th)
                            })
                            .sum::<f64>()
                        / pol[c];
                    diag_min = diag_min.min(measured.norm());
                    entries.push(SymbolEntry {
                        block: (r_out, r_in),
                        component: c,
                        measured_re: measured.re,
                        measured_im: measured.im,
                        predicted: Some(predicted),
                        rel_err: Some((measured - predicted).norm() / predicted.abs()),
                    });
                } else {
                    off_max = off_max.max(mean.norm());
                    entries.push(SymbolEntry {
                        block: (r_out, r_in),
                        component: c,
                        measured_re: mean.re,
                        measured_im: mean.im,
                        predicted: None,
                        rel_err: None,
                    });
                }
            }
        }
    }
    Ok(SymbolProbe { k, m, entries, off_diagonal_ratio: off_max / diag_min })
}

/// Fitted slope of `log |measured|` against `log |k|` over several probes of
/// the same block and component.
pub fn homogeneity_slope(probes: &[SymbolProbe], block: (usize, usize), component: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = probes
        .iter()
        .filter_map(|p| {
            let e = p.entries.iter().find(|e| e.block == block && e.component == component)?;
            let kn = (p.k[0] as f64).hypot(p.k[1] as f64);
            Some((kn.ln(), e.measured_re.hypot(e.measured_im).ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Trigonometric interpolation kernel onto the Nyquist-free grid space.
fn dirichlet(s: f64, n: usize, l: f64) -> f64 {
    let half = n / 2;
    let arg = 2.0 * PI * s / l;
    (1.0 + 2.0 * (1..half).map(|k| (k as f64 * arg).cos()).sum::<f64>()) / n as f64
}

/// Nodal matrix of `N_m` acting on stacked pair components, built from exact
/// trigonometric interpolation of the input.
pub fn normal_matrix(
    surface: &ConformalSurface,
    field: &ForceField,
    m: usize,
    cfg: &NormalOpConfig,
) -> Result<DMatrix<f64>> {
    cfg.check_band(m)?;
    let grid = &surface.grid;
    if grid.nx % 2 == 1 || grid.ny % 2 == 1 {
        return Err(MagrayError::Config("dense normal operator needs even grid sizes".into()));
    }
    let len = grid.len();
    let layout = pair_layout(m);
    let dim = layout.len() * len;
    if dim > dense::DENSE_LIMIT {
        return Err(MagrayError::TooLarge { dim, limit: dense::DENSE_LIMIT });
    }
    let nt = cfg.n_theta;
    let dtheta = 2.0 * PI / nt as f64;
    let c = &cfg.cutoff;
    let blocks: Vec<Vec<Vec<f64>>> = (0..len)
        .into_par_iter()
        .map(|n| {
            let (x, y) = (grid.x(n / grid.ny), grid.y(n % grid.ny));
            let mut rows = vec![vec![0.0; dim]; layout.len()];
            let mut local = vec![0.0; dim];
            for a in 0..nt {
                let th = cfg.theta(a);
                local.iter_mut().for_each(|v| *v = 0.0);
                for (s, w) in orbit_samples(surface, field, PhasePoint::new(x, y, th), cfg)?.iter().zip(&c.values) {
                    if *w == 0.0 {
                        continue;
                    }
                    let dx: Vec<f64> = (0..grid.nx).map(|i| dirichlet(s[0] - grid.x(i), grid.nx, grid.lx)).collect();
                    let dy: Vec<f64> = (0..grid.ny).map(|i| dirichlet(s[1] - grid.y(i), grid.ny, grid.ly)).collect();
                    let phi = surface.phi.eval(s[0], s[1]);
                    for (slot, (r, k)) in layout.iter().enumerate() {
                        let win = w * c.step * (-(*r as f64) * phi).exp() * binom(*r, *k) * monomial(*r, *k, s[2]);
                        let block = &mut local[slot * len..(slot + 1) * len];
                        for (ix, dxv) in dx.iter().enumerate() {
                            let f = win * dxv;
                            for (iy, dyv) in dy.iter().enumerate() {
                                block[ix * grid.ny + iy] += f * dyv;
                            }
                        }
                    }
                }
                for (row, (r, k)) in rows.iter_mut().zip(&layout) {
                    let wout = dtheta * (*r as f64 * surface.phi_grid[n]).exp() * monomial(*r, *k, th);
                    row.iter_mut().zip(&local).for_each(|(o, l)| *o += wout * l);
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut mat = DMatrix::zeros(dim, dim);
    for (n, rows) in blocks.iter().enumerate() {
        for (slot, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                mat[(slot * len + n, j)] = *v;
            }
        }
    }
    let one = pushforward_one(surface, m).to_vec();
    let w = pair_weights(surface, m);
    let vol = sm_volume(surface);
    for i in 0..dim {
        for j in 0..dim {
            mat[(i, j)] += one[i] * w[j] * one[j] / vol;
        }
    }
    Ok(mat)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivitySpectrum {
    /// Singular values of `N_m` restricted to solenoidal pairs, ascending.
    pub singular_values: Vec<f64>,
    pub smallest_solenoidal: f64,
    /// Smallest Rayleigh quotient `<N f, f> / |f|^2` over solenoidal `f`.
    pub coercivity_min: f64,
    pub solenoidal_dim: usize,
}

/// Dense spectrum of `N_m` on the `ker D_mu^*` subspace of the Nyquist-free
/// trigonometric pairs on an `n x n` resampling of the surface.
pub fn injectivity_spectrum(
    surface: &ConformalSurface,
    field: &ForceField,
    m: usize,
    n: usize,
    cfg: &NormalOpConfig,
) -> Result<InjectivitySpectrum> {
    if n > 16 {
        return Err(MagrayError::TooLarge { dim: n * n, limit: 256 });
    }
    let s = surface.resampled(n, n)?;
    let comps = TensorPair::component_count(m);
    let basis = dense::block_basis(&s.grid, comps)?;
    let weights = pair_weights(&s, m);
    let nodal = normal_matrix(&s, field, m, cfg)?;
    let (a, g) = dense::galerkin(&basis, &weights, |v| {
        Ok((&nodal * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
    })?;
    let gis = dense::inverse_sqrt(&g);
    let whitened = &gis * a * &gis;
    let dim = whitened.nrows();
    let q = if m == 0 {
        DMatrix::identity(dim, dim)
    } else {
        let low = dense::block_basis(&s.grid, TensorPair::component_count(m - 1))?;
        let lw = pair_weights(&s, m - 1);
        let image: Vec<Vec<f64>> = (0..dim)
            .into_par_iter()
            .map(|j| Ok(dmu_star(&s, field, &TensorPair::from_vec(&s, m, basis.column(j).as_slice()))?.to_vec()))
            .collect::<Result<_>>()?;
        let img = DMatrix::from_fn(low.nrows(), dim, |i, j| image[j][i]);
        let wl = DMatrix::from_fn(low.nrows(), low.ncols(), |i, j| lw[i] * low[(i, j)]);
        let gl = wl.transpose() * &low;
        let d = dense::inverse_sqrt(&gl) * (wl.transpose() * img) * &gis;
        // orthogonal complement of the row space of d, singular values cut at 1e-8 relative
        let svd = d.transpose().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let mut proj = DMatrix::identity(dim, dim);
        for (i, sv) in svd.singular_values.iter().enumerate() {
            if *sv > 1e-8 * smax {
                let c = u.column(i);
                proj -= c * c.transpose();
            }
        }
        let eig = SymmetricEigen::new(proj);
        let keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        DMatrix::from_fn(dim, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])])
    };
    let restricted = q.transpose() * whitened * &q;
    let sv = dense::singular_values(&restricted);
    let sym = (&restricted + restricted.transpose()) * 0.5;
    let coercivity_min = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(InjectivitySpectrum {
        smallest_solenoidal: sv.first().copied().unwrap_or(0.0),
        singular_values: sv,
        coercivity_min,
        solenoidal_dim: q.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_shape() {
        let c = CutoffProfile::new(2.0, 129).unwrap();
        assert_eq!(c.nodes(), 2 * c.half + 1);
        assert!((c.values[c.half] - 1.0).abs() < 1e-15);
        assert_eq!(c.values[0], 0.0);
        assert_eq!(*c.values.last().unwrap(), 0.0);
        for i in 0..c.nodes() {
            assert!((c.values[i] - c.values[c.nodes() - 1 - i]).abs() < 1e-15);
        }
        for w in 0..400 {
            assert!(c.dtft(w as f64 * 0.1) > -1e-12);
        }
    }

    #[test]
    fn gamma_constants() {
        assert!((c_nm(2, 0) - PI).abs() < 1e-12);
        assert!((c_nm(2, 1) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_is_cardinal() {
        for i in 0..8 {
            let v = dirichlet(i as f64 * 0.5, 8, 4.0);
            // (n - 1) / n at the node itself, -1/n elsewhere from the dropped Nyquist bin
            let expect = if i == 0 {
                7.0 / 8.0
            } else if i % 2 == 0 {
                -1.0 / 8.0
            } else {
                1.0 / 8.0
            };
            assert!((v - expect).abs() < 1e-14, "{i} {v}");
        }
    }
}
