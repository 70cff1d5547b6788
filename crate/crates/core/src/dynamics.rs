//! The magnetic/thermostat flow on `SM` in coordinates `(x, y, theta)`.
//!
//! A phase point carries the unit vector `v = exp(-phi) (cos theta, sin theta)`,
//! so the generator is
//!
//! ```text
//! x' = e^{-phi} cos theta
//! y' = e^{-phi} sin theta
//! theta' = e^{-phi} (-phi_x sin theta + phi_y cos theta) + lambda_eff
//! ```
//!
//! with `lambda_eff = b(x)` for magnetic fields and `lambda(x, theta)` for
//! thermostats. Integration is classical fixed-step RK4; states are kept
//! unreduced so that trajectories record their lift to the universal cover.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Coordinates reduced to `[0, lx) x [0, ly) x [0, 2 pi)`.
    pub fn reduced(&self, lx: f64, ly: f64) -> Self {
        Self::new(self.x.rem_euclid(lx), self.y.rem_euclid(ly), self.theta.rem_euclid(2.0 * PI))
    }

    /// Reverses the direction of motion.
    pub fn flipped(&self) -> Self {
        Self::new(self.x, self.y, self.theta + PI)
    }
}

/// The pair `(surface, field)` defining a flow.
#[derive(Debug, Clone, Copy)]
pub struct Flow<'a> {
    pub surface: &'a ConformalSurface,
    pub field: &'a ForceField,
}

impl<'a> Flow<'a> {
    pub fn new(surface: &'a ConformalSurface, field: &'a ForceField) -> Self {
        Self { surface, field }
    }

    #[inline]
    pub fn rhs(&self, z: [f64; 3]) -> [f64; 3] {
        let g = self.surface.phi.eval_grad(z[0], z[1]);
        let s = (-g[0]).exp();
        let (sn, cs) = z[2].sin_cos();
        let lam = self.field.lambda_eff(z[0], z[1], z[2]);
        [s * cs, s * sn, s * (-g[1] * sn + g[2] * cs) + lam]
    }

    /// Generator and its Jacobian `A = d(rhs)/dz`.
    pub fn rhs_jacobian(&self, z: [f64; 3]) -> ([f64; 3], Matrix3<f64>) {
        let g = self.surface.at(z[0], z[1]);
        let s = (-g.phi).exp();
        let (sn, cs) = z[2].sin_cos();
        let lam = self.field.lambda_eff_derivs(z[0], z[1], z[2]);
        let geo = -g.phi_x * sn + g.phi_y * cs;
        let f = [s * cs, s * sn, s * geo + lam[0]];
        let a = Matrix3::new(
            -g.phi_x * s * cs,
            -g.phi_y * s * cs,
            -s * sn,
            -g.phi_x * s * sn,
            -g.phi_y * s * sn,
            s * cs,
            -g.phi_x * s * geo + s * (-g.phi_xx * sn + g.phi_xy * cs) + lam[1],
            -g.phi_y * s * geo + s * (-g.phi_xy * sn + g.phi_yy * cs) + lam[2],
            s * (-g.phi_x * cs - g.phi_y * sn) + lam[3],
        );
        (f, a)
    }

    pub fn step(&self, z: [f64; 3], h: f64) -> [f64; 3] {
        let k1 = self.rhs(z);
        let k2 = self.rhs(axpy(z, 0.5 * h, k1));
        let k3 = self.rhs(axpy(z, 0.5 * h, k2));
        let k4 = self.rhs(axpy(z, h, k3));
        let mut out = z;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// One RK4 step of the flow together with the variational equation `M' = A M`.
    pub fn step_linearized(&self, z: [f64; 3], m: Matrix3<f64>, h: f64) -> ([f64; 3], Matrix3<f64>) {
        let (f1, a1) = self.rhs_jacobian(z);
        let m1 = a1 * m;
        let (f2, a2) = self.rhs_jacobian(axpy(z, 0.5 * h, f1));
        let m2 = a2 * (m + 0.5 * h * m1);
        let (f3, a3) = self.rhs_jacobian(axpy(z, 0.5 * h, f2));
        let m3 = a3 * (m + 0.5 * h * m2);
        let (f4, a4) = self.rhs_jacobian(axpy(z, h, f3));
        let m4 = a4 * (m + h * m3);
        let mut out = z;
        for i in 0..3 {
            out[i] += h / 6.0 * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]);
        }
        (out, m + h / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4))
    }

    /// Endpoint of the time-`t` flow (negative `t` flows backwards).
    pub fn flow_to(&self, p: PhasePoint, t: f64, step: f64) -> Result<PhasePoint> {
        let n = steps_for(t.abs(), step);
        let h = t / n as f64;
        let mut z = p.as_array();
        for i in 0..n {
            let next = self.step(z, h);
            if !finite(&next) {
                return Err(MagrayError::Integration { t: i as f64 * h });
            }
            z = next;
        }
        Ok(PhasePoint::from_array(z))
    }
}

#[inline]
fn axpy(z: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [z[0] + h * k[0], z[1] + h * k[1], z[2] + h * k[2]]
}

fn finite(z: &[f64; 3]) -> bool {
    z.iter().all(|v| v.is_finite())
}

/// Number of uniform steps of size at most `step` covering `t`.
pub fn steps_for(t: f64, step: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    ((t / step) - 1e-9).ceil().max(1.0) as usize
}

fn check_step(step: f64, t: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(MagrayError::Domain(format!("step must be positive, got {step}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(MagrayError::Domain(format!("duration must be nonnegative, got {t}")));
    }
    Ok(())
}

pub fn generator(surface: &ConformalSurface, field: &ForceField, p: PhasePoint) -> [f64; 3] {
    Flow::new(surface, field).rhs(p.as_array())
}

/// Uniformly sampled orbit with unreduced (lifted) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub step: f64,
    pub times: Vec<f64>,
    /// Unreduced `(x, y, theta)`; positions are points of the universal cover.
    pub states: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> PhasePoint {
        PhasePoint::from_array(self.states[0])
    }

    pub fn end(&self) -> PhasePoint {
        PhasePoint::from_array(*self.states.last().expect("trajectory has samples"))
    }

    pub fn lifted_displacement(&self) -> [f64; 2] {
        let (a, b) = (self.states[0], self.states[self.len() - 1]);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Sample `i` with coordinates reduced mod periods.
    pub fn sample(&self, i: usize, lx: f64, ly: f64) -> PhasePoint {
        PhasePoint::from_array(self.states[i]).reduced(lx, ly)
    }
}

pub fn integrate(
    surface: &ConformalSurface,
    field: &ForceField,
    p0: PhasePoint,
    t: f64,
    step: f64,
) -> Result<Trajectory> {
    check_step(step, t)?;
    let flow = Flow::new(surface, field);
    let n = steps_for(t, step);
    let h = if n == 0 { step } else { t / n as f64 };
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut z = p0.as_array();
    times.push(0.0);
    states.push(z);
    for i in 0..n {
        let next = flow.step(z, h);
        if !finite(&next) {
            return Err(MagrayError::Integration { t: i as f64 * h });
        }
        z = next;
        times.push((i + 1) as f64 * h);
        states.push(z);
    }
    Ok(Trajectory { step: h, times, states })
}

/// Derivative of the time-`t` flow map in `(x, y, theta)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedState {
    pub jac: Matrix3<f64>,
    pub end: PhasePoint,
}

pub fn linearized_flow(
    surface: &ConformalSurface,
    field: &ForceField,
    p0: PhasePoint,
    t: f64,
    step: f64,
) -> Result<LinearizedState> {
    if !(step > 0.0) {
        return Err(MagrayError::Domain(format!("step must be positive, got {step}")));
    }
    let flow = Flow::new(surface, field);
    let n = steps_for(t.abs(), step);
    let mut z = p0.as_array();
    let mut m = Matrix3::identity();
    if n > 0 {
        let h = t / n as f64;
        for i in 0..n {
            let (zn, mn) = flow.step_linearized(z, m, h);
            if !finite(&zn) || !mn.iter().all(|v| v.is_finite()) {
                return Err(MagrayError::Integration { t: i as f64 * h });
            }
            z = zn;
            m = mn;
        }
    }
    Ok(LinearizedState { jac: m, end: PhasePoint::from_array(z) })
}

/// `det(jac) rho(end) / rho(start) - 1` with the coordinate Liouville density `rho = e^{2 phi}`.
pub fn liouville_defect(surface: &ConformalSurface, p0: PhasePoint, state: &LinearizedState) -> f64 {
    let rho = |p: &PhasePoint| (2.0 * surface.phi.eval(p.x, p.y)).exp();
    state.jac.determinant() * rho(&state.end) / rho(&p0) - 1.0
}

/// The vertical block `(dx/dtheta, dy/dtheta)` and its time derivative.
fn vertical_block(flow: &Flow, z: [f64; 3], m: &Matrix3<f64>) -> ([f64; 2], [f64; 2]) {
    let (_, a) = flow.rhs_jacobian(z);
    let dm = a * m;
    ([m[(0, 2)], m[(1, 2)]], [dm[(0, 2)], dm[(1, 2)]])
}

/// First `t` in `(0, t_max]` where the flowed vertical direction projects to zero.
///
/// Local minima of `|c(t)|`, `c = (dx/dtheta, dy/dtheta)`, are bracketed by sign
/// changes of `c . c'` and refined by bisection; a minimum below `1e-6` is a
/// conjugate time.
pub fn first_conjugate_time(
    surface: &ConformalSurface,
    field: &ForceField,
    p0: PhasePoint,
    t_max: f64,
    step: f64,
) -> Result<Option<f64>> {
    if !(t_max > 0.0) {
        return Err(MagrayError::Domain(format!("t_max must be positive, got {t_max}")));
    }
    check_step(step, t_max)?;
    const THRESHOLD: f64 = 1e-6;
    let flow = Flow::new(surface, field);
    let n = steps_for(t_max, step);
    let h = t_max / n as f64;
    let slope = |z: [f64; 3], m: &Matrix3<f64>| {
        let (c, dc) = vertical_block(&flow, z, m);
        c[0] * dc[0] + c[1] * dc[1]
    };
    let mut z = p0.as_array();
    let mut m = Matrix3::identity();
    let mut f_prev = slope(z, &m);
    for i in 0..n {
        let (zn, mn) = flow.step_linearized(z, m, h);
        if !finite(&zn) {
            return Err(MagrayError::Integration { t: i as f64 * h });
        }
        let f_next = slope(zn, &mn);
        if f_prev < 0.0 && f_next >= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (zm, mm) = flow.step_linearized(z, m, mid);
                if slope(zm, &mm) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            let (zm, mm) = flow.step_linearized(z, m, tau);
            let (c, _) = vertical_block(&flow, zm, &mm);
            if c[0].hypot(c[1]) < THRESHOLD {
                return Ok(Some(i as f64 * h + tau));
            }
        }
        z = zn;
        m = mn;
        f_prev = f_next;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicityReport {
    pub lyapunov_estimate: f64,
    pub min_angle_stable_vertical: f64,
    pub min_angle_unstable_vertical: f64,
}

/// Angle between a tangent vector and the vertical `(0, 0, 1)` in the
/// metric `e^{2 phi} (dx^2 + dy^2) + dtheta^2`.
fn angle_to_vertical(surface: &ConformalSurface, z: [f64; 3], w: &Vector3<f64>) -> f64 {
    let e2 = (2.0 * surface.phi.eval(z[0], z[1])).exp();
    let norm = (e2 * (w[0] * w[0] + w[1] * w[1]) + w[2] * w[2]).sqrt();
    (w[2].abs() / norm).clamp(0.0, 1.0).acos()
}

/// Benettin run in direction `sign`; returns the growth rate over the second
/// half and the minimal angle of the leading vector to the vertical there.
fn benettin(flow: &Flow, p0: PhasePoint, t: f64, step: f64, sign: f64) -> Result<(f64, f64)> {
    const REORTHO: usize = 10;
    let n = steps_for(t, step);
    let h = sign * t / n as f64;
    let burn = n / 2;
    let mut z = p0.as_array();
    let mut m = Matrix3::identity();
    let mut log_growth = 0.0;
    let mut min_angle = f64::INFINITY;
    for i in 0..n {
        let (zn, mn) = flow.step_linearized(z, m, h);
        if !finite(&zn) || !mn.iter().all(|v| v.is_finite()) {
            return Err(MagrayError::Integration { t: i as f64 * h.abs() });
        }
        z = zn;
        m = mn;
        if (i + 1) % REORTHO == 0 || i + 1 == n {
            let qr = m.qr();
            let r = qr.r();
            if i >= burn {
                log_growth += r[(0, 0)].abs().ln();
                let lead: Vector3<f64> = qr.q().column(0).into();
                min_angle = min_angle.min(angle_to_vertical(flow.surface, z, &lead));
            }
            m = qr.q();
        }
    }
    let span = (n - burn) as f64 * h.abs();
    Ok((log_growth / span, min_angle))
}

/// Top Lyapunov exponent (growth over the second half of `[0, t]`) and the
/// minimal angles of the stable/unstable estimates to the vertical.
pub fn hyperbolicity_diagnostics(
    surface: &ConformalSurface,
    field: &ForceField,
    p0: PhasePoint,
    t: f64,
    step: f64,
) -> Result<HyperbolicityReport> {
    check_step(step, t)?;
    if t < 20.0 * step {
        return Err(MagrayError::Domain("diagnostics need at least 20 steps".into()));
    }
    let flow = Flow::new(surface, field);
    let (lyap, unstable) = benettin(&flow, p0, t, step, 1.0)?;
    let (_, stable) = benettin(&flow, p0, t, step, -1.0)?;
    Ok(HyperbolicityReport {
        lyapunov_estimate: lyap,
        min_angle_stable_vertical: stable,
        min_angle_unstable_vertical: unstable,
    })
}
