//! Curvature-type quantities along magnetic geodesics on surfaces.
//!
//! Along a unit-speed orbit with velocity `v` and normal `w = J v`, the Lorentz
//! force is `Y = b J`, so every vector field orthogonal to the orbit reduces to
//! a scalar `z` with `Z = z w`. In that frame
//!
//! ```text
//! I(Z, Z)  = int z'^2 - (K + b^2 - db(w)) z^2
//! k_mu     = 2K + 6 b^2 - 2 db(w)
//! I_mod(Z) = int z'^2 - k_mu z^2
//! ```

use rand::Rng;

use crate::dynamics::Trajectory;
use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};

/// Normal coefficient `z(t)` of a field `Z = z w` along an orbit, sampled on
/// the orbit's time grid together with its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFieldAlongOrbit {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub zdot: Vec<f64>,
}

impl NormalFieldAlongOrbit {
    /// Samples `f(t) = (z, z')`.
    pub fn from_fn(times: &[f64], f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (z, zdot) = times.iter().map(|t| f(*t)).unzip();
        Self { times: times.to_vec(), z, zdot }
    }

    pub fn zeros(times: &[f64]) -> Self {
        Self::from_fn(times, |_| (0.0, 0.0))
    }

    /// `z = sum_k a_k sin(k pi t / T)` with `k = 1, 2, ...`.
    pub fn sine_series(times: &[f64], coeffs: &[f64]) -> Self {
        let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
        let t0 = times.first().copied().unwrap_or(0.0);
        Self::from_fn(times, |t| {
            coeffs.iter().enumerate().fold((0.0, 0.0), |(z, dz), (i, a)| {
                let w = (i + 1) as f64 * std::f64::consts::PI / span;
                let (s, c) = (w * (t - t0)).sin_cos();
                (z + a * s, dz + a * w * c)
            })
        })
    }

    /// Random sine series with coefficients decaying like `1 / k`.
    pub fn random<R: Rng + ?Sized>(times: &[f64], modes: usize, rng: &mut R) -> Self {
        let coeffs: Vec<f64> = (1..=modes).map(|k| rng.gen_range(-1.0..1.0) / k as f64).collect();
        Self::sine_series(times, &coeffs)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            times: self.times.clone(),
            z: self.z.iter().map(|v| c * v).collect(),
            zdot: self.zdot.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, s: f64) -> Self {
        Self {
            times: self.times.clone(),
            z: self.z.iter().zip(&other.z).map(|(a, b)| a + s * b).collect(),
            zdot: self.zdot.iter().zip(&other.zdot).map(|(a, b)| a + s * b).collect(),
        }
    }
}

/// `k_mu(x, v)` with the normal `w = sign * J v`. Every term is even in `w`.
pub fn kmu_with_normal(surface: &ConformalSurface, field: &ForceField, p: [f64; 3], sign: f64) -> Result<f64> {
    field.require_magnetic("kmu")?;
    let g = surface.at(p[0], p[1]);
    let [b, bx, by] = field.b_at(p[0], p[1]);
    // orthonormal-frame components of v and w, and Y(u) = b J u
    let (sn, cs) = p[2].sin_cos();
    let v = [cs, sn];
    let w = [-sign * sn, sign * cs];
    let yw = [-b * w[1], b * w[0]];
    let jv = [-v[1], v[0]];
    let db_w = (-g.phi).exp() * (bx * w[0] + by * w[1]);
    let yw_v = yw[0] * v[0] + yw[1] * v[1];
    let yw2 = yw[0] * yw[0] + yw[1] * yw[1];
    let nabla_term = db_w * (jv[0] * w[0] + jv[1] * w[1]);
    Ok(2.0 * g.curvature() + yw_v * yw_v + 5.0 * yw2 - 2.0 * nabla_term)
}

/// `k_mu(x, v) = 2K + (Y(w), v)^2 + 5|Y(w)|^2 - 2((nabla_w Y)(v), w)`.
pub fn kmu(surface: &ConformalSurface, field: &ForceField, p: [f64; 3]) -> Result<f64> {
    kmu_with_normal(surface, field, p, 1.0)
}

/// Potential of the index form, `K + b^2 - db(w)` with `w = J v`.
pub fn index_potential(surface: &ConformalSurface, field: &ForceField, p: [f64; 3]) -> Result<f64> {
    field.require_magnetic("index_form")?;
    let g = surface.at(p[0], p[1]);
    let [b, bx, by] = field.b_at(p[0], p[1]);
    let (sn, cs) = p[2].sin_cos();
    let db_w = (-g.phi).exp() * (-bx * sn + by * cs);
    Ok(g.curvature() + b * b - db_w)
}

/// Composite Simpson weights, closed by the 3/8 rule when the interval count is odd.
fn quadrature_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len().saturating_sub(1);
    let mut w = vec![0.0; n + 1];
    if n == 0 {
        return w;
    }
    let h = (times[n] - times[0]) / n as f64;
    if n == 1 {
        w[0] = h / 2.0;
        w[1] = h / 2.0;
        return w;
    }
    let simpson_end = if n.is_multiple_of(2) { n } else { n - 3 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end < n {
        let s = simpson_end;
        for (k, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[s + k] += 3.0 * h / 8.0 * c;
        }
    }
    w
}

/// `T int_0^T k_mu^+(gamma, gamma') dt` for one orbit.
pub fn kbar_contribution(surface: &ConformalSurface, field: &ForceField, orbit: &Trajectory) -> Result<f64> {
    let w = quadrature_weights(&orbit.times);
    let mut acc = 0.0;
    for (s, wi) in orbit.states.iter().zip(&w) {
        acc += wi * kmu(surface, field, *s)?.max(0.0);
    }
    Ok(orbit.duration() * acc)
}

/// Largest contribution over a finite orbit set: a lower bound for the
/// supremum over all closed orbits.
pub fn kbar(surface: &ConformalSurface, field: &ForceField, orbits: &[&Trajectory]) -> Result<f64> {
    if orbits.is_empty() {
        return Err(MagrayError::Domain("kbar needs at least one orbit".into()));
    }
    orbits.iter().map(|o| kbar_contribution(surface, field, o)).try_fold(f64::NEG_INFINITY, |m, c| Ok(m.max(c?)))
}

fn check_field(orbit: &Trajectory, z: &NormalFieldAlongOrbit) -> Result<()> {
    if z.z.len() != orbit.len() || z.zdot.len() != orbit.len() {
        return Err(MagrayError::Domain(format!("normal field has {} samples, orbit has {}", z.z.len(), orbit.len())));
    }
    let scale = 1.0 + z.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ends = z.z.first().map_or(0.0, |v| v.abs()).max(z.z.last().map_or(0.0, |v| v.abs()));
    if ends > 1e-10 * scale {
        return Err(MagrayError::Domain(format!("normal field must vanish at the endpoints, found {ends:e}")));
    }
    Ok(())
}

fn quadratic_form(
    orbit: &Trajectory,
    z: &NormalFieldAlongOrbit,
    potential: impl Fn([f64; 3]) -> Result<f64>,
) -> Result<f64> {
    check_field(orbit, z)?;
    let w = quadrature_weights(&orbit.times);
    let mut acc = 0.0;
    for i in 0..orbit.len() {
        acc += w[i] * (z.zdot[i] * z.zdot[i] - potential(orbit.states[i])? * z.z[i] * z.z[i]);
    }
    Ok(acc)
}

/// `I(Z, Z) = int |Z'|^2 - (C(Z), Z) - (Y(gamma'), Z)^2` in the normal frame.
pub fn index_form(
    surface: &ConformalSurface,
    field: &ForceField,
    orbit: &Trajectory,
    z: &NormalFieldAlongOrbit,
) -> Result<f64> {
    quadratic_form(orbit, z, |p| index_potential(surface, field, p))
}

/// `int |Z'|^2 - 2(C(Z), Z) - (Y(Z), gamma')^2 - 4|Y(Z)|^2`, equal to
/// `int z'^2 - k_mu z^2` in the normal frame.
pub fn modified_index_form(
    surface: &ConformalSurface,
    field: &ForceField,
    orbit: &Trajectory,
    z: &NormalFieldAlongOrbit,
) -> Result<f64> {
    quadratic_form(orbit, z, |p| kmu(surface, field, p))
}
