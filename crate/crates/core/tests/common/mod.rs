#![allow(dead_code)]

use std::f64::consts::PI;

use magray_core::geometry::{ConformalSurface, ForceField};
use magray_core::spectral::SpectralField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TWO_PI: f64 = 2.0 * PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Band-limited random conformal factor of size about `amp`.
pub fn random_surface(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> ConformalSurface {
    let mut phi = SpectralField::random_real(TWO_PI, TWO_PI, 2, amp, rng);
    phi.terms.retain(|t| t.nx != 0 || t.ny != 0);
    let grid = magray_core::spectral::Grid::new(n, n, TWO_PI, TWO_PI).unwrap();
    ConformalSurface::new(grid, phi).unwrap()
}

/// Random magnetic intensity `mean + small oscillation`.
pub fn random_magnetic(mean: f64, amp: f64, rng: &mut ChaCha8Rng) -> ForceField {
    let mut b = SpectralField::random_real(TWO_PI, TWO_PI, 2, amp, rng);
    b.terms.retain(|t| t.nx != 0 || t.ny != 0);
    b.push(0, 0, mean.into());
    ForceField::magnetic(b)
}

pub fn flat(n: usize) -> ConformalSurface {
    ConformalSurface::flat(n, n, TWO_PI, TWO_PI).unwrap()
}
