//! JSON experiment configuration.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use magray_core::geometry::{complex_field, real_field, ConformalSurface, ForceField, FourierMode};
use magray_core::spectral::{Grid, SpectralField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn two_pi() -> f64 {
    2.0 * PI
}

fn version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Orbits,
    Xray,
    Decompose,
    Normal,
    ProbeSymbol,
    Spectrum,
    Rigidity,
    Stability,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "version")]
    pub version: u32,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub force: ForceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "two_pi")]
    pub lx: f64,
    #[serde(default = "two_pi")]
    pub ly: f64,
    /// Fourier modes of the conformal exponent `phi` (real-part convention).
    #[serde(default)]
    pub phi: Vec<Mode>,
    #[serde(default)]
    pub random_phi: Option<RandomModes>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub kx: i64,
    pub ky: i64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Seeded random band-limited field `mean + sum_{|k| <= kmax} c_k e^{i k.x}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomModes {
    pub kmax: i64,
    pub amp: f64,
    #[serde(default)]
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForceConfig {
    Magnetic {
        #[serde(default)]
        b: Vec<Mode>,
        #[serde(default)]
        random_b: Option<RandomModes>,
    },
    /// `lambda[j]` lists the modes of the `j`-th fiber harmonic.
    Thermostat { lambda: Vec<Vec<Mode>> },
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self::Magnetic { b: Vec::new(), random_b: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub step: f64,
    pub m: usize,
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Fourier band of randomly generated tensor data.
    pub kmax: i64,
    pub eps: f64,
    pub n_t: usize,
    pub n_theta: usize,
    pub pmax: i64,
    pub orbit_nodes: usize,
    pub orbit_tol: f64,
    pub samples: usize,
    pub dense_n: usize,
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub duration: f64,
    pub k: [i64; 2],
}

impl Default for Params {
    fn default() -> Self {
        Self {
            step: 1e-3,
            m: 1,
            tol: 1e-10,
            max_iter: None,
            kmax: 3,
            eps: 2.0,
            n_t: 256,
            n_theta: 64,
            pmax: 2,
            orbit_nodes: 64,
            orbit_tol: 1e-8,
            samples: 50,
            dense_n: 12,
            x0: 0.0,
            y0: 0.0,
            theta0: 0.0,
            duration: 10.0,
            k: [8, 0],
        }
    }
}

impl Default for ExperimentConfig {
    /// Flat `32 x 32` square torus of side `2 pi` with no force.
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            experiment: None,
            surface: SurfaceConfig { nx: 32, ny: 32, lx: two_pi(), ly: two_pi(), phi: Vec::new(), random_phi: None },
            force: ForceConfig::default(),
            seed: 0,
            params: Params::default(),
        }
    }
}

/// Independent random streams derived from the seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Phi = 1,
    Force = 2,
    Data = 3,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            ConfigError(format!("{}: at `{at}`: {}", path.display(), e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError(format!("`{key}`: {msg}")));
        if self.version != SCHEMA_VERSION {
            return bad("version", format!("unsupported schema version {}", self.version));
        }
        let s = &self.surface;
        if s.nx < 8 || s.ny < 8 || s.nx % 2 == 1 || s.ny % 2 == 1 {
            return bad("surface", format!("grid {}x{} must be even and at least 8", s.nx, s.ny));
        }
        if !(s.lx > 0.0 && s.ly > 0.0) {
            return bad("surface.lx", "periods must be positive".into());
        }
        let p = &self.params;
        if !(p.step > 0.0) {
            return bad("params.step", format!("must be positive, got {}", p.step));
        }
        if !(p.tol > 0.0) {
            return bad("params.tol", format!("must be positive, got {}", p.tol));
        }
        if p.samples == 0 {
            return bad("params.samples", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn surface(&self) -> anyhow::Result<ConformalSurface> {
        let s = &self.surface;
        let grid = Grid::new(s.nx, s.ny, s.lx, s.ly)?;
        let mut phi = real_field(s.lx, s.ly, &modes(&s.phi));
        if let Some(r) = s.random_phi {
            phi = phi.add(&random_field(s.lx, s.ly, r, &mut rng(self.seed, Stream::Phi)));
        }
        Ok(ConformalSurface::new(grid, phi)?)
    }

    /// The force field; magnetic fields with exact `b dVol` carry their primitive.
    pub fn force(&self, surface: &ConformalSurface) -> anyhow::Result<ForceField> {
        let (lx, ly) = (surface.lx(), surface.ly());
        match &self.force {
            ForceConfig::Magnetic { b, random_b } => {
                let mut field = real_field(lx, ly, &modes(b));
                if let Some(r) = random_b {
                    field = field.add(&random_field(lx, ly, *r, &mut rng(self.seed, Stream::Force)));
                }
                let magnetic = ForceField::magnetic(field);
                Ok(magnetic.clone().with_exact_primitive(surface).unwrap_or(magnetic))
            }
            ForceConfig::Thermostat { lambda } => {
                let parts = lambda
                    .iter()
                    .enumerate()
                    .map(|(j, m)| if j == 0 { real_field(lx, ly, &modes(m)) } else { complex_field(lx, ly, &modes(m)) })
                    .collect();
                Ok(ForceField::thermostat(parts)?)
            }
        }
    }
}

fn modes(m: &[Mode]) -> Vec<FourierMode> {
    m.iter().map(|m| FourierMode::new(m.kx, m.ky, m.re, m.im)).collect()
}

fn random_field(lx: f64, ly: f64, r: RandomModes, rng: &mut ChaCha8Rng) -> SpectralField {
    let mut f = SpectralField::random_real(lx, ly, r.kmax, r.amp, rng);
    f.terms.retain(|t| t.nx != 0 || t.ny != 0);
    if r.mean != 0.0 {
        f.push(0, 0, r.mean.into());
    }
    f
}
