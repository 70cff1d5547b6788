//! Artifact writers: CSV tables, raw `f64` fields with JSON sidecars, plot
//! scripts, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use magray_core::geometry::ConformalSurface;
use magray_core::tensor::TensorPair;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig};

/// Files written by one run, in creation order.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

impl Artifacts {
    pub fn csv<S: Serialize>(&mut self, path: &Path, rows: &[S]) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(path.to_path_buf());
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, path: &Path, value: &S) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path.to_path_buf());
        Ok(())
    }

    pub fn pair(&mut self, path: &Path, surface: &ConformalSurface, pair: &TensorPair) -> Result<()> {
        ensure_parent(path)?;
        let bytes: Vec<u8> = pair.to_vec().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path.to_path_buf());
        let meta = PairMeta::new(surface, pair.rank());
        self.json(&sidecar(path), &meta)
    }

    /// A matplotlib script that plots `csv` when run from its directory.
    pub fn plot_script(&mut self, csv: &Path, x: &str, ys: &[&str], style: PlotStyle, title: &str) -> Result<()> {
        let name = csv.file_name().and_then(|n| n.to_str()).unwrap_or("data.csv");
        let stem = csv.file_stem().and_then(|n| n.to_str()).unwrap_or("data");
        let plot = match style {
            PlotStyle::Line => "ax.plot",
            PlotStyle::Scatter => "ax.scatter",
            PlotStyle::LogLog => "ax.loglog",
        };
        let mut body = String::new();
        for y in ys {
            body.push_str(&format!("{plot}(d[\"{x}\"], d[\"{y}\"], label=\"{y}\")\n"));
        }
        let script = format!(
            "import pandas as pd\nimport matplotlib.pyplot as plt\n\nd = pd.read_csv(\"{name}\")\nfig, ax = plt.subplots()\n{body}ax.set_xlabel(\"{x}\")\nax.set_title(\"{title}\")\nax.legend()\nfig.savefig(\"{stem}.png\", dpi=150)\n"
        );
        let path = csv.with_extension("plot.py");
        fs::write(&path, script)?;
        self.files.push(path);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlotStyle {
    Line,
    Scatter,
    LogLog,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Layout of a raw tensor-pair file: little-endian `f64`, component-major,
/// grid index `ix * ny + iy`, components `p_0..p_m` then `q_0..q_{m-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMeta {
    pub kind: String,
    pub m: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub components: Vec<String>,
    pub dtype: String,
}

impl PairMeta {
    pub fn new(surface: &ConformalSurface, m: usize) -> Self {
        let mut components: Vec<String> = (0..=m).map(|k| format!("p{k}")).collect();
        if m >= 1 {
            components.extend((0..m).map(|k| format!("q{k}")));
        }
        let g = &surface.grid;
        Self {
            kind: "tensor_pair".into(),
            m,
            nx: g.nx,
            ny: g.ny,
            lx: g.lx,
            ly: g.ly,
            components,
            dtype: "f64le".into(),
        }
    }
}

pub fn read_pair(path: &Path, surface: &ConformalSurface) -> Result<TensorPair> {
    let meta_path = sidecar(path);
    let meta: PairMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", meta_path.display())))?,
    )
    .map_err(|e| ConfigError(format!("{}: {e}", meta_path.display())))?;
    let g = &surface.grid;
    if meta.nx != g.nx || meta.ny != g.ny || (meta.lx - g.lx).abs() > 1e-12 || (meta.ly - g.ly).abs() > 1e-12 {
        bail!(ConfigError(format!(
            "{}: pair lives on a {}x{} grid of size {}x{}, config surface is {}x{} of size {}x{}",
            path.display(),
            meta.nx,
            meta.ny,
            meta.lx,
            meta.ly,
            g.nx,
            g.ny,
            g.lx,
            g.ly
        )));
    }
    let bytes = fs::read(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let expect = TensorPair::component_count(meta.m) * g.len() * 8;
    if bytes.len() != expect {
        bail!(ConfigError(format!("{}: expected {expect} bytes, found {}", path.display(), bytes.len())));
    }
    let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(TensorPair::from_vec(surface, meta.m, &v))
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub config: &'a ExperimentConfig,
    pub versions: Versions,
    pub workers: usize,
    pub wall_time: f64,
    pub results: serde_json::Value,
    pub checksums: Vec<Checksum>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub magray: &'static str,
    pub schema: u32,
}

#[derive(Debug, Serialize)]
pub struct Checksum {
    pub file: String,
    pub sha256: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { magray: env!("CARGO_PKG_VERSION"), schema: crate::config::SCHEMA_VERSION }
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn checksums(files: &[PathBuf]) -> Result<Vec<Checksum>> {
    files
        .iter()
        .map(|f| {
            Ok(Checksum {
                file: f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
                sha256: sha256_hex(f)?,
            })
        })
        .collect()
}
