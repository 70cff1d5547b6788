//! One function per experiment; each writes its artifacts and returns a JSON
//! summary for the manifest.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use magray_core::dynamics::{integrate, PhasePoint};
use magray_core::geometry::{ConformalSurface, ForceField};
use magray_core::normal_op::{c_nm, injectivity_spectrum, normal_apply, symbol_probe, NormalOpConfig};
use magray_core::rigidity::{index_form, kbar_contribution, modified_index_form, NormalFieldAlongOrbit};
use magray_core::tensor::{
    default_max_iter, dmu, dmu_star, laplacian_singular_values, pair_inner, pair_norm, ps_decompose, TensorPair,
};
use magray_core::xray::{
    find_orbit_set, ray_transform_pair, shoot_closed_orbit, spearman, stability_experiment, ClosedOrbit, HomotopyClass,
    OrbitSearch, RayFunctional,
};
use magray_core::MagrayError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{rng, ConfigError, ExperimentConfig, Stream};
use crate::output::{read_pair, Artifacts, PlotStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumOperator {
    /// Normal operator on solenoidal pairs.
    #[default]
    Normal,
    /// Magnetic Laplacian with the kernel projection.
    Laplacian,
}

/// File inputs named on the command line.
#[derive(Debug, Default)]
pub struct Inputs {
    pub orbits: Option<PathBuf>,
    pub pair: Option<PathBuf>,
    pub operator: SpectrumOperator,
}

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub surface: ConformalSurface,
    pub field: ForceField,
    pub inputs: &'a Inputs,
    pub out: &'a Path,
    pub verbose: bool,
}

impl Context<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("magray: {}", msg.as_ref());
        }
    }

    /// The `--pair` input, or a seeded random pair of rank `params.m`.
    fn pair(&self) -> Result<TensorPair> {
        match &self.inputs.pair {
            Some(p) => read_pair(p, &self.surface),
            None => {
                let p = &self.cfg.params;
                Ok(TensorPair::random(&self.surface, p.m, p.kmax, &mut rng(self.cfg.seed, Stream::Data)))
            }
        }
    }

    fn orbits(&self) -> Result<Vec<ClosedOrbit>> {
        let path =
            self.inputs.orbits.as_ref().ok_or_else(|| ConfigError("this experiment needs --orbits FILE".into()))?;
        load_orbits(path, &self.surface, &self.field)
    }

    fn normal_config(&self) -> Result<NormalOpConfig> {
        let p = &self.cfg.params;
        Ok(NormalOpConfig::new(p.eps, p.n_t, p.n_theta)?)
    }

    fn sibling(&self, suffix: &str) -> PathBuf {
        self.out.with_extension(suffix)
    }
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    lift_x: f64,
    lift_y: f64,
}

pub fn simulate(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let start = PhasePoint::new(p.x0, p.y0, p.theta0);
    let traj = integrate(&ctx.surface, &ctx.field, start, p.duration, p.step)?;
    let (lx, ly) = (ctx.surface.lx(), ctx.surface.ly());
    let rows: Vec<TrajectoryRow> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, z)| TrajectoryRow {
            t: *t,
            x: z[0].rem_euclid(lx),
            y: z[1].rem_euclid(ly),
            theta: z[2].rem_euclid(2.0 * PI),
            lift_x: z[0],
            lift_y: z[1],
        })
        .collect();
    arts.csv(ctx.out, &rows)?;
    arts.plot_script(ctx.out, "lift_x", &["lift_y"], PlotStyle::Line, "trajectory on the universal cover")?;
    let end = traj.end();
    Ok(json!({ "steps": traj.len() - 1, "end": [end.x, end.y, end.theta] }))
}

/// Serialized closed orbit; the trajectory is rebuilt by integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitRecord {
    pub p: i64,
    pub q: i64,
    pub period: f64,
    pub x0: f64,
    pub y0: f64,
    pub theta0: f64,
    pub steps: usize,
    pub closure_defect: f64,
    pub action: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitFile {
    pub orbits: Vec<OrbitRecord>,
}

pub fn load_orbits(path: &Path, surface: &ConformalSurface, field: &ForceField) -> Result<Vec<ClosedOrbit>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let file: OrbitFile = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if file.orbits.is_empty() {
        return Err(ConfigError(format!("{}: no orbits", path.display())).into());
    }
    file.orbits
        .iter()
        .map(|r| {
            let start = PhasePoint::new(r.x0, r.y0, r.theta0);
            let trajectory = integrate(surface, field, start, r.period, r.period / r.steps as f64)
                .with_context(|| format!("rebuilding orbit of class ({}, {})", r.p, r.q))?;
            Ok(ClosedOrbit {
                trajectory,
                period: r.period,
                class: HomotopyClass::new(r.p, r.q),
                closure_defect: r.closure_defect,
                action: r.action,
            })
        })
        .collect()
}

fn search_config(ctx: &Context) -> OrbitSearch {
    let p = &ctx.cfg.params;
    OrbitSearch { n_nodes: p.orbit_nodes, tol: p.orbit_tol, step: p.step.max(1e-4), ..OrbitSearch::default() }
}

pub fn orbits(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let cfg = search_config(ctx);
    let (s, f) = (&ctx.surface, &ctx.field);
    let has_action = f.is_magnetic() && (f.alpha.is_some() || f.b.is_zero());
    let found = if has_action {
        ctx.log("exact field: action descent followed by shooting");
        find_orbit_set(s, f, p.pmax, &cfg)
    } else {
        ctx.log("field without primitive: shooting from straight loops");
        let classes: Vec<HomotopyClass> = (-p.pmax..=p.pmax)
            .flat_map(|a| (-p.pmax..=p.pmax).map(move |b| HomotopyClass::new(a, b)))
            .filter(|c| !c.is_trivial())
            .collect();
        classes
            .par_iter()
            .filter_map(|&c| {
                let off = c.offset(s.lx(), s.ly());
                let guess = PhasePoint::new(0.37 * s.lx(), 0.23 * s.ly(), off[1].atan2(off[0]));
                shoot_closed_orbit(s, f, c, guess, off[0].hypot(off[1]), &cfg).ok()
            })
            .collect()
    };
    if found.is_empty() {
        return Err(MagrayError::Search { reason: "no closed orbit found".into(), best_defect: f64::INFINITY }.into());
    }
    let records: Vec<OrbitRecord> = found
        .iter()
        .map(|o| {
            let z = o.trajectory.start();
            OrbitRecord {
                p: o.class.p,
                q: o.class.q,
                period: o.period,
                x0: z.x,
                y0: z.y,
                theta0: z.theta,
                steps: o.trajectory.len() - 1,
                closure_defect: o.closure_defect,
                action: o.action,
            }
        })
        .collect();
    let worst = records.iter().map(|r| r.closure_defect).fold(0.0, f64::max);
    arts.json(ctx.out, &OrbitFile { orbits: records })?;
    Ok(json!({ "count": found.len(), "max_closure_defect": worst }))
}

#[derive(Debug, Serialize)]
struct TransformRow {
    class_p: i64,
    class_q: i64,
    period: f64,
    action: Option<f64>,
    #[serde(rename = "I_m")]
    i_m: f64,
}

pub fn xray(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let orbits = ctx.orbits()?;
    let pair = ctx.pair()?;
    let rows: Vec<TransformRow> = orbits
        .par_iter()
        .map(|o| {
            Ok(TransformRow {
                class_p: o.class.p,
                class_q: o.class.q,
                period: o.period,
                action: o.action,
                i_m: ray_transform_pair(&ctx.surface, o, &pair)?,
            })
        })
        .collect::<Result<_>>()?;
    let sup = rows.iter().map(|r| r.i_m.abs()).fold(0.0, f64::max);
    arts.csv(ctx.out, &rows)?;
    arts.plot_script(ctx.out, "period", &["I_m"], PlotStyle::Scatter, "ray transform against period")?;
    Ok(json!({ "m": pair.rank(), "orbits": rows.len(), "sup_abs_I_m": sup }))
}

#[derive(Debug, Serialize)]
struct DecomposeRow {
    m: usize,
    iterations: usize,
    residual: f64,
    dmu_star_h_rel: f64,
    norm_f: f64,
    norm_potential_part: f64,
    norm_solenoidal_part: f64,
}

pub fn decompose(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let (s, f) = (&ctx.surface, &ctx.field);
    let pair = ctx.pair()?;
    let max_iter = p.max_iter.unwrap_or_else(|| default_max_iter(s));
    let dec = ps_decompose(s, f, &pair, p.tol, max_iter)?;
    ctx.log(format!("converged in {} iterations", dec.iterations));
    let dsf = pair_norm(s, &dmu_star(s, f, &pair)?);
    let dsh = pair_norm(s, &dmu_star(s, f, &dec.solenoidal)?);
    let norm_f = pair_norm(s, &pair);
    let rel = dsh / if dsf > 0.0 { dsf } else { norm_f.max(f64::MIN_POSITIVE) };
    let potential_part = dmu(s, f, &dec.potential)?;
    let row = DecomposeRow {
        m: pair.rank(),
        iterations: dec.iterations,
        residual: dec.residual,
        dmu_star_h_rel: rel,
        norm_f,
        norm_potential_part: pair_norm(s, &potential_part),
        norm_solenoidal_part: pair_norm(s, &dec.solenoidal),
    };
    arts.csv(ctx.out, &[&row])?;
    arts.pair(&ctx.sibling("potential.bin"), s, &dec.potential)?;
    arts.pair(&ctx.sibling("solenoidal.bin"), s, &dec.solenoidal)?;
    Ok(json!({
        "iterations": dec.iterations,
        "residual": dec.residual,
        "dmu_star_H_rel": rel,
        "orthogonality": pair_inner(s, &potential_part, &dec.solenoidal) / (norm_f * norm_f),
    }))
}

pub fn normal(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let (s, f) = (&ctx.surface, &ctx.field);
    let pair = ctx.pair()?;
    let cfg = ctx.normal_config()?;
    let out = normal_apply(s, f, &pair, &cfg)?;
    arts.pair(ctx.out, s, &out)?;
    let n = pair_norm(s, &pair);
    Ok(json!({
        "m": pair.rank(),
        "input_norm": n,
        "output_norm": pair_norm(s, &out),
        "rayleigh_quotient": pair_inner(s, &out, &pair) / (n * n),
        "cutoff_integral": cfg.cutoff.integral(),
    }))
}

#[derive(Debug, Serialize)]
struct SymbolRow {
    component: String,
    re_measured: f64,
    im_measured: f64,
    predicted: Option<f64>,
    rel_err: Option<f64>,
}

pub fn probe_symbol(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let cfg = ctx.normal_config()?;
    let probe = symbol_probe(&ctx.surface, &ctx.field, p.m, p.k, &cfg)?;
    let rows: Vec<SymbolRow> = probe
        .entries
        .iter()
        .map(|e| SymbolRow {
            component: format!("{}<-{}:{}", e.block.0, e.block.1, e.component),
            re_measured: e.measured_re,
            im_measured: e.measured_im,
            predicted: e.predicted,
            rel_err: e.rel_err,
        })
        .collect();
    arts.csv(ctx.out, &rows)?;
    let max_rel = probe.entries.iter().filter_map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(json!({
        "k": probe.k,
        "m": probe.m,
        "max_rel_err": max_rel,
        "off_diagonal_ratio": probe.off_diagonal_ratio,
        "c_nm": c_nm(2, p.m),
    }))
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    index: usize,
    singular_value: f64,
}

pub fn spectrum(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let (s, f) = (&ctx.surface, &ctx.field);
    let (sv, extra) = match ctx.inputs.operator {
        SpectrumOperator::Normal => {
            let spec = injectivity_spectrum(s, f, p.m, p.dense_n, &ctx.normal_config()?)?;
            let extra = json!({ "coercivity_min": spec.coercivity_min, "solenoidal_dim": spec.solenoidal_dim });
            (spec.singular_values, extra)
        }
        SpectrumOperator::Laplacian => {
            let small = s.resampled(p.dense_n, p.dense_n)?;
            (laplacian_singular_values(&small, f, p.m, true)?, json!({}))
        }
    };
    let rows: Vec<SpectrumRow> =
        sv.iter().enumerate().map(|(index, v)| SpectrumRow { index, singular_value: *v }).collect();
    arts.csv(ctx.out, &rows)?;
    arts.plot_script(ctx.out, "index", &["singular_value"], PlotStyle::Line, "singular values")?;
    Ok(json!({
        "operator": ctx.inputs.operator,
        "smallest": sv.first().copied().unwrap_or(0.0),
        "largest": sv.last().copied().unwrap_or(0.0),
        "details": extra,
    }))
}

#[derive(Debug, Serialize)]
struct RigidityRow {
    class: String,
    period: f64,
    kbar_contrib: f64,
    index_min: f64,
    modified_min: f64,
}

pub fn rigidity(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let (s, f) = (&ctx.surface, &ctx.field);
    let orbits = ctx.orbits()?;
    let rows: Vec<RigidityRow> = orbits
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let mut r = rng(ctx.cfg.seed.wrapping_add(i as u64), Stream::Data);
            let (mut index_min, mut modified_min) = (f64::INFINITY, f64::INFINITY);
            for _ in 0..p.samples {
                let z = NormalFieldAlongOrbit::random(&o.trajectory.times, 8, &mut r);
                index_min = index_min.min(index_form(s, f, &o.trajectory, &z)?);
                modified_min = modified_min.min(modified_index_form(s, f, &o.trajectory, &z)?);
            }
            Ok(RigidityRow {
                class: format!("({},{})", o.class.p, o.class.q),
                period: o.period,
                kbar_contrib: kbar_contribution(s, f, &o.trajectory)?,
                index_min,
                modified_min,
            })
        })
        .collect::<Result<_>>()?;
    arts.csv(ctx.out, &rows)?;
    let kbar = rows.iter().map(|r| r.kbar_contrib).fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "kbar_lower": kbar,
        "index_min": rows.iter().map(|r| r.index_min).fold(f64::INFINITY, f64::min),
        "modified_min": rows.iter().map(|r| r.modified_min).fold(f64::INFINITY, f64::min),
    }))
}

#[derive(Debug, Serialize)]
struct StabilityRow {
    sample: usize,
    solenoidal_scale: f64,
    sup_transform: f64,
    sol_norm: f64,
}

/// Family `f_i = a_i H + D_mu P_i` with a fixed random `H`, log-spaced `a_i`
/// and random potentials `P_i`.
pub fn stability(ctx: &Context, arts: &mut Artifacts) -> Result<serde_json::Value> {
    let p = &ctx.cfg.params;
    let (s, f) = (&ctx.surface, &ctx.field);
    let orbits = ctx.orbits()?;
    let m = p.m.max(1);
    let functionals: Vec<RayFunctional> = orbits.iter().map(|o| RayFunctional::new(s, o, m)).collect();
    let max_iter = p.max_iter.unwrap_or_else(|| default_max_iter(s));
    let base = TensorPair::random(s, m, p.kmax, &mut rng(ctx.cfg.seed, Stream::Data));
    let h = ps_decompose(s, f, &base, p.tol, max_iter)?.solenoidal;
    let rows: Vec<StabilityRow> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let a = 10f64.powf(-2.0 + 3.0 * i as f64 / p.samples.max(2).saturating_sub(1) as f64);
            let mut r = rng(ctx.cfg.seed.wrapping_add(1 + i as u64), Stream::Data);
            let pot = TensorPair::random(s, m - 1, p.kmax, &mut r);
            let mut fi = dmu(s, f, &pot)?;
            fi.axpy(a, &h);
            let rep = stability_experiment(s, f, &functionals, &fi, p.tol)?;
            Ok(StabilityRow {
                sample: i,
                solenoidal_scale: a,
                sup_transform: rep.sup_transform,
                sol_norm: rep.sol_norm,
            })
        })
        .collect::<Result<_>>()?;
    arts.csv(ctx.out, &rows)?;
    arts.plot_script(ctx.out, "sol_norm", &["sup_transform"], PlotStyle::LogLog, "sup |I f| against |f^s|")?;
    let x: Vec<f64> = rows.iter().map(|r| r.sol_norm).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.sup_transform).collect();
    Ok(json!({ "orbits": functionals.len(), "spearman": spearman(&x, &y) }))
}
