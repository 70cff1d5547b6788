mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use magray_core::MagrayError;

use config::{ConfigError, ExperimentConfig, ExperimentKind};
use experiments::{Context, Inputs, SpectrumOperator};
use output::{checksums, manifest_path, Artifacts, Manifest, Versions};

/// Magnetic and thermostat flows on conformal tori: closed orbits, X-ray
/// transforms, tensor decompositions and normal operators.
#[derive(Debug, Parser)]
#[command(name = "magray", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON experiment config; defaults to a flat 32x32 torus with no force.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Main output file; the manifest is written next to it.
    #[arg(long, global = true, default_value = "out.csv")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory.
    Simulate {
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        y0: Option<f64>,
        #[arg(long)]
        theta0: Option<f64>,
        /// Duration.
        #[arg(long = "T")]
        duration: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Find closed orbits in the homotopy classes with |p|, |q| <= pmax.
    Orbits {
        #[arg(long)]
        pmax: Option<i64>,
    },
    /// Ray transform of a tensor pair over a set of closed orbits.
    Xray {
        #[arg(long)]
        orbits: PathBuf,
        /// Pair file; a seeded random pair is used when omitted.
        #[arg(long)]
        pair: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Potential-solenoidal decomposition.
    Decompose {
        #[arg(long)]
        pair: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Apply the truncated normal operator.
    Normal {
        #[arg(long)]
        pair: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Measure the principal symbol of the normal operator on a plane wave.
    ProbeSymbol {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        kx: Option<i64>,
        #[arg(long)]
        ky: Option<i64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Dense singular values on a small grid.
    Spectrum {
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum, default_value_t)]
        operator: SpectrumOperator,
    },
    /// Orbit functional and index forms along closed orbits.
    Rigidity {
        #[arg(long)]
        orbits: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// sup |I f| against the solenoidal norm over a random family.
    Stability {
        #[arg(long)]
        orbits: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Self::Simulate { .. } => ExperimentKind::Simulate,
            Self::Orbits { .. } => ExperimentKind::Orbits,
            Self::Xray { .. } => ExperimentKind::Xray,
            Self::Decompose { .. } => ExperimentKind::Decompose,
            Self::Normal { .. } => ExperimentKind::Normal,
            Self::ProbeSymbol { .. } => ExperimentKind::ProbeSymbol,
            Self::Spectrum { .. } => ExperimentKind::Spectrum,
            Self::Rigidity { .. } => ExperimentKind::Rigidity,
            Self::Stability { .. } => ExperimentKind::Stability,
        }
    }

    /// Folds command-line overrides into the config and collects file inputs.
    fn apply(&self, cfg: &mut ExperimentConfig) -> Inputs {
        fn set<T: Copy>(dst: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *dst = v;
            }
        }
        let p = &mut cfg.params;
        let mut inputs = Inputs::default();
        match self {
            Self::Simulate { x0, y0, theta0, duration, step } => {
                set(&mut p.x0, *x0);
                set(&mut p.y0, *y0);
                set(&mut p.theta0, *theta0);
                set(&mut p.duration, *duration);
                set(&mut p.step, *step);
            }
            Self::Orbits { pmax } => set(&mut p.pmax, *pmax),
            Self::Xray { orbits, pair, m } => {
                set(&mut p.m, *m);
                inputs.orbits = Some(orbits.clone());
                inputs.pair = pair.clone();
            }
            Self::Decompose { pair, m, tol } => {
                set(&mut p.m, *m);
                set(&mut p.tol, *tol);
                inputs.pair = pair.clone();
            }
            Self::Normal { pair, eps, m } => {
                set(&mut p.eps, *eps);
                set(&mut p.m, *m);
                inputs.pair = pair.clone();
            }
            Self::ProbeSymbol { m, kx, ky, eps } => {
                set(&mut p.m, *m);
                set(&mut p.k[0], *kx);
                set(&mut p.k[1], *ky);
                set(&mut p.eps, *eps);
            }
            Self::Spectrum { n, m, operator } => {
                set(&mut p.dense_n, *n);
                set(&mut p.m, *m);
                inputs.operator = *operator;
            }
            Self::Rigidity { orbits, samples } => {
                set(&mut p.samples, *samples);
                inputs.orbits = Some(orbits.clone());
            }
            Self::Stability { orbits, samples, m } => {
                set(&mut p.samples, *samples);
                set(&mut p.m, *m);
                inputs.orbits = Some(orbits.clone());
            }
        }
        inputs
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if g.workers == 0 {
        return Err(ConfigError("--workers must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(g.workers).build_global().context("starting worker pool")?;

    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let kind = cli.command.kind();
    if let Some(expected) = cfg.experiment {
        if expected != kind {
            return Err(ConfigError(format!("`experiment`: config is for {expected:?}, command is {kind:?}")).into());
        }
    }
    cfg.experiment = Some(kind);
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let inputs = cli.command.apply(&mut cfg);
    cfg.validate()?;

    let start = Instant::now();
    let surface = cfg.surface()?;
    let field = cfg.force(&surface)?;
    let ctx = Context { cfg: &cfg, surface, field, inputs: &inputs, out: &g.out, verbose: g.verbose };
    let mut arts = Artifacts::default();
    let results = match kind {
        ExperimentKind::Simulate => experiments::simulate(&ctx, &mut arts),
        ExperimentKind::Orbits => experiments::orbits(&ctx, &mut arts),
        ExperimentKind::Xray => experiments::xray(&ctx, &mut arts),
        ExperimentKind::Decompose => experiments::decompose(&ctx, &mut arts),
        ExperimentKind::Normal => experiments::normal(&ctx, &mut arts),
        ExperimentKind::ProbeSymbol => experiments::probe_symbol(&ctx, &mut arts),
        ExperimentKind::Spectrum => experiments::spectrum(&ctx, &mut arts),
        ExperimentKind::Rigidity => experiments::rigidity(&ctx, &mut arts),
        ExperimentKind::Stability => experiments::stability(&ctx, &mut arts),
    }?;
    let manifest = Manifest {
        experiment: kind_name(kind),
        config: &cfg,
        versions: Versions::current(),
        workers: g.workers,
        wall_time: start.elapsed().as_secs_f64(),
        checksums: checksums(&arts.files)?,
        results,
    };
    let path = manifest_path(&g.out);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    if g.verbose {
        eprintln!("magray: wrote {} files and {}", arts.files.len(), path.display());
    }
    Ok(())
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Simulate => "simulate",
        ExperimentKind::Orbits => "orbits",
        ExperimentKind::Xray => "xray",
        ExperimentKind::Decompose => "decompose",
        ExperimentKind::Normal => "normal",
        ExperimentKind::ProbeSymbol => "probe-symbol",
        ExperimentKind::Spectrum => "spectrum",
        ExperimentKind::Rigidity => "rigidity",
        ExperimentKind::Stability => "stability",
    }
}

/// 2 for bad input, 3 for numerical failure, 4 for non-convergence.
fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<MagrayError>() {
            return match e {
                MagrayError::Config(_)
                | MagrayError::Domain(_)
                | MagrayError::Rank(_)
                | MagrayError::Unsupported { .. }
                | MagrayError::TooLarge { .. } => 2,
                MagrayError::NonConvergence { .. } | MagrayError::Search { .. } => 4,
                MagrayError::Integration { .. } | MagrayError::Truncation { .. } => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
