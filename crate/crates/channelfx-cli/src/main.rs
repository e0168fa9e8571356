//! `channelfx`: effective diffusion coefficients for swept channels.
//!
//! One JSON configuration drives every subcommand; flags override single
//! fields. All outputs are CSV/JSON files in the chosen directory plus a
//! manifest with checksums. Identical configurations produce byte-identical
//! outputs.
//!
//! Exit codes: 0 success, 2 validation, 3 solver non-convergence, 4 I/O.

// `!(x > 0.0)` in the validators is a deliberate NaN guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use channelfx::conjugate::{ConjugateMap, MapKind};
use channelfx::{ChannelSpec, Error};

use config::{parse_grid, parse_levels, parse_pair, GridConfig, Levels, RunConfig, Scheme, SimMode};
use manifest::RunWriter;

#[derive(Parser)]
#[command(
    name = "channelfx",
    version,
    about = "Effective 1-D diffusion coefficients for channels swept by a moving cross section"
)]
struct Cli {
    /// JSON run configuration; flags override individual fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Channel definition JSON (overrides the config's spec).
    #[arg(long, global = true, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base diffusion constant.
    #[arg(long, global = true)]
    d0: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Geometric profiles and both infinite-rate diffusion coefficients.
    Coeff(GridArgs),
    /// Solve the natural projection; emit h, J, rho and the finite-rate D.
    Harmonic(HarmonicArgs),
    /// Closed-form profiles of a conjugate-pair channel.
    Conjugate(ConjugateArgs),
    /// Time-dependent solvers and the Brownian oracle.
    Simulate(SimulateArgs),
    /// Grid refinement study with observed convergence orders.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Grid resolution, e.g. 64x32.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridConfig>,
}

#[derive(Args)]
struct HarmonicArgs {
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridConfig>,
    /// Relative residual target.
    #[arg(long)]
    tol: Option<f64>,
    /// Lateral data "h_a,h_b".
    #[arg(long, value_parser = parse_pair)]
    bc: Option<[f64; 2]>,
}

#[derive(Args)]
struct ConjugateArgs {
    /// Catalog map: strip | log-wedge | power.
    #[arg(long, value_enum)]
    map: Option<MapKindArg>,
    /// Exponent of the power map.
    #[arg(long)]
    alpha: Option<f64>,
    /// Wall levels "v1,v2".
    #[arg(long, value_parser = parse_pair)]
    v_range: Option<[f64; 2]>,
    /// Parameter range "a,b".
    #[arg(long, value_parser = parse_pair)]
    u_range: Option<[f64; 2]>,
    /// Number of output stations.
    #[arg(long)]
    nu: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MapKindArg {
    Strip,
    LogWedge,
    Power,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    mode: Option<SimMode>,
    #[arg(long)]
    dt: Option<f64>,
    /// Time horizon.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Particle count for the stochastic modes.
    #[arg(long = "N")]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridConfig>,
}

#[derive(Args)]
struct SweepArgs {
    /// Refinement ladder, e.g. 32x16,64x32,128x64.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<Levels>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_parser = parse_pair)]
    bc: Option<[f64; 2]>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("channelfx: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// CHANNELFX_THREADS caps the rayon pool.
fn configure_threads() {
    if let Ok(text) = std::env::var("CHANNELFX_THREADS") {
        if let Ok(n) = text.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> channelfx::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &cli.spec {
        let text = std::fs::read_to_string(path)?;
        let spec: ChannelSpec = serde_json::from_str(&text).map_err(|e| {
            Error::validation("/spec", format!("cannot parse {}: {e}", path.display()))
        })?;
        config.spec = Some(spec);
    }
    if let Some(d0) = cli.d0 {
        config.d0 = d0;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }

    let command_name = match &cli.command {
        Command::Coeff(args) => {
            if let Some(grid) = args.grid {
                config.grid = grid;
            }
            "coeff"
        }
        Command::Harmonic(args) => {
            if let Some(grid) = args.grid {
                config.grid = grid;
            }
            if let Some(tol) = args.tol {
                config.tol = tol;
            }
            if let Some(bc) = args.bc {
                config.bc = bc;
            }
            "harmonic"
        }
        Command::Conjugate(args) => {
            if let Some(map) = conjugate_map_from(args, &config)? {
                config.spec = Some(ChannelSpec::ConjugatePair { map });
            }
            if let Some(nu) = args.nu {
                config.grid.n_u = nu;
            }
            "conjugate"
        }
        Command::Simulate(args) => {
            if let Some(mode) = args.mode {
                config.sim.mode = mode;
            }
            if let Some(dt) = args.dt {
                config.sim.dt = dt;
            }
            if let Some(t) = args.t_end {
                config.sim.t_end = t;
            }
            if let Some(n) = args.particles {
                config.sim.particles = n;
            }
            if let Some(seed) = args.seed {
                config.sim.seed = seed;
            }
            if let Some(scheme) = args.scheme {
                config.sim.scheme = scheme;
            }
            if let Some(grid) = args.grid {
                config.grid = grid;
            }
            "simulate"
        }
        Command::Sweep(args) => {
            if let Some(levels) = &args.levels {
                config.sweep_levels = levels.0.clone();
            }
            if let Some(tol) = args.tol {
                config.tol = tol;
            }
            if let Some(bc) = args.bc {
                config.bc = bc;
            }
            "sweep"
        }
    };

    config.validate()?;
    let out_dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut writer = RunWriter::new(&out_dir)?;
    match &cli.command {
        Command::Coeff(_) => commands::run_coeff(&config, &mut writer)?,
        Command::Harmonic(_) => commands::run_finite(&config, &mut writer)?,
        Command::Conjugate(_) => {
            let map = match config.spec()? {
                ChannelSpec::ConjugatePair { map } => map.clone(),
                _ => {
                    return Err(Error::validation(
                        "/spec",
                        "conjugate needs a conjugate-pair channel (use --map or a matching spec)",
                    ))
                }
            };
            commands::run_conjugate(&config, &map, &mut writer)?
        }
        Command::Simulate(_) => commands::run_simulate(&config, &mut writer)?,
        Command::Sweep(_) => commands::run_sweep(&config, &mut writer)?,
    }
    writer.finish(command_name, &config)?;
    Ok(())
}

/// Assemble a map from flags, falling back to the config's spec.
fn conjugate_map_from(
    args: &ConjugateArgs,
    config: &RunConfig,
) -> channelfx::Result<Option<ConjugateMap>> {
    if args.map.is_none() && args.v_range.is_none() && args.u_range.is_none() {
        return Ok(None);
    }
    let kind = match args.map {
        Some(MapKindArg::Strip) => MapKind::Strip,
        Some(MapKindArg::LogWedge) => MapKind::LogWedge,
        Some(MapKindArg::Power) => MapKind::Power,
        None => {
            return Err(Error::validation("/map", "--v-range/--u-range need --map"));
        }
    };
    let v_range = args
        .v_range
        .ok_or_else(|| Error::validation("/map/v_range", "--map needs --v-range"))?;
    let u_range = args.u_range.unwrap_or_else(|| {
        config
            .spec
            .as_ref()
            .map(|s| s.u_range())
            .unwrap_or([0.0, 1.0])
    });
    Ok(Some(ConjugateMap {
        kind,
        alpha: args.alpha.unwrap_or(1.0),
        v_range,
        u_range,
    }))
}
