//! The five pipeline drivers behind the subcommands.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use channelfx::conjugate::{self, ConjugateMap};
use channelfx::geom::{self, QuadratureGrid};
use channelfx::harmonic::{run_finite_rate, FiniteRateRun, LateralBc, SolverGrid};
use channelfx::sim::{
    self, brownian_mfpt, evolve_ensemble, solve_effective_1d, solve_full_2d, Bc1d, MfptConfig,
    TimeScheme, TimeSeries1D,
};
use channelfx::{coeff, ChannelSpec, Error, Field2D, Result, ScalarProfile};

use crate::config::{RunConfig, Scheme, SimBc, SimMode};
use crate::manifest::RunWriter;

fn profile_range(p: &ScalarProfile) -> [f64; 2] {
    [p.min_value(), p.max_value()]
}

#[derive(Serialize)]
struct CoeffSummary {
    d0: f64,
    n_u: usize,
    n_v: usize,
    u_range: [f64; 2],
    sigma_range: [f64; 2],
    d_inf_range: [f64; 2],
    d_fj_range: [f64; 2],
}

/// Geometric profiles and both infinite-rate coefficients.
pub fn run_coeff(config: &RunConfig, writer: &mut RunWriter) -> Result<()> {
    let spec = config.spec()?;
    let grid = QuadratureGrid::new(spec, config.grid.n_u, config.grid.n_v)?;
    let assembled = coeff::assemble(config.d0, spec, &grid)?;
    let mut csv = Vec::new();
    assembled.write_csv(&mut csv)?;
    writer.write("coefficients.csv", &csv)?;
    writer.write_json(
        "coeff_summary.json",
        &CoeffSummary {
            d0: config.d0,
            n_u: config.grid.n_u,
            n_v: config.grid.n_v,
            u_range: spec.u_range(),
            sigma_range: profile_range(&assembled.sigma),
            d_inf_range: profile_range(&assembled.d_inf),
            d_fj_range: profile_range(&assembled.d_fj),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct HarmonicSummary {
    iterations: usize,
    residual: f64,
    j_mean: Option<f64>,
    j_relative_std: Option<f64>,
    lambda_max_deviation_from_one: f64,
    d_fin: &'static str,
    d_fin_error: Option<String>,
}

fn lambda_max_dev(run: &FiniteRateRun) -> f64 {
    run.lambda
        .data()
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Natural projection solve plus the finite-rate coefficient.
pub fn run_finite(config: &RunConfig, writer: &mut RunWriter) -> Result<()> {
    let spec = config.spec()?;
    let run = run_finite_rate(
        spec,
        config.grid.n_u,
        config.grid.n_v,
        LateralBc { h_a: config.bc[0], h_b: config.bc[1] },
        config.d0,
        config.tol,
        config.max_iter,
    )?;

    let mut h_csv = Vec::new();
    run.h.write_csv_matrix(&mut h_csv)?;
    writer.write("h.csv", &h_csv)?;

    let mut profiles = String::from("u,J,rho,D_fin\n");
    for (i, &u) in run.j_profile.u().iter().enumerate() {
        let d_fin = run
            .d_fin
            .as_ref()
            .map_or(f64::NAN, |p| p.values()[i]);
        writeln!(
            profiles,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            u,
            run.j_profile.values()[i],
            run.rho.values()[i],
            d_fin
        )
        .expect("string write");
    }
    writer.write("harmonic_profiles.csv", profiles.as_bytes())?;

    writer.write_json(
        "solve_report.json",
        &HarmonicSummary {
            iterations: run.report.iterations,
            residual: run.report.residual,
            j_mean: run.report.j_mean,
            j_relative_std: run.report.j_relative_std,
            lambda_max_deviation_from_one: lambda_max_dev(&run),
            d_fin: if run.d_fin.is_some() { "ok" } else { "undefined" },
            d_fin_error: run.d_fin_error.clone(),
        },
    )?;
    Ok(())
}

/// Closed-form profiles of a conjugate-pair channel.
pub fn run_conjugate(config: &RunConfig, map: &ConjugateMap, writer: &mut RunWriter) -> Result<()> {
    map.validate("/map")?;
    let n_u = config.grid.n_u;
    let nodes = conjugate::uniform_u_nodes(map, n_u);
    let sigma = conjugate::conjugate_sigma(map, &nodes)?;
    let area = conjugate::conjugate_area(map, &nodes)?;
    let d = conjugate::conjugate_d(map, config.d0, &nodes)?;
    let mut csv = String::from("u,sigma,area,D\n");
    for (i, &u) in nodes.iter().enumerate() {
        writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            u,
            sigma.values()[i],
            area.values()[i],
            d.values()[i]
        )
        .expect("string write");
    }
    writer.write("conjugate_profiles.csv", csv.as_bytes())?;
    writer.write_json(
        "conjugate_summary.json",
        &serde_json::json!({
            "J": conjugate::conjugate_j(map, config.d0),
            "d0": config.d0,
            "n_u": n_u,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SimSummary {
    mode: SimMode,
    dt: f64,
    t_end: f64,
    mass_initial: Option<f64>,
    mass_final: Option<f64>,
    mass_drift_rel: Option<f64>,
    absorbed_fraction: Option<f64>,
    mfpt_mean: Option<f64>,
    mfpt_stderr: Option<f64>,
    particles: Option<usize>,
    seed: Option<u64>,
}

impl SimSummary {
    fn new(config: &RunConfig) -> Self {
        SimSummary {
            mode: config.sim.mode,
            dt: config.sim.dt,
            t_end: config.sim.t_end,
            mass_initial: None,
            mass_final: None,
            mass_drift_rel: None,
            absorbed_fraction: None,
            mfpt_mean: None,
            mfpt_stderr: None,
            particles: None,
            seed: None,
        }
    }
}

fn thin_series(series: &TimeSeries1D, keep_every: usize) -> TimeSeries1D {
    let keep: Vec<usize> = (0..series.times.len())
        .filter(|k| k % keep_every == 0 || *k == series.times.len() - 1)
        .collect();
    TimeSeries1D {
        u: series.u.clone(),
        times: keep.iter().map(|&k| series.times[k]).collect(),
        frames: keep.iter().map(|&k| series.frames[k].clone()).collect(),
    }
}

/// Cosine bump used as the default initial concentration.
fn initial_profile(u: &[f64], range: [f64; 2]) -> Vec<f64> {
    let [a, b] = range;
    u.iter()
        .map(|&x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * (x - a) / (b - a)).cos())
        .collect()
}

/// Time-dependent solvers and the particle oracle.
pub fn run_simulate(config: &RunConfig, writer: &mut RunWriter) -> Result<()> {
    let spec = config.spec()?;
    let sim_cfg = &config.sim;
    let mut summary = SimSummary::new(config);

    match sim_cfg.mode {
        SimMode::Effective => {
            let grid = SolverGrid::new(spec, config.grid.n_u, config.grid.n_v)?;
            let quad = QuadratureGrid::with_u_nodes(spec, grid.u_centers(), config.grid.n_v)?;
            let sigma = geom::sigma(spec, &quad)?;
            let d = if sim_cfg.finite_rate {
                let run = run_finite_rate(
                    spec,
                    config.grid.n_u,
                    config.grid.n_v,
                    LateralBc { h_a: config.bc[0], h_b: config.bc[1] },
                    config.d0,
                    config.tol,
                    config.max_iter,
                )?;
                run.d_fin.ok_or_else(|| {
                    Error::InvalidReduction(run.d_fin_error.unwrap_or_default())
                })?
            } else {
                coeff::effective_d_infinite(
                    config.d0,
                    &geom::flux_grad_u(spec, &quad)?,
                    &sigma,
                )?
            };
            let p0 = ScalarProfile::new(
                grid.u_centers(),
                initial_profile(&grid.u_centers(), spec.u_range()),
                "concentration",
            )?;
            let bc = match sim_cfg.bc {
                SimBc::Reflecting => Bc1d::Reflecting,
                SimBc::Absorbing => Bc1d::Absorbing,
                SimBc::Fixed([l, r]) => Bc1d::Fixed { left: l, right: r },
            };
            let scheme = match sim_cfg.scheme {
                Scheme::Implicit => TimeScheme::Implicit,
                Scheme::Explicit => TimeScheme::Explicit,
            };
            let series =
                solve_effective_1d(&d, &sigma, &p0, sim_cfg.dt, sim_cfg.t_end, bc, scheme)?;
            let m0 = series.mass(sigma.values(), 0);
            let m1 = series.mass(sigma.values(), series.times.len() - 1);
            summary.mass_initial = Some(m0);
            summary.mass_final = Some(m1);
            summary.mass_drift_rel = Some((m1 - m0).abs() / m0.abs().max(1e-300));
            let mut csv = Vec::new();
            thin_series(&series, sim_cfg.store_every).write_csv(&mut csv)?;
            writer.write("series.csv", &csv)?;
        }
        SimMode::Full => {
            let grid = SolverGrid::new(spec, config.grid.n_u, config.grid.n_v)?;
            let p0_values = initial_profile(&grid.u_centers(), spec.u_range());
            let mut p0 = Field2D::new(grid.n_u, grid.n_v, 0.0);
            for (i, &value) in p0_values.iter().enumerate() {
                for j in 0..grid.n_v {
                    p0.set(i, j, value);
                }
            }
            let frames = solve_full_2d(spec, &grid, &p0, sim_cfg.dt, sim_cfg.t_end, config.d0)?;
            let solver = sim::Full2dSolver::new(spec, &grid)?;
            let m0 = solver.mass_of(&frames[0].1);
            let m1 = solver.mass_of(&frames.last().unwrap().1);
            summary.mass_initial = Some(m0);
            summary.mass_final = Some(m1);
            summary.mass_drift_rel = Some((m1 - m0).abs() / m0.abs().max(1e-300));
            let series = sim::project_full(&frames, spec, &grid)?;
            let mut csv = Vec::new();
            thin_series(&series, sim_cfg.store_every).write_csv(&mut csv)?;
            writer.write("series.csv", &csv)?;
        }
        SimMode::Particles => {
            let cfg = MfptConfig::new(sim_cfg.particles, sim_cfg.dt, sim_cfg.seed, config.d0);
            let n_stamps = ((sim_cfg.t_end / sim_cfg.dt / sim_cfg.store_every as f64).round()
                as usize)
                .clamp(1, 1000);
            let history =
                evolve_ensemble(spec, &cfg, sim_cfg.t_end, n_stamps, config.grid.n_u)?;
            summary.particles = Some(sim_cfg.particles);
            summary.seed = Some(sim_cfg.seed);
            summary.absorbed_fraction = Some(history.absorbed_fraction);
            summary.mass_initial = Some(1.0);
            summary.mass_final = Some(1.0 - history.absorbed_fraction);
            let mut csv = Vec::new();
            history.series.write_csv(&mut csv)?;
            writer.write("series.csv", &csv)?;
        }
        SimMode::Mfpt => {
            let cfg = MfptConfig::new(sim_cfg.particles, sim_cfg.dt, sim_cfg.seed, config.d0);
            let est = brownian_mfpt(spec, &cfg)?;
            summary.particles = Some(sim_cfg.particles);
            summary.seed = Some(sim_cfg.seed);
            summary.mfpt_mean = Some(est.mean);
            summary.mfpt_stderr = Some(est.stderr);
        }
    }
    writer.write_json("sim_summary.json", &summary)?;
    Ok(())
}

const EXACT_FLOOR: f64 = 1e-9;

struct LevelResult {
    n_u: usize,
    n_v: usize,
    run: FiniteRateRun,
}

fn order_label(errors: &[Option<f64>], k: usize, ratio: f64) -> String {
    match (errors[k], errors.get(k + 1).copied().flatten()) {
        (Some(coarse), Some(fine)) => {
            if coarse < EXACT_FLOOR && fine < EXACT_FLOOR {
                "exact".to_string()
            } else {
                format!("{:.2}", (coarse / fine).ln() / ratio.ln())
            }
        }
        _ => String::new(),
    }
}

/// Bilinear sample of a cell-centered field, clamped at the boundary cells.
fn sample_field(field: &Field2D, grid: &SolverGrid, u: f64, v: f64) -> f64 {
    let fu = ((u - grid.u0) / grid.du - 0.5).clamp(0.0, (grid.n_u - 1) as f64);
    let fv = ((v - grid.v0) / grid.dv - 0.5).clamp(0.0, (grid.n_v - 1) as f64);
    let (i0, j0) = (fu.floor() as usize, fv.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(grid.n_u - 1), (j0 + 1).min(grid.n_v - 1));
    let (tu, tv) = (fu - i0 as f64, fv - j0 as f64);
    field.get(i0, j0) * (1.0 - tu) * (1.0 - tv)
        + field.get(i1, j0) * tu * (1.0 - tv)
        + field.get(i0, j1) * (1.0 - tu) * tv
        + field.get(i1, j1) * tu * tv
}

/// Refinement study: solve every level, report errors and observed orders.
pub fn run_sweep(config: &RunConfig, writer: &mut RunWriter) -> Result<()> {
    let spec = config.spec()?;
    if config.sweep_levels.len() < 3 {
        return Err(Error::Precondition("sweep needs at least 3 levels".into()));
    }
    let bc = LateralBc { h_a: config.bc[0], h_b: config.bc[1] };
    let results: Vec<Result<LevelResult>> = config
        .sweep_levels
        .par_iter()
        .map(|&[n_u, n_v]| {
            let run = run_finite_rate(spec, n_u, n_v, bc, config.d0, config.tol, config.max_iter)?;
            Ok(LevelResult { n_u, n_v, run })
        })
        .collect();
    let mut levels = Vec::with_capacity(results.len());
    for r in results {
        levels.push(r?);
    }

    // h error: against the affine closed form on conjugate channels, by
    // comparison with the next-finer level elsewhere.
    let analytic = matches!(spec, ChannelSpec::ConjugatePair { .. });
    let [a, b] = spec.u_range();
    let mut h_errors: Vec<Option<f64>> = Vec::new();
    for (k, level) in levels.iter().enumerate() {
        let grid = &level.run.grid;
        if analytic {
            let mut rms = 0.0;
            for i in 0..grid.n_u {
                let exact = config.bc[0]
                    + (config.bc[1] - config.bc[0]) * (grid.u_center(i) - a) / (b - a);
                for j in 0..grid.n_v {
                    rms += (level.run.h.get(i, j) - exact).powi(2);
                }
            }
            h_errors.push(Some((rms / grid.cells() as f64).sqrt()));
        } else if k + 1 < levels.len() {
            let finer = &levels[k + 1];
            let mut rms = 0.0;
            for i in 0..grid.n_u {
                for j in 0..grid.n_v {
                    let fine = sample_field(
                        &finer.run.h,
                        &finer.run.grid,
                        grid.u_center(i),
                        grid.v_center(j),
                    );
                    rms += (level.run.h.get(i, j) - fine).powi(2);
                }
            }
            h_errors.push(Some((rms / grid.cells() as f64).sqrt()));
        } else {
            h_errors.push(None);
        }
    }

    let finest = levels.last().expect("validated above");
    let mut csv = String::from("level,n_u,n_v,h_error,h_order,j_rel_std,j_order,d_fin_drift,d_fin_order\n");
    let j_stds: Vec<Option<f64>> = levels
        .iter()
        .map(|l| l.run.report.j_relative_std)
        .collect();
    let drifts: Vec<Option<f64>> = levels
        .iter()
        .enumerate()
        .map(|(k, level)| {
            if k + 1 == levels.len() {
                return None;
            }
            let (mine, best) = (level.run.d_fin.as_ref()?, finest.run.d_fin.as_ref()?);
            let mut worst: f64 = 0.0;
            for (i, &u) in mine.u().iter().enumerate() {
                worst = worst.max((mine.values()[i] / best.eval(u) - 1.0).abs());
            }
            Some(worst)
        })
        .collect();

    for (k, level) in levels.iter().enumerate() {
        let ratio = if k + 1 < levels.len() {
            levels[k + 1].n_u as f64 / level.n_u as f64
        } else {
            2.0
        };
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            k,
            level.n_u,
            level.n_v,
            fmt(h_errors[k]),
            order_label(&h_errors, k, ratio),
            fmt(j_stds[k]),
            order_label(&j_stds, k, ratio),
            fmt(drifts[k]),
            order_label(&drifts, k, ratio),
        )
        .expect("string write");
    }
    writer.write("convergence.csv", csv.as_bytes())?;
    writer.write_json(
        "sweep_summary.json",
        &serde_json::json!({
            "levels": config.sweep_levels,
            "h_reference": if analytic { "closed form" } else { "next finer level" },
        }),
    )?;
    Ok(())
}
