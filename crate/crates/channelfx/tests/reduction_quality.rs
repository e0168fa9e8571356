//! End-to-end quality of the 1-D reduction: the projected full dynamics
//! against the finite-rate reduced dynamics, and the Brownian oracle against
//! the reduced first-passage formula.

use approx::assert_relative_eq;
use channelfx::harmonic::{run_finite_rate, LateralBc, SolverGrid};
use channelfx::sim::{
    brownian_mfpt, mfpt_effective, project_full, solve_effective_1d, solve_full_2d, Bc1d,
    MfptConfig, TimeScheme,
};
use channelfx::{ChannelSpec, Field2D, FunctionExpr};
use std::f64::consts::PI;

fn scaled_sinusoid(scale: f64) -> ChannelSpec {
    ChannelSpec::parametric(
        FunctionExpr::constant(0.0),
        FunctionExpr::sinusoid(scale, 0.3 * scale, 2.0 * PI, 0.0),
        [0.0, 1.0],
    )
    .unwrap()
}

/// Sup-norm distance at the final stamp between the projected full solution
/// and the 1-D solution driven by the finite-rate coefficient.
fn reduction_error(scale: f64) -> f64 {
    let spec = scaled_sinusoid(scale);
    let (n_u, n_v) = (64, 32);
    let dt = 1e-3;
    let t_end = 0.04;

    let grid = SolverGrid::new(&spec, n_u, n_v).unwrap();
    let mut p0 = Field2D::new(n_u, n_v, 0.0);
    for i in 0..n_u {
        for j in 0..n_v {
            p0.set(i, j, 1.0 + (2.0 * PI * grid.u_center(i)).cos());
        }
    }
    let frames = solve_full_2d(&spec, &grid, &p0, dt, t_end, 1.0).unwrap();
    let projected = project_full(&frames, &spec, &grid).unwrap();

    let run = run_finite_rate(&spec, n_u, n_v, LateralBc { h_a: 0.0, h_b: 1.0 }, 1.0, 1e-12, None)
        .unwrap();
    let d_fin = run.d_fin.unwrap();
    let p0_1d = channelfx::ScalarProfile::from_fn(&grid.u_centers(), "p", |u| {
        1.0 + (2.0 * PI * u).cos()
    })
    .unwrap();
    let series = solve_effective_1d(
        &d_fin,
        &run.sigma,
        &p0_1d,
        dt,
        t_end,
        Bc1d::Reflecting,
        TimeScheme::Implicit,
    )
    .unwrap();

    let full = projected.frames.last().unwrap();
    let reduced = series.frames.last().unwrap();
    full.iter()
        .zip(reduced)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn narrowing_the_channel_improves_the_reduction() {
    let e1 = reduction_error(1.0);
    let e2 = reduction_error(0.5);
    let e4 = reduction_error(0.25);
    assert!(
        e1 > e2 && e2 > e4,
        "errors not monotone in width: {e1:.3e}, {e2:.3e}, {e4:.3e}"
    );
}

#[test]
fn wedge_first_passage_two_oracles_agree() {
    // Reduced double integral with the closed-form wedge profiles...
    let dv = PI / 6.0;
    let n = 1024;
    let u: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let d_f = channelfx::ScalarProfile::from_fn(&u, "D", |x| (-2.0 * x).exp()).unwrap();
    let sigma = channelfx::ScalarProfile::from_fn(&u, "sigma", |x| dv * (2.0 * x).exp()).unwrap();
    let tau_reduced = mfpt_effective(&d_f, &sigma, 0.0, 1.0).unwrap();

    // ... against particles bouncing inside the actual wedge.
    let map = channelfx::conjugate::ConjugateMap::log_wedge([0.0, dv], [0.0, 1.0]);
    let spec = ChannelSpec::conjugate(map).unwrap();
    let est = brownian_mfpt(&spec, &MfptConfig::new(10_000, 1e-4, 2024, 1.0)).unwrap();
    assert!(
        (est.mean - tau_reduced).abs() < 3.0 * est.stderr,
        "particles {} +- {} vs reduced {}",
        est.mean,
        est.stderr,
        tau_reduced
    );
}

#[test]
fn volume_relabelling_collapses_both_conventions() {
    // With a polynomial width the swept volume is itself a polynomial, so
    // the relabelled metric is exact and both coefficient conventions match
    // pointwise after the volume relabelling.
    let w = FunctionExpr::polynomial([1.0, 0.3, 0.2]);
    let spec =
        ChannelSpec::parametric(FunctionExpr::constant(0.0), w, [0.0, 1.0]).unwrap();
    // ν(u) = u + 0.15 u² + 0.2 u³/3.
    let nu = FunctionExpr::polynomial([0.0, 1.0, 0.15, 0.2 / 3.0]);
    let by_volume = channelfx::geom::reparametrize(&spec, nu).unwrap();
    let grid = channelfx::QuadratureGrid::new(&by_volume, 33, 8).unwrap();
    let assembled = channelfx::coeff::assemble(1.0, &by_volume, &grid).unwrap();
    for i in 0..33 {
        assert_relative_eq!(assembled.sigma.values()[i], 1.0, max_relative = 1e-10);
        assert_relative_eq!(
            assembled.d_inf.values()[i],
            assembled.d_fj.values()[i],
            max_relative = 1e-8
        );
    }
}

#[test]
fn tube_first_passage_matches_the_finite_rate_reduction() {
    // End-to-end in three dimensions: the axisymmetric solve produces the
    // finite-rate coefficient, the reduced double integral turns it into a
    // passage time, and particles bouncing inside the actual tube agree.
    let spec = ChannelSpec::tube(
        FunctionExpr::sinusoid(0.5, 0.125, 2.0 * PI, 0.0),
        [0.0, 1.0],
    )
    .unwrap();
    let run = run_finite_rate(&spec, 64, 32, LateralBc { h_a: 0.0, h_b: 1.0 }, 1.0, 1e-12, None)
        .unwrap();
    let d_fin = run.d_fin.unwrap();
    let d_f = d_fin.zip_with(&run.sigma, "D", |d, s| d / (s * s)).unwrap();
    let tau_reduced = mfpt_effective(&d_f, &run.sigma, 0.0, 1.0).unwrap();

    let est = brownian_mfpt(&spec, &MfptConfig::new(20_000, 3e-5, 4242, 1.0)).unwrap();
    assert!(
        (est.mean - tau_reduced).abs() < 3.0 * est.stderr,
        "particles {} +- {} vs reduced {}",
        est.mean,
        est.stderr,
        tau_reduced
    );
}

#[test]
fn tube_finite_rate_stays_below_infinite_rate() {
    let spec = ChannelSpec::tube(
        FunctionExpr::sinusoid(1.0, 0.25, 2.0 * PI, 0.0),
        [0.0, 1.0],
    )
    .unwrap();
    let run = run_finite_rate(&spec, 32, 16, LateralBc { h_a: 0.0, h_b: 1.0 }, 1.0, 1e-11, None)
        .unwrap();
    let d_fin = run.d_fin.unwrap();
    let quad = channelfx::QuadratureGrid::with_u_nodes(&spec, run.grid.u_centers(), 16).unwrap();
    let flux = channelfx::geom::flux_grad_u(&spec, &quad).unwrap();
    let sigma = channelfx::geom::sigma(&spec, &quad).unwrap();
    let d_inf = channelfx::coeff::effective_d_infinite(1.0, &flux, &sigma).unwrap();
    for i in 0..d_fin.len() {
        assert!(
            d_fin.values()[i] <= d_inf.values()[i] * (1.0 + 1e-9),
            "tube D_fin exceeds D_inf at node {i}"
        );
    }
}
