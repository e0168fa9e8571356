//! Seeded Brownian walkers measuring first passage times directly.
//!
//! Particles start uniformly on the section u = a, reflect specularly off the
//! walls and the starting section, and are absorbed at u = b. Each particle
//! owns one counter-based RNG stream, so the estimate is bit-identical for a
//! fixed seed no matter how the work is scheduled.
//!
//! Discrete-time absorption systematically overestimates passage times by
//! ~0.5826 √(2 D dt) of boundary layer (the walker can cross and return
//! between checks); by default the absorbing section is pulled inward by that
//! amount, which removes the O(√dt) bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::ChannelSpec;

/// ζ(1/2)/√(2π), the constant of the discrete-absorption boundary layer.
const BOUNDARY_LAYER: f64 = 0.5826;

#[derive(Debug, Clone, Copy)]
pub struct MfptConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub d0: f64,
    /// Compensate the discrete-absorption bias (default true).
    pub shift_absorbing_boundary: bool,
}

impl MfptConfig {
    pub fn new(n_particles: usize, dt: f64, seed: u64, d0: f64) -> Self {
        MfptConfig { n_particles, dt, seed, d0, shift_absorbing_boundary: true }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MfptEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// A snapshot of walker positions. The first component is the channel
/// parameter u (which equals the axial embedding coordinate for planar and
/// tube channels); the rest are the remaining embedding coordinates.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub positions: Vec<[f64; 3]>,
    pub seed: u64,
    pub dt: f64,
    pub n: usize,
}

/// Time-binned survivor density of an ensemble released on the starting
/// section, reflecting at u = a and absorbed at u = b.
#[derive(Debug, Clone)]
pub struct EnsembleHistory {
    /// Estimated effective concentration of the survivors, normalized so
    /// the initial mass ∫ p σ du is one.
    pub series: crate::sim::TimeSeries1D,
    pub absorbed_fraction: f64,
    /// Survivors at the final stamp.
    pub survivors: ParticleEnsemble,
}

/// Evolve an ensemble and histogram the survivor density over `n_bins`
/// sections at `n_stamps` evenly spaced times. Counts are integers summed
/// across particles, so the result does not depend on scheduling.
pub fn evolve_ensemble(
    spec: &ChannelSpec,
    cfg: &MfptConfig,
    t_end: f64,
    n_stamps: usize,
    n_bins: usize,
) -> Result<EnsembleHistory> {
    if cfg.n_particles == 0 || n_stamps == 0 || n_bins < 2 {
        return Err(Error::Parameter(
            "need particles, at least one stamp and two bins".into(),
        ));
    }
    if !(t_end >= cfg.dt) {
        return Err(Error::Parameter("need t_end >= dt".into()));
    }
    let walker = Walker::new(spec, cfg)?;
    let [a, b] = spec.u_range();
    let bin_width = (b - a) / n_bins as f64;
    let stamp_dt = t_end / n_stamps as f64;

    struct Track {
        bins: Vec<Option<usize>>,
        last: Option<[f64; 3]>,
    }
    let tracks: Vec<Result<Track>> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(idx as u64 + 1);
            let mut bins = Vec::with_capacity(n_stamps + 1);
            let mut last = None;
            walker.trace(&mut rng, t_end, stamp_dt, &mut |x, alive| {
                if alive {
                    let u = x[0];
                    let bin = (((u - a) / bin_width) as usize).min(n_bins - 1);
                    bins.push(Some(bin));
                    last = Some([x[0], x[1], x[2]]);
                } else {
                    bins.push(None);
                    last = None;
                }
            })?;
            Ok(Track { bins, last })
        })
        .collect();

    let mut counts = vec![vec![0u64; n_bins]; n_stamps + 1];
    let mut survivors = Vec::new();
    let mut absorbed = 0usize;
    for t in tracks {
        let t = t?;
        for (k, bin) in t.bins.iter().enumerate() {
            if let Some(bin) = bin {
                counts[k][*bin] += 1;
            }
        }
        match t.last {
            Some(x) => survivors.push(x),
            None => absorbed += 1,
        }
    }

    // Normalize to an effective concentration with unit initial mass.
    let quad = crate::geom::QuadratureGrid::cell_centered(spec, n_bins, 8)?;
    let sigma = crate::geom::sigma(spec, &quad)?;
    let u_centers = quad.u().to_vec();
    let mut series = crate::sim::TimeSeries1D {
        u: u_centers,
        times: Vec::new(),
        frames: Vec::new(),
    };
    let n = cfg.n_particles as f64;
    for (k, row) in counts.iter().enumerate() {
        let frame: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (n * sigma.values()[i] * bin_width))
            .collect();
        series.push_frame(k as f64 * stamp_dt, frame)?;
    }
    Ok(EnsembleHistory {
        series,
        absorbed_fraction: absorbed as f64 / n,
        survivors: ParticleEnsemble {
            positions: survivors,
            seed: cfg.seed,
            dt: cfg.dt,
            n: cfg.n_particles,
        },
    })
}

/// Mean first passage time from the u = a section to the u = b section.
pub fn brownian_mfpt(spec: &ChannelSpec, cfg: &MfptConfig) -> Result<MfptEstimate> {
    if cfg.n_particles == 0 {
        return Err(Error::Parameter("need at least one particle".into()));
    }
    if !(cfg.dt > 0.0) || !(cfg.d0 > 0.0) {
        return Err(Error::Parameter("need dt > 0 and D0 > 0".into()));
    }
    let walker = Walker::new(spec, cfg)?;

    let times: Vec<Result<f64>> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(idx as u64 + 1);
            walker.passage_time(&mut rng)
        })
        .collect();

    // Deterministic reduction in particle-index order.
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in &times {
        let t = *t.as_ref().map_err(|e| Error::Geometry(e.to_string()))?;
        sum += t;
        sum_sq += t * t;
    }
    let n = cfg.n_particles as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let stderr = (var / n).sqrt();
    Ok(MfptEstimate { mean, stderr, n: cfg.n_particles })
}

/// Per-geometry wall handling for the walk.
enum Walker {
    Planar {
        c: crate::expr::FunctionExpr,
        w: crate::expr::FunctionExpr,
        a: f64,
        absorb_at: f64,
        step: f64,
        dt: f64,
    },
    Tube {
        radius: crate::expr::FunctionExpr,
        a: f64,
        absorb_at: f64,
        step: f64,
        dt: f64,
    },
    Conformal {
        map: crate::conjugate::ConjugateMap,
        shift: f64,
        step: f64,
        dt: f64,
    },
}

impl Walker {
    fn new(spec: &ChannelSpec, cfg: &MfptConfig) -> Result<Self> {
        let step = (2.0 * cfg.d0 * cfg.dt).sqrt();
        let shift = if cfg.shift_absorbing_boundary {
            BOUNDARY_LAYER * step
        } else {
            0.0
        };
        let [a, b] = spec.u_range();
        match spec {
            ChannelSpec::Parametric2d { c, w, .. } => Ok(Walker::Planar {
                c: c.clone(),
                w: w.clone(),
                a,
                absorb_at: b - shift,
                step,
                dt: cfg.dt,
            }),
            ChannelSpec::Tube3d { radius, .. } => Ok(Walker::Tube {
                radius: radius.clone(),
                a,
                absorb_at: b - shift,
                step,
                dt: cfg.dt,
            }),
            ChannelSpec::ConjugatePair { map } => Ok(Walker::Conformal {
                map: map.clone(),
                shift,
                step,
                dt: cfg.dt,
            }),
            ChannelSpec::Reparametrized { .. } => Err(Error::Precondition(
                "run the particle oracle on the base channel; relabelling does not move points"
                    .into(),
            )),
        }
    }

    fn passage_time(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            Walker::Planar { c, w, a, absorb_at, step, dt } => {
                let start = [*a, c.eval(*a) + w.eval(*a) * rng.random_range(-0.5..0.5)];
                let boxed = planar_constraints(c, w, *a);
                let constraints: Vec<LevelFn<'_, 2>> =
                    boxed.iter().map(|b| &**b as LevelFn<'_, 2>).collect();
                walk(rng, start, &constraints, &|x: &[f64; 2]| x[0] >= *absorb_at, *step, *dt)
            }
            Walker::Tube { radius, a, absorb_at, step, dt } => {
                let (y0, z0) = sample_disk(rng, radius.eval(*a));
                let start = [*a, y0, z0];
                let boxed = tube_constraints(radius, *a);
                let constraints: Vec<LevelFn<'_, 3>> =
                    boxed.iter().map(|b| &**b as LevelFn<'_, 3>).collect();
                walk(rng, start, &constraints, &|x: &[f64; 3]| x[0] >= *absorb_at, *step, *dt)
            }
            Walker::Conformal { map, shift, step, dt } => {
                let [a, b] = map.u_range;
                let v0 = rng.random_range(map.v_range[0]..map.v_range[1]);
                let start = map.inverse(a, v0);
                let boxed = conformal_constraints(map, a);
                let constraints: Vec<LevelFn<'_, 2>> =
                    boxed.iter().map(|c| &**c as LevelFn<'_, 2>).collect();
                let absorbed = |x: &[f64; 2]| {
                    let (u, _) = map.forward(*x);
                    let (re, im) = map.forward_deriv(*x);
                    u >= b - shift * (re * re + im * im).sqrt()
                };
                walk(rng, start, &constraints, &absorbed, *step, *dt)
            }
        }
    }

    /// Evolve one particle to `t_end`, reporting embedding-space positions
    /// at every stamp; the third coordinate is zero for planar walks.
    fn trace(
        &self,
        rng: &mut ChaCha8Rng,
        t_end: f64,
        stamp_dt: f64,
        observe: &mut dyn FnMut(&[f64; 3], bool),
    ) -> Result<()> {
        match self {
            Walker::Planar { c, w, a, absorb_at, step, dt } => {
                let start = [*a, c.eval(*a) + w.eval(*a) * rng.random_range(-0.5..0.5)];
                let boxed = planar_constraints(c, w, *a);
                let constraints: Vec<LevelFn<'_, 2>> =
                    boxed.iter().map(|b| &**b as LevelFn<'_, 2>).collect();
                walk_trace(
                    rng,
                    start,
                    &constraints,
                    &|x: &[f64; 2]| x[0] >= *absorb_at,
                    *step,
                    *dt,
                    t_end,
                    stamp_dt,
                    &mut |x, alive| observe(&[x[0], x[1], 0.0], alive),
                )
            }
            Walker::Tube { radius, a, absorb_at, step, dt } => {
                let (y0, z0) = sample_disk(rng, radius.eval(*a));
                let start = [*a, y0, z0];
                let boxed = tube_constraints(radius, *a);
                let constraints: Vec<LevelFn<'_, 3>> =
                    boxed.iter().map(|b| &**b as LevelFn<'_, 3>).collect();
                walk_trace(
                    rng,
                    start,
                    &constraints,
                    &|x: &[f64; 3]| x[0] >= *absorb_at,
                    *step,
                    *dt,
                    t_end,
                    stamp_dt,
                    observe,
                )
            }
            Walker::Conformal { map, shift, step, dt } => {
                let [a, b] = map.u_range;
                let v0 = rng.random_range(map.v_range[0]..map.v_range[1]);
                let start = map.inverse(a, v0);
                let boxed = conformal_constraints(map, a);
                let constraints: Vec<LevelFn<'_, 2>> =
                    boxed.iter().map(|c| &**c as LevelFn<'_, 2>).collect();
                let absorbed = |x: &[f64; 2]| {
                    let (u, _) = map.forward(*x);
                    let (re, im) = map.forward_deriv(*x);
                    u >= b - shift * (re * re + im * im).sqrt()
                };
                // Report the conformal u in the first slot so binning over
                // the parameter works for every geometry.
                walk_trace(
                    rng,
                    start,
                    &constraints,
                    &absorbed,
                    *step,
                    *dt,
                    t_end,
                    stamp_dt,
                    &mut |x, alive| {
                        let (u, _) = map.forward(*x);
                        observe(&[u, x[0], x[1]], alive)
                    },
                )
            }
        }
    }
}

/// One Euler step with specular wall handling; the returned time increment
/// is halved on the rare failed reflection.
fn try_step<const N: usize>(
    rng: &mut ChaCha8Rng,
    x: &mut [f64; N],
    constraints: &[LevelFn<'_, N>],
    step: f64,
    dt: f64,
) -> Result<f64> {
    let mut dt_try = dt;
    let mut scale = step;
    let mut attempts = 0;
    loop {
        let mut y = *x;
        for item in y.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *item += scale * g;
        }
        let (corrected, ok) = settle(x, &y, constraints);
        if ok {
            *x = corrected;
            return Ok(dt_try);
        }
        attempts += 1;
        if attempts > 12 {
            return Err(Error::Geometry(format!("particle stuck near {x:?}; reduce dt")));
        }
        dt_try *= 0.5;
        scale *= std::f64::consts::FRAC_1_SQRT_2;
    }
}

/// Walk until absorption, returning the passage time.
fn walk<const N: usize>(
    rng: &mut ChaCha8Rng,
    start: [f64; N],
    constraints: &[LevelFn<'_, N>],
    absorbed: &dyn Fn(&[f64; N]) -> bool,
    step: f64,
    dt: f64,
) -> Result<f64> {
    let mut x = start;
    let mut t = 0.0;
    loop {
        t += try_step(rng, &mut x, constraints, step, dt)?;
        if absorbed(&x) {
            return Ok(t);
        }
    }
}

/// Walk to `t_end`, reporting the position (and whether still alive) at
/// every stamp k·stamp_dt, k = 0..=n_stamps.
#[allow(clippy::too_many_arguments)]
fn walk_trace<const N: usize>(
    rng: &mut ChaCha8Rng,
    start: [f64; N],
    constraints: &[LevelFn<'_, N>],
    absorbed: &dyn Fn(&[f64; N]) -> bool,
    step: f64,
    dt: f64,
    t_end: f64,
    stamp_dt: f64,
    observe: &mut dyn FnMut(&[f64; N], bool),
) -> Result<()> {
    let n_stamps = (t_end / stamp_dt).round() as usize;
    let mut x = start;
    let mut t = 0.0;
    let mut next = 0usize;
    let mut alive = true;
    while next <= n_stamps {
        while next <= n_stamps && t >= next as f64 * stamp_dt - 1e-12 * stamp_dt {
            observe(&x, alive);
            next += 1;
        }
        if next > n_stamps {
            break;
        }
        if !alive {
            while next <= n_stamps {
                observe(&x, false);
                next += 1;
            }
            break;
        }
        t += try_step(rng, &mut x, constraints, step, dt)?;
        if absorbed(&x) {
            alive = false;
        }
    }
    Ok(())
}

/// Signed excess of a wall constraint (positive outside) with its gradient.
type LevelFn<'a, const N: usize> = &'a dyn Fn(&[f64; N]) -> (f64, [f64; N]);
type BoxedLevel<'a, const N: usize> = Box<dyn Fn(&[f64; N]) -> (f64, [f64; N]) + 'a>;

/// Specular reflection at the point where the segment `from → to` crosses
/// the wall. Bisection finds the crossing; the remainder of the step is
/// mirrored about the tangent plane there. Reflecting at the crossing point
/// rather than projecting the endpoint removes the leading curvature bias
/// of the walk.
fn reflect_at_crossing<const N: usize>(
    from: &[f64; N],
    to: &[f64; N],
    level: LevelFn<'_, N>,
) -> [f64; N] {
    let (excess_from, _) = level(from);
    if excess_from > 0.0 {
        // The base point itself drifted outside (compound reflections);
        // fall back to projecting the endpoint through the local tangent.
        let (excess, grad) = level(to);
        let norm2: f64 = grad.iter().map(|g| g * g).sum();
        let mut out = *to;
        if norm2 > 0.0 {
            for k in 0..N {
                out[k] -= 2.0 * excess / norm2 * grad[k];
            }
        }
        return out;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let mut p = *from;
        for k in 0..N {
            p[k] += mid * (to[k] - from[k]);
        }
        if level(&p).0 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let mut crossing = *from;
    for k in 0..N {
        crossing[k] += t * (to[k] - from[k]);
    }
    let (_, grad) = level(&crossing);
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    if norm2 == 0.0 {
        return crossing;
    }
    // Mirror the remaining displacement about the tangent plane.
    let mut remainder = [0.0; N];
    let mut dot = 0.0;
    for k in 0..N {
        remainder[k] = to[k] - crossing[k];
        dot += remainder[k] * grad[k];
    }
    let mut out = crossing;
    for k in 0..N {
        out[k] += remainder[k] - 2.0 * dot / norm2 * grad[k];
    }
    out
}

/// Apply every violated constraint by crossing-point reflection, a few
/// passes deep (corners need two). Returns the corrected point and whether
/// all constraints hold afterwards.
fn settle<const N: usize>(
    from: &[f64; N],
    to: &[f64; N],
    constraints: &[LevelFn<'_, N>],
) -> ([f64; N], bool) {
    // Crossings are always bracketed from the pre-step point, which is
    // inside every constraint; compound reflections just repeat the search
    // against the updated endpoint.
    let mut point = *to;
    for _ in 0..3 {
        let mut clean = true;
        for level in constraints {
            if level(&point).0 > 0.0 {
                point = reflect_at_crossing(from, &point, *level);
                clean = false;
            }
        }
        if clean {
            return (point, true);
        }
    }
    let ok = constraints.iter().all(|level| level(&point).0 <= 0.0);
    (point, ok)
}

fn planar_constraints<'a>(
    c: &'a crate::expr::FunctionExpr,
    w: &'a crate::expr::FunctionExpr,
    a: f64,
) -> [BoxedLevel<'a, 2>; 3] {
    let q_and_grad = move |x: &[f64; 2]| {
        let width = w.eval(x[0]);
        let q = (x[1] - c.eval(x[0])) / width;
        let gq = [-(c.deriv(x[0]) + q * w.deriv(x[0])) / width, 1.0 / width];
        (q, gq)
    };
    [
        Box::new(move |x: &[f64; 2]| {
            let (q, g) = q_and_grad(x);
            (q - 0.5, g)
        }),
        Box::new(move |x: &[f64; 2]| {
            let (q, g) = q_and_grad(x);
            (-q - 0.5, [-g[0], -g[1]])
        }),
        Box::new(move |x: &[f64; 2]| (a - x[0], [-1.0, 0.0])),
    ]
}

fn tube_constraints<'a>(
    radius: &'a crate::expr::FunctionExpr,
    a: f64,
) -> [BoxedLevel<'a, 3>; 2] {
    [
        Box::new(move |x: &[f64; 3]| {
            let rho = (x[1] * x[1] + x[2] * x[2]).sqrt().max(1e-300);
            let rad = radius.eval(x[0]);
            (rho - rad, [-radius.deriv(x[0]), x[1] / rho, x[2] / rho])
        }),
        Box::new(move |x: &[f64; 3]| (a - x[0], [-1.0, 0.0, 0.0])),
    ]
}

fn conformal_constraints(
    map: &crate::conjugate::ConjugateMap,
    a: f64,
) -> [BoxedLevel<'_, 2>; 3] {
    let [v1, v2] = map.v_range;
    // ∇u = (Re f', -Im f') and ∇v = (Im f', Re f') by Cauchy-Riemann.
    [
        Box::new(move |x: &[f64; 2]| {
            let (_, v) = map.forward(*x);
            let (re, im) = map.forward_deriv(*x);
            (v - v2, [im, re])
        }),
        Box::new(move |x: &[f64; 2]| {
            let (_, v) = map.forward(*x);
            let (re, im) = map.forward_deriv(*x);
            (v1 - v, [-im, -re])
        }),
        Box::new(move |x: &[f64; 2]| {
            let (u, _) = map.forward(*x);
            let (re, im) = map.forward_deriv(*x);
            (a - u, [-re, im])
        }),
    ]
}

fn sample_disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    loop {
        let y: f64 = rng.random_range(-1.0..1.0);
        let z: f64 = rng.random_range(-1.0..1.0);
        if y * y + z * z <= 1.0 {
            return (y * radius, z * radius);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::FunctionExpr;
    use approx::assert_relative_eq;

    #[test]
    fn identical_seeds_reproduce_bit_for_bit() {
        let spec = ChannelSpec::strip([0.0, 1.0]);
        let cfg = MfptConfig::new(200, 5e-4, 42, 1.0);
        let one = brownian_mfpt(&spec, &cfg).unwrap();
        let two = brownian_mfpt(&spec, &cfg).unwrap();
        assert_eq!(one.mean.to_bits(), two.mean.to_bits());
        assert_eq!(one.stderr.to_bits(), two.stderr.to_bits());
    }

    #[test]
    fn different_seeds_differ() {
        let spec = ChannelSpec::strip([0.0, 1.0]);
        let a = brownian_mfpt(&spec, &MfptConfig::new(100, 5e-4, 1, 1.0)).unwrap();
        let b = brownian_mfpt(&spec, &MfptConfig::new(100, 5e-4, 2, 1.0)).unwrap();
        assert_ne!(a.mean.to_bits(), b.mean.to_bits());
    }

    #[test]
    fn strip_passage_time_is_half_length_squared() {
        let spec = ChannelSpec::strip([0.0, 1.0]);
        let cfg = MfptConfig::new(4000, 1e-4, 7, 1.0);
        let est = brownian_mfpt(&spec, &cfg).unwrap();
        let expect = 0.5;
        assert!(
            (est.mean - expect).abs() < 3.0 * est.stderr,
            "mean {} +- {} vs {}",
            est.mean,
            est.stderr,
            expect
        );
    }

    #[test]
    fn width_does_not_matter_for_straight_channels() {
        let narrow = ChannelSpec::strip([0.0, 1.0]);
        let wide = ChannelSpec::parametric(
            FunctionExpr::constant(0.0),
            FunctionExpr::constant(3.0),
            [0.0, 1.0],
        )
        .unwrap();
        let a = brownian_mfpt(&narrow, &MfptConfig::new(3000, 1e-4, 11, 1.0)).unwrap();
        let b = brownian_mfpt(&wide, &MfptConfig::new(3000, 1e-4, 12, 1.0)).unwrap();
        let spread = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!(
            (a.mean - b.mean).abs() < 3.0 * spread,
            "means {} vs {} with spread {}",
            a.mean,
            b.mean,
            spread
        );
    }

    #[test]
    fn ensemble_history_conserves_particles_and_stays_inside() {
        let spec = ChannelSpec::parametric(
            FunctionExpr::constant(0.0),
            FunctionExpr::sinusoid(1.0, 0.3, 2.0 * std::f64::consts::PI, 0.0),
            [0.0, 1.0],
        )
        .unwrap();
        let cfg = MfptConfig::new(500, 1e-4, 5, 1.0);
        let history = evolve_ensemble(&spec, &cfg, 0.05, 10, 16).unwrap();
        assert_eq!(history.series.times.len(), 11);
        // Survivors plus absorbed account for every particle.
        assert_eq!(
            history.survivors.positions.len(),
            500 - (history.absorbed_fraction * 500.0).round() as usize
        );
        // Reflection keeps everyone inside the channel.
        let w = FunctionExpr::sinusoid(1.0, 0.3, 2.0 * std::f64::consts::PI, 0.0);
        for p in &history.survivors.positions {
            assert!((0.0..=1.0).contains(&p[0]));
            let q = p[1] / w.eval(p[0]);
            assert!((-0.5..=0.5).contains(&q), "outside: {p:?}");
        }
        // The first stamp carries the full unit mass on the start section.
        let quad = crate::geom::QuadratureGrid::cell_centered(&spec, 16, 8).unwrap();
        let sigma = crate::geom::sigma(&spec, &quad).unwrap();
        let mass0 = history.series.mass(sigma.values(), 0);
        assert_relative_eq!(mass0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_reparametrized_specs() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let relabelled =
            crate::geom::reparametrize(&strip, FunctionExpr::polynomial([0.0, 2.0])).unwrap();
        assert!(brownian_mfpt(&relabelled, &MfptConfig::new(10, 1e-4, 1, 1.0)).is_err());
    }
}
