//! Channel geometry: parametric definitions, the induced metric, and the
//! geometric profiles obtained by integrating over cross sections.
//!
//! A channel is the image of `[a, b] × Ω` under an embedding `x(u, v)`. With
//! the pulled-back metric written in block form (u row/column vs. section
//! block `g_v`), everything the diffusion reduction needs is a section
//! integral:
//!
//! ```text
//!   dν/du(u) = ∫_Ω det(g)^{1/2} dv            volume density σ
//!   A(u)     = ∫_Ω det(g_v)^{1/2} dv          section area
//!   F_∇u(u)  = ∫_Ω det(g_v)/det(g)^{1/2} dv   flux of ∇u through the section
//!   ∇·U      = ½ ∂_u log det(g)               divergence of the sweep field
//! ```
//!
//! The section domain Ω is pinned to `[-½, ½]` for planar channels (so that
//! σ equals the width function exactly) and to the unit disk, in polar
//! parameters, for tubes.

use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugateMap;
use crate::error::{Error, Result};
use crate::expr::FunctionExpr;
use crate::field::Field2D;
use crate::profile::ScalarProfile;
use crate::quad::gauss_legendre_on;

/// Slack accepted when checking parameter-domain membership.
const DOMAIN_EPS: f64 = 1e-9;

/// A point of the section parameter domain Ω. Planar channels use only the
/// first component; tubes use `[r, θ]` polar coordinates of the unit disk.
pub type SectionPoint = [f64; 2];

/// Parametric definition of a channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Planar channel x(u, v) = (u, c(u) + v w(u)), v ∈ [-½, ½].
    Parametric2d {
        c: FunctionExpr,
        w: FunctionExpr,
        u_range: [f64; 2],
    },
    /// Axisymmetric tube of radius R(u) around the u-axis.
    Tube3d {
        radius: FunctionExpr,
        u_range: [f64; 2],
    },
    /// Channel bounded by level sets of a harmonic conjugate pair.
    ConjugatePair {
        #[serde(flatten)]
        map: ConjugateMap,
    },
    /// A channel relabelled by a monotone map of the parameter, `ũ = f(u)`.
    Reparametrized {
        base: Box<ChannelSpec>,
        map: FunctionExpr,
    },
}

/// Pointwise metric data at (u, v).
#[derive(Debug, Clone, Copy)]
pub struct MetricSample {
    /// det g, the squared volume density of the full block metric.
    pub det_g: f64,
    /// det g_v, the squared area density of the section block.
    pub det_gv: f64,
    /// ∇·U = ½ ∂_u log det g.
    pub div_u: f64,
    /// Embedding Jacobian column ∂x/∂u.
    pub dxdu: [f64; 3],
    /// Embedding Jacobian column along the leading section direction.
    pub dxdv: [f64; 3],
}

impl ChannelSpec {
    pub fn parametric(c: FunctionExpr, w: FunctionExpr, u_range: [f64; 2]) -> Result<Self> {
        let spec = ChannelSpec::Parametric2d { c, w, u_range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn strip(u_range: [f64; 2]) -> Self {
        ChannelSpec::Parametric2d {
            c: FunctionExpr::constant(0.0),
            w: FunctionExpr::constant(1.0),
            u_range,
        }
    }

    pub fn tube(radius: FunctionExpr, u_range: [f64; 2]) -> Result<Self> {
        let spec = ChannelSpec::Tube3d { radius, u_range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conjugate(map: ConjugateMap) -> Result<Self> {
        let spec = ChannelSpec::ConjugatePair { map };
        spec.validate()?;
        Ok(spec)
    }

    pub fn u_range(&self) -> [f64; 2] {
        match self {
            ChannelSpec::Parametric2d { u_range, .. } | ChannelSpec::Tube3d { u_range, .. } => {
                *u_range
            }
            ChannelSpec::ConjugatePair { map } => map.u_range,
            ChannelSpec::Reparametrized { base, map } => {
                let [a, b] = base.u_range();
                [map.eval(a), map.eval(b)]
            }
        }
    }

    /// Range of the leading section parameter: v for planar channels, the
    /// radial coordinate for tubes.
    pub fn section_range(&self) -> [f64; 2] {
        match self {
            ChannelSpec::Parametric2d { .. } => [-0.5, 0.5],
            ChannelSpec::Tube3d { .. } => [0.0, 1.0],
            ChannelSpec::ConjugatePair { map } => map.v_range,
            ChannelSpec::Reparametrized { base, .. } => base.section_range(),
        }
    }

    /// 2π for tubes (the azimuthal measure folded out of 2-D solves), else 1.
    pub fn azimuth_factor(&self) -> f64 {
        match self {
            ChannelSpec::Tube3d { .. } => 2.0 * std::f64::consts::PI,
            ChannelSpec::Reparametrized { base, .. } => base.azimuth_factor(),
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("/spec")
    }

    fn validate_at(&self, pointer: &str) -> Result<()> {
        match self {
            ChannelSpec::Parametric2d { c, w, u_range } => {
                c.validate(&format!("{pointer}/c"))?;
                w.validate(&format!("{pointer}/w"))?;
                check_range(u_range, pointer)?;
                check_positive_on(w, u_range, &format!("{pointer}/w"), "width")?;
            }
            ChannelSpec::Tube3d { radius, u_range } => {
                radius.validate(&format!("{pointer}/radius"))?;
                check_range(u_range, pointer)?;
                check_positive_on(radius, u_range, &format!("{pointer}/radius"), "radius")?;
            }
            ChannelSpec::ConjugatePair { map } => map.validate(pointer)?,
            ChannelSpec::Reparametrized { base, map } => {
                base.validate_at(&format!("{pointer}/base"))?;
                map.validate(&format!("{pointer}/map"))?;
                let [a, b] = base.u_range();
                if !map.is_increasing_on(a, b) {
                    return Err(Error::Precondition(
                        "reparametrization map must have positive derivative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_range(u_range: &[f64; 2], pointer: &str) -> Result<()> {
    if !(u_range[0] < u_range[1]) || !u_range.iter().all(|x| x.is_finite()) {
        return Err(Error::validation(
            format!("{pointer}/u_range"),
            "need finite a < b",
        ));
    }
    Ok(())
}

fn check_positive_on(
    f: &FunctionExpr,
    u_range: &[f64; 2],
    pointer: &str,
    what: &str,
) -> Result<()> {
    let n = 513;
    for i in 0..n {
        let u = u_range[0] + (u_range[1] - u_range[0]) * i as f64 / (n - 1) as f64;
        let value = f.eval(u);
        if !(value > 0.0) {
            return Err(Error::validation(
                pointer,
                format!("{what} must stay positive; {what}({u}) = {value}"),
            ));
        }
    }
    Ok(())
}

/// Invert a validated increasing map by bisection.
fn invert_monotone(map: &FunctionExpr, range: [f64; 2], target: f64) -> f64 {
    let [mut lo, mut hi] = range;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if map.eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Pointwise metric of the channel at (u, v).
pub fn metric_at(spec: &ChannelSpec, u: f64, v: SectionPoint) -> Result<MetricSample> {
    let [a, b] = spec.u_range();
    let span = b - a;
    if u < a - DOMAIN_EPS * span || u > b + DOMAIN_EPS * span {
        return Err(Error::OutOfDomain { name: "u", value: u, lo: a, hi: b });
    }
    let [s0, s1] = spec.section_range();
    let sspan = s1 - s0;
    if v[0] < s0 - DOMAIN_EPS * sspan || v[0] > s1 + DOMAIN_EPS * sspan {
        return Err(Error::OutOfDomain { name: "v", value: v[0], lo: s0, hi: s1 });
    }

    match spec {
        ChannelSpec::Parametric2d { c, w, .. } => {
            let width = w.eval(u);
            let slope = c.deriv(u) + v[0] * w.deriv(u);
            let dxdu = [1.0, slope, 0.0];
            let dxdv = [0.0, width, 0.0];
            let g11 = 1.0 + slope * slope;
            let g12 = slope * width;
            let g22 = width * width;
            Ok(MetricSample {
                det_g: g11 * g22 - g12 * g12,
                det_gv: g22,
                div_u: w.deriv(u) / width,
                dxdu,
                dxdv,
            })
        }
        ChannelSpec::Tube3d { radius, .. } => {
            let [r, theta] = v;
            if r <= 0.0 {
                return Err(Error::OutOfDomain { name: "r", value: r, lo: 0.0, hi: 1.0 });
            }
            let rad = radius.eval(u);
            let rd = radius.deriv(u);
            let (sin_t, cos_t) = theta.sin_cos();
            let dxdu = [1.0, r * rd * cos_t, r * rd * sin_t];
            let dxdv = [0.0, rad * cos_t, rad * sin_t];
            let g11 = 1.0 + r * r * rd * rd;
            let g12 = r * rad * rd;
            let g22 = rad * rad;
            // Azimuthal block is diagonal with entry r² R².
            let det_block = g11 * g22 - g12 * g12;
            Ok(MetricSample {
                det_g: det_block * r * r * g22,
                det_gv: g22 * r * r * g22,
                div_u: 2.0 * rd / rad,
                dxdu,
                dxdv,
            })
        }
        ChannelSpec::ConjugatePair { map } => {
            let (re, im) = map.dz_dw(u, v[0]);
            let s2 = re * re + im * im;
            Ok(MetricSample {
                det_g: s2 * s2,
                det_gv: s2,
                div_u: map.div_u(u, v[0]),
                dxdu: [re, im, 0.0],
                dxdv: [-im, re, 0.0],
            })
        }
        ChannelSpec::Reparametrized { base, map } => {
            let base_range = base.u_range();
            let u_base = invert_monotone(map, base_range, u);
            let fd = map.deriv(u_base);
            let fdd = map.second_deriv(u_base);
            let sample = metric_at(base, u_base, v)?;
            Ok(MetricSample {
                det_g: sample.det_g / (fd * fd),
                det_gv: sample.det_gv,
                div_u: (sample.div_u - fdd / fd) / fd,
                dxdu: [
                    sample.dxdu[0] / fd,
                    sample.dxdu[1] / fd,
                    sample.dxdu[2] / fd,
                ],
                dxdv: sample.dxdv,
            })
        }
    }
}

/// A u-grid paired with a fixed quadrature rule on the section domain Ω.
///
/// Gauss–Legendre in the section coordinate (exact for the polynomial
/// integrands of the planar family); tubes take a polar product rule with
/// uniform azimuthal nodes. The weights sum to the parameter measure of Ω.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    u: Vec<f64>,
    v: Vec<SectionPoint>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Uniform u-nodes including both endpoints.
    pub fn new(spec: &ChannelSpec, n_u: usize, n_v: usize) -> Result<Self> {
        let [a, b] = spec.u_range();
        let u = (0..n_u)
            .map(|i| a + (b - a) * i as f64 / (n_u - 1) as f64)
            .collect();
        Self::with_u_nodes(spec, u, n_v)
    }

    /// Cell-center u-nodes matching an `n_u`-cell finite-volume layout.
    pub fn cell_centered(spec: &ChannelSpec, n_u: usize, n_v: usize) -> Result<Self> {
        let [a, b] = spec.u_range();
        let du = (b - a) / n_u as f64;
        let u = (0..n_u).map(|i| a + (i as f64 + 0.5) * du).collect();
        Self::with_u_nodes(spec, u, n_v)
    }

    pub fn with_u_nodes(spec: &ChannelSpec, u: Vec<f64>, n_v: usize) -> Result<Self> {
        if u.len() < 2 {
            return Err(Error::validation("/grid/n_u", "need at least 2 u-nodes"));
        }
        if n_v < 2 {
            return Err(Error::validation("/grid/n_v", "need at least 2 v-nodes"));
        }
        let [s0, s1] = spec.section_range();
        let (v, weights) = match spec {
            ChannelSpec::Tube3d { .. } => {
                let (r_nodes, r_weights) = gauss_legendre_on(n_v, s0, s1);
                let n_theta = n_v.max(8);
                let w_theta = 2.0 * std::f64::consts::PI / n_theta as f64;
                let mut v = Vec::with_capacity(n_v * n_theta);
                let mut weights = Vec::with_capacity(n_v * n_theta);
                for (r, wr) in r_nodes.iter().zip(&r_weights) {
                    for k in 0..n_theta {
                        v.push([*r, (k as f64 + 0.5) * w_theta]);
                        weights.push(wr * w_theta);
                    }
                }
                (v, weights)
            }
            ChannelSpec::Reparametrized { base, .. } => {
                let inner = QuadratureGrid::with_u_nodes(base, u.clone(), n_v)?;
                (inner.v, inner.weights)
            }
            _ => {
                let (nodes, weights) = gauss_legendre_on(n_v, s0, s1);
                (nodes.into_iter().map(|x| [x, 0.0]).collect(), weights)
            }
        };
        Ok(QuadratureGrid { u, v, weights })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn section_nodes(&self) -> &[SectionPoint] {
        &self.v
    }

    pub fn section_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_u(&self) -> usize {
        self.u.len()
    }

    pub fn n_section(&self) -> usize {
        self.v.len()
    }

    /// Field sampled at every (u-node, section-node) pair of this grid.
    pub fn sample(&self, mut f: impl FnMut(f64, SectionPoint) -> f64) -> Field2D {
        let mut field = Field2D::new(self.n_u(), self.n_section(), 0.0);
        for (i, &u) in self.u.iter().enumerate() {
            for (j, &v) in self.v.iter().enumerate() {
                field.set(i, j, f(u, v));
            }
        }
        field
    }
}

/// Integrate `integrand(sample)` over the section at a single u.
fn section_integral_at(
    spec: &ChannelSpec,
    grid: &QuadratureGrid,
    u: f64,
    integrand: impl Fn(&MetricSample) -> f64,
    what: &str,
) -> Result<f64> {
    let mut acc = 0.0;
    for (v, wt) in grid.v.iter().zip(&grid.weights) {
        let sample = metric_at(spec, u, *v)?;
        let value = integrand(&sample);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: format!("{what} at u={u}, v={}", v[0]),
            });
        }
        acc += wt * value;
    }
    Ok(acc)
}

fn section_profile(
    spec: &ChannelSpec,
    grid: &QuadratureGrid,
    unit: &str,
    integrand: impl Fn(&MetricSample) -> f64,
    what: &str,
) -> Result<ScalarProfile> {
    let mut values = Vec::with_capacity(grid.n_u());
    for &u in grid.u() {
        values.push(section_integral_at(spec, grid, u, &integrand, what)?);
    }
    ScalarProfile::new(grid.u().to_vec(), values, unit)
}

/// Volume density σ(u) = dν/du = ∫ det(g)^{1/2} dv.
pub fn sigma(spec: &ChannelSpec, grid: &QuadratureGrid) -> Result<ScalarProfile> {
    section_profile(spec, grid, "volume/u", |m| m.det_g.sqrt(), "sigma")
}

/// σ at a single station, with the grid's section rule.
pub fn sigma_at(spec: &ChannelSpec, grid: &QuadratureGrid, u: f64) -> Result<f64> {
    section_integral_at(spec, grid, u, |m| m.det_g.sqrt(), "sigma")
}

/// Section area A(u) = ∫ det(g_v)^{1/2} dv.
pub fn area(spec: &ChannelSpec, grid: &QuadratureGrid) -> Result<ScalarProfile> {
    section_profile(spec, grid, "area", |m| m.det_gv.sqrt(), "area")
}

/// Flux of ∇u through the section, F_∇u(u) = ∫ det(g_v)/det(g)^{1/2} dv.
pub fn flux_grad_u(spec: &ChannelSpec, grid: &QuadratureGrid) -> Result<ScalarProfile> {
    section_profile(spec, grid, "area/u", |m| m.det_gv / m.det_g.sqrt(), "flux_grad_u")
}

/// ∫ (∇·U) det(g)^{1/2} dv, the section integral appearing in dσ/du.
pub fn div_u_section_integral(spec: &ChannelSpec, grid: &QuadratureGrid, u: f64) -> Result<f64> {
    section_integral_at(spec, grid, u, |m| m.div_u * m.det_g.sqrt(), "div_u integral")
}

/// Swept volume ν(u) of the region between the first u-node and `u`,
/// by trapezoid accumulation of σ over the grid.
pub fn volume(spec: &ChannelSpec, grid: &QuadratureGrid, u: f64) -> Result<f64> {
    let [a, b] = spec.u_range();
    if u < a - DOMAIN_EPS * (b - a) || u > b + DOMAIN_EPS * (b - a) {
        return Err(Error::OutOfDomain { name: "u", value: u, lo: a, hi: b });
    }
    let nodes = grid.u();
    let mut acc = 0.0;
    let mut prev_u = nodes[0];
    let mut prev_sigma = sigma_at(spec, grid, prev_u)?;
    for &node in &nodes[1..] {
        if node >= u {
            break;
        }
        let s = sigma_at(spec, grid, node)?;
        acc += 0.5 * (prev_sigma + s) * (node - prev_u);
        prev_u = node;
        prev_sigma = s;
    }
    if u > prev_u {
        let s = sigma_at(spec, grid, u)?;
        acc += 0.5 * (prev_sigma + s) * (u - prev_u);
    }
    Ok(acc)
}

/// ν sampled on the whole grid; starts at zero, strictly increasing.
pub fn volume_profile(spec: &ChannelSpec, grid: &QuadratureGrid) -> Result<ScalarProfile> {
    Ok(sigma(spec, grid)?.cumulative("volume"))
}

/// Flux of the scaled sweep field, F_{λU}(u) = ∫ λ det(g)^{1/2} dv, for a
/// scalar field λ sampled on the grid.
pub fn flux_scaled_u(
    spec: &ChannelSpec,
    grid: &QuadratureGrid,
    lambda: &Field2D,
) -> Result<ScalarProfile> {
    lambda.check_dims(grid.n_u(), grid.n_section(), "flux_scaled_u")?;
    let mut values = Vec::with_capacity(grid.n_u());
    for (i, &u) in grid.u().iter().enumerate() {
        let mut acc = 0.0;
        for (j, (v, wt)) in grid.v.iter().zip(&grid.weights).enumerate() {
            let sample = metric_at(spec, u, *v)?;
            acc += wt * lambda.get(i, j) * sample.det_g.sqrt();
        }
        if !acc.is_finite() {
            return Err(Error::NonFinite { location: format!("flux_scaled_u at u={u}") });
        }
        values.push(acc);
    }
    ScalarProfile::new(grid.u().to_vec(), values, "volume/u")
}

/// Section average of |∇u|: G(u) = F_∇u(u) / A(u).
pub fn cross_section_density(
    flux_grad_u: &ScalarProfile,
    area: &ScalarProfile,
) -> Result<ScalarProfile> {
    flux_grad_u.zip_with(area, "1/u", |f, a| f / a)
}

/// Relabel the channel by `ũ = f(u)`. The point set is unchanged; the
/// profiles transform as σ̃(f(u)) = σ(u)/f'(u) and F̃(f(u)) = f'(u) F(u).
pub fn reparametrize(spec: &ChannelSpec, f: FunctionExpr) -> Result<ChannelSpec> {
    let [a, b] = spec.u_range();
    f.validate("/reparametrize/map")?;
    if !f.is_increasing_on(a, b) {
        return Err(Error::Precondition(
            "reparametrization map must have positive derivative".into(),
        ));
    }
    Ok(ChannelSpec::Reparametrized {
        base: Box::new(spec.clone()),
        map: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn sinusoid_channel() -> ChannelSpec {
        ChannelSpec::parametric(
            FunctionExpr::sinusoid(0.1, 0.05, 2.0 * PI, 0.0),
            FunctionExpr::sinusoid(1.0, 0.3, 2.0 * PI, 0.0),
            [0.0, 1.0],
        )
        .unwrap()
    }

    fn wedge(dv: f64) -> ChannelSpec {
        ChannelSpec::conjugate(ConjugateMap::log_wedge([0.0, dv], [0.0, 1.0])).unwrap()
    }

    #[test]
    fn strip_metric_is_flat() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let m = metric_at(&strip, 0.3, [0.2, 0.0]).unwrap();
        assert_relative_eq!(m.det_g, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.det_gv, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.div_u, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn parametric_det_g_equals_w_squared() {
        // The block determinant collapses to w(u)²; check against the
        // Jacobian columns at random points as an independent route.
        let spec = sinusoid_channel();
        let (c, w) = match &spec {
            ChannelSpec::Parametric2d { c, w, .. } => (c.clone(), w.clone()),
            _ => unreachable!(),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let u: f64 = rng.random_range(0.0..1.0);
            let v: f64 = rng.random_range(-0.5..0.5);
            let m = metric_at(&spec, u, [v, 0.0]).unwrap();
            let width = w.eval(u);
            assert_relative_eq!(m.det_g, width * width, epsilon = 1e-13);
            // Gram determinant from the embedding Jacobian columns.
            let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let det =
                dot(m.dxdu, m.dxdu) * dot(m.dxdv, m.dxdv) - dot(m.dxdu, m.dxdv).powi(2);
            assert_relative_eq!(m.det_g, det, epsilon = 1e-12);
            // det g <= |x_u|² det g_v, with equality iff the sections are
            // orthogonal to the sweep.
            assert!(m.det_g <= dot(m.dxdu, m.dxdu) * m.det_gv + 1e-12);
            // c enters div U not at all: div U = w'/w.
            assert_relative_eq!(m.div_u, w.deriv(u) / width, epsilon = 1e-13);
            let _ = &c;
        }
    }

    #[test]
    fn div_u_vanishes_at_width_extremum() {
        let spec = ChannelSpec::parametric(
            FunctionExpr::constant(0.0),
            FunctionExpr::sinusoid(1.0, 0.2, 1.0, 0.0),
            [0.0, PI],
        )
        .unwrap();
        let m = metric_at(&spec, PI / 2.0, [0.31, 0.0]).unwrap();
        assert_abs_diff_eq!(m.div_u, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        assert!(matches!(
            metric_at(&strip, 1.5, [0.0, 0.0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(metric_at(&strip, 0.5, [0.7, 0.0]).is_err());
    }

    #[test]
    fn quadrature_weights_sum_to_section_measure() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let grid = QuadratureGrid::new(&strip, 4, 12).unwrap();
        assert_relative_eq!(grid.section_weights().iter().sum::<f64>(), 1.0, epsilon = 1e-13);

        let tube = ChannelSpec::tube(FunctionExpr::constant(1.0), [0.0, 1.0]).unwrap();
        let grid = QuadratureGrid::new(&tube, 4, 8).unwrap();
        assert_relative_eq!(
            grid.section_weights().iter().sum::<f64>(),
            2.0 * PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn strip_profiles_are_unity() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let grid = QuadratureGrid::new(&strip, 9, 8).unwrap();
        for p in [
            sigma(&strip, &grid).unwrap(),
            area(&strip, &grid).unwrap(),
            flux_grad_u(&strip, &grid).unwrap(),
        ] {
            for &v in p.values() {
                assert_relative_eq!(v, 1.0, epsilon = 1e-13);
            }
        }
        let g = cross_section_density(
            &flux_grad_u(&strip, &grid).unwrap(),
            &area(&strip, &grid).unwrap(),
        )
        .unwrap();
        for &v in g.values() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn parametric_profiles_collapse_to_width() {
        let spec = sinusoid_channel();
        let w = FunctionExpr::sinusoid(1.0, 0.3, 2.0 * PI, 0.0);
        let grid = QuadratureGrid::new(&spec, 33, 6).unwrap();
        let s = sigma(&spec, &grid).unwrap();
        let a = area(&spec, &grid).unwrap();
        let f = flux_grad_u(&spec, &grid).unwrap();
        for (i, &u) in grid.u().iter().enumerate() {
            let width = w.eval(u);
            assert_relative_eq!(s.values()[i], width, max_relative = 1e-12);
            assert_relative_eq!(a.values()[i], width, max_relative = 1e-12);
            assert_relative_eq!(f.values()[i], width, max_relative = 1e-12);
        }
    }

    #[test]
    fn wedge_profiles_match_conformal_closed_forms() {
        let dv = PI / 6.0;
        let spec = wedge(dv);
        let grid = QuadratureGrid::new(&spec, 17, 8).unwrap();
        let s = sigma(&spec, &grid).unwrap();
        let a = area(&spec, &grid).unwrap();
        let f = flux_grad_u(&spec, &grid).unwrap();
        let g = cross_section_density(&f, &a).unwrap();
        for (i, &u) in grid.u().iter().enumerate() {
            assert_relative_eq!(s.values()[i], (2.0 * u).exp() * dv, max_relative = 1e-12);
            assert_relative_eq!(a.values()[i], u.exp() * dv, max_relative = 1e-12);
            assert_relative_eq!(f.values()[i], dv, max_relative = 1e-12);
            assert_relative_eq!(g.values()[i], (-u).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn tube_profiles_are_pi_r_squared() {
        let spec = ChannelSpec::tube(
            FunctionExpr::sinusoid(1.0, 0.2, 2.0, 0.0),
            [0.0, 1.0],
        )
        .unwrap();
        let r = FunctionExpr::sinusoid(1.0, 0.2, 2.0, 0.0);
        let grid = QuadratureGrid::new(&spec, 9, 12).unwrap();
        let s = sigma(&spec, &grid).unwrap();
        let a = area(&spec, &grid).unwrap();
        let f = flux_grad_u(&spec, &grid).unwrap();
        for (i, &u) in grid.u().iter().enumerate() {
            let expect = PI * r.eval(u).powi(2);
            assert_relative_eq!(s.values()[i], expect, max_relative = 1e-12);
            assert_relative_eq!(a.values()[i], expect, max_relative = 1e-12);
            assert_relative_eq!(f.values()[i], expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn volume_of_unit_strip() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let grid = QuadratureGrid::new(&strip, 33, 4).unwrap();
        assert_relative_eq!(volume(&strip, &grid, 1.0).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(volume(&strip, &grid, 0.0).unwrap(), 0.0);
        assert!(volume(&strip, &grid, 1.5).is_err());
    }

    #[test]
    fn wedge_volume_matches_closed_form() {
        let dv = PI / 6.0;
        let spec = wedge(dv);
        let grid = QuadratureGrid::new(&spec, 257, 4).unwrap();
        for u in [0.3f64, 0.7, 1.0] {
            let exact = dv * ((2.0 * u).exp() - 1.0) / 2.0;
            assert_relative_eq!(volume(&spec, &grid, u).unwrap(), exact, max_relative = 2e-5);
        }
        // ν(b) equals the quadrature of σ over the whole range.
        let nu = volume_profile(&spec, &grid).unwrap();
        assert_relative_eq!(
            nu.values()[256],
            volume(&spec, &grid, 1.0).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn volume_derivative_matches_sigma() {
        let spec = sinusoid_channel();
        let grid = QuadratureGrid::new(&spec, 257, 8).unwrap();
        let nu = volume_profile(&spec, &grid).unwrap();
        let s = sigma(&spec, &grid).unwrap();
        let d = nu.derivative();
        let err: f64 = d
            .values()
            .iter()
            .zip(s.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // O(Δu²) with Δu = 1/256.
        assert!(err < 5e-4, "max |dν/du - σ| = {err}");
    }

    #[test]
    fn scaled_flux_factors_through_section_constants() {
        let spec = sinusoid_channel();
        let grid = QuadratureGrid::new(&spec, 17, 6).unwrap();
        let s = sigma(&spec, &grid).unwrap();

        let ones = grid.sample(|_, _| 1.0);
        let f1 = flux_scaled_u(&spec, &grid, &ones).unwrap();
        for (a, b) in f1.values().iter().zip(s.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }

        let with_u = grid.sample(|u, _| u);
        let fu = flux_scaled_u(&spec, &grid, &with_u).unwrap();
        for ((got, &u), sig) in fu.values().iter().zip(grid.u()).zip(s.values()) {
            assert_relative_eq!(*got, u * sig, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn odd_section_field_has_zero_flux_on_strip() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let grid = QuadratureGrid::new(&strip, 5, 8).unwrap();
        let odd = grid.sample(|_, v| v[0]);
        let f = flux_scaled_u(&strip, &grid, &odd).unwrap();
        for &v in f.values() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn lemma_identity_for_dsigma_du() {
        // dσ/du = ∫ (∇·U) det(g)^{1/2} dv, checked with a tight-step
        // centered difference of the quadrature σ.
        let spec = sinusoid_channel();
        let grid = QuadratureGrid::new(&spec, 257, 8).unwrap();
        let h = 1e-5;
        for &u in &grid.u()[1..256] {
            let fd = (sigma_at(&spec, &grid, u + h).unwrap()
                - sigma_at(&spec, &grid, u - h).unwrap())
                / (2.0 * h);
            let integral = div_u_section_integral(&spec, &grid, u).unwrap();
            assert_abs_diff_eq!(fd, integral, epsilon = 1e-8);
        }
    }

    #[test]
    fn reparametrize_identity_and_scaling() {
        let strip = ChannelSpec::strip([0.0, 1.0]);

        let same = reparametrize(&strip, FunctionExpr::polynomial([0.0, 1.0])).unwrap();
        let grid = QuadratureGrid::new(&same, 9, 4).unwrap();
        let s = sigma(&same, &grid).unwrap();
        for &v in s.values() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-10);
        }

        let doubled = reparametrize(&strip, FunctionExpr::polynomial([0.0, 2.0])).unwrap();
        assert_eq!(doubled.u_range(), [0.0, 2.0]);
        let grid = QuadratureGrid::new(&doubled, 9, 4).unwrap();
        let s = sigma(&doubled, &grid).unwrap();
        for &v in s.values() {
            assert_relative_eq!(v, 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn volume_parametrization_flattens_sigma() {
        // Relabelling by ν itself gives σ ≡ 1.
        let spec = sinusoid_channel();
        let grid = QuadratureGrid::new(&spec, 129, 8).unwrap();
        let nu = volume_profile(&spec, &grid).unwrap();
        let f = FunctionExpr::tabulated(nu.u().to_vec(), nu.values().to_vec());
        let by_volume = reparametrize(&spec, f).unwrap();
        let new_grid = QuadratureGrid::new(&by_volume, 33, 8).unwrap();
        let s = sigma(&by_volume, &new_grid).unwrap();
        for &v in &s.values()[1..32] {
            assert_relative_eq!(v, 1.0, max_relative = 2e-4);
        }
    }

    #[test]
    fn reparametrization_leaves_flux_sigma_product_invariant() {
        let spec = sinusoid_channel();
        let f = FunctionExpr::polynomial([0.0, 1.0, 0.0, 0.15]);
        let mapped = reparametrize(&spec, f.clone()).unwrap();

        let grid = QuadratureGrid::new(&spec, 65, 8).unwrap();
        let s = sigma(&spec, &grid).unwrap();
        let flux = flux_grad_u(&spec, &grid).unwrap();

        let new_nodes: Vec<f64> = grid.u().iter().map(|&u| f.eval(u)).collect();
        let new_grid = QuadratureGrid::with_u_nodes(&mapped, new_nodes, 8).unwrap();
        let s2 = sigma(&mapped, &new_grid).unwrap();
        let flux2 = flux_grad_u(&mapped, &new_grid).unwrap();

        for i in 0..grid.n_u() {
            let before = flux.values()[i] * s.values()[i];
            let after = flux2.values()[i] * s2.values()[i];
            assert_relative_eq!(before, after, max_relative = 1e-8);
        }
    }

    #[test]
    fn relabelled_divergence_matches_log_det_derivative() {
        // ∇·U = ½ ∂_u log det g must hold through the relabelling chain
        // (inverse map, first and second derivatives of f); check it against
        // a tight-step finite difference of the determinant itself.
        let spec = sinusoid_channel();
        let f = FunctionExpr::polynomial([0.0, 1.0, 0.2, 0.15]);
        let mapped = reparametrize(&spec, f).unwrap();
        let h = 1e-6;
        for &(u, v) in &[(0.3, 0.1), (0.7, -0.4), (1.1, 0.45)] {
            let m = metric_at(&mapped, u, [v, 0.0]).unwrap();
            let plus = metric_at(&mapped, u + h, [v, 0.0]).unwrap();
            let minus = metric_at(&mapped, u - h, [v, 0.0]).unwrap();
            let fd = 0.5 * (plus.det_g.ln() - minus.det_g.ln()) / (2.0 * h);
            assert_relative_eq!(m.div_u, fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn rejects_nonpositive_width() {
        let bad = ChannelSpec::parametric(
            FunctionExpr::constant(0.0),
            FunctionExpr::sinusoid(0.2, 0.5, 2.0 * PI, 0.0),
            [0.0, 1.0],
        );
        assert!(matches!(bad, Err(Error::Validation { .. })));
    }

    #[test]
    fn non_finite_integrand_reports_location() {
        // A width that stays positive but overflows w² to infinity inside
        // the range trips the quadrature guard, not a panic.
        let spec = ChannelSpec::Parametric2d {
            c: FunctionExpr::constant(0.0),
            w: FunctionExpr::polynomial([1.0, 1e308]),
            u_range: [0.0, 1.0],
        };
        let grid = QuadratureGrid::new(&spec, 5, 4).unwrap();
        match sigma(&spec, &grid) {
            Err(Error::NonFinite { location }) => {
                assert!(location.contains("sigma"), "location: {location}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonmonotone_reparametrization() {
        let strip = ChannelSpec::strip([0.0, 1.0]);
        let bad = reparametrize(&strip, FunctionExpr::sinusoid(0.0, 1.0, 10.0, 0.0));
        assert!(matches!(bad, Err(Error::Precondition(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = sinusoid_channel();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"type\":\"parametric2d\""));
        let back: ChannelSpec = serde_json::from_str(&json).unwrap();
        let grid = QuadratureGrid::new(&back, 5, 4).unwrap();
        let s1 = sigma(&spec, &grid).unwrap();
        let s2 = sigma(&back, &grid).unwrap();
        for (a, b) in s1.values().iter().zip(s2.values()) {
            assert_eq!(a, b);
        }

        let wedge_spec = wedge(0.5);
        let json = serde_json::to_string(&wedge_spec).unwrap();
        assert!(json.contains("\"map\":\"log-wedge\""), "{json}");
        let _: ChannelSpec = serde_json::from_str(&json).unwrap();
    }
}
