//! Channels carved out of the plane by a pair of harmonic conjugate
//! coordinates.
//!
//! A conformal map w = u + iv of the plane gives a channel
//! `{ v₁ ≤ v(x) ≤ v₂, a ≤ u(x) ≤ b }` whose walls are level sets of `v` and
//! whose sections are level sets of `u`. For such channels every profile has
//! a closed form in the conformal scale factor s = |dz/dw|:
//!
//! ```text
//!   dν/du(u) = ∫ s² dv        A(u) = ∫ s dv        F_∇u(u) = v₂ - v₁
//! ```
//!
//! and the stationary section flux is the constant J = D₀ (v₂ - v₁), so the
//! effective diffusion coefficient is D(u) = J · dν/du with no solver in the
//! loop. This module is the reference the quadrature and PDE pipelines are
//! tested against; it never calls into them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::ScalarProfile;
use crate::quad::integrate_adaptive;

/// Tolerance for the 1-D integrals backing the power-map profiles.
const PROFILE_QUAD_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    /// w = z: a straight strip of width v₂ - v₁.
    Strip,
    /// w = log z: u = log r, the wedge v₁ ≤ θ ≤ v₂ between two rays.
    LogWedge,
    /// w = z^α: a power wedge; α = 2 is the hyperbolic channel.
    Power,
}

/// A catalog conformal map with the channel's parameter rectangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateMap {
    #[serde(rename = "map")]
    pub kind: MapKind,
    /// Exponent of the power map; ignored by the other kinds.
    #[serde(default = "default_alpha", skip_serializing_if = "is_one")]
    pub alpha: f64,
    pub v_range: [f64; 2],
    pub u_range: [f64; 2],
}

fn default_alpha() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_one(x: &f64) -> bool {
    *x == 1.0
}

impl ConjugateMap {
    pub fn strip(v_range: [f64; 2], u_range: [f64; 2]) -> Self {
        ConjugateMap { kind: MapKind::Strip, alpha: 1.0, v_range, u_range }
    }

    pub fn log_wedge(v_range: [f64; 2], u_range: [f64; 2]) -> Self {
        ConjugateMap { kind: MapKind::LogWedge, alpha: 1.0, v_range, u_range }
    }

    pub fn power(alpha: f64, v_range: [f64; 2], u_range: [f64; 2]) -> Self {
        ConjugateMap { kind: MapKind::Power, alpha, v_range, u_range }
    }

    pub fn delta_v(&self) -> f64 {
        self.v_range[1] - self.v_range[0]
    }

    pub fn validate(&self, pointer: &str) -> Result<()> {
        let [v1, v2] = self.v_range;
        let [a, b] = self.u_range;
        if !(v1 < v2) {
            return Err(Error::validation(format!("{pointer}/v_range"), "need v1 < v2"));
        }
        if !(a < b) {
            return Err(Error::validation(format!("{pointer}/u_range"), "need a < b"));
        }
        if self.kind == MapKind::Power {
            if !(self.alpha > 0.0 && self.alpha <= 4.0) {
                return Err(Error::validation(
                    format!("{pointer}/alpha"),
                    "power map needs alpha in (0, 4]",
                ));
            }
            // Keep the rectangle away from w = 0 where the scale factor blows
            // up and the inverse branch folds.
            if self.alpha != 1.0 && a <= 0.0 {
                return Err(Error::validation(
                    format!("{pointer}/u_range"),
                    "power map needs u > 0",
                ));
            }
        }
        if self.kind == MapKind::LogWedge && self.delta_v() > 2.0 * std::f64::consts::PI {
            return Err(Error::validation(
                format!("{pointer}/v_range"),
                "wedge opening exceeds a full turn",
            ));
        }
        Ok(())
    }

    /// dz/dw of the inverse map as a complex number (re, im).
    pub fn dz_dw(&self, u: f64, v: f64) -> (f64, f64) {
        match self.kind {
            MapKind::Strip => (1.0, 0.0),
            MapKind::LogWedge => {
                // z = e^w
                let r = u.exp();
                (r * v.cos(), r * v.sin())
            }
            MapKind::Power => {
                // z = w^{1/α}, dz/dw = (1/α) w^{(1-α)/α}
                let beta = (1.0 - self.alpha) / self.alpha;
                let r = (u * u + v * v).sqrt();
                let theta = v.atan2(u);
                let modulus = r.powf(beta) / self.alpha;
                ((beta * theta).cos() * modulus, (beta * theta).sin() * modulus)
            }
        }
    }

    /// Conformal scale factor s = |dz/dw| = 1/|∇v|.
    pub fn scale(&self, u: f64, v: f64) -> f64 {
        match self.kind {
            MapKind::Strip => 1.0,
            MapKind::LogWedge => u.exp(),
            MapKind::Power => {
                let beta = (1.0 - self.alpha) / self.alpha;
                (u * u + v * v).powf(0.5 * beta) / self.alpha
            }
        }
    }

    /// Divergence of the generating field, 2 ∂ log s / ∂u.
    pub fn div_u(&self, u: f64, v: f64) -> f64 {
        match self.kind {
            MapKind::Strip => 0.0,
            MapKind::LogWedge => 2.0,
            MapKind::Power => 2.0 * (1.0 - self.alpha) / self.alpha * u / (u * u + v * v),
        }
    }

    /// Forward map (u(x), v(x)) at an embedding-space point.
    pub fn forward(&self, x: [f64; 2]) -> (f64, f64) {
        match self.kind {
            MapKind::Strip => (x[0], x[1]),
            MapKind::LogWedge => ((x[0] * x[0] + x[1] * x[1]).sqrt().ln(), x[1].atan2(x[0])),
            MapKind::Power => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let theta = x[1].atan2(x[0]);
                let ra = r.powf(self.alpha);
                ((self.alpha * theta).cos() * ra, (self.alpha * theta).sin() * ra)
            }
        }
    }

    /// f'(z) = du/dx₁ + i dv/dx₁ at an embedding-space point. The gradients
    /// of the conjugate pair follow from the Cauchy-Riemann equations:
    /// ∇u = (Re f', -Im f'), ∇v = (Im f', Re f').
    pub fn forward_deriv(&self, x: [f64; 2]) -> (f64, f64) {
        match self.kind {
            MapKind::Strip => (1.0, 0.0),
            MapKind::LogWedge => {
                // f'(z) = 1/z
                let r2 = x[0] * x[0] + x[1] * x[1];
                (x[0] / r2, -x[1] / r2)
            }
            MapKind::Power => {
                // f'(z) = α z^{α-1}
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let theta = x[1].atan2(x[0]);
                let m = self.alpha * r.powf(self.alpha - 1.0);
                let ang = (self.alpha - 1.0) * theta;
                (m * ang.cos(), m * ang.sin())
            }
        }
    }

    /// Embedding point of parameter coordinates (u, v).
    pub fn inverse(&self, u: f64, v: f64) -> [f64; 2] {
        match self.kind {
            MapKind::Strip => [u, v],
            MapKind::LogWedge => {
                let r = u.exp();
                [r * v.cos(), r * v.sin()]
            }
            MapKind::Power => {
                let r = (u * u + v * v).sqrt().powf(1.0 / self.alpha);
                let theta = v.atan2(u) / self.alpha;
                [r * theta.cos(), r * theta.sin()]
            }
        }
    }
}

/// Stationary section flux J = D₀ (v₂ - v₁).
pub fn conjugate_j(map: &ConjugateMap, d0: f64) -> f64 {
    d0 * map.delta_v()
}

/// Volume density dν/du(u) = ∫ s² dv at a single station.
pub fn conjugate_sigma_at(map: &ConjugateMap, u: f64) -> f64 {
    let [v1, v2] = map.v_range;
    match map.kind {
        MapKind::Strip => v2 - v1,
        MapKind::LogWedge => (2.0 * u).exp() * (v2 - v1),
        MapKind::Power => {
            integrate_adaptive(&|v| map.scale(u, v).powi(2), v1, v2, PROFILE_QUAD_TOL)
        }
    }
}

/// Section arc length A(u) = ∫ s dv at a single station.
pub fn conjugate_area_at(map: &ConjugateMap, u: f64) -> f64 {
    let [v1, v2] = map.v_range;
    match map.kind {
        MapKind::Strip => v2 - v1,
        MapKind::LogWedge => u.exp() * (v2 - v1),
        MapKind::Power => integrate_adaptive(&|v| map.scale(u, v), v1, v2, PROFILE_QUAD_TOL),
    }
}

/// Effective diffusion coefficient D(u) = J · dν/du; the infinite- and
/// finite-rate formulas coincide on these channels.
pub fn conjugate_d_at(map: &ConjugateMap, d0: f64, u: f64) -> f64 {
    conjugate_j(map, d0) * conjugate_sigma_at(map, u)
}

pub fn conjugate_sigma(map: &ConjugateMap, u_nodes: &[f64]) -> Result<ScalarProfile> {
    ScalarProfile::from_fn(u_nodes, "volume/u", |u| conjugate_sigma_at(map, u))
}

pub fn conjugate_area(map: &ConjugateMap, u_nodes: &[f64]) -> Result<ScalarProfile> {
    ScalarProfile::from_fn(u_nodes, "area", |u| conjugate_area_at(map, u))
}

pub fn conjugate_d(map: &ConjugateMap, d0: f64, u_nodes: &[f64]) -> Result<ScalarProfile> {
    ScalarProfile::from_fn(u_nodes, "length^2/time", |u| conjugate_d_at(map, d0, u))
}

/// Uniform inclusive grid over the map's u-range.
pub fn uniform_u_nodes(map: &ConjugateMap, n: usize) -> Vec<f64> {
    let [a, b] = map.u_range;
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
