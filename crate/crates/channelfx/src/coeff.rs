//! Effective diffusion coefficients for the infinite transversal rate.
//!
//! When the density equilibrates instantly along each cross section, the
//! reduced 1-D equation carries the coefficient
//!
//! ```text
//!   D(u)   = D₀ · F_∇u(u) · σ(u)        (used with the line metric g = σ²)
//!   D_f(u) = D₀ · F_∇u(u) / σ(u)        (generalized Fick–Jacobs form, g = 1)
//! ```
//!
//! related by `D = D_f σ²`. The two describe the same physics with different
//! bookkeeping: D belongs with the metric gradient/divergence, D_f with the
//! plain ∂/∂u. The emitters here always write both so neither is used with
//! the wrong metric.

use std::io::Write;

use crate::error::Result;
use crate::field::Field2D;
use crate::geom::{self, ChannelSpec, QuadratureGrid};
use crate::profile::ScalarProfile;

/// Per-u record of every assembled quantity.
#[derive(Debug, Clone)]
pub struct EffectiveCoefficients {
    pub d0: f64,
    pub sigma: ScalarProfile,
    pub area: ScalarProfile,
    pub density: ScalarProfile,
    pub flux_grad_u: ScalarProfile,
    pub d_inf: ScalarProfile,
    pub d_fj: ScalarProfile,
    /// Finite-rate coefficient, when a harmonic solve provided one.
    pub d_fin: Option<ScalarProfile>,
    /// Stationary section flux from the same solve.
    pub j: Option<f64>,
}

/// D(u) = D₀ F_∇u σ, the coefficient paired with the metric g = σ².
pub fn effective_d_infinite(
    d0: f64,
    flux: &ScalarProfile,
    sigma: &ScalarProfile,
) -> Result<ScalarProfile> {
    flux.zip_with(sigma, "length^2/time", |f, s| d0 * f * s)
}

/// D_f(u) = D₀ F_∇u / σ, the generalized Fick–Jacobs coefficient.
pub fn fick_jacobs_d(
    d0: f64,
    flux: &ScalarProfile,
    sigma: &ScalarProfile,
) -> Result<ScalarProfile> {
    flux.zip_with(sigma, "length^2/time", |f, s| d0 * f / s)
}

/// Effective concentration of a field P: p(u) = F_{PU}(u) / σ(u).
///
/// Transforms as a function under reparametrization; a field constant on
/// sections projects to itself.
pub fn effective_concentration(
    p: &Field2D,
    spec: &ChannelSpec,
    grid: &QuadratureGrid,
) -> Result<ScalarProfile> {
    let flux = geom::flux_scaled_u(spec, grid, p)?;
    let sigma = geom::sigma(spec, grid)?;
    flux.zip_with(&sigma, "concentration", |f, s| f / s)
}

/// The density-convention concentration p_f(u) = σ(u) p(u) = F_{PU}(u),
/// common in the literature; transforms with a 1/f' factor under u ↦ f(u).
pub fn literature_concentration(
    p: &Field2D,
    spec: &ChannelSpec,
    grid: &QuadratureGrid,
) -> Result<ScalarProfile> {
    geom::flux_scaled_u(spec, grid, p)
}

/// Run the geometric pipeline and assemble both coefficients.
pub fn assemble(d0: f64, spec: &ChannelSpec, grid: &QuadratureGrid) -> Result<EffectiveCoefficients> {
    let sigma = geom::sigma(spec, grid)?;
    let area = geom::area(spec, grid)?;
    let flux = geom::flux_grad_u(spec, grid)?;
    let density = geom::cross_section_density(&flux, &area)?;
    let d_inf = effective_d_infinite(d0, &flux, &sigma)?;
    let d_fj = fick_jacobs_d(d0, &flux, &sigma)?;
    Ok(EffectiveCoefficients {
        d0,
        sigma,
        area,
        density,
        flux_grad_u: flux,
        d_inf,
        d_fj,
        d_fin: None,
        j: None,
    })
}

impl EffectiveCoefficients {
    /// CSV with the fixed column set `u,sigma,area,G,flux_grad_u,D_inf,D_fj`
    /// at 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "u,sigma,area,G,flux_grad_u,D_inf,D_fj")?;
        for (i, &u) in self.sigma.u().iter().enumerate() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                u,
                self.sigma.values()[i],
                self.area.values()[i],
                self.density.values()[i],
                self.flux_grad_u.values()[i],
                self.d_inf.values()[i],
                self.d_fj.values()[i],
            )?;
        }
        Ok(())
    }
}
