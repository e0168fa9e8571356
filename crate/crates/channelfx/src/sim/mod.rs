//! Time-dependent solvers and the stochastic cross-check.
//!
//! Three independent routes to the same physics live here:
//!
//! * a conservative 1-D solver for the reduced equation
//!   σ ∂p/∂t = ∂_u((D/σ) ∂_u p), in the metric-convention coefficient D;
//! * the full 2-D diffusion ∂P/∂t = D₀ Δ P on the channel, sharing the
//!   assembly of [`crate::harmonic`], plus the section projection that maps
//!   its solutions onto effective concentrations;
//! * a seeded Brownian walker measuring mean first passage times directly in
//!   embedding space.
//!
//! Both grid solvers use backward Euler by default with the forward step kept
//! for testing; either way the update is in discrete divergence form, so with
//! reflecting ends the total mass ∫ p σ du is conserved to round-off.

pub mod particles;

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::geom::ChannelSpec;
use crate::harmonic::{assemble_operator, CsrMatrix, EndCondition, SolverGrid, StencilMode};
use crate::profile::ScalarProfile;

pub use particles::{
    brownian_mfpt, evolve_ensemble, EnsembleHistory, MfptConfig, MfptEstimate, ParticleEnsemble,
};

/// End conditions of the reduced 1-D equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bc1d {
    Reflecting,
    Absorbing,
    Fixed { left: f64, right: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeScheme {
    #[default]
    Implicit,
    Explicit,
}

/// Effective concentration frames p(·, t_k) on a fixed u-grid.
#[derive(Debug, Clone)]
pub struct TimeSeries1D {
    pub u: Vec<f64>,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl TimeSeries1D {
    pub fn push_frame(&mut self, t: f64, frame: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::Precondition("time stamps must strictly increase".into()));
            }
        }
        if frame.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { location: format!("frame at t = {t}") });
        }
        self.times.push(t);
        self.frames.push(frame);
        Ok(())
    }

    /// ∫ p σ du of one frame by the solver's cell rule.
    pub fn mass(&self, sigma: &[f64], k: usize) -> f64 {
        let du = self.u[1] - self.u[0];
        self.frames[k]
            .iter()
            .zip(sigma)
            .map(|(p, s)| p * s * du)
            .sum()
    }

    /// CSV: `t` column followed by one column per u-node.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(self.u.iter().map(|u| format!("u={u:.6}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, frame) in self.times.iter().zip(&self.frames) {
            let row: Vec<String> = std::iter::once(format!("{t:.16e}"))
                .chain(frame.iter().map(|v| format!("{v:.16e}")))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// The reduced equation on a uniform cell grid.
///
/// Cells carry p_i; faces carry transmissibilities κ = (D/σ)_face / Δu, with
/// harmonic-mean face values inside and half-cell coefficients at Dirichlet
/// ends. `kappa[0]` and `kappa[n]` are the end faces (zero when reflecting).
#[derive(Debug, Clone)]
pub struct Effective1dSolver {
    u: Vec<f64>,
    du: f64,
    sigma: Vec<f64>,
    kappa: Vec<f64>,
    bc: Bc1d,
}

impl Effective1dSolver {
    pub fn new(d: &ScalarProfile, sigma: &ScalarProfile, bc: Bc1d) -> Result<Self> {
        d.check_same_grid(sigma, "Effective1dSolver::new")?;
        let u = d.u().to_vec();
        let n = u.len();
        let du = u[1] - u[0];
        if u.windows(2).any(|p| ((p[1] - p[0]) - du).abs() > 1e-9 * du) {
            return Err(Error::Precondition("1-D solver needs a uniform grid".into()));
        }
        if d.min_value() <= 0.0 || sigma.min_value() <= 0.0 {
            return Err(Error::Precondition("D and sigma must be positive".into()));
        }
        let w: Vec<f64> = d
            .values()
            .iter()
            .zip(sigma.values())
            .map(|(di, si)| di / si)
            .collect();
        let mut kappa = vec![0.0; n + 1];
        for i in 0..n - 1 {
            kappa[i + 1] = 2.0 * w[i] * w[i + 1] / (w[i] + w[i + 1]) / du;
        }
        match bc {
            Bc1d::Reflecting => {}
            Bc1d::Absorbing | Bc1d::Fixed { .. } => {
                kappa[0] = 2.0 * w[0] / du;
                kappa[n] = 2.0 * w[n - 1] / du;
            }
        }
        Ok(Effective1dSolver {
            u,
            du,
            sigma: sigma.values().to_vec(),
            kappa,
            bc,
        })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    fn boundary_values(&self) -> (f64, f64) {
        match self.bc {
            Bc1d::Fixed { left, right } => (left, right),
            _ => (0.0, 0.0),
        }
    }

    /// Cell masses σ_i Δu.
    fn cell_mass(&self, i: usize) -> f64 {
        self.sigma[i] * self.du
    }

    pub fn mass(&self, p: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, pi)| pi * self.cell_mass(i))
            .sum()
    }

    /// Face fluxes F_{i+1/2} = -κ (p_right - p_left), including end faces.
    pub fn face_fluxes(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (left, right) = self.boundary_values();
        let mut f = vec![0.0; n + 1];
        f[0] = -self.kappa[0] * (p[0] - left);
        for i in 0..n - 1 {
            f[i + 1] = -self.kappa[i + 1] * (p[i + 1] - p[i]);
        }
        f[n] = -self.kappa[n] * (right - p[n - 1]);
        f
    }

    /// Largest forward-Euler-stable step.
    pub fn stable_dt(&self) -> f64 {
        let mut bound = 0.0f64;
        for i in 0..self.n() {
            bound = bound.max((self.kappa[i] + self.kappa[i + 1]) / self.cell_mass(i));
        }
        1.0 / bound
    }

    pub fn step_implicit(&self, p: &mut [f64], dt: f64) {
        let n = self.n();
        let (left, right) = self.boundary_values();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let m = self.cell_mass(i) / dt;
            diag[i] = m + self.kappa[i] + self.kappa[i + 1];
            if i > 0 {
                lower[i] = -self.kappa[i];
            }
            if i + 1 < n {
                upper[i] = -self.kappa[i + 1];
            }
            rhs[i] = m * p[i];
        }
        rhs[0] += self.kappa[0] * left;
        rhs[n - 1] += self.kappa[n] * right;
        thomas(&lower, &mut diag, &upper, &mut rhs);
        p.copy_from_slice(&rhs);
    }

    pub fn step_explicit(&self, p: &mut [f64], dt: f64) -> Result<()> {
        if dt > self.stable_dt() {
            return Err(Error::Parameter(format!(
                "explicit step dt = {dt:.3e} exceeds the stability bound {:.3e}",
                self.stable_dt()
            )));
        }
        let f = self.face_fluxes(p);
        for i in 0..self.n() {
            p[i] += dt * (f[i] - f[i + 1]) / self.cell_mass(i);
        }
        Ok(())
    }

    /// Direct steady state (meaningful with fixed-value ends).
    pub fn steady_state(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if matches!(self.bc, Bc1d::Reflecting) {
            return Err(Error::Precondition(
                "steady state needs value-setting end conditions".into(),
            ));
        }
        let (left, right) = self.boundary_values();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            diag[i] = self.kappa[i] + self.kappa[i + 1];
            if i > 0 {
                lower[i] = -self.kappa[i];
            }
            if i + 1 < n {
                upper[i] = -self.kappa[i + 1];
            }
        }
        rhs[0] += self.kappa[0] * left;
        rhs[n - 1] += self.kappa[n] * right;
        thomas(&lower, &mut diag, &upper, &mut rhs);
        Ok(rhs)
    }
}

/// In-place tridiagonal solve; the answer lands in `rhs`.
fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for i in 1..n {
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

/// March the reduced equation from `p0` to `t_end`, storing every stamp.
pub fn solve_effective_1d(
    d: &ScalarProfile,
    sigma: &ScalarProfile,
    p0: &ScalarProfile,
    dt: f64,
    t_end: f64,
    bc: Bc1d,
    scheme: TimeScheme,
) -> Result<TimeSeries1D> {
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::Parameter("need 0 < dt <= t_end".into()));
    }
    let solver = Effective1dSolver::new(d, sigma, bc)?;
    p0.check_same_grid(d, "solve_effective_1d")?;
    let mut p = p0.values().to_vec();
    let mut series = TimeSeries1D {
        u: solver.u.clone(),
        times: Vec::new(),
        frames: Vec::new(),
    };
    series.push_frame(0.0, p.clone())?;
    let steps = (t_end / dt).round().max(1.0) as usize;
    for k in 1..=steps {
        match scheme {
            TimeScheme::Implicit => solver.step_implicit(&mut p, dt),
            TimeScheme::Explicit => solver.step_explicit(&mut p, dt)?,
        }
        series.push_frame(k as f64 * dt, p.clone())?;
    }
    Ok(series)
}

/// The full equation on the channel, reflecting everywhere.
#[derive(Debug, Clone)]
pub struct Full2dSolver {
    pub grid: SolverGrid,
    stiffness: CsrMatrix,
    /// Cell masses μ_ij Δu Δv.
    mass: Vec<f64>,
}

impl Full2dSolver {
    pub fn new(spec: &ChannelSpec, grid: &SolverGrid) -> Result<Self> {
        let system = assemble_operator(spec, grid, EndCondition::Neumann, StencilMode::NinePoint)?;
        let mut mass = vec![0.0; grid.cells()];
        for i in 0..grid.n_u {
            for j in 0..grid.n_v {
                mass[grid.index(i, j)] = system.mu.get(i, j) * grid.du * grid.dv;
            }
        }
        Ok(Full2dSolver { grid: *grid, stiffness: system.matrix, mass })
    }

    pub fn mass_of(&self, p: &Field2D) -> f64 {
        p.data().iter().zip(&self.mass).map(|(x, m)| x * m).sum()
    }

    /// Midpoint-rule volume density per section, Σ_j μ_ij Δv.
    pub fn section_sigma(&self) -> ScalarProfile {
        let g = &self.grid;
        let values: Vec<f64> = (0..g.n_u)
            .map(|i| {
                (0..g.n_v)
                    .map(|j| self.mass[g.index(i, j)] / g.du)
                    .sum()
            })
            .collect();
        ScalarProfile::new(g.u_centers(), values, "volume/u").expect("solver grid is valid")
    }

    /// One backward-Euler step, solved in increment form:
    /// (M + dt D₀ A) δ = -dt D₀ A P,  P ← P + δ.
    ///
    /// The solver tolerance then applies to the small increment, so mass
    /// drift per step scales with dt‖AP‖ rather than ‖P‖.
    pub fn step_implicit(&self, p: &mut Field2D, dt: f64, d0: f64, tol: f64) -> Result<usize> {
        let shifted = self.stiffness.scaled(dt * d0).add_diagonal(&self.mass);
        self.step_implicit_prefactored(&shifted, p, dt, d0, tol)
    }

    fn step_implicit_prefactored(
        &self,
        shifted: &CsrMatrix,
        p: &mut Field2D,
        dt: f64,
        d0: f64,
        tol: f64,
    ) -> Result<usize> {
        let n = p.data().len();
        let mut rhs = vec![0.0; n];
        self.stiffness.mul_vec(p.data(), &mut rhs);
        for r in &mut rhs {
            *r *= -dt * d0;
        }
        let sol = crate::harmonic::jacobi_pcg(shifted, &rhs, None, tol, 100_000)?;
        for (x, d) in p.data_mut().iter_mut().zip(&sol.x) {
            *x += d;
        }
        Ok(sol.iterations)
    }
}

/// March the full equation from `p0`, storing every stamp.
pub fn solve_full_2d(
    spec: &ChannelSpec,
    grid: &SolverGrid,
    p0: &Field2D,
    dt: f64,
    t_end: f64,
    d0: f64,
) -> Result<Vec<(f64, Field2D)>> {
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::Parameter("need 0 < dt <= t_end".into()));
    }
    p0.check_dims(grid.n_u, grid.n_v, "solve_full_2d")?;
    let solver = Full2dSolver::new(spec, grid)?;
    let shifted = solver.stiffness.scaled(dt * d0).add_diagonal(&solver.mass);
    let mut p = p0.clone();
    let mut frames = vec![(0.0, p.clone())];
    let steps = (t_end / dt).round().max(1.0) as usize;
    for k in 1..=steps {
        solver.step_implicit_prefactored(&shifted, &mut p, dt, d0, 1e-13)?;
        frames.push((k as f64 * dt, p.clone()));
    }
    Ok(frames)
}

/// Project full-equation frames to effective concentrations:
/// p(u) = Σ_j P μ / Σ_j μ per section. Mass is preserved stamp by stamp.
pub fn project_full(
    frames: &[(f64, Field2D)],
    spec: &ChannelSpec,
    grid: &SolverGrid,
) -> Result<TimeSeries1D> {
    let solver = Full2dSolver::new(spec, grid)?;
    let sigma = solver.section_sigma();
    let mut series = TimeSeries1D {
        u: grid.u_centers(),
        times: Vec::new(),
        frames: Vec::new(),
    };
    for (t, p) in frames {
        p.check_dims(grid.n_u, grid.n_v, "project_full")?;
        let mut frame = vec![0.0; grid.n_u];
        for i in 0..grid.n_u {
            let mut num = 0.0;
            for j in 0..grid.n_v {
                num += p.get(i, j) * solver.mass[grid.index(i, j)];
            }
            frame[i] = num / (sigma.values()[i] * grid.du);
        }
        series.push_frame(*t, frame)?;
    }
    Ok(series)
}

/// Mean first passage time of the reduced equation, reflecting at `a`,
/// absorbing at `b`, from a start at `a`:
///
/// ```text
///   τ = ∫_a^b  1/(D_f(s) σ(s))  ∫_a^s σ(r) dr  ds
/// ```
///
/// with `D_f` the plain-convention (Fick–Jacobs) coefficient.
pub fn mfpt_effective(
    d_f: &ScalarProfile,
    sigma: &ScalarProfile,
    a: f64,
    b: f64,
) -> Result<f64> {
    d_f.check_same_grid(sigma, "mfpt_effective")?;
    if !(a < b) {
        return Err(Error::Precondition("need a < b".into()));
    }
    if d_f.min_value() <= 0.0 || sigma.min_value() <= 0.0 {
        return Err(Error::Precondition("D and sigma must be positive".into()));
    }
    let n = 4096.max(4 * d_f.len());
    let h = (b - a) / n as f64;
    let mut inner = 0.0;
    let mut tau = 0.0;
    let mut prev_sigma = sigma.eval(a);
    let mut prev_integrand = 0.0;
    for k in 1..=n {
        let s = a + k as f64 * h;
        let sig = sigma.eval(s);
        inner += 0.5 * (prev_sigma + sig) * h;
        let integrand = inner / (d_f.eval(s) * sig);
        tau += 0.5 * (prev_integrand + integrand) * h;
        prev_sigma = sig;
        prev_integrand = integrand;
    }
    Ok(tau)
}
