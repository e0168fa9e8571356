//! The run configuration: one JSON file, field-for-field overridable by
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use channelfx::{ChannelSpec, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Channel definition; may also arrive via `--spec file.json`.
    pub spec: Option<ChannelSpec>,
    pub d0: f64,
    pub grid: GridConfig,
    /// Relative residual target of the harmonic solve.
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Lateral data [h_a, h_b] of the natural projection.
    pub bc: [f64; 2],
    pub sim: SimConfig,
    /// Refinement ladder for `sweep`.
    pub sweep_levels: Vec<[usize; 2]>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spec: None,
            d0: 1.0,
            grid: GridConfig::default(),
            tol: 1e-10,
            max_iter: None,
            bc: [0.0, 1.0],
            sim: SimConfig::default(),
            sweep_levels: vec![[32, 16], [64, 32], [128, 64]],
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_u: usize,
    pub n_v: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_u: 64, n_v: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: SimMode,
    pub dt: f64,
    pub t_end: f64,
    pub particles: usize,
    pub seed: u64,
    /// End condition of the reduced 1-D solver.
    pub bc: SimBc,
    pub scheme: Scheme,
    /// Keep every k-th stamp in the emitted series.
    pub store_every: usize,
    /// Drive the 1-D solver with the finite-rate coefficient instead of the
    /// infinite-rate one.
    pub finite_rate: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: SimMode::Effective,
            dt: 1e-3,
            t_end: 0.1,
            particles: 10_000,
            seed: 42,
            bc: SimBc::Reflecting,
            scheme: Scheme::Implicit,
            store_every: 1,
            finite_rate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Effective,
    Full,
    Particles,
    Mfpt,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "values")]
pub enum SimBc {
    Reflecting,
    Absorbing,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Implicit,
    Explicit,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::validation("/", format!("cannot parse {}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn spec(&self) -> Result<&ChannelSpec> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::validation("/spec", "no channel definition given"))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(spec) = &self.spec {
            spec.validate()?;
        }
        if !(self.d0 > 0.0) {
            return Err(Error::validation("/d0", "base diffusion constant must be positive"));
        }
        check_resolution(self.grid.n_u, "/grid/n_u")?;
        check_resolution(self.grid.n_v, "/grid/n_v")?;
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::validation("/tol", "tolerance must lie in (0, 1)"));
        }
        if !(self.sim.dt > 0.0) {
            return Err(Error::validation("/sim/dt", "time step must be positive"));
        }
        if !(self.sim.t_end >= self.sim.dt) {
            return Err(Error::validation("/sim/t_end", "horizon must cover one step"));
        }
        if self.sim.store_every == 0 {
            return Err(Error::validation("/sim/store_every", "must be at least 1"));
        }
        for (k, level) in self.sweep_levels.iter().enumerate() {
            check_resolution(level[0], &format!("/sweep_levels/{k}/0"))?;
            check_resolution(level[1], &format!("/sweep_levels/{k}/1"))?;
        }
        Ok(())
    }
}

fn check_resolution(n: usize, pointer: &str) -> Result<()> {
    if !n.is_power_of_two() || !(8..=1024).contains(&n) {
        return Err(Error::validation(
            pointer,
            format!("resolution {n} must be a power of two between 8 and 1024"),
        ));
    }
    Ok(())
}

/// Parse "NUxNV".
pub fn parse_grid(text: &str) -> std::result::Result<GridConfig, String> {
    let (a, b) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NUxNV, got {text}"))?;
    Ok(GridConfig {
        n_u: a.trim().parse().map_err(|e| format!("{e}"))?,
        n_v: b.trim().parse().map_err(|e| format!("{e}"))?,
    })
}

/// Parse "a,b".
pub fn parse_pair(text: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected a,b, got {text}"))?;
    Ok([
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ])
}

/// A refinement ladder as one flag value (clap would otherwise treat a bare
/// `Vec` as a repeated argument).
#[derive(Debug, Clone)]
pub struct Levels(pub Vec<[usize; 2]>);

/// Parse "32x16,64x32,...".
pub fn parse_levels(text: &str) -> std::result::Result<Levels, String> {
    text.split(',')
        .map(|part| parse_grid(part).map(|g| [g.n_u, g.n_v]))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Levels)
}
