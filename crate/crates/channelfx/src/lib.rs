//! Effective 1-D diffusion on channels.
//!
//! A channel is a region swept by sliding a cross section along a generating
//! field. Reducing the diffusion equation inside it to a single spatial
//! variable produces an effective diffusion coefficient; this crate computes
//! that coefficient from the channel geometry in both the infinite and the
//! finite transversal equilibration regimes, and validates the reduction with
//! closed-form conjugate-coordinate channels, conservative PDE solvers and a
//! Brownian-particle oracle.
//!
//! The module layout mirrors the pipeline:
//!
//! * [`expr`], [`profile`], [`field`], [`quad`] — scalar functions, sampled
//!   profiles, 2-D fields and quadrature rules.
//! * [`geom`] — channel definitions, the induced metric and the geometric
//!   profiles (σ, A, F_∇u, ν).
//! * [`coeff`] — the assembled effective diffusion coefficients in the
//!   infinite-rate regime, in both bookkeeping conventions.
//! * [`harmonic`] — the discrete Laplace–Beltrami solve for the natural
//!   projection and the finite-rate coefficient built from it.
//! * [`conjugate`] — closed-form channels used as ground truth.
//! * [`sim`] — time-dependent 1-D/2-D solvers, projection, and the seeded
//!   Brownian first-passage oracle.
//!
//! ```
//! use channelfx::{coeff, ChannelSpec, FunctionExpr, QuadratureGrid};
//!
//! // A planar pore of width 1 + 0.3 sin(2πu) around a straight axis.
//! let spec = ChannelSpec::parametric(
//!     FunctionExpr::constant(0.0),
//!     FunctionExpr::sinusoid(1.0, 0.3, 2.0 * std::f64::consts::PI, 0.0),
//!     [0.0, 1.0],
//! )?;
//! let grid = QuadratureGrid::new(&spec, 65, 8)?;
//! let c = coeff::assemble(1.0, &spec, &grid)?;
//!
//! // The two conventions differ by the squared volume density.
//! for i in 0..grid.n_u() {
//!     let ratio = c.d_inf.values()[i] / (c.d_fj.values()[i] * c.sigma.values()[i].powi(2));
//!     assert!((ratio - 1.0).abs() < 1e-12);
//! }
//! # Ok::<(), channelfx::Error>(())
//! ```

// Negated comparisons like `!(x > 0.0)` are deliberate NaN guards, and
// index loops over (i, j) grids read better than iterator chains here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coeff;
pub mod conjugate;
pub mod error;
pub mod expr;
pub mod field;
pub mod geom;
pub mod harmonic;
pub mod profile;
pub mod quad;
pub mod sim;

pub use error::{Error, Result};
pub use expr::FunctionExpr;
pub use field::Field2D;
pub use geom::{ChannelSpec, MetricSample, QuadratureGrid};
pub use profile::ScalarProfile;
