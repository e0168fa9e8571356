//! The guide in `book/` is the narrative documentation of this workspace,
//! and its code listings must keep compiling against the real API. mdbook
//! cannot run listings against a local crate, so each chapter is included
//! here as a doc comment: `cargo test -p channelfx-book` (or a plain
//! `cargo test --workspace`) then executes every snippet as a doctest. A
//! listing that drifts from the library breaks the build, not the reader.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/channels.md")]
pub mod channels {}

#[doc = include_str!("../../../book/src/coefficients.md")]
pub mod coefficients {}

#[doc = include_str!("../../../book/src/natural-projection.md")]
pub mod natural_projection {}

#[doc = include_str!("../../../book/src/conjugate-channels.md")]
pub mod conjugate_channels {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
