//! The user guide, embedded chapter by chapter so every code sample in the
//! book compiles and runs under `cargo test --doc`. The same sources render
//! standalone with `mdbook build book/`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/spd-kernels.md")]
pub mod spd_kernels {}

#[doc = include_str!("../../../book/src/divergences.md")]
pub mod divergences {}

#[doc = include_str!("../../../book/src/lifted-horizon.md")]
pub mod lifted_horizon {}

#[doc = include_str!("../../../book/src/saddle-solver.md")]
pub mod saddle_solver {}

#[doc = include_str!("../../../book/src/monte-carlo.md")]
pub mod monte_carlo {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
