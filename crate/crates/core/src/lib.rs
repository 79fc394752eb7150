//! Simulation and verification toolkit for a non-autonomous two-species
//! mutualism model driven by Brownian motion and compensated Poisson jumps.
//!
//! Each species follows
//!
//! ```text
//! dx = x(t-) [ (r1 - b1 x/(K1 + y) - e1 x) dt + a1 dW1 + ∫ g1(t,u) Ñ(dt,du) ]
//! dy = y(t-) [ (r2 - b2 y/(K2 + x) - e2 y) dt + a2 dW2 + ∫ g2(t,u) Ñ(dt,du) ]
//! ```
//!
//! with bounded time-varying coefficients and a finite jump measure. The crate
//! provides:
//!
//! * [`coeffs`]: coefficient functions, their envelopes and the noise penalty `beta`.
//! * [`levy`]: reproducible random streams and compound-Poisson jump sampling.
//! * [`sim`]: the log-coordinate integrator, a direct Euler cross-check, the
//!   noise-free equilibrium and the parallel ensemble runner.
//! * [`bounds`]: the closed-form stochastic logistic comparison processes that
//!   sandwich each solution path.
//! * [`analysis`]: regime classification, persistence bounds and the
//!   Monte Carlo diagnostics built on ensemble summaries.
//! * [`scenario`]: the TOML scenario format consumed by the command-line tool.
//! * [`report`]: pass/fail checks over a scenario run.

pub mod analysis;
pub mod bounds;
pub mod coeffs;
pub mod levy;
pub mod report;
pub mod scenario;
pub mod sim;

pub use coeffs::{Coefficient, Envelope, Mark, MarkTable, ModelError, Species};
pub use sim::{ModelSpec, NoiseRecord, PathRecord, SpeciesParams};
