//! Simulation and verification toolkit for semilinear stochastic evolution
//! equations
//!
//! ```text
//! du + Au dt + f(u) dt = ηu dt + B(u) dW,   u(0) = u₀
//! ```
//!
//! on discretized `L_q(0,1)`, where `A` is the Dirichlet Laplacian and `f` is
//! a maximal monotone (possibly discontinuous) graph with polynomial growth.
//!
//! The crate is organised bottom-up:
//!
//! * [`monotone_graph`]: scalar maximal monotone graphs, resolvents, Yosida
//!   approximants, potentials and Legendre–Fenchel conjugates.
//! * [`lq_space`]: grid functions, `L_q` norms, duality maps, the `Φ_q`
//!   calculus and finite-mode γ-radonifying norms.
//! * [`accretive_operator`]: the discrete Laplacian, its resolvents and the
//!   exact semigroup.
//! * [`noise_model`]: counter-based Wiener increments and diffusion
//!   coefficients.
//! * [`mild_solver`]: time-stepping schemes and pathwise residual checks.
//! * [`estimators`]: Monte Carlo functionals and the convergence / stability
//!   studies built on coupled paths.

pub mod accretive_operator;
pub mod error;
pub mod estimators;
pub mod lq_space;
pub mod mild_solver;
pub mod monotone_graph;
pub mod noise_model;
pub mod rng;

pub use error::{Error, Result};
