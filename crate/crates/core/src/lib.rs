//! Simulation and numerics for the weakly asymmetric zero-range process on
//! the discrete torus: exact kinetic Monte Carlo, product invariant measures,
//! height functions and fluctuation fields, Brownian-envelope initial data,
//! the basic coupling, and spectral / finite-difference solvers for the
//! limiting stochastic PDEs.

pub mod configuration;
pub mod coupling;
pub mod envelope;
pub mod experiment;
pub mod experiments;
pub mod fenwick;
pub mod height;
pub mod io;
pub mod measures;
pub mod params;
pub mod rate;
pub mod rng;
pub mod sim;
pub mod spde;
pub mod stats;

pub use configuration::Configuration;
pub use measures::{build_measure, solve_fugacity, transport_constants, ProductMeasure};
pub use params::ModelParams;
pub use rate::{validate_rate_function, RateFunction, RateKind};
pub use sim::{run_until, total_jump_rate, JumpEvent, Observer, Simulation};
