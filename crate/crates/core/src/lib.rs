//! Monte Carlo solution of semilinear elliptic equations with measure data,
//! `-Lu = f(x, u) + μ`, through the nonlinear Feynman–Kac representation
//! `u(x) = E_x[∫₀^ζ f(X_t, u(X_t)) dt + ∫₀^ζ dA^μ_t]`, together with
//! numerical checks of the associated a-priori estimates.

pub mod bsde;
pub mod cli;
pub mod coeff;
pub mod config;
pub mod domain;
pub mod error;
pub mod expr;
pub mod green;
pub mod grid;
pub mod measures;
pub mod operators;
pub mod process;
pub mod quad;
pub mod regularity;
pub mod rng;
pub mod solver;
pub mod sum;

pub use domain::Domain;
pub use error::{Error, Result};
pub use grid::{SolutionField, UniformGrid};
pub use measures::{MeasureData, Nonlinearity};
pub use operators::OperatorSpec;
