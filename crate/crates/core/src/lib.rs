//! Numerical toolkit for one-dimensional exit-time HJB equations
//! `D_t u + sigma^2/2 D_x^2 u + H(D_x u, u, x, t) = 0` on `(0, inf) x [0, T)`:
//! an implicit finite-difference solver for the linear problem, Picard
//! iteration in a weighted norm for the nonlinear one, and Monte Carlo
//! estimators to cross-check both.

pub mod analytic;
pub mod config;
pub mod error;
pub mod fixedpoint;
pub mod hamiltonian;
pub mod model;
pub mod montecarlo;
pub mod pde;
pub mod policy;
pub mod quadrature;

pub use error::{Error, Result};
pub use fixedpoint::{iterate, Solution};
pub use model::{BoundaryData, ControlSet, ControlledField, GeneralProblem, Hamiltonian, ProblemSpec, ScalarField2};
pub use montecarlo::{FeedbackPolicy, McConfig, McEstimate};
pub use pde::{GridFunction, Mesh, SchemeConfig};
