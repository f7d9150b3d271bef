//! Multivariate Hawkes processes with piecewise-constant kernels: simulation,
//! likelihood and LAN statistics, Palm-calculus information operators,
//! nonparametric priors, an MCMC posterior sampler, and a Bernstein–von Mises
//! experiment harness.

pub mod error;
pub mod functionals;
pub mod grid;
pub mod harness;
pub mod io;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod moment;
pub mod palm;
pub mod priors;
pub mod renewal;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod stream;
mod window;

pub use error::{Error, Result};
pub use grid::GridFunction;
pub use likelihood::{Direction, LanProducts, McBudget};
pub use model::{ModelKind, ModelParams};
pub use stream::EventStream;
