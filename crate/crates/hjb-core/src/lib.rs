//! Solver for continuous-time infinite-horizon optimal control problems.
//!
//! Trains neural value and policy approximators so that the associated
//! Hamiltonian `H = l(x, u) + ∂V/∂x · f(x, u)` is driven to zero over a
//! compact state region, which is the stationarity condition of the
//! Hamilton-Jacobi-Bellman equation. Two training schemes are provided:
//!
//! * `dpi` — classic policy iteration with inner critic/actor loops run to
//!   their termination tolerances, and
//! * `dgpi` — a warm-up phase that jointly descends the squared Hamiltonian
//!   until the sampled Hamiltonian is non-positive, followed by policy
//!   iteration with single-step (truncated) inner loops.
//!
//! Two benchmark plants ship with the crate: a 3-state linear aircraft model
//! (with an algebraic-Riccati ground truth for error metrics) and a 5-state
//! nonlinear, non-input-affine vehicle tracking model with saturated
//! actuators and Fiala tire forces.

pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod riccati;
pub mod rng;
pub mod tape;
pub mod train;

pub mod checkpoint;
pub mod dynamics;
pub mod hjb;
pub mod metrics;
pub mod sim;

mod error;

pub use error::{Error, Result};
