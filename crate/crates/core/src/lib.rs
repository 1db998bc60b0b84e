//! Partition functions of random walks in space-time random environments.
//!
//! The crate computes partition functions `Z = E[F(omega, X)]` for walks on
//! the lattice (discrete and continuous time) and on regular trees, and checks
//! how they compare in concave stochastic order when one walk carries more
//! randomness than the other:
//!
//! - [`envlat`]: environment laws, samplers, exhaustive enumerators, shifts.
//! - [`increments`]: step laws, convolution, majorization, the uniformized
//!   continuous-time kernel.
//! - [`polymer_dt`]: transfer-matrix partition functions, joint laws under
//!   enumeration, free energy and martingale moments.
//! - [`pam_ct`]: continuous-time partition functions with certified intervals,
//!   Monte Carlo, the Anderson ODE and Lyapunov estimators.
//! - [`stochorder`]: exact and empirical concave order, the convolution
//!   coupling identity and majorization by angle functions.
//! - [`treepoly`]: the K-ary tree polymer and the interpolation ladder between
//!   two step laws.
//! - [`branching`]: branching random walks in random environments.
//! - [`cli`]: the JSON-configured experiment runner behind the `polyorder` binary.

pub mod branching;
pub mod cli;
pub mod envlat;
pub mod error;
pub mod increments;
pub mod pam_ct;
pub mod polymer_dt;
pub mod stats;
pub mod stochorder;
pub mod treepoly;

pub use error::{Error, Result};
pub use polymer_dt::FiniteDist;
