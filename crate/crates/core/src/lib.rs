//! Optimal encryption scheduling for remote state estimation in the
//! presence of an eavesdropper.
//!
//! A sensor runs a steady-state Kalman filter and ships its estimate over a
//! lossy link to a remote estimator. A passive eavesdropper overhears the same
//! link. Encrypting a packet lowers the eavesdropper's success rate but also
//! the legitimate arrival rate, and costs a fixed amount per use. The crate
//! computes schedules that trade the three off over a finite horizon:
//!
//! - [`linear_model`]: plant, steady-state covariance and the covariance ladder
//!   `P*, h(P*), h²(P*), ...` that indexes every reachable error covariance.
//! - [`channel`]: action-dependent Bernoulli reception and interception.
//! - [`mdp`]: backward induction when the eavesdropper's covariance is known.
//! - [`pomdp`]: backward induction over the reachable belief tree when it is not.
//! - [`evaluation`]: exact and Monte Carlo evaluation of schedules.
//! - [`config`] and [`table`]: JSON run configuration and CSV emission.

pub mod channel;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod linear_model;
pub mod mdp;
pub mod pomdp;
pub mod table;

pub use channel::{Action, ChannelParams, JointTransition};
pub use error::{Error, Result};
pub use linear_model::{CovarianceLadder, SystemModel};
pub use mdp::{LadderState, PolicyTable, ProblemParams, ValueTable};
pub use pomdp::{Belief, BeliefPolicy, BeliefTree};
