#![no_std]

//! Iterative Lyapunov redesign on a torque-limited inverted pendulum.
//!
//! The crate alternates two learners around a fixed discrete-time model:
//!
//! * an inner estimate of the closed-loop region of attraction, kept as a
//!   sublevel set `S_c(V) = {x : V(x) < c}` of a positive-definite neural
//!   Lyapunov candidate ([`roa_estimator`]);
//! * a loose-saturation shaping of an LQR feedback whose parameters are
//!   trained by backpropagation through short rollouts so that states just
//!   outside the estimate are pulled into it ([`policy_updater`]).
//!
//! A brute-force grid classifier ([`roa_oracle`]) provides ground truth.
//!
//! This crate depends only on [`core`] and [`alloc`]. File formats, the
//! experiment driver and the command-line interface live in the `redesign`
//! crate.

extern crate alloc;

pub mod dynamics;
mod error;
pub mod grid;
pub mod linalg;
pub mod lyapunov_net;
pub mod policy;
pub mod policy_updater;
pub mod roa_estimator;
pub mod roa_oracle;
pub mod sampling;

pub use crate::dynamics::{
    closed_loop, dare_lqr, linearize, pendulum_deriv, rollout, step_euler, ClosedLoop,
    DiscreteMap, LinearModel, LqrSolution, PendulumParams, SafetyBox, StateVec, Trajectory,
};
pub use crate::error::{Error, Result};
pub use crate::grid::{GridDomain, RoaMask};
pub use crate::lyapunov_net::{LyapunovEvaluator, ParamGrad, PdLayer, PdLyapunovNet};
pub use crate::policy::{crop_update, policy_eval, policy_grad_psi, sat, SatParams, SatPolicy};
pub use crate::roa_estimator::{LevelSetEstimate, RoaEstHyper};
pub use crate::policy_updater::{PolicyUpdHyper, SignalDiagnostics};
