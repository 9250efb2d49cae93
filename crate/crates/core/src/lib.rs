//! Desk-scale workbench for adaptive traffic signal control at a single
//! intersection.
//!
//! The crate combines four pieces:
//!
//! * a mesoscopic car-following simulator on a triangular flow-density
//!   relation ([`sim`]),
//! * a signal phase state machine that supports inserting a temporary
//!   "re-service" green for a protected movement mid-cycle ([`signal`]),
//! * kinematic-wave queue forecasting that decides when and how long to
//!   re-serve ([`shockwave`]),
//! * a semi-Markov decision environment plus a small, self-contained
//!   policy-gradient trainer that picks phase durations ([`env`], [`rl`]).
//!
//! Baseline controllers ([`baselines`]), scenario/demand file handling
//! ([`scenario`]), per-trip metrics ([`metrics`]) and evaluation orchestration
//! ([`eval`]) round out the experiment harness used by the `atsc` binary.

pub mod baselines;
pub mod env;
pub mod error;
pub mod eval;
pub mod fd;
pub mod metrics;
pub mod rl;
pub mod scenario;
pub mod shockwave;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
