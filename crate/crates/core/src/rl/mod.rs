//! From-scratch actor-critic learner for variable-sojourn decision
//! processes: flat-parameter MLPs, a squashed-Gaussian policy, generalized
//! advantage estimation with per-transition discount exponents, and a
//! clipped-surrogate update loop.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod gae;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod train;

pub use adam::Adam;
pub use buffer::{RolloutBuffer, Transition};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gae::{gae_smdp, normalize_advantages};
pub use policy::ActorCritic;
pub use ppo::{ppo_update, PpoConfig, UpdateStats};
pub use train::{train, TrainResult};
