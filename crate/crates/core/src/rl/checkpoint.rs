//! Versioned JSON container for trained parameters, optimizer config, and
//! generator state.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::policy::ActorCritic;
use super::ppo::PpoConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub state_dim: usize,
    pub hidden_dim: usize,
    pub actor_theta: Vec<f64>,
    pub critic_theta: Vec<f64>,
    pub ppo: PpoConfig,
    pub episodes_trained: u32,
    /// Policy-noise generator state at save time.
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn new(ac: &ActorCritic, ppo: &PpoConfig, episodes_trained: u32, rng: ChaCha8Rng) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            state_dim: ac.state_dim(),
            hidden_dim: ac.hidden_dim(),
            actor_theta: ac.actor_theta.clone(),
            critic_theta: ac.critic_theta.clone(),
            ppo: *ppo,
            episodes_trained,
            rng,
        }
    }

    /// Rebuild the network, validating vector shapes against the declared
    /// dimensions.
    pub fn to_actor_critic(&self) -> Result<ActorCritic> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        ActorCritic::from_parameters(
            self.state_dim,
            self.hidden_dim,
            self.actor_theta.clone(),
            self.critic_theta.clone(),
        )
        .map_err(|e| Error::checkpoint(format!("corrupt parameter vectors: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.to_actor_critic()?;
        Ok(ckpt)
    }
}
