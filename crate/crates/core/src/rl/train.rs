//! Episode loop wiring the decision-point environment to the optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSetup, SmdpEnv};
use crate::error::Result;

use super::adam::Adam;
use super::buffer::{RolloutBuffer, Transition};
use super::policy::ActorCritic;
use super::ppo::{ppo_update, PpoConfig, UpdateStats};

/// Sequential-episode seed stride (golden-ratio increment, avoids overlap
/// between per-episode demand streams).
const EPISODE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
/// Offset separating the policy-noise stream from the demand streams.
const POLICY_SEED_SALT: u64 = 0x5DEE_CE66_D0F1_5A83;

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub ac: ActorCritic,
    /// `(episode, step-average reward)` pairs, one per completed episode.
    pub reward_curve: Vec<(u32, f64)>,
    pub updates: Vec<UpdateStats>,
    /// Policy-noise generator state after the last episode.
    pub rng: ChaCha8Rng,
}

/// Train a fresh policy on the given environment. Transitions accumulate in
/// the rollout buffer across episode boundaries; an optimization pass runs
/// exactly when the buffer fills.
pub fn train(setup: &EnvSetup, cfg: &PpoConfig, episodes: u32, seed: u64) -> Result<TrainResult> {
    cfg.validate()?;
    let mut env = SmdpEnv::new(setup.clone(), seed)?;
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed ^ POLICY_SEED_SALT);
    let mut ac = ActorCritic::new(env.state_dim(), cfg.hidden_dim, cfg.init_std, &mut policy_rng)?;
    let mut actor_opt = Adam::new(ac.actor_param_count(), cfg.learning_rate);
    let mut critic_opt = Adam::new(ac.critic_param_count(), cfg.learning_rate);
    let mut buffer = RolloutBuffer::new(cfg.buffer_capacity);

    let mut reward_curve = Vec::with_capacity(episodes as usize);
    let mut updates = Vec::new();

    for ep in 0..episodes {
        env.reset(seed.wrapping_add(u64::from(ep).wrapping_mul(EPISODE_SEED_STRIDE)))?;
        let mut state = env.observe();
        let mut reward_sum = 0.0;
        let mut transitions = 0u32;

        while !env.done() {
            let (action, log_prob) = ac.sample(state.as_slice(), &mut policy_rng);
            let value = ac.value(state.as_slice());
            let (next_state, reward, sojourn_s, info) = env.step(action)?;
            let value_next = if info.done {
                0.0
            } else {
                ac.value(next_state.as_slice())
            };
            let full = buffer.push(Transition {
                state: state.0.clone(),
                action,
                reward,
                sojourn_s,
                log_prob,
                value,
                value_next,
                done: info.done,
            });
            if full {
                updates.push(ppo_update(
                    &mut ac,
                    &mut actor_opt,
                    &mut critic_opt,
                    &mut buffer,
                    cfg,
                    &mut policy_rng,
                ));
            }
            reward_sum += reward;
            transitions += 1;
            state = next_state;
        }
        reward_curve.push((ep, reward_sum / f64::from(transitions.max(1))));
    }

    Ok(TrainResult {
        ac,
        reward_curve,
        updates,
        rng: policy_rng,
    })
}
