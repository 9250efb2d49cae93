//! Clipped-surrogate policy optimization over the rollout buffer.
//!
//! The loss and its gradient are written as pure functions of the parameter
//! vectors so they can be verified against central finite differences on
//! small fixtures.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

use super::adam::Adam;
use super::buffer::RolloutBuffer;
use super::gae::{gae_smdp, normalize_advantages};
use super::policy::ActorCritic;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Likelihood-ratio clip radius.
    pub epsilon: f64,
    /// Per-second discount base.
    pub gamma: f64,
    /// Advantage smoothing factor.
    pub lambda: f64,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub init_std: f64,
    pub hidden_dim: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epsilon: 0.1,
            gamma: 0.995,
            lambda: 0.99,
            learning_rate: 2.5e-4,
            minibatch: 256,
            epochs: 20,
            buffer_capacity: 1200,
            value_coef: 0.5,
            entropy_coef: 0.0,
            init_std: 0.5,
            hidden_dim: 128,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("clip radius must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config("gamma and lambda must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.minibatch == 0 || self.epochs == 0 || self.buffer_capacity == 0 {
            return Err(Error::config(
                "minibatch, epochs and buffer capacity must be positive",
            ));
        }
        if self.minibatch > self.buffer_capacity {
            return Err(Error::config("minibatch larger than the buffer"));
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        if !(self.init_std > 0.0) || self.hidden_dim == 0 {
            return Err(Error::config("invalid network initialization settings"));
        }
        Ok(())
    }
}

/// Buffer contents reshaped for the update: advantages normalized, targets
/// fixed for all epochs.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PreparedBatch {
    pub fn from_buffer(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Self {
        let items = buffer.items();
        let (mut advantages, returns) = gae_smdp(items, gamma, lambda);
        normalize_advantages(&mut advantages);
        PreparedBatch {
            states: items.iter().map(|t| t.state.clone()).collect(),
            actions: items.iter().map(|t| t.action).collect(),
            old_log_probs: items.iter().map(|t| t.log_prob).collect(),
            advantages,
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Combined loss over the indexed samples:
/// `-mean(min(rho A, clip(rho) A)) + value_coef * mean((V - ret)^2)
///  - entropy_coef * mean(-log_prob)`.
pub fn batch_loss(ac: &ActorCritic, batch: &PreparedBatch, idx: &[usize], cfg: &PpoConfig) -> f64 {
    let n = idx.len() as f64;
    let mut policy = 0.0;
    let mut value = 0.0;
    let mut entropy = 0.0;
    for &i in idx {
        let s = &batch.states[i];
        let lp = ac.log_prob(s, batch.actions[i]);
        let rho = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let unclipped = rho * adv;
        let clipped = rho.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv;
        policy += unclipped.min(clipped);
        let diff = ac.value(s) - batch.returns[i];
        value += diff * diff;
        entropy += -lp;
    }
    -(policy / n) + cfg.value_coef * (value / n) - cfg.entropy_coef * (entropy / n)
}

/// Analytic gradient of [`batch_loss`] with respect to both parameter
/// vectors, plus ratio statistics for the indexed samples.
pub fn batch_loss_grad(
    ac: &ActorCritic,
    batch: &PreparedBatch,
    idx: &[usize],
    cfg: &PpoConfig,
) -> (f64, Vec<f64>, Vec<f64>, RatioStats) {
    let n = idx.len() as f64;
    let mut actor_grad = vec![0.0; ac.actor_param_count()];
    let mut critic_grad = vec![0.0; ac.critic_param_count()];
    let mut policy = 0.0;
    let mut value = 0.0;
    let mut entropy = 0.0;
    let mut rho_sum = 0.0;
    let mut clipped_count = 0usize;

    for &i in idx {
        let s = &batch.states[i];
        // First pass: the ratio decides the surrogate branch.
        let lp = ac.log_prob(s, batch.actions[i]);
        let rho = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let unclipped = rho * adv;
        let clipped = rho.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv;
        let surrogate_active = unclipped <= clipped;
        policy += unclipped.min(clipped);
        entropy += -lp;
        rho_sum += rho;
        if !surrogate_active {
            clipped_count += 1;
        }

        // d(loss)/d(log_prob): surrogate term only on the unclipped branch;
        // the entropy bonus always contributes.
        let mut d_lp = cfg.entropy_coef / n;
        if surrogate_active {
            d_lp += -(rho * adv) / n;
        }
        if d_lp != 0.0 {
            ac.log_prob_grad_accum(s, batch.actions[i], d_lp, &mut actor_grad);
        }

        let diff = ac.value(s) - batch.returns[i];
        value += diff * diff;
        ac.value_grad_accum(s, cfg.value_coef * 2.0 * diff / n, &mut critic_grad);
    }

    let loss = -(policy / n) + cfg.value_coef * (value / n) - cfg.entropy_coef * (entropy / n);
    let stats = RatioStats {
        mean_ratio: rho_sum / n,
        clip_fraction: clipped_count as f64 / n,
    };
    (loss, actor_grad, critic_grad, stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// Summary of one optimization pass over a full buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Loss over the whole buffer before the first epoch.
    pub loss_before: f64,
    /// Loss over the whole buffer after the last epoch.
    pub loss_after: f64,
    /// Largest |rho - 1| over the buffer before any step (sanity: ~0).
    pub initial_ratio_deviation: f64,
    /// Mean likelihood ratio over the buffer after the update.
    pub mean_ratio_after: f64,
    /// Fraction of samples on the clipped branch after the update.
    pub clip_fraction_after: f64,
    /// Update was rolled back because a non-finite quantity appeared.
    pub aborted: bool,
}

/// Run the epoch/minibatch optimization loop over a full buffer, then clear
/// it. On any non-finite loss or gradient the parameters and optimizer states
/// are restored to their pre-update snapshot and `aborted` is set.
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> UpdateStats {
    assert!(buffer.is_full(), "update requires a full buffer");
    let batch = PreparedBatch::from_buffer(buffer, cfg.gamma, cfg.lambda);
    let all: Vec<usize> = (0..batch.len()).collect();

    let initial_ratio_deviation = all
        .iter()
        .map(|&i| {
            let lp = ac.log_prob(&batch.states[i], batch.actions[i]);
            ((lp - batch.old_log_probs[i]).exp() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let loss_before = batch_loss(ac, &batch, &all, cfg);

    let snapshot = (
        ac.actor_theta.clone(),
        ac.critic_theta.clone(),
        actor_opt.clone(),
        critic_opt.clone(),
    );

    let mut aborted = false;
    let mut order = all.clone();
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let (loss, actor_grad, critic_grad, _) = batch_loss_grad(ac, &batch, chunk, cfg);
            let finite = loss.is_finite()
                && actor_grad.iter().all(|g| g.is_finite())
                && critic_grad.iter().all(|g| g.is_finite());
            if !finite {
                aborted = true;
                break 'epochs;
            }
            actor_opt.step(&mut ac.actor_theta, &actor_grad);
            critic_opt.step(&mut ac.critic_theta, &critic_grad);
        }
    }
    if !aborted && !ac.parameters_finite() {
        aborted = true;
    }

    if aborted {
        log::error!("non-finite loss or parameters during update; restoring snapshot");
        ac.actor_theta = snapshot.0;
        ac.critic_theta = snapshot.1;
        *actor_opt = snapshot.2;
        *critic_opt = snapshot.3;
    }

    let (loss_after, _, _, stats) = batch_loss_grad(ac, &batch, &all, cfg);
    buffer.clear();
    UpdateStats {
        loss_before,
        loss_after,
        initial_ratio_deviation,
        mean_ratio_after: stats.mean_ratio,
        clip_fraction_after: stats.clip_fraction,
        aborted,
    }
}
