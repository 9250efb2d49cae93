//! Tanh-squashed Gaussian actor and scalar critic over flat parameters.
//!
//! The actor outputs a bounded mean through a tanh head and keeps a single
//! state-independent log-std parameter appended to its flat vector. Sampling
//! draws in pre-squash space and pushes through tanh, with the standard
//! change-of-variables correction on the log-density.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::nn::{Activation, MlpLayout};

/// Lower bound on the policy standard deviation.
pub const STD_FLOOR: f64 = 1e-3;
/// Actions are pulled this far inside (-1, 1) before atanh.
pub const SQUASH_LIMIT: f64 = 1.0 - 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn atanh(x: f64) -> f64 {
    0.5 * ((1.0 + x).ln() - (1.0 - x).ln())
}

/// `ln(1 - a^2)` without catastrophic cancellation near the boundaries.
fn ln_one_minus_sq(a: f64) -> f64 {
    (-a).ln_1p() + a.ln_1p()
}

/// Independent actor and critic networks plus their flat parameter vectors.
///
/// Actor layout: `[mlp params | log_std]` with a tanh hidden layer and a tanh
/// output head. Critic layout: plain mlp with a ReLU hidden layer and a
/// linear scalar head.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    state_dim: usize,
    hidden_dim: usize,
    actor_mlp: MlpLayout,
    critic_mlp: MlpLayout,
    pub actor_theta: Vec<f64>,
    pub critic_theta: Vec<f64>,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden_dim: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || hidden_dim == 0 {
            return Err(Error::config("network dimensions must be positive"));
        }
        if !(init_std > 0.0) {
            return Err(Error::config("initial policy std must be positive"));
        }
        let actor_mlp = MlpLayout {
            input_dim: state_dim,
            hidden_dim,
            activation: Activation::Tanh,
        };
        let critic_mlp = MlpLayout {
            input_dim: state_dim,
            hidden_dim,
            activation: Activation::Relu,
        };
        let mut actor_theta = actor_mlp.init(rng);
        actor_theta.push(init_std.ln());
        let critic_theta = critic_mlp.init(rng);
        Ok(ActorCritic {
            state_dim,
            hidden_dim,
            actor_mlp,
            critic_mlp,
            actor_theta,
            critic_theta,
        })
    }

    /// Rebuild from stored parameters, validating lengths.
    pub fn from_parameters(
        state_dim: usize,
        hidden_dim: usize,
        actor_theta: Vec<f64>,
        critic_theta: Vec<f64>,
    ) -> Result<Self> {
        let actor_mlp = MlpLayout {
            input_dim: state_dim,
            hidden_dim,
            activation: Activation::Tanh,
        };
        let critic_mlp = MlpLayout {
            input_dim: state_dim,
            hidden_dim,
            activation: Activation::Relu,
        };
        if actor_theta.len() != actor_mlp.param_count() + 1 {
            return Err(Error::config("actor parameter vector has the wrong length"));
        }
        if critic_theta.len() != critic_mlp.param_count() {
            return Err(Error::config("critic parameter vector has the wrong length"));
        }
        Ok(ActorCritic {
            state_dim,
            hidden_dim,
            actor_mlp,
            critic_mlp,
            actor_theta,
            critic_theta,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn actor_param_count(&self) -> usize {
        self.actor_mlp.param_count() + 1
    }

    pub fn critic_param_count(&self) -> usize {
        self.critic_mlp.param_count()
    }

    pub fn parameters_finite(&self) -> bool {
        self.actor_theta.iter().all(|p| p.is_finite())
            && self.critic_theta.iter().all(|p| p.is_finite())
    }

    fn mlp_params(&self) -> &[f64] {
        &self.actor_theta[..self.actor_theta.len() - 1]
    }

    fn log_std(&self) -> f64 {
        *self.actor_theta.last().expect("log_std present")
    }

    pub fn std(&self) -> f64 {
        self.log_std().exp().max(STD_FLOOR)
    }

    /// Policy head: squashed mean in (-1, 1) and the (floored) std.
    pub fn actor_forward(&self, state: &[f64]) -> Result<(f64, f64)> {
        if state.len() != self.state_dim {
            return Err(Error::domain(format!(
                "state has dimension {}, network expects {}",
                state.len(),
                self.state_dim
            )));
        }
        let raw = self.actor_mlp.output(self.mlp_params(), state);
        Ok((raw.tanh(), self.std()))
    }

    /// Deterministic (greedy) action: the squashed mean.
    pub fn mean_action(&self, state: &[f64]) -> f64 {
        self.actor_mlp.output(self.mlp_params(), state).tanh()
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.critic_mlp.output(&self.critic_theta, state)
    }

    /// Pre-squash Gaussian mean: atanh of the clipped squashed mean.
    fn pre_tanh_mean(&self, raw: f64) -> f64 {
        atanh(raw.tanh().clamp(-SQUASH_LIMIT, SQUASH_LIMIT))
    }

    /// Draw an action and its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> (f64, f64) {
        assert_eq!(state.len(), self.state_dim);
        let raw = self.actor_mlp.output(self.mlp_params(), state);
        let mu = self.pre_tanh_mean(raw);
        let sigma = self.std();
        let noise: f64 = rng.sample(StandardNormal);
        let z = mu + sigma * noise;
        let a = z.tanh();
        // Evaluate through the same path used at update time so the epoch-0
        // likelihood ratio is exactly one.
        let log_prob = self.log_prob(state, a);
        (a, log_prob)
    }

    /// Log-density of a squashed action under the current parameters.
    pub fn log_prob(&self, state: &[f64], action: f64) -> f64 {
        assert_eq!(state.len(), self.state_dim);
        let raw = self.actor_mlp.output(self.mlp_params(), state);
        let mu = self.pre_tanh_mean(raw);
        let sigma = self.std();
        let a = action.clamp(-SQUASH_LIMIT, SQUASH_LIMIT);
        let z = atanh(a);
        let standardized = (z - mu) / sigma;
        -0.5 * standardized * standardized - sigma.ln() - HALF_LN_2PI - ln_one_minus_sq(a)
    }

    /// Log-probability of `action` while accumulating
    /// `factor * d(log_prob)/d(actor_theta)` into `grad`.
    pub fn log_prob_grad_accum(
        &self,
        state: &[f64],
        action: f64,
        factor: f64,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), self.actor_param_count());
        let (raw, hidden) = self.actor_mlp.forward(self.mlp_params(), state);
        let mean = raw.tanh();
        let clipped = mean.clamp(-SQUASH_LIMIT, SQUASH_LIMIT);
        let mu = atanh(clipped);
        let log_std = self.log_std();
        let sigma_raw = log_std.exp();
        let sigma = sigma_raw.max(STD_FLOOR);

        let a = action.clamp(-SQUASH_LIMIT, SQUASH_LIMIT);
        let z = atanh(a);
        let standardized = (z - mu) / sigma;
        let log_prob =
            -0.5 * standardized * standardized - sigma.ln() - HALF_LN_2PI - ln_one_minus_sq(a);

        // d(log_prob)/d(mu), pushed through mu = atanh(clamp(tanh(raw))).
        // Inside the clamp the chain collapses: d(mu)/d(raw) = 1.
        let d_mu = standardized / sigma;
        if mean.abs() < SQUASH_LIMIT {
            let mlp_grad = &mut grad[..self.actor_mlp.param_count()];
            self.actor_mlp
                .backward(self.mlp_params(), state, &hidden, factor * d_mu, mlp_grad);
        }
        if sigma_raw > STD_FLOOR {
            let d_log_std = standardized * standardized - 1.0;
            let last = grad.len() - 1;
            grad[last] += factor * d_log_std;
        }
        log_prob
    }

    /// Critic value while accumulating `factor * dV/d(critic_theta)`.
    pub fn value_grad_accum(&self, state: &[f64], factor: f64, grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.critic_param_count());
        let (v, hidden) = self.critic_mlp.forward(&self.critic_theta, state);
        self.critic_mlp
            .backward(&self.critic_theta, state, &hidden, factor, grad);
        v
    }
}
