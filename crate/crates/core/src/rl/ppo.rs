//! Clipped-surrogate PPO with GAE and Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, PolicyNet};
use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub horizon: usize,
    pub max_grad_norm: f64,
    /// Epoch loop stops once the mean approximate KL exceeds this.
    pub target_kl: f64,
    pub normalize_advantages: bool,
    /// The value head predicts `V / value_scale`.
    pub value_scale: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            horizon: 256,
            max_grad_norm: 0.5,
            target_kl: 0.03,
            normalize_advantages: true,
            value_scale: 100.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be > 0");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 {
            return bad("epochs, minibatch and horizon must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.value_scale > 0.0) {
            return bad("learning_rate and value_scale must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// A trainable policy: network plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub net: PolicyNet,
    pub opt: Adam,
}

impl Agent {
    pub fn new(net: PolicyNet, lr: f64) -> Self {
        let n = net.params.len();
        Self { net, opt: Adam::new(n, lr) }
    }
}

/// On-policy samples for one agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    /// Value estimates in reward units.
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Bootstrap value of the state after the last sample.
    pub last_value: f64,
}

impl Rollout {
    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>, log_prob: f64, value: f64, reward: f64) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// GAE over one trajectory; `values` has one more entry than `rewards`
/// (the bootstrap value). Returns `(advantages, returns)`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(values.len(), rewards.len() + 1, "values need a terminal entry");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + discount * values[t + 1] - values[t];
        acc = delta + discount * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

pub fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss and gradient of the PPO objective over the samples in `idx`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_gradient(
    net: &PolicyNet,
    obs: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(Vec<f64>, BatchStats), RlError> {
    let n = idx.len() as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut st = BatchStats::default();
    for &i in idx {
        let f = net.forward(&obs[i])?;
        let lp = gaussian_log_prob(&f.mean, &f.log_std, &actions[i]);
        let ratio = (lp - old_log_probs[i]).exp();
        let a = advantages[i];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let surr = (ratio * a).min(clipped * a);
        st.policy_loss -= surr / n;
        let active = if a >= 0.0 { ratio <= 1.0 + cfg.clip } else { ratio >= 1.0 - cfg.clip };
        if !active {
            st.clip_fraction += 1.0 / n;
        }
        let target = returns[i] / cfg.value_scale;
        let verr = f.value - target;
        st.value_loss += verr * verr / n;
        st.approx_kl += ((ratio - 1.0) - (lp - old_log_probs[i])) / n;

        let d_lp = if active { -a * ratio / n } else { 0.0 };
        let (dm, ds) = gaussian_log_prob_grad(&f.mean, &f.log_std, &actions[i]);
        let d_mean: Vec<f64> = dm.iter().map(|g| g * d_lp).collect();
        let d_log_std: Vec<f64> = ds.iter().map(|g| g * d_lp).collect();
        let d_value = cfg.value_coef * 2.0 * verr / n;
        net.backward(&f.cache, &d_mean, &d_log_std, d_value, &mut grad);
    }
    let log_std = net.log_std();
    st.entropy = gaussian_entropy(log_std);
    if cfg.entropy_coef != 0.0 {
        let off = net.params.len() - net.out_dim;
        for g in &mut grad[off..] {
            *g -= cfg.entropy_coef;
        }
    }
    Ok((grad, st))
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    if !(max_norm > 0.0) {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// One PPO update over a rollout. On a non-finite loss the agent is
/// restored to its state before the call.
pub fn ppo_update<R: Rng + ?Sized>(agent: &mut Agent, rollout: &Rollout, cfg: &PpoConfig, rng: &mut R) -> Result<PpoStats, RlError> {
    if rollout.is_empty() {
        return Err(RlError::EmptyRollout);
    }
    let mut values = rollout.values.clone();
    values.push(rollout.last_value);
    let (mut adv, returns) = gae_advantages(&rollout.rewards, &values, cfg.discount, cfg.gae_lambda);
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }

    let snapshot = agent.clone();
    let mut order: Vec<usize> = (0..rollout.len()).collect();
    let mut stats = PpoStats::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_stats = BatchStats::default();
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let (mut grad, st) = ppo_gradient(
                &agent.net,
                &rollout.obs,
                &rollout.actions,
                &rollout.log_probs,
                &adv,
                &returns,
                chunk,
                cfg,
            )?;
            let loss = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                *agent = snapshot;
                return Err(RlError::NonFiniteLoss);
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            agent.opt.apply(&mut agent.net.params, &grad);
            epoch_stats.policy_loss += st.policy_loss;
            epoch_stats.value_loss += st.value_loss;
            epoch_stats.entropy += st.entropy;
            epoch_stats.approx_kl += st.approx_kl;
            epoch_stats.clip_fraction += st.clip_fraction;
            batches += 1.0;
        }
        stats = PpoStats {
            policy_loss: epoch_stats.policy_loss / batches,
            value_loss: epoch_stats.value_loss / batches,
            entropy: epoch_stats.entropy / batches,
            approx_kl: epoch_stats.approx_kl / batches,
            clip_fraction: epoch_stats.clip_fraction / batches,
            epochs_run: epoch + 1,
        };
        if !agent.net.is_finite() {
            *agent = snapshot;
            return Err(RlError::NonFiniteLoss);
        }
        if stats.approx_kl > cfg.target_kl {
            break;
        }
    }
    Ok(stats)
}
