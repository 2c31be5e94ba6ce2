//! Observations, policies, PPO and the curriculum driver.

pub mod checkpoint;
pub mod curriculum;
pub mod nn;
pub mod obs;
pub mod ppo;

use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::grid::{PowerTensor, PrbAssignment};
use crate::power::PowerAction;
use nn::PolicyNet;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("non-finite loss; update aborted")]
    NonFiniteLoss,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("frozen policy parameters changed during phase {phase}")]
    FrozenPolicyChanged { phase: u32 },
    #[error("checkpoint error at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How the PRB stage decides.
#[derive(Debug, Clone, Copy)]
pub enum PrbRule<'a> {
    Pf,
    Policy(&'a PolicyNet),
}

/// How the power stage decides.
#[derive(Debug, Clone, Copy)]
pub enum PowerRule<'a> {
    Equal,
    Policy(&'a PolicyNet),
}

pub fn decide_prb(env: &Environment, rule: PrbRule) -> Result<PrbAssignment, RlError> {
    Ok(match rule {
        PrbRule::Pf => env.pf_assignment(),
        PrbRule::Policy(net) => {
            let f = net.forward(&obs::build_obs_prb(env))?;
            env.quota_assignment(&f.mean).1
        }
    })
}

pub fn decide_power(env: &Environment, x: &PrbAssignment, rule: PowerRule, kappa_max: f64) -> Result<PowerTensor, RlError> {
    Ok(match rule {
        PowerRule::Equal => env.equal_power(x),
        PowerRule::Policy(net) => {
            let f = net.forward(&obs::build_obs_pow(env, x))?;
            env.shaped_power(x, &PowerAction::from_raw(&f.mean, kappa_max))?
        }
    })
}

/// Deterministic decision for the current slot, acting at the policy means.
pub fn decide(env: &Environment, prb: PrbRule, pow: PowerRule, kappa_max: f64) -> Result<(PrbAssignment, PowerTensor), RlError> {
    let x = decide_prb(env, prb)?;
    let p = decide_power(env, &x, pow, kappa_max)?;
    Ok((x, p))
}
