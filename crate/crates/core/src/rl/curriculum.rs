//! Three-phase curriculum and the power-only ablation.
//!
//! 1. PRB agent trained with equal power.
//! 2. PRB agent frozen at its mean action, power agent trained.
//! 3. Both fine-tuned jointly, each with its own optimizer.
//!
//! The power-only ablation trains a power agent on top of the PF schedule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::nn::{gaussian_log_prob, sample_gaussian, PolicyNet};
use super::obs::{build_obs_pow, build_obs_prb, power_obs_dim, prb_obs_dim};
use super::ppo::{ppo_update, Agent, PpoConfig, PpoStats, Rollout};
use super::{decide_prb, PrbRule, RlError};
use crate::env::Environment;
use crate::grid::PrbAssignment;
use crate::power::{PowerAction, KAPPA_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Prb,
    Power,
    Joint,
    PowerOnly,
}

impl Phase {
    pub fn id(self) -> u32 {
        match self {
            Phase::Prb => 1,
            Phase::Power => 2,
            Phase::Joint => 3,
            Phase::PowerOnly => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            1 => Some(Phase::Prb),
            2 => Some(Phase::Power),
            3 => Some(Phase::Joint),
            4 => Some(Phase::PowerOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub iterations: usize,
    pub ppo: PpoConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { iterations: 100, ppo: PpoConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub hidden: usize,
    pub init_log_std: f64,
    pub kappa_max: f64,
    /// Shaping exponent the fresh power policy starts from.
    pub init_kappa: f64,
    /// Slots between tracker resets.
    pub episode_len: usize,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub phase3: PhaseConfig,
    pub power_only: PhaseConfig,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        let mut phase3 = PhaseConfig::default();
        phase3.ppo.learning_rate = 1e-4;
        Self {
            hidden: 128,
            init_log_std: -1.5,
            kappa_max: KAPPA_MAX,
            init_kappa: 0.01,
            episode_len: 512,
            phase1: PhaseConfig::default(),
            phase2: PhaseConfig::default(),
            phase3,
            power_only: PhaseConfig::default(),
            seed: 0,
        }
    }
}

impl CurriculumConfig {
    pub fn phase(&self, phase: Phase) -> &PhaseConfig {
        match phase {
            Phase::Prb => &self.phase1,
            Phase::Power => &self.phase2,
            Phase::Joint => &self.phase3,
            Phase::PowerOnly => &self.power_only,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::InvalidConfig(m));
        if self.hidden == 0 || self.episode_len == 0 {
            return bad("hidden and episode_len must be >= 1".into());
        }
        if !(self.kappa_max >= 0.0 && self.kappa_max.is_finite()) || !self.init_log_std.is_finite() {
            return bad("kappa_max and init_log_std must be finite, kappa_max >= 0".into());
        }
        if !(self.init_kappa > 0.0 && self.init_kappa < self.kappa_max) {
            return bad("init_kappa must lie in (0, kappa_max)".into());
        }
        for phase in [Phase::Prb, Phase::Power, Phase::Joint, Phase::PowerOnly] {
            let pc = self.phase(phase);
            pc.ppo.validate()?;
            if !self.episode_len.is_multiple_of(pc.ppo.horizon) {
                return bad(format!("phase {}: episode_len must be a multiple of the horizon", phase.id()));
            }
        }
        Ok(())
    }

    /// Environment slots consumed by the given phases.
    pub fn total_slots(&self, phases: &[Phase]) -> usize {
        phases.iter().map(|p| self.phase(*p).iterations * self.phase(*p).ppo.horizon).sum()
    }
}

/// Both agents plus the last completed phase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyPair {
    pub prb: Option<Agent>,
    pub pow: Option<Agent>,
    pub phase: u32,
}

impl PolicyPair {
    pub fn to_checkpoint(&self, config_hash: u64) -> Checkpoint {
        Checkpoint { phase: self.phase, config_hash, prb: self.prb.clone(), pow: self.pow.clone() }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self { prb: ck.prb, pow: ck.pow, phase: ck.phase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub phase: u32,
    pub slots: usize,
    pub mean_reward: f64,
    pub mean_cell_throughput_bps: f64,
    pub mean_jain: f64,
    pub prb_policy_loss: Option<f64>,
    pub prb_value_loss: Option<f64>,
    pub prb_entropy: Option<f64>,
    pub prb_kl: Option<f64>,
    pub pow_policy_loss: Option<f64>,
    pub pow_value_loss: Option<f64>,
    pub pow_entropy: Option<f64>,
    pub pow_kl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), RlError> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum PrbMode {
    Pf,
    Frozen,
    Train,
}

#[derive(Clone, Copy)]
enum PowMode {
    Equal,
    Train,
}

fn modes(phase: Phase) -> (PrbMode, PowMode) {
    match phase {
        Phase::Prb => (PrbMode::Train, PowMode::Equal),
        Phase::Power => (PrbMode::Frozen, PowMode::Train),
        Phase::Joint => (PrbMode::Train, PowMode::Train),
        Phase::PowerOnly => (PrbMode::Pf, PowMode::Train),
    }
}

fn phase_seed(seed: u64, phase: Phase) -> u64 {
    seed ^ (u64::from(phase.id())).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn value_of(net: &PolicyNet, obs: &[f64], scale: f64) -> Result<f64, RlError> {
    Ok(net.forward(obs)?.value * scale)
}

struct Sampled {
    obs: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
}

fn sample_action<R: Rng + ?Sized>(net: &PolicyNet, obs: Vec<f64>, scale: f64, rng: &mut R) -> Result<Sampled, RlError> {
    let f = net.forward(&obs)?;
    let action = sample_gaussian(&f.mean, &f.log_std, rng);
    let log_prob = gaussian_log_prob(&f.mean, &f.log_std, &action);
    Ok(Sampled { obs, action, log_prob, value: f.value * scale })
}

fn ensure_agents(pair: &mut PolicyPair, env: &Environment, cfg: &CurriculumConfig, phase: Phase, rng: &mut ChaCha8Rng) -> Result<(), RlError> {
    let u = env.cell().num_users;
    let lr = cfg.phase(phase).ppo.learning_rate;
    let (prb_mode, pow_mode) = modes(phase);
    match prb_mode {
        PrbMode::Train if pair.prb.is_none() => {
            if phase != Phase::Prb {
                return Err(RlError::InvalidConfig(format!("phase {} needs a trained PRB policy", phase.id())));
            }
            pair.prb = Some(Agent::new(PolicyNet::init(prb_obs_dim(u), cfg.hidden, u, cfg.init_log_std, rng), lr));
        }
        PrbMode::Frozen if pair.prb.is_none() => {
            return Err(RlError::InvalidConfig(format!("phase {} needs a trained PRB policy", phase.id())));
        }
        _ => {}
    }
    if let PowMode::Train = pow_mode {
        if pair.pow.is_none() {
            if phase == Phase::Joint {
                return Err(RlError::InvalidConfig("phase 3 needs a trained power policy".into()));
            }
            let mut net = PolicyNet::init(power_obs_dim(u), cfg.hidden, 2 * u, cfg.init_log_std, rng);
            let raw = (cfg.init_kappa / (cfg.kappa_max - cfg.init_kappa)).ln();
            net.mean_bias_mut()[u..].iter_mut().for_each(|b| *b = raw);
            pair.pow = Some(Agent::new(net, lr));
        }
    }
    for a in [&pair.prb, &pair.pow].into_iter().flatten() {
        let expect = if a.net.out_dim == u { prb_obs_dim(u) } else { power_obs_dim(u) };
        if a.net.in_dim != expect {
            return Err(RlError::ShapeMismatch { expected: expect, got: a.net.in_dim });
        }
    }
    Ok(())
}

/// Trains one phase in place, appending to `log`.
pub fn train_phase(
    env: &mut Environment,
    pair: &mut PolicyPair,
    cfg: &CurriculumConfig,
    phase: Phase,
    log: &mut TrainingLog,
) -> Result<(), RlError> {
    cfg.validate()?;
    let pc = cfg.phase(phase).clone();
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(cfg.seed, phase));
    ensure_agents(pair, env, cfg, phase, &mut rng)?;
    let (prb_mode, pow_mode) = modes(phase);
    for a in [pair.prb.as_mut(), pair.pow.as_mut()].into_iter().flatten() {
        a.opt.lr = pc.ppo.learning_rate;
    }
    let frozen_sum = match prb_mode {
        PrbMode::Frozen => pair.prb.as_ref().map(|a| a.net.checksum()),
        _ => None,
    };

    let scale = pc.ppo.value_scale;
    let trace_len = env.channel_trace().num_slots();
    let mut slots_in_episode = cfg.episode_len;
    let mut slots_total = log.rows.last().map_or(0, |r| r.slots);

    for _ in 0..pc.iterations {
        let mut prb_ro = Rollout::default();
        let mut pow_ro = Rollout::default();
        let (mut sum_r, mut sum_tp, mut sum_j) = (0.0, 0.0, 0.0);
        for _ in 0..pc.ppo.horizon {
            if slots_in_episode == cfg.episode_len {
                let start = rng.random_range(0..trace_len);
                env.reset(start, rng.random());
                slots_in_episode = 0;
            }
            let (x, prb_sample) = match prb_mode {
                PrbMode::Pf => (env.pf_assignment(), None),
                PrbMode::Frozen => (decide_prb(env, PrbRule::Policy(&pair.prb.as_ref().unwrap().net))?, None),
                PrbMode::Train => {
                    let s = sample_action(&pair.prb.as_ref().unwrap().net, build_obs_prb(env), scale, &mut rng)?;
                    (env.quota_assignment(&s.action).1, Some(s))
                }
            };
            let (p, pow_sample) = match pow_mode {
                PowMode::Equal => (env.equal_power(&x), None),
                PowMode::Train => {
                    let s = sample_action(&pair.pow.as_ref().unwrap().net, build_obs_pow(env, &x), scale, &mut rng)?;
                    (env.shaped_power(&x, &PowerAction::from_raw(&s.action, cfg.kappa_max))?, Some(s))
                }
            };
            let res = env.step(&x, &p)?;
            slots_in_episode += 1;
            sum_r += res.reward;
            sum_tp += res.cell_throughput_bps;
            sum_j += res.jain;
            if let Some(s) = prb_sample {
                prb_ro.push(s.obs, s.action, s.log_prob, s.value, res.reward);
            }
            if let Some(s) = pow_sample {
                pow_ro.push(s.obs, s.action, s.log_prob, s.value, res.reward);
            }
        }
        slots_total += pc.ppo.horizon;

        // Episode ends are truncations, not terminal states, so every
        // rollout bootstraps from the state it stopped in.
        let next_x: PrbAssignment = match prb_mode {
            PrbMode::Pf => env.pf_assignment(),
            _ => decide_prb(env, PrbRule::Policy(&pair.prb.as_ref().unwrap().net))?,
        };

        let mut prb_stats: Option<PpoStats> = None;
        if let Some(agent) = pair.prb.as_mut().filter(|_| !prb_ro.is_empty()) {
            prb_ro.last_value = value_of(&agent.net, &build_obs_prb(env), scale)?;
            prb_stats = Some(ppo_update(agent, &prb_ro, &pc.ppo, &mut rng)?);
        }
        let mut pow_stats: Option<PpoStats> = None;
        if let Some(agent) = pair.pow.as_mut().filter(|_| !pow_ro.is_empty()) {
            pow_ro.last_value = value_of(&agent.net, &build_obs_pow(env, &next_x), scale)?;
            pow_stats = Some(ppo_update(agent, &pow_ro, &pc.ppo, &mut rng)?);
        }

        let h = pc.ppo.horizon as f64;
        log.rows.push(LogRow {
            iteration: log.rows.len() + 1,
            phase: phase.id(),
            slots: slots_total,
            mean_reward: sum_r / h,
            mean_cell_throughput_bps: sum_tp / h,
            mean_jain: sum_j / h,
            prb_policy_loss: prb_stats.map(|s| s.policy_loss),
            prb_value_loss: prb_stats.map(|s| s.value_loss),
            prb_entropy: prb_stats.map(|s| s.entropy),
            prb_kl: prb_stats.map(|s| s.approx_kl),
            pow_policy_loss: pow_stats.map(|s| s.policy_loss),
            pow_value_loss: pow_stats.map(|s| s.value_loss),
            pow_entropy: pow_stats.map(|s| s.entropy),
            pow_kl: pow_stats.map(|s| s.approx_kl),
        });
    }

    if let Some(sum) = frozen_sum {
        if pair.prb.as_ref().map(|a| a.net.checksum()) != Some(sum) {
            return Err(RlError::FrozenPolicyChanged { phase: phase.id() });
        }
    }
    pair.phase = phase.id();
    Ok(())
}

/// Runs `phases` in order starting from `init`. `on_phase_end` sees the
/// policies after every phase, e.g. to write checkpoints.
pub fn run_curriculum<F>(
    env: &mut Environment,
    cfg: &CurriculumConfig,
    phases: &[Phase],
    init: PolicyPair,
    mut on_phase_end: F,
) -> Result<(PolicyPair, TrainingLog), RlError>
where
    F: FnMut(Phase, &PolicyPair) -> Result<(), RlError>,
{
    cfg.validate()?;
    let mut pair = init;
    let mut log = TrainingLog::default();
    for &phase in phases {
        train_phase(env, &mut pair, cfg, phase, &mut log)?;
        on_phase_end(phase, &pair)?;
    }
    Ok((pair, log))
}

/// Power agent trained on top of the PF schedule.
pub fn train_power_only(env: &mut Environment, cfg: &CurriculumConfig) -> Result<(PolicyPair, TrainingLog), RlError> {
    run_curriculum(env, cfg, &[Phase::PowerOnly], PolicyPair::default(), |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_trace, ChannelGenConfig};
    use crate::env::EnvConfig;
    use std::sync::Arc;

    fn tiny_cfg() -> CurriculumConfig {
        let mut cfg = CurriculumConfig { hidden: 16, episode_len: 64, seed: 5, ..Default::default() };
        for pc in [&mut cfg.phase1, &mut cfg.phase2, &mut cfg.phase3, &mut cfg.power_only] {
            pc.iterations = 2;
            pc.ppo.horizon = 32;
            pc.ppo.minibatch = 16;
            pc.ppo.epochs = 2;
        }
        cfg
    }

    fn env() -> Environment {
        let cfg = EnvConfig::default();
        let trace = Arc::new(generate_trace(&ChannelGenConfig::default(), &cfg.cell, 200).unwrap());
        Environment::new(trace, cfg, 1e8, 0).unwrap()
    }

    #[test]
    fn log_rows_match_iterations() {
        let cfg = tiny_cfg();
        let mut e = env();
        let mut seen = Vec::new();
        let (pair, log) = run_curriculum(&mut e, &cfg, &[Phase::Prb, Phase::Power, Phase::Joint], PolicyPair::default(), |p, _| {
            seen.push(p);
            Ok(())
        })
        .unwrap();
        assert_eq!(log.rows.len(), 6);
        assert_eq!(seen, vec![Phase::Prb, Phase::Power, Phase::Joint]);
        assert_eq!(pair.phase, 3);
        assert_eq!(log.rows.last().unwrap().slots, cfg.total_slots(&[Phase::Prb, Phase::Power, Phase::Joint]));
        assert!(log.rows[..2].iter().all(|r| r.pow_kl.is_none() && r.prb_kl.is_some()));
        assert!(log.rows[2..4].iter().all(|r| r.prb_kl.is_none() && r.pow_kl.is_some()));
    }

    #[test]
    fn phase_two_freezes_prb_policy() {
        let cfg = tiny_cfg();
        let mut e = env();
        let (p1, _) = run_curriculum(&mut e, &cfg, &[Phase::Prb], PolicyPair::default(), |_, _| Ok(())).unwrap();
        let (p2, _) = run_curriculum(&mut e, &cfg, &[Phase::Power], p1.clone(), |_, _| Ok(())).unwrap();
        assert_eq!(p1.prb.as_ref().unwrap().net.checksum(), p2.prb.as_ref().unwrap().net.checksum());
        assert_eq!(p1.prb, p2.prb);
        assert!(p2.pow.is_some());
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = tiny_cfg();
        let a = run_curriculum(&mut env(), &cfg, &[Phase::Prb], PolicyPair::default(), |_, _| Ok(())).unwrap();
        let b = run_curriculum(&mut env(), &cfg, &[Phase::Prb], PolicyPair::default(), |_, _| Ok(())).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn missing_prerequisites_rejected() {
        let cfg = tiny_cfg();
        let mut e = env();
        for phase in [Phase::Power, Phase::Joint] {
            let r = run_curriculum(&mut e, &cfg, &[phase], PolicyPair::default(), |_, _| Ok(()));
            assert!(matches!(r, Err(RlError::InvalidConfig(_))));
        }
    }

    #[test]
    fn bad_episode_length_rejected() {
        let mut cfg = tiny_cfg();
        cfg.episode_len = 50;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_only_has_no_prb_agent() {
        let (pair, log) = train_power_only(&mut env(), &tiny_cfg()).unwrap();
        assert!(pair.prb.is_none() && pair.pow.is_some());
        assert_eq!(pair.phase, 4);
        assert!(log.rows.iter().all(|r| r.phase == 4));
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let (_, log) = train_power_only(&mut env(), &tiny_cfg()).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,phase,slots,mean_reward"));
        assert_eq!(text.lines().count(), 3);
    }
}
