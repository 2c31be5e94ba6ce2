//! Closed-loop slot environment shared by training and evaluation.
//!
//! An [`Environment`] replays a cached channel trace, executes feasible slot
//! decisions through the PHY/MAC abstraction and maintains the fairness
//! tracker that defines the common reward.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelSlot, ChannelTrace};
use crate::grid::{validate_assignment, validate_power, CellConfig, GridError, PowerTensor, PrbAssignment, BUDGET_REL_TOL};
use crate::metrics::{FairnessTracker, MetricsConfig};
use crate::phymac::{step_slot, LinkState, PhyConfig, PhyError, SlotOutcome};
use crate::power::{assemble_power_tensor, equal_power, user_budgets, PowerAction, PowerError};
use crate::scheduler::{channel_score, pf_schedule, quotas_from_logits, resolve_prbs, ChannelScore, QuotaVector};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("trace dimensions do not match the cell config")]
    TraceMismatch,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("T_norm calibration produced zero throughput")]
    ZeroCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub cell: CellConfig,
    pub phy: PhyConfig,
    pub metrics: MetricsConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.cell.validate()?;
        self.phy.validate()?;
        self.metrics.validate().map_err(EnvError::InvalidConfig)?;
        Ok(())
    }
}

/// What one executed slot produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub trace_slot: usize,
    pub outcome: SlotOutcome,
    /// Delivered rates `R_u(t)` in bits/s.
    pub rates_bps: Vec<f64>,
    pub cell_throughput_bps: f64,
    pub smoothed_bps: Vec<f64>,
    pub jain: f64,
    pub reward: f64,
}

pub struct Environment {
    trace: Arc<ChannelTrace>,
    cfg: EnvConfig,
    links: Vec<LinkState>,
    tracker: FairnessTracker,
    rng: ChaCha8Rng,
    cursor: usize,
    channel: ChannelSlot,
    score: ChannelScore,
    prev_prb_share: Vec<f64>,
    prev_power_share: Vec<f64>,
}

impl Environment {
    pub fn new(trace: Arc<ChannelTrace>, cfg: EnvConfig, t_norm: f64, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        if !trace.matches(&cfg.cell) {
            return Err(EnvError::TraceMismatch);
        }
        if !(t_norm > 0.0 && t_norm.is_finite()) {
            return Err(EnvError::InvalidConfig("T_norm must be positive".into()));
        }
        let u = cfg.cell.num_users;
        let channel = trace.slot(0);
        let score = channel_score(&channel);
        Ok(Self {
            links: vec![LinkState::new(cfg.phy.ack_window); u],
            tracker: FairnessTracker::new(u, &cfg.metrics, t_norm),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: 0,
            channel,
            score,
            prev_prb_share: vec![0.0; u],
            prev_power_share: vec![0.0; u],
            trace,
            cfg,
        })
    }

    /// Clears link, HARQ, OLLA and throughput state and moves to `start_slot`.
    pub fn reset(&mut self, start_slot: usize, seed: u64) {
        let u = self.cfg.cell.num_users;
        self.links = vec![LinkState::new(self.cfg.phy.ack_window); u];
        self.tracker.reset();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.prev_prb_share = vec![0.0; u];
        self.prev_power_share = vec![0.0; u];
        self.load_slot(start_slot % self.trace.num_slots());
    }

    fn load_slot(&mut self, t: usize) {
        self.cursor = t;
        self.channel = self.trace.slot(t);
        self.score = channel_score(&self.channel);
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn cell(&self) -> &CellConfig {
        &self.cfg.cell
    }

    pub fn channel_trace(&self) -> &Arc<ChannelTrace> {
        &self.trace
    }

    pub fn trace_slot(&self) -> usize {
        self.cursor
    }

    pub fn channel(&self) -> &ChannelSlot {
        &self.channel
    }

    pub fn score(&self) -> &ChannelScore {
        &self.score
    }

    pub fn links(&self) -> &[LinkState] {
        &self.links
    }

    pub fn tracker(&self) -> &FairnessTracker {
        &self.tracker
    }

    pub fn prev_prb_share(&self) -> &[f64] {
        &self.prev_prb_share
    }

    pub fn prev_power_share(&self) -> &[f64] {
        &self.prev_power_share
    }

    /// PF schedule against the current smoothed throughputs.
    pub fn pf_assignment(&self) -> PrbAssignment {
        pf_schedule(&self.score, &self.tracker.t, self.cfg.metrics.epsilon)
    }

    /// Quota integerization plus channel-aware resolution.
    pub fn quota_assignment(&self, logits: &[f64]) -> (QuotaVector, PrbAssignment) {
        let q = quotas_from_logits(logits, self.cfg.cell.num_prbs);
        let x = resolve_prbs(&q.quotas, &self.score);
        (q, x)
    }

    pub fn equal_power(&self, x: &PrbAssignment) -> PowerTensor {
        equal_power(x, self.cfg.cell.p_max, self.cfg.cell.data_symbols)
    }

    pub fn shaped_power(&self, x: &PrbAssignment, action: &PowerAction) -> Result<PowerTensor, EnvError> {
        let budget = user_budgets(&action.weights, self.cfg.cell.p_max);
        Ok(assemble_power_tensor(&budget, &action.kappa, x, &self.channel, self.cfg.cell.p_max)?)
    }

    /// Executes a validated decision on the current slot and advances the trace.
    pub fn step(&mut self, x: &PrbAssignment, p: &PowerTensor) -> Result<StepResult, EnvError> {
        let cell = &self.cfg.cell;
        validate_assignment(x, cell)?;
        validate_power(p, x, cell, BUDGET_REL_TOL)?;
        let outcome = step_slot(x, p, &self.channel, cell, &self.cfg.phy, &mut self.links, &mut self.rng)?;
        let rates_bps: Vec<f64> = outcome.delivered_bits.iter().map(|b| b / cell.slot_duration).collect();
        self.tracker.update_smoothed(&rates_bps);

        let b = cell.num_prbs as f64;
        self.prev_prb_share = x.counts().iter().map(|c| *c as f64 / b).collect();
        self.prev_power_share = (0..cell.num_users).map(|u| p.user_total(u) / cell.p_max).collect();

        let result = StepResult {
            trace_slot: self.cursor,
            cell_throughput_bps: rates_bps.iter().sum(),
            rates_bps,
            smoothed_bps: self.tracker.t.clone(),
            jain: self.tracker.jain(),
            reward: self.tracker.reward(),
            outcome,
        };
        self.load_slot((self.cursor + 1) % self.trace.num_slots());
        Ok(result)
    }
}

/// `T_norm` from a PF equal-power warm-up over the first slots of a trace.
pub fn calibrate_t_norm(trace: &Arc<ChannelTrace>, cfg: &EnvConfig, seed: u64) -> Result<f64, EnvError> {
    if let Some(t) = cfg.metrics.t_norm_bps {
        return Ok(t);
    }
    let mut env = Environment::new(trace.clone(), cfg.clone(), 1.0, seed)?;
    let n = cfg.metrics.t_norm_warmup_slots;
    let mut total = 0.0;
    for _ in 0..n {
        let x = env.pf_assignment();
        let p = env.equal_power(&x);
        total += env.step(&x, &p)?.cell_throughput_bps;
    }
    let mean = total / n as f64;
    if !(mean > 0.0) {
        return Err(EnvError::ZeroCalibration);
    }
    Ok(mean * cfg.metrics.t_norm_scale)
}
