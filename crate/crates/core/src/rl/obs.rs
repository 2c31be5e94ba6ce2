//! Per-user observation features for the two agents.
//!
//! Each user contributes a contiguous block:
//!
//! | # | feature |
//! |---|---------|
//! | 0 | mean channel score / cell mean score |
//! | 1 | max channel score / cell mean score |
//! | 2 | previous PRB share |
//! | 3 | previous power share |
//! | 4 | smoothed throughput / `T_norm` |
//! | 5 | ACK rate over the history window |
//! | 6 | OLLA offset / cap |
//! | 7 | last MCS / max MCS |
//! | 8 | resolved PRB count / B (power agent only) |

use crate::env::Environment;
use crate::grid::PrbAssignment;

pub const PRB_FEATURES: usize = 8;
pub const POWER_FEATURES: usize = 9;

pub fn prb_obs_dim(num_users: usize) -> usize {
    num_users * PRB_FEATURES
}

pub fn power_obs_dim(num_users: usize) -> usize {
    num_users * POWER_FEATURES
}

fn user_block(env: &Environment, u: usize, cell_mean: f64) -> [f64; PRB_FEATURES] {
    let psi = &env.score().psi;
    let col = psi.column(u);
    let n = col.len() as f64;
    let (mean, max) = if cell_mean > 0.0 {
        (
            col.sum() / n / cell_mean,
            col.iter().cloned().fold(0.0, f64::max) / cell_mean,
        )
    } else {
        (0.0, 0.0)
    };
    let tracker = env.tracker();
    let link = &env.links()[u];
    let phy = &env.config().phy;
    [
        mean,
        max,
        env.prev_prb_share()[u],
        env.prev_power_share()[u],
        tracker.t[u] / tracker.t_norm,
        link.ack_rate(),
        link.olla_offset_db / phy.olla_cap_db,
        link.last_mcs as f64 / phy.mcs.max_index().max(1) as f64,
    ]
}

/// Observation of the PRB agent, built before scheduling.
pub fn build_obs_prb(env: &Environment) -> Vec<f64> {
    let cell_mean = env.score().psi.mean().unwrap_or(0.0);
    let u_dim = env.cell().num_users;
    let mut out = Vec::with_capacity(prb_obs_dim(u_dim));
    for u in 0..u_dim {
        out.extend_from_slice(&user_block(env, u, cell_mean));
    }
    out
}

/// Observation of the power agent, built from the resolved schedule.
pub fn build_obs_pow(env: &Environment, x: &PrbAssignment) -> Vec<f64> {
    let cell_mean = env.score().psi.mean().unwrap_or(0.0);
    let u_dim = env.cell().num_users;
    let b = env.cell().num_prbs as f64;
    let counts = x.counts();
    let mut out = Vec::with_capacity(power_obs_dim(u_dim));
    for (u, &count) in counts.iter().enumerate() {
        out.extend_from_slice(&user_block(env, u, cell_mean));
        out.push(count as f64 / b);
    }
    out
}
