//! Power-side decisions.
//!
//! The power action factorizes into per-user softmax budget shares `w` and
//! per-user shaping coefficients `kappa`. Within a user, each symbol ranks
//! the user's PRBs by channel gain and weights rank `m` by
//! `exp(-kappa (m - 1))`; weights are normalized over all of the user's
//! (symbol, PRB) pairs so the user's budget is spent exactly.

use ndarray::Array2;
use thiserror::Error;

use crate::channel::ChannelSlot;
use crate::grid::{PowerTensor, PrbAssignment};
use crate::scheduler::softmax;

pub const KAPPA_MAX: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("user {user} has power budget but no scheduled PRB")]
    UnscheduledUserWithPower { user: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAction {
    pub weights: Vec<f64>,
    pub kappa: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl PowerAction {
    /// Splits a raw `2U` policy output into weight logits and squashed kappa.
    pub fn from_raw(raw: &[f64], kappa_max: f64) -> Self {
        assert!(raw.len().is_multiple_of(2), "power action has 2U entries");
        let u = raw.len() / 2;
        Self {
            weights: raw[..u].to_vec(),
            kappa: raw[u..].iter().map(|r| kappa_max * sigmoid(*r)).collect(),
        }
    }
}

/// Per-user shares and budgets in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBudget {
    pub shares: Vec<f64>,
    pub totals: Vec<f64>,
}

pub fn user_budgets(weights: &[f64], p_max: f64) -> PowerBudget {
    let shares = softmax(weights);
    let totals = shares.iter().map(|s| s * p_max).collect();
    PowerBudget { shares, totals }
}

/// Spreads `p_tot` over user `u`'s scheduled (symbol, PRB) pairs.
/// Returns an `(L, B)` matrix of watts.
pub fn shape_user_power(
    user: usize,
    p_tot: f64,
    kappa: f64,
    x: &PrbAssignment,
    g: &ChannelSlot,
) -> Result<Array2<f64>, PowerError> {
    let (l_dim, b_dim, _) = g.dims();
    let mut out = Array2::zeros((l_dim, b_dim));
    let prbs = x.prbs_of(user);
    if prbs.is_empty() {
        return if p_tot > 0.0 { Err(PowerError::UnscheduledUserWithPower { user }) } else { Ok(out) };
    }
    let mut order = prbs.clone();
    let mut norm = 0.0;
    for l in 0..l_dim {
        order.copy_from_slice(&prbs);
        // descending gain, lower PRB first on ties (stable sort)
        order.sort_by(|&a, &b| g.gain(l, b, user).partial_cmp(&g.gain(l, a, user)).unwrap());
        for (m, &b) in order.iter().enumerate() {
            let w = (-kappa * m as f64).exp();
            out[[l, b]] = w;
            norm += w;
        }
    }
    out.mapv_inplace(|w| p_tot * w / norm);
    Ok(out)
}

/// Full power tensor from budgets and shaping coefficients.
///
/// Budget shares of users without PRBs are handed to scheduled users in
/// proportion to their own shares, so the slot budget stays fully used.
pub fn assemble_power_tensor(
    budget: &PowerBudget,
    kappa: &[f64],
    x: &PrbAssignment,
    g: &ChannelSlot,
    p_max: f64,
) -> Result<PowerTensor, PowerError> {
    let (l_dim, b_dim, u_dim) = g.dims();
    if budget.shares.len() != u_dim || kappa.len() != u_dim || x.matrix().dim() != (b_dim, u_dim) {
        return Err(PowerError::Shape("budget, kappa, assignment and channel disagree".into()));
    }
    let counts = x.counts();
    let scheduled_share: f64 = budget
        .shares
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c > 0)
        .map(|(s, _)| *s)
        .sum();
    let mut p = PowerTensor::zeros(l_dim, b_dim, u_dim);
    if scheduled_share <= 0.0 {
        return Ok(p);
    }
    for u in 0..u_dim {
        if counts[u] == 0 {
            continue;
        }
        let p_tot = p_max * budget.shares[u] / scheduled_share;
        let shaped = shape_user_power(u, p_tot, kappa[u], x, g)?;
        p.array_mut().index_axis_mut(ndarray::Axis(2), u).assign(&shaped);
    }
    Ok(p)
}

/// Uniform split of `p_max` over every scheduled (symbol, PRB) pair.
pub fn equal_power(x: &PrbAssignment, p_max: f64, data_symbols: usize) -> PowerTensor {
    let (b_dim, u_dim) = x.matrix().dim();
    let mut p = PowerTensor::zeros(data_symbols, b_dim, u_dim);
    let scheduled: Vec<(usize, usize)> = (0..b_dim).filter_map(|b| x.owner(b).map(|u| (b, u))).collect();
    if scheduled.is_empty() {
        return p;
    }
    let each = p_max / (scheduled.len() * data_symbols) as f64;
    for l in 0..data_symbols {
        for &(b, u) in &scheduled {
            p.array_mut()[[l, b, u]] = each;
        }
    }
    p
}
