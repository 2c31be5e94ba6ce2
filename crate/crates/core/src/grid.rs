//! Resource grid dimensions and the per-slot decision variables.
//!
//! A slot decision is a PRB assignment `x[b, u]` (shared by every data
//! symbol of the slot) plus a power tensor `p[l, b, u]` in linear watts.
//! The validators here are the single source of truth for feasibility:
//! every scheduler/power path is expected to produce outputs that pass both.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance (watts) for "zero power" on unscheduled resources.
pub const POWER_ZERO_ABS_TOL: f64 = 1e-15;
/// Default relative tolerance for the slot power budget.
pub const BUDGET_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid cell config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("PRB {prb} violates exclusivity (users {users:?})")]
    ConstraintViolation { prb: usize, users: Vec<usize> },
    #[error("non-binary assignment entry at PRB {prb}, user {user}")]
    NonBinary { prb: usize, user: usize },
    #[error("slot power {total} W exceeds budget")]
    BudgetExceeded { total: f64 },
    #[error("power on unscheduled RE (symbol {symbol}, PRB {prb}, user {user})")]
    PowerOnUnscheduled { symbol: usize, prb: usize, user: usize },
    #[error("negative or non-finite power at (symbol {symbol}, PRB {prb}, user {user})")]
    InvalidPower { symbol: usize, prb: usize, user: usize },
}

/// Single-cell radio configuration.
///
/// `noise_power` is per resource element; all powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    pub num_users: usize,
    pub num_prbs: usize,
    pub data_symbols: usize,
    pub subcarriers_per_prb: usize,
    pub p_max: f64,
    pub noise_power: f64,
    pub slot_duration: f64,
    pub seed: u64,
    /// Metadata only.
    pub carrier_hz: f64,
    /// Metadata only.
    pub subcarrier_spacing_hz: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        let scs: f64 = 30e3;
        Self {
            num_users: 4,
            num_prbs: 51,
            data_symbols: 12,
            subcarriers_per_prb: 12,
            p_max: dbm_to_watts(40.0),
            // thermal noise over one subcarrier plus a 7 dB noise figure
            noise_power: dbm_to_watts(-174.0 + 10.0 * scs.log10() + 7.0),
            slot_duration: 0.5e-3,
            seed: 0,
            carrier_hz: 3.5e9,
            subcarrier_spacing_hz: scs,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.num_users == 0 || self.num_prbs == 0 || self.data_symbols == 0 {
            return Err(GridError::InvalidConfig(
                "num_users, num_prbs and data_symbols must be >= 1".into(),
            ));
        }
        if self.subcarriers_per_prb == 0 {
            return Err(GridError::InvalidConfig("subcarriers_per_prb must be >= 1".into()));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(GridError::InvalidConfig("p_max must be positive".into()));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(GridError::InvalidConfig("noise_power must be positive".into()));
        }
        if !(self.slot_duration > 0.0) {
            return Err(GridError::InvalidConfig("slot_duration must be positive".into()));
        }
        Ok(())
    }

    /// Shape `(L, B, U)` of per-slot tensors.
    pub fn tensor_shape(&self) -> (usize, usize, usize) {
        (self.data_symbols, self.num_prbs, self.num_users)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Binary PRB-to-user map for one slot, indexed `(prb, user)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrbAssignment {
    x: Array2<u8>,
}

impl PrbAssignment {
    pub fn empty(num_prbs: usize, num_users: usize) -> Self {
        Self { x: Array2::zeros((num_prbs, num_users)) }
    }

    /// Wraps a raw matrix without checking it; use [`validate_assignment`].
    pub fn from_matrix(x: Array2<u8>) -> Self {
        Self { x }
    }

    /// Builds an assignment from a per-PRB owner list.
    pub fn from_owners(owners: &[Option<usize>], num_users: usize) -> Self {
        let mut a = Self::empty(owners.len(), num_users);
        for (b, o) in owners.iter().enumerate() {
            if let Some(u) = o {
                a.x[[b, *u]] = 1;
            }
        }
        a
    }

    pub fn num_prbs(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &Array2<u8> {
        &self.x
    }

    pub fn assign(&mut self, prb: usize, user: usize) {
        self.x[[prb, user]] = 1;
    }

    pub fn is_assigned(&self, prb: usize, user: usize) -> bool {
        self.x[[prb, user]] != 0
    }

    /// First user holding `prb`, if any.
    pub fn owner(&self, prb: usize) -> Option<usize> {
        self.x.row(prb).iter().position(|&v| v != 0)
    }

    /// PRBs held by `user`, ascending.
    pub fn prbs_of(&self, user: usize) -> Vec<usize> {
        (0..self.num_prbs()).filter(|&b| self.is_assigned(b, user)).collect()
    }

    /// Column sums: number of PRBs per user.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.num_users())
            .map(|u| self.x.column(u).iter().filter(|&&v| v != 0).count())
            .collect()
    }

    pub fn is_idle(&self) -> bool {
        self.x.iter().all(|&v| v == 0)
    }
}

/// Per-(symbol, PRB, user) transmit power in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTensor {
    p: Array3<f64>,
}

impl PowerTensor {
    pub fn zeros(symbols: usize, prbs: usize, users: usize) -> Self {
        Self { p: Array3::zeros((symbols, prbs, users)) }
    }

    pub fn from_array(p: Array3<f64>) -> Self {
        Self { p }
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.p
    }

    pub fn array_mut(&mut self) -> &mut Array3<f64> {
        &mut self.p
    }

    pub fn total(&self) -> f64 {
        self.p.sum()
    }

    /// Total power granted to one user over the slot.
    pub fn user_total(&self, user: usize) -> f64 {
        self.p.index_axis(ndarray::Axis(2), user).sum()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.p.dim()
    }
}

/// Checks PRB exclusivity and binarity.
pub fn validate_assignment(x: &PrbAssignment, cfg: &CellConfig) -> Result<(), GridError> {
    let (b_dim, u_dim) = x.matrix().dim();
    if b_dim != cfg.num_prbs || u_dim != cfg.num_users {
        return Err(GridError::ShapeMismatch {
            expected: vec![cfg.num_prbs, cfg.num_users],
            got: vec![b_dim, u_dim],
        });
    }
    for (b, row) in x.matrix().outer_iter().enumerate() {
        if let Some(u) = row.iter().position(|&v| v > 1) {
            return Err(GridError::NonBinary { prb: b, user: u });
        }
        let users: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(u, _)| u)
            .collect();
        if users.len() > 1 {
            return Err(GridError::ConstraintViolation { prb: b, users });
        }
    }
    Ok(())
}

/// Checks the slot budget (relative tolerance `tol`) and that power sits
/// only on scheduled PRBs (absolute tolerance [`POWER_ZERO_ABS_TOL`]).
pub fn validate_power(
    p: &PowerTensor,
    x: &PrbAssignment,
    cfg: &CellConfig,
    tol: f64,
) -> Result<(), GridError> {
    let (l_dim, b_dim, u_dim) = cfg.tensor_shape();
    if p.shape() != (l_dim, b_dim, u_dim) {
        let (a, b, c) = p.shape();
        return Err(GridError::ShapeMismatch {
            expected: vec![l_dim, b_dim, u_dim],
            got: vec![a, b, c],
        });
    }
    if x.matrix().dim() != (b_dim, u_dim) {
        let (a, b) = x.matrix().dim();
        return Err(GridError::ShapeMismatch { expected: vec![b_dim, u_dim], got: vec![a, b] });
    }
    for ((l, b, u), &v) in p.array().indexed_iter() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(GridError::InvalidPower { symbol: l, prb: b, user: u });
        }
        if !x.is_assigned(b, u) && v > POWER_ZERO_ABS_TOL {
            return Err(GridError::PowerOnUnscheduled { symbol: l, prb: b, user: u });
        }
    }
    let total = p.total();
    if total > cfg.p_max * (1.0 + tol) {
        return Err(GridError::BudgetExceeded { total });
    }
    Ok(())
}
