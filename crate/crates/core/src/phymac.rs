//! Abstracted PHY/MAC slot execution: per-RE SINR, capacity-equivalent
//! effective SINR, MCS selection, HARQ with Chase combining and outer-loop
//! link adaptation.

use std::collections::VecDeque;
use std::io::Read;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSlot;
use crate::grid::{CellConfig, PowerTensor, PrbAssignment};

#[derive(Debug, Error)]
pub enum PhyError {
    #[error("no scheduled resources")]
    NoScheduledResources,
    #[error("invalid MCS table: {0}")]
    InvalidTable(String),
    #[error("invalid PHY config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch between power, channel and assignment")]
    ShapeMismatch,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One row of the MCS ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: usize,
    /// bits per resource element
    pub efficiency: f64,
    pub threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

/// Every other entry of the 38.214 256QAM MCS table, plus its top entry.
const LADDER: [f64; 15] = [
    0.2344, 0.6016, 1.1758, 1.6953, 2.1602, 2.5703, 3.0293, 3.6094, 4.2129, 4.8164, 5.3320,
    5.8906, 6.5703, 7.1602, 7.4063,
];

pub const IMPLEMENTATION_MARGIN_DB: f64 = 1.0;

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self, PhyError> {
        if entries.is_empty() {
            return Err(PhyError::InvalidTable("empty table".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(PhyError::InvalidTable(format!("row {i} has index {}", e.index)));
            }
            if !(e.efficiency > 0.0 && e.efficiency.is_finite() && e.threshold_db.is_finite()) {
                return Err(PhyError::InvalidTable(format!("row {i} is not finite/positive")));
            }
        }
        for w in entries.windows(2) {
            if w[1].efficiency <= w[0].efficiency || w[1].threshold_db <= w[0].threshold_db {
                return Err(PhyError::InvalidTable(format!(
                    "rows {} and {} are not strictly increasing",
                    w[0].index, w[1].index
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Inverse-Shannon thresholds minus a fixed implementation margin.
    pub fn standard() -> Self {
        let entries = LADDER
            .iter()
            .enumerate()
            .map(|(index, &efficiency)| McsEntry {
                index,
                efficiency,
                threshold_db: 10.0 * (2f64.powf(efficiency) - 1.0).log10() - IMPLEMENTATION_MARGIN_DB,
            })
            .collect();
        Self::new(entries).expect("standard table is valid")
    }

    /// Reads `index,efficiency,threshold_db` rows (with header).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, PhyError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let entries = rdr.deserialize().collect::<Result<Vec<McsEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn to_csv(&self) -> Result<String, PhyError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf8"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn entry(&self, i: usize) -> &McsEntry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }
}

impl Default for McsTable {
    fn default() -> Self {
        Self::standard()
    }
}

/// Link-adaptation and HARQ constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    #[serde(skip)]
    pub mcs: McsTable,
    pub bler_slope_db: f64,
    pub max_retx: u32,
    pub target_bler: f64,
    pub olla_step_up_db: f64,
    pub olla_cap_db: f64,
    pub ack_window: usize,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            mcs: McsTable::standard(),
            bler_slope_db: 1.0,
            max_retx: 3,
            target_bler: 0.1,
            olla_step_up_db: 0.5,
            olla_cap_db: 5.0,
            ack_window: 20,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.bler_slope_db > 0.0) {
            return Err(PhyError::InvalidConfig("bler_slope_db must be > 0".into()));
        }
        if !(self.target_bler > 0.0 && self.target_bler < 1.0) {
            return Err(PhyError::InvalidConfig("target_bler must lie in (0, 1)".into()));
        }
        if !(self.olla_step_up_db > 0.0 && self.olla_cap_db > 0.0) {
            return Err(PhyError::InvalidConfig("OLLA step and cap must be > 0".into()));
        }
        if self.ack_window == 0 {
            return Err(PhyError::InvalidConfig("ack_window must be >= 1".into()));
        }
        Ok(())
    }

    /// OLLA step applied on ACK; the ratio pins the fixed point at `target_bler`.
    pub fn olla_step_down_db(&self) -> f64 {
        self.olla_step_up_db * self.target_bler / (1.0 - self.target_bler)
    }
}

/// A transport block awaiting retransmission.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqBlock {
    pub remaining_retx: u32,
    /// Chase-combined SINR so far (linear).
    pub accumulated_sinr: f64,
    pub tbs_bits: f64,
    pub mcs: usize,
}

/// Per-user link state carried across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub olla_offset_db: f64,
    pub harq: Option<HarqBlock>,
    pub ack_history: VecDeque<bool>,
    pub ack_window: usize,
    pub last_mcs: usize,
}

impl LinkState {
    pub fn new(ack_window: usize) -> Self {
        Self {
            olla_offset_db: 0.0,
            harq: None,
            ack_history: VecDeque::with_capacity(ack_window),
            ack_window,
            last_mcs: 0,
        }
    }

    pub fn record_ack(&mut self, ack: bool) {
        if self.ack_history.len() == self.ack_window {
            self.ack_history.pop_front();
        }
        self.ack_history.push_back(ack);
    }

    /// Fraction of ACKs over the history window; 0 when empty.
    pub fn ack_rate(&self) -> f64 {
        if self.ack_history.is_empty() {
            0.0
        } else {
            self.ack_history.iter().filter(|a| **a).count() as f64 / self.ack_history.len() as f64
        }
    }
}

/// `gamma = p * g / N0` per RE; `p_re` is the per-RE power.
pub fn sinr_per_re(p_re: &Array3<f64>, g: &ChannelSlot, n0: f64) -> Array3<f64> {
    let mut out = p_re.clone();
    out.zip_mut_with(&g.array(), |p, &gain| *p = *p * gain as f64 / n0);
    out
}

pub fn rate_proxy(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn db_to_lin(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// Lowest reportable effective SINR.
const SINR_FLOOR_DB: f64 = -100.0;

/// Capacity-equivalent effective SINR in dB: `2^mean(log2(1+g)) - 1`.
pub fn effective_sinr(sinrs: &[f64]) -> Result<f64, PhyError> {
    if sinrs.is_empty() {
        return Err(PhyError::NoScheduledResources);
    }
    let mean_cap = sinrs.iter().map(|g| rate_proxy(*g)).sum::<f64>() / sinrs.len() as f64;
    Ok(lin_to_db(2f64.powf(mean_cap) - 1.0).max(SINR_FLOOR_DB))
}

/// Highest MCS whose threshold is at or below `sinr + offset`; 0 if none.
pub fn select_mcs(sinr_eff_db: f64, olla_offset_db: f64, table: &McsTable) -> usize {
    let x = sinr_eff_db + olla_offset_db;
    table
        .entries()
        .iter()
        .rev()
        .find(|e| e.threshold_db <= x)
        .map_or(0, |e| e.index)
}

/// Logistic waterfall: 0.5 at the threshold, slope `slope_db`.
pub fn bler(threshold_db: f64, sinr_db: f64, slope_db: f64) -> f64 {
    1.0 / (1.0 + ((sinr_db - threshold_db) / slope_db).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub ack: bool,
    pub delivered_bits: f64,
    pub mcs: usize,
    pub bler: f64,
    pub retransmission: bool,
}

/// Sends one transport block for a scheduled user.
///
/// A pending HARQ block takes precedence over new data and is retried at
/// its original MCS and size with Chase-combined SINR. New blocks use
/// `mcs` and are sized by `re_count`.
pub fn transmit_and_harq<R: Rng + ?Sized>(
    state: &mut LinkState,
    mcs: usize,
    sinr_eff_db: f64,
    re_count: usize,
    phy: &PhyConfig,
    rng: &mut R,
) -> Transmission {
    assert!(re_count >= 1, "transmission needs at least one RE");
    let draw: f64 = rng.random();
    let sinr_lin = db_to_lin(sinr_eff_db);
    if let Some(mut block) = state.harq.take() {
        block.accumulated_sinr += sinr_lin;
        let p = bler(
            phy.mcs.entry(block.mcs).threshold_db,
            lin_to_db(block.accumulated_sinr),
            phy.bler_slope_db,
        );
        let ack = draw >= p;
        let delivered = if ack { block.tbs_bits } else { 0.0 };
        let used = block.mcs;
        if !ack && block.remaining_retx > 0 {
            block.remaining_retx -= 1;
            if block.remaining_retx > 0 {
                state.harq = Some(block);
            }
        }
        state.record_ack(ack);
        return Transmission { ack, delivered_bits: delivered, mcs: used, bler: p, retransmission: true };
    }
    let entry = phy.mcs.entry(mcs);
    let tbs = entry.efficiency * re_count as f64;
    let p = bler(entry.threshold_db, sinr_eff_db, phy.bler_slope_db);
    let ack = draw >= p;
    if !ack && phy.max_retx > 0 {
        state.harq = Some(HarqBlock {
            remaining_retx: phy.max_retx,
            accumulated_sinr: sinr_lin,
            tbs_bits: tbs,
            mcs,
        });
    }
    state.record_ack(ack);
    Transmission { ack, delivered_bits: if ack { tbs } else { 0.0 }, mcs, bler: p, retransmission: false }
}

/// Moves the OLLA offset after a first transmission: up on ACK, down on NACK.
pub fn olla_update(state: &mut LinkState, ack: bool, phy: &PhyConfig) {
    let delta = if ack { phy.olla_step_down_db() } else { -phy.olla_step_up_db };
    state.olla_offset_db = (state.olla_offset_db + delta).clamp(-phy.olla_cap_db, phy.olla_cap_db);
}

/// Per-user result of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    /// Delivered bits `R_u(t)` (not yet divided by the slot duration).
    pub delivered_bits: Vec<f64>,
    pub ack: Vec<Option<bool>>,
    pub eff_sinr_db: Vec<Option<f64>>,
    pub mcs: Vec<Option<usize>>,
    pub retransmission: Vec<bool>,
}

impl SlotOutcome {
    fn idle(u: usize) -> Self {
        Self {
            delivered_bits: vec![0.0; u],
            ack: vec![None; u],
            eff_sinr_db: vec![None; u],
            mcs: vec![None; u],
            retransmission: vec![false; u],
        }
    }
}

/// Executes one slot for every scheduled user, in ascending user order.
pub fn step_slot<R: Rng + ?Sized>(
    x: &PrbAssignment,
    p: &PowerTensor,
    g: &ChannelSlot,
    cell: &CellConfig,
    phy: &PhyConfig,
    states: &mut [LinkState],
    rng: &mut R,
) -> Result<SlotOutcome, PhyError> {
    let (l_dim, b_dim, u_dim) = cell.tensor_shape();
    if p.shape() != (l_dim, b_dim, u_dim)
        || g.dims() != (l_dim, b_dim, u_dim)
        || x.matrix().dim() != (b_dim, u_dim)
        || states.len() != u_dim
    {
        return Err(PhyError::ShapeMismatch);
    }
    let sc = cell.subcarriers_per_prb;
    let p_re = p.array().mapv(|v| v / sc as f64);
    let sinr = sinr_per_re(&p_re, g, cell.noise_power);

    let mut out = SlotOutcome::idle(u_dim);
    let mut buf = Vec::with_capacity(l_dim * b_dim);
    for (u, state) in states.iter_mut().enumerate() {
        let prbs = x.prbs_of(u);
        if prbs.is_empty() {
            continue;
        }
        buf.clear();
        for l in 0..l_dim {
            for &b in &prbs {
                buf.push(sinr[[l, b, u]]);
            }
        }
        let eff = effective_sinr(&buf)?;
        let mcs = select_mcs(eff, state.olla_offset_db, &phy.mcs);
        let tx = transmit_and_harq(state, mcs, eff, prbs.len() * l_dim * sc, phy, rng);
        if !tx.retransmission {
            olla_update(state, tx.ack, phy);
        }
        state.last_mcs = tx.mcs;
        out.delivered_bits[u] = tx.delivered_bits;
        out.ack[u] = Some(tx.ack);
        out.eff_sinr_db[u] = Some(eff);
        out.mcs[u] = Some(tx.mcs);
        out.retransmission[u] = tx.retransmission;
    }
    Ok(out)
}
