#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Single-cell OFDMA downlink simulator with a hierarchical PRB/power
//! controller, a proportional-fair baseline and matched-channel evaluation.

pub mod channel;
pub mod env;
pub mod eval;
pub mod grid;
pub mod metrics;
pub mod phymac;
pub mod power;
pub mod rl;
pub mod scheduler;
