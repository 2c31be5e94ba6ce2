//! PRB-side decisions: quota integerization, the round-robin channel-aware
//! resolver and the proportional-fair baseline.
//!
//! Every tie resolves to the lowest index so schedules are replayable.

use ndarray::Array2;

use crate::channel::ChannelSlot;
use crate::grid::PrbAssignment;

/// Per-user PRB shares and their integer quotas.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotaVector {
    pub logits: Vec<f64>,
    pub shares: Vec<f64>,
    pub quotas: Vec<usize>,
}

impl QuotaVector {
    pub fn total(&self) -> usize {
        self.quotas.iter().sum()
    }
}

/// Slot-level channel score `psi[b, u] = sum_l g[l, b, u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScore {
    pub psi: Array2<f64>,
}

impl ChannelScore {
    pub fn num_prbs(&self) -> usize {
        self.psi.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.psi.ncols()
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Largest-remainder rounding of `shares * total` to integers summing to `total`.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let ideal: Vec<f64> = shares.iter().map(|q| q * total as f64).collect();
    let mut quotas: Vec<usize> = ideal.iter().map(|v| v.floor().max(0.0) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // descending remainder; stable sort keeps lower index first on ties
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &u in order.iter().cycle().take(total.saturating_sub(assigned)) {
        quotas[u] += 1;
    }
    quotas
}

pub fn quotas_from_logits(z: &[f64], num_prbs: usize) -> QuotaVector {
    let shares = softmax(z);
    let quotas = largest_remainder(&shares, num_prbs);
    QuotaVector { logits: z.to_vec(), shares, quotas }
}

pub fn channel_score(g: &ChannelSlot) -> ChannelScore {
    let (l_dim, b_dim, u_dim) = g.dims();
    let mut psi = Array2::zeros((b_dim, u_dim));
    for l in 0..l_dim {
        for b in 0..b_dim {
            for u in 0..u_dim {
                psi[[b, u]] += g.gain(l, b, u);
            }
        }
    }
    ChannelScore { psi }
}

/// Maps integer quotas to PRBs: users take turns in ascending order, each
/// grabbing its best remaining PRB until its quota is spent.
pub fn resolve_prbs(quotas: &[usize], score: &ChannelScore) -> PrbAssignment {
    let (b_dim, u_dim) = score.psi.dim();
    assert_eq!(quotas.len(), u_dim, "one quota per user");
    assert!(quotas.iter().sum::<usize>() <= b_dim, "quotas exceed PRB count");
    let mut remaining = quotas.to_vec();
    let mut available = vec![true; b_dim];
    let mut x = PrbAssignment::empty(b_dim, u_dim);
    while remaining.iter().any(|&q| q > 0) {
        for (u, left) in remaining.iter_mut().enumerate() {
            if *left == 0 {
                continue;
            }
            let mut best: Option<usize> = None;
            for b in (0..b_dim).filter(|&b| available[b]) {
                if best.is_none_or(|k| score.psi[[b, u]] > score.psi[[k, u]]) {
                    best = Some(b);
                }
            }
            let b = best.expect("a PRB is available while quota remains");
            available[b] = false;
            *left -= 1;
            x.assign(b, u);
        }
    }
    x
}

/// Proportional fair: each PRB goes to `argmax_u psi[b,u] / (T_u + eps)`.
pub fn pf_schedule(score: &ChannelScore, smoothed: &[f64], epsilon: f64) -> PrbAssignment {
    let (b_dim, u_dim) = score.psi.dim();
    assert_eq!(smoothed.len(), u_dim);
    let owners: Vec<Option<usize>> = (0..b_dim)
        .map(|b| {
            let mut best = 0;
            let mut best_m = f64::NEG_INFINITY;
            for (u, t) in smoothed.iter().enumerate() {
                let m = score.psi[[b, u]] / (t + epsilon);
                if m > best_m {
                    best_m = m;
                    best = u;
                }
            }
            Some(best)
        })
        .collect();
    PrbAssignment::from_owners(&owners, u_dim)
}
