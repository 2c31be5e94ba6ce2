//! Smoothed throughput, Jain's index and the shared slot reward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub beta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// Multiplier on the PF warm-up cell throughput giving `T_norm`.
    pub t_norm_scale: f64,
    pub t_norm_warmup_slots: usize,
    /// Fixed `T_norm` in bits/s; overrides calibration when set.
    pub t_norm_bps: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            epsilon: 1e-9,
            alpha: 0.5,
            t_norm_scale: 1.5,
            t_norm_warmup_slots: 200,
            t_norm_bps: None,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err("beta must lie in (0, 1]".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("alpha must lie in [0, 1]".into());
        }
        if !(self.t_norm_scale > 0.0) || self.t_norm_warmup_slots == 0 {
            return Err("T_norm calibration needs a positive scale and warm-up".into());
        }
        if let Some(t) = self.t_norm_bps {
            if !(t > 0.0 && t.is_finite()) {
                return Err("t_norm_bps must be positive".into());
            }
        }
        Ok(())
    }
}

/// Per-user exponentially smoothed throughput plus reward constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessTracker {
    pub t: Vec<f64>,
    pub beta: f64,
    pub epsilon: f64,
    pub t_norm: f64,
    pub alpha: f64,
}

impl FairnessTracker {
    pub fn new(num_users: usize, cfg: &MetricsConfig, t_norm: f64) -> Self {
        Self { t: vec![0.0; num_users], beta: cfg.beta, epsilon: cfg.epsilon, t_norm, alpha: cfg.alpha }
    }

    /// `T_u <- (1 - beta) T_u + beta R_u`, with `R` in bits/s.
    pub fn update_smoothed(&mut self, rates: &[f64]) {
        debug_assert_eq!(rates.len(), self.t.len());
        for (t, r) in self.t.iter_mut().zip(rates) {
            *t = (1.0 - self.beta) * *t + self.beta * r.max(0.0);
        }
    }

    pub fn jain(&self) -> f64 {
        jain_index(&self.t, self.epsilon)
    }

    pub fn cell_throughput(&self) -> f64 {
        self.t.iter().sum()
    }

    pub fn reward(&self) -> f64 {
        reward(&self.t, self.t_norm, self.alpha, self.epsilon)
    }

    pub fn reset(&mut self) {
        self.t.iter_mut().for_each(|t| *t = 0.0);
    }
}

/// `(sum T)^2 / (U sum T^2 + eps)`; an all-zero vector counts as fair (1).
pub fn jain_index(t: &[f64], epsilon: f64) -> f64 {
    let s: f64 = t.iter().sum();
    if s <= 0.0 {
        return 1.0;
    }
    let sq: f64 = t.iter().map(|v| v * v).sum();
    s * s / (t.len() as f64 * sq + epsilon)
}

/// `(1 - alpha) clip(sum T / T_norm, 0, 1) + alpha J`.
pub fn reward(t: &[f64], t_norm: f64, alpha: f64, epsilon: f64) -> f64 {
    let norm = (t.iter().sum::<f64>() / t_norm).clamp(0.0, 1.0);
    (1.0 - alpha) * norm + alpha * jain_index(t, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tracker(t: Vec<f64>, beta: f64) -> FairnessTracker {
        FairnessTracker { t, beta, epsilon: 1e-9, t_norm: 1.0, alpha: 0.5 }
    }

    #[test]
    fn smoothing_examples() {
        let mut a = tracker(vec![0.0], 1.0);
        a.update_smoothed(&[5.0]);
        assert_eq!(a.t, vec![5.0]);
        let mut b = tracker(vec![10.0], 0.1);
        b.update_smoothed(&[0.0]);
        assert!((b.t[0] - 9.0).abs() < 1e-12);
        let mut c = tracker(vec![0.0, 100.0], 0.1);
        for _ in 0..500 {
            c.update_smoothed(&[7.0, 7.0]);
        }
        assert!(c.t.iter().all(|t| (t - 7.0).abs() < 1e-9));
    }

    #[test]
    fn jain_examples() {
        assert!((jain_index(&[3.0; 4], 0.0) - 1.0).abs() < 1e-15);
        assert!((jain_index(&[1.0, 0.0, 0.0, 0.0], 1e-9) - 0.25).abs() < 1e-9);
        assert!((jain_index(&[2.0, 1.0, 1.0, 0.0], 0.0) - 16.0 / 24.0).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0; 4], 1e-9), 1.0);
    }

    #[test]
    fn reward_examples() {
        assert!((reward(&[1.0, 1.0], 1.0, 0.5, 1e-12) - 1.0).abs() < 1e-9);
        assert!((reward(&[0.0; 4], 5.0, 0.3, 1e-9) - 0.3).abs() < 1e-15);
        let t = [0.2, 0.1, 0.05];
        assert!((reward(&t, 1.0, 0.0, 1e-9) - 0.35).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn jain_bounds_and_scale_invariance(
            t in prop::collection::vec(0.0f64..1e8, 1..8),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(t.iter().sum::<f64>() > 1.0);
            let j = jain_index(&t, 1e-9);
            let u = t.len() as f64;
            prop_assert!(j <= 1.0 + 1e-12 && j >= 1.0 / u - 1e-9);
            let scaled: Vec<f64> = t.iter().map(|v| v * c).collect();
            prop_assert!((jain_index(&scaled, 1e-9) - j).abs() / j < 1e-6);
        }

        #[test]
        fn reward_in_unit_interval(
            t in prop::collection::vec(0.0f64..1e9, 1..8),
            t_norm in 1.0f64..1e9,
            alpha in 0.0f64..=1.0,
        ) {
            let g = reward(&t, t_norm, alpha, 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&g));
        }

        #[test]
        fn smoothing_contracts_toward_rate(t0 in 0.0f64..1e6, r in 0.0f64..1e6, beta in 0.01f64..=1.0) {
            let mut tr = tracker(vec![t0], beta);
            tr.update_smoothed(&[r]);
            prop_assert!(((tr.t[0] - r).abs() - (1.0 - beta) * (t0 - r).abs()).abs() < 1e-6);
        }
    }
}
