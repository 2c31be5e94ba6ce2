//! Matched-channel evaluation of the four schemes.
//!
//! Every scheme replays the same immutable trace from slot 0 with freshly
//! reset link and fairness state. Each scheme's BLER draws come from its own
//! stream seeded by `(seed, scheme)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::ChannelTrace;
use crate::env::{EnvConfig, EnvError, Environment};
use crate::rl::nn::PolicyNet;
use crate::rl::{decide, PowerRule, PrbRule, RlError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scheme {0} needs a checkpoint that was not provided")]
    MissingCheckpoint(Scheme),
    #[error("trace has {available} slots but {requested} were requested")]
    TraceTooShort { requested: usize, available: usize },
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("malformed per-slot data: {0}")]
    Format(String),
    #[error("no rows to summarize")]
    Empty,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    PfBaseline,
    PrbAgent,
    PowerAgent,
    PrbPlusPower,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::PfBaseline, Scheme::PrbAgent, Scheme::PowerAgent, Scheme::PrbPlusPower];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PfBaseline => "pf",
            Scheme::PrbAgent => "prb",
            Scheme::PowerAgent => "power",
            Scheme::PrbPlusPower => "joint",
        }
    }

    fn kind(self) -> u64 {
        match self {
            Scheme::PfBaseline => 0,
            Scheme::PrbAgent => 1,
            Scheme::PowerAgent => 2,
            Scheme::PrbPlusPower => 3,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EvalError::UnknownScheme(s.to_string()))
    }
}

/// Parses a comma-separated scheme list such as `pf,prb,power,joint`.
pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>, EvalError> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Trained networks available to the evaluation.
#[derive(Debug, Clone, Default)]
pub struct EvalPolicies {
    /// Phase-1 PRB policy, run with equal power.
    pub prb_agent: Option<PolicyNet>,
    /// Power policy trained on the PF schedule.
    pub power_agent: Option<PolicyNet>,
    /// Phase-3 PRB and power policies.
    pub joint: Option<(PolicyNet, PolicyNet)>,
}

impl EvalPolicies {
    fn rules(&self, scheme: Scheme) -> Result<(PrbRule<'_>, PowerRule<'_>), EvalError> {
        let missing = || EvalError::MissingCheckpoint(scheme);
        Ok(match scheme {
            Scheme::PfBaseline => (PrbRule::Pf, PowerRule::Equal),
            Scheme::PrbAgent => (PrbRule::Policy(self.prb_agent.as_ref().ok_or_else(missing)?), PowerRule::Equal),
            Scheme::PowerAgent => (PrbRule::Pf, PowerRule::Policy(self.power_agent.as_ref().ok_or_else(missing)?)),
            Scheme::PrbPlusPower => {
                let (a, b) = self.joint.as_ref().ok_or_else(missing)?;
                (PrbRule::Policy(a), PowerRule::Policy(b))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRow {
    pub slot: usize,
    pub scheme: Scheme,
    pub cell_throughput_bps: f64,
    pub jain: f64,
    pub reward: f64,
    pub rates_bps: Vec<f64>,
    pub smoothed_bps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub rows: Vec<SlotRow>,
    /// SHA-256 over every channel tensor the scheme consumed.
    pub channel_digest: Option<[u8; 32]>,
    /// Whether every link started without a pending HARQ block.
    pub harq_clean_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_users: usize,
    pub runs: Vec<SchemeRun>,
}

fn phy_seed(seed: u64, scheme: Scheme) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scheme.kind().to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[allow(clippy::too_many_arguments)]
fn run_scheme(
    trace: &Arc<ChannelTrace>,
    cfg: &EnvConfig,
    t_norm: f64,
    scheme: Scheme,
    policies: &EvalPolicies,
    slots: usize,
    seed: u64,
    kappa_max: f64,
) -> Result<SchemeRun, EvalError> {
    let (prb, pow) = policies.rules(scheme)?;
    let mut env = Environment::new(trace.clone(), cfg.clone(), t_norm, phy_seed(seed, scheme))?;
    let harq_clean_start = env.links().iter().all(|l| l.harq.is_none());
    let mut digest = Sha256::new();
    let mut rows = Vec::with_capacity(slots);
    for slot in 0..slots {
        for g in env.channel().array().iter() {
            digest.update(g.to_le_bytes());
        }
        let (x, p) = decide(&env, prb, pow, kappa_max)?;
        let r = env.step(&x, &p)?;
        rows.push(SlotRow {
            slot,
            scheme,
            cell_throughput_bps: r.cell_throughput_bps,
            jain: r.jain,
            reward: r.reward,
            rates_bps: r.rates_bps,
            smoothed_bps: r.smoothed_bps,
        });
    }
    Ok(SchemeRun { scheme, rows, channel_digest: Some(digest.finalize().into()), harq_clean_start })
}

/// Evaluates each scheme over the first `slots` slots of `trace`. Schemes
/// run on separate threads; results keep the requested order.
#[allow(clippy::too_many_arguments)]
pub fn run_matched_eval(
    trace: &Arc<ChannelTrace>,
    cfg: &EnvConfig,
    t_norm: f64,
    schemes: &[Scheme],
    policies: &EvalPolicies,
    slots: usize,
    seed: u64,
    kappa_max: f64,
) -> Result<EvalReport, EvalError> {
    if slots > trace.num_slots() {
        return Err(EvalError::TraceTooShort { requested: slots, available: trace.num_slots() });
    }
    for &s in schemes {
        policies.rules(s)?;
    }
    let runs = std::thread::scope(|sc| {
        let handles: Vec<_> = schemes
            .iter()
            .map(|&s| sc.spawn(move || run_scheme(trace, cfg, t_norm, s, policies, slots, seed, kappa_max)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(EvalReport { num_users: cfg.cell.num_users, runs })
}

impl EvalReport {
    /// Per-slot CSV: `slot,scheme,cell_throughput_bps,jain,reward,r_0..,t_0..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["slot", "scheme", "cell_throughput_bps", "jain", "reward"].map(String::from).to_vec();
        header.extend((0..self.num_users).map(|u| format!("r_{u}")));
        header.extend((0..self.num_users).map(|u| format!("t_{u}")));
        w.write_record(&header)?;
        for run in &self.runs {
            for r in &run.rows {
                let mut rec = vec![r.slot.to_string(), r.scheme.name().to_string()];
                rec.extend([r.cell_throughput_bps, r.jain, r.reward].iter().map(f64::to_string));
                rec.extend(r.rates_bps.iter().chain(&r.smoothed_bps).map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a per-slot CSV back. Channel digests are not stored and come
    /// back as `None`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 5 || (header.len() - 5) % 2 != 0 {
            return Err(EvalError::Format("unexpected column count".into()));
        }
        let u = (header.len() - 5) / 2;
        let mut runs: Vec<SchemeRun> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, EvalError> {
                rec[i].parse().map_err(|_| EvalError::Format(format!("row {}: bad number in column {i}", line + 1)))
            };
            let scheme: Scheme = rec[1].parse()?;
            let row = SlotRow {
                slot: rec[0].parse().map_err(|_| EvalError::Format(format!("row {}: bad slot", line + 1)))?,
                scheme,
                cell_throughput_bps: num(2)?,
                jain: num(3)?,
                reward: num(4)?,
                rates_bps: (5..5 + u).map(num).collect::<Result<_, _>>()?,
                smoothed_bps: (5 + u..5 + 2 * u).map(num).collect::<Result<_, _>>()?,
            };
            match runs.last_mut() {
                Some(run) if run.scheme == scheme && row.slot == run.rows.len() => run.rows.push(row),
                _ => runs.push(SchemeRun { scheme, rows: vec![row], channel_digest: None, harq_clean_start: true }),
            }
        }
        Ok(Self { num_users: u, runs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub slots: usize,
    pub mean_bps: f64,
    pub median_bps: f64,
    pub p10_bps: f64,
    pub jain_mean: f64,
    pub jain_median: f64,
    /// Mean throughput change relative to PF in percent; absent without a
    /// PF run.
    pub delta_mean_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub cumulative_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub scheme: Scheme,
    pub metric: String,
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schemes: Vec<SchemeSummary>,
    #[serde(skip)]
    pub cdfs: Vec<CdfTable>,
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn lower_median(xs: &[f64]) -> f64 {
    sorted(xs)[(xs.len() - 1) / 2]
}

/// Nearest-rank percentile: the `ceil(q n)`-th smallest value.
pub fn nearest_rank(xs: &[f64], q: f64) -> f64 {
    let s = sorted(xs);
    let rank = (q * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Empirical CDF: the i-th smallest value gets probability `i / n`.
pub fn empirical_cdf(xs: &[f64]) -> Vec<CdfPoint> {
    let n = xs.len() as f64;
    sorted(xs)
        .into_iter()
        .enumerate()
        .map(|(i, value)| CdfPoint { value, cumulative_probability: (i + 1) as f64 / n })
        .collect()
}

pub fn summarize(report: &EvalReport) -> Result<Summary, EvalError> {
    if report.runs.is_empty() || report.runs.iter().any(|r| r.rows.is_empty()) {
        return Err(EvalError::Empty);
    }
    let pf_mean = report
        .runs
        .iter()
        .find(|r| r.scheme == Scheme::PfBaseline)
        .map(|r| mean(&r.rows.iter().map(|x| x.cell_throughput_bps).collect::<Vec<_>>()));
    let mut schemes = Vec::new();
    let mut cdfs = Vec::new();
    for run in &report.runs {
        let tp: Vec<f64> = run.rows.iter().map(|r| r.cell_throughput_bps).collect();
        let j: Vec<f64> = run.rows.iter().map(|r| r.jain).collect();
        let m = mean(&tp);
        schemes.push(SchemeSummary {
            scheme: run.scheme,
            slots: tp.len(),
            mean_bps: m,
            median_bps: lower_median(&tp),
            p10_bps: nearest_rank(&tp, 0.1),
            jain_mean: mean(&j),
            jain_median: lower_median(&j),
            delta_mean_pct: pf_mean.map(|pf| 100.0 * (m - pf) / pf),
        });
        cdfs.push(CdfTable { scheme: run.scheme, metric: "cell_throughput_bps".into(), points: empirical_cdf(&tp) });
        cdfs.push(CdfTable { scheme: run.scheme, metric: "jain".into(), points: empirical_cdf(&j) });
    }
    Ok(Summary { schemes, cdfs })
}

impl Summary {
    pub fn write_json<W: Write>(&self, w: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// CDF rows: `scheme,metric,value,cumulative_probability`.
    pub fn write_cdf_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["scheme", "metric", "value", "cumulative_probability"])?;
        for t in &self.cdfs {
            for p in &t.points {
                w.write_record([t.scheme.name(), &t.metric, &p.value.to_string(), &p.cumulative_probability.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_trace, ChannelGenConfig};
    use crate::rl::obs::{power_obs_dim, prb_obs_dim};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(slots: usize) -> (Arc<ChannelTrace>, EnvConfig) {
        let cfg = EnvConfig::default();
        let trace = Arc::new(generate_trace(&ChannelGenConfig::default(), &cfg.cell, slots).unwrap());
        (trace, cfg)
    }

    fn policies() -> EvalPolicies {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prb = PolicyNet::init(prb_obs_dim(4), 8, 4, -0.5, &mut rng);
        let pow = PolicyNet::init(power_obs_dim(4), 8, 8, -0.5, &mut rng);
        EvalPolicies { prb_agent: Some(prb.clone()), power_agent: Some(pow.clone()), joint: Some((prb, pow)) }
    }

    fn csv_bytes(r: &EvalReport) -> Vec<u8> {
        let mut b = Vec::new();
        r.write_csv(&mut b).unwrap();
        b
    }

    #[test]
    fn quantile_conventions() {
        let xs: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 0.1), 1.0);
        assert_eq!(lower_median(&xs), 5.0);
        let same = [3.0; 7];
        assert_eq!((mean(&same), lower_median(&same), nearest_rank(&same, 0.1)), (3.0, 3.0, 3.0));
        let cdf = empirical_cdf(&same);
        assert_eq!(cdf.last().unwrap().cumulative_probability, 1.0);
        assert!(cdf.iter().all(|p| p.value == 3.0));
    }

    #[test]
    fn scheme_names_round_trip() {
        assert_eq!(parse_schemes("pf,prb,power,joint").unwrap(), Scheme::ALL.to_vec());
        assert!(matches!(parse_schemes("pf,greedy"), Err(EvalError::UnknownScheme(_))));
    }

    #[test]
    fn same_call_twice_is_byte_identical() {
        let (trace, cfg) = setup(60);
        let p = policies();
        let a = run_matched_eval(&trace, &cfg, 1e8, &Scheme::ALL, &p, 60, 4, 8.0).unwrap();
        let b = run_matched_eval(&trace, &cfg, 1e8, &Scheme::ALL, &p, 60, 4, 8.0).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        let d0 = a.runs[0].channel_digest;
        assert!(a.runs.iter().all(|r| r.channel_digest == d0 && r.harq_clean_start && r.rows.len() == 60));
    }

    #[test]
    fn pf_listed_twice_is_identical() {
        let (trace, cfg) = setup(40);
        let r = run_matched_eval(&trace, &cfg, 1e8, &[Scheme::PfBaseline, Scheme::PfBaseline], &EvalPolicies::default(), 40, 1, 8.0)
            .unwrap();
        assert_eq!(r.runs[0].rows, r.runs[1].rows);
        let s = summarize(&r).unwrap();
        assert_eq!(s.schemes[0].delta_mean_pct, Some(0.0));
    }

    #[test]
    fn errors_surface() {
        let (trace, cfg) = setup(20);
        assert!(matches!(
            run_matched_eval(&trace, &cfg, 1e8, &[Scheme::PfBaseline], &EvalPolicies::default(), 21, 0, 8.0),
            Err(EvalError::TraceTooShort { requested: 21, available: 20 })
        ));
        assert!(matches!(
            run_matched_eval(&trace, &cfg, 1e8, &[Scheme::PrbPlusPower], &EvalPolicies::default(), 5, 0, 8.0),
            Err(EvalError::MissingCheckpoint(Scheme::PrbPlusPower))
        ));
    }

    #[test]
    fn csv_round_trip_resummarizes_identically() {
        let (trace, cfg) = setup(30);
        let r = run_matched_eval(&trace, &cfg, 1e8, &Scheme::ALL, &policies(), 30, 2, 8.0).unwrap();
        let back = EvalReport::read_csv(csv_bytes(&r).as_slice()).unwrap();
        assert_eq!(summarize(&back).unwrap(), summarize(&r).unwrap());
        assert_eq!(back.runs.len(), 4);
        assert_eq!(back.runs[2].rows, r.runs[2].rows);
    }
}
