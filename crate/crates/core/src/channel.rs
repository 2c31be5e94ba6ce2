//! Synthetic channel-gain traces.
//!
//! Each (user, PRB) pair carries a complex Gauss-Markov fading process that
//! evolves at OFDM-symbol granularity in time and is driven by innovations
//! that are themselves AR(1)-correlated across PRBs. Only `|h|^2` is kept,
//! scaled by a per-user pathloss gain and an optional slow log-normal
//! shadowing term.
//!
//! Traces are cached to a fixed binary layout so every scheme in an
//! evaluation can replay exactly the same channel:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PRBTRACE"
//!      8     4  version (u32 LE, = 1)
//!     12     4  users U (u32 LE)
//!     16     4  PRBs B (u32 LE)
//!     20     4  data symbols L (u32 LE)
//!     24     8  slots H (u64 LE)
//!     32     8  seed (u64 LE)
//!     40     8  generator params hash (u64 LE)
//!     48    16  reserved, zero
//!     64     .  H*L*B*U f32 LE gains, (slot, symbol, prb, user) order
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::CellConfig;

pub const TRACE_MAGIC: &[u8; 8] = b"PRBTRACE";
pub const TRACE_VERSION: u32 = 1;
pub const TRACE_HEADER_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("trace format error at byte {offset}: {reason}")]
    FormatError { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Channel power gains `|h|^2` of one slot, indexed `(symbol, prb, user)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSlot {
    g: Array3<f32>,
}

impl ChannelSlot {
    pub fn new(g: Array3<f32>) -> Result<Self, ChannelError> {
        if let Some(((l, b, u), v)) = g.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(ChannelError::InvalidConfig(format!(
                "gain {v} at (symbol {l}, prb {b}, user {u}) is not a finite nonnegative value"
            )));
        }
        Ok(Self { g })
    }

    /// Constant gain everywhere.
    pub fn constant(symbols: usize, prbs: usize, users: usize, value: f32) -> Self {
        Self { g: Array3::from_elem((symbols, prbs, users), value) }
    }

    #[inline]
    pub fn gain(&self, symbol: usize, prb: usize, user: usize) -> f64 {
        self.g[[symbol, prb, user]] as f64
    }

    pub fn array(&self) -> ArrayView3<'_, f32> {
        self.g.view()
    }

    /// `(L, B, U)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.g.dim()
    }
}

fn default_pathloss() -> Vec<f64> {
    // mean per-RE SNR of roughly 33/30/27/24 dB at equal power with the
    // default cell numerology
    [-90.6, -93.6, -96.6, -99.6].iter().map(|db| db_to_lin(*db)).collect()
}

/// Parameters of the synthetic channel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelGenConfig {
    /// Mean large-scale gain per user (linear).
    pub pathloss_gain: Vec<f64>,
    pub shadowing_std_db: f64,
    /// Slot-to-slot correlation of the shadowing process.
    pub shadowing_corr: f64,
    /// Slot-to-slot fading correlation, used when `speeds_mps` is absent.
    pub rho_t: f64,
    /// Per-user speeds; maps to `rho_t = exp(-v / v_ref_mps)`.
    pub speeds_mps: Option<Vec<f64>>,
    pub v_ref_mps: f64,
    /// Adjacent-PRB correlation of the fading innovations.
    pub rho_f: f64,
    pub seed: u64,
}

impl Default for ChannelGenConfig {
    fn default() -> Self {
        Self {
            pathloss_gain: default_pathloss(),
            shadowing_std_db: 2.0,
            shadowing_corr: 0.999,
            rho_t: 0.95,
            speeds_mps: Some(vec![8.0, 12.0, 15.0, 10.0]),
            v_ref_mps: 300.0,
            rho_f: 0.9,
            seed: 1,
        }
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl ChannelGenConfig {
    /// Config with the given per-user pathloss (dB gains, e.g. -100.0).
    pub fn with_pathloss_db(pathloss_db: &[f64]) -> Self {
        Self {
            pathloss_gain: pathloss_db.iter().map(|d| db_to_lin(*d)).collect(),
            speeds_mps: None,
            ..Default::default()
        }
    }

    pub fn validate(&self, num_users: usize) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidConfig(m.to_string()));
        if self.pathloss_gain.len() != num_users {
            return bad(&format!(
                "pathloss_gain has {} entries for {num_users} users",
                self.pathloss_gain.len()
            ));
        }
        if self.pathloss_gain.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("pathloss gains must be finite and > 0");
        }
        let in_unit = |r: f64| (0.0..1.0).contains(&r);
        if !in_unit(self.rho_f) {
            return bad("rho_f must lie in [0, 1)");
        }
        if !in_unit(self.shadowing_corr) {
            return bad("shadowing_corr must lie in [0, 1)");
        }
        if !(self.shadowing_std_db >= 0.0 && self.shadowing_std_db.is_finite()) {
            return bad("shadowing_std_db must be >= 0");
        }
        match &self.speeds_mps {
            Some(v) => {
                if v.len() != num_users {
                    return bad("speeds_mps must have one entry per user");
                }
                if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("speeds must be positive");
                }
                if !(self.v_ref_mps > 0.0) {
                    return bad("v_ref_mps must be positive");
                }
            }
            None => {
                if !in_unit(self.rho_t) {
                    return bad("rho_t must lie in [0, 1)");
                }
            }
        }
        Ok(())
    }

    /// Slot-to-slot fading correlation of each user.
    pub fn user_rho_t(&self, num_users: usize) -> Vec<f64> {
        match &self.speeds_mps {
            Some(v) => v.iter().map(|s| (-s / self.v_ref_mps).exp()).collect(),
            None => vec![self.rho_t; num_users],
        }
    }

    /// First 8 bytes (LE) of the SHA-256 of the canonical JSON encoding.
    pub fn params_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub num_users: usize,
    pub num_prbs: usize,
    pub data_symbols: usize,
    pub num_slots: usize,
    pub seed: u64,
    pub params_hash: u64,
}

impl TraceHeader {
    fn slot_len(&self) -> usize {
        self.num_users * self.num_prbs * self.data_symbols
    }
}

/// Immutable cached sequence of per-slot channel gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    header: TraceHeader,
    gains: Vec<f32>,
}

impl ChannelTrace {
    pub fn from_parts(header: TraceHeader, gains: Vec<f32>) -> Result<Self, ChannelError> {
        if gains.len() != header.slot_len() * header.num_slots {
            return Err(ChannelError::InvalidConfig(format!(
                "body has {} gains, header implies {}",
                gains.len(),
                header.slot_len() * header.num_slots
            )));
        }
        Ok(Self { header, gains })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn num_slots(&self) -> usize {
        self.header.num_slots
    }

    pub fn slot_view(&self, t: usize) -> ArrayView3<'_, f32> {
        let h = &self.header;
        let n = h.slot_len();
        ArrayView3::from_shape((h.data_symbols, h.num_prbs, h.num_users), &self.gains[t * n..(t + 1) * n])
            .expect("slot shape")
    }

    pub fn slot(&self, t: usize) -> ChannelSlot {
        ChannelSlot { g: self.slot_view(t).to_owned() }
    }

    pub fn gains(&self) -> &[f32] {
        &self.gains
    }

    /// Whether the trace dimensions fit a cell configuration.
    pub fn matches(&self, cell: &CellConfig) -> bool {
        self.header.num_users == cell.num_users
            && self.header.num_prbs == cell.num_prbs
            && self.header.data_symbols == cell.data_symbols
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (re * s, im * s)
}

/// Generates `num_slots` slots of channel gains.
pub fn generate_trace(
    cfg: &ChannelGenConfig,
    cell: &CellConfig,
    num_slots: usize,
) -> Result<ChannelTrace, ChannelError> {
    if num_slots == 0 {
        return Err(ChannelError::InvalidConfig("num_slots must be >= 1".into()));
    }
    cell.validate().map_err(|e| ChannelError::InvalidConfig(e.to_string()))?;
    cfg.validate(cell.num_users)?;

    let (l_dim, b_dim, u_dim) = cell.tensor_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // per-symbol coefficient so that one slot apart the correlation is rho_t
    let rho_sym: Vec<f64> = cfg
        .user_rho_t(u_dim)
        .iter()
        .map(|r| if *r <= 0.0 { 0.0 } else { r.powf(1.0 / l_dim as f64) })
        .collect();
    let rho_f = cfg.rho_f;
    let innov_f = (1.0 - rho_f * rho_f).sqrt();

    let draw_field = |rng: &mut ChaCha8Rng, out: &mut [(f64, f64)]| {
        let mut prev = (0.0, 0.0);
        for (b, w) in out.iter_mut().enumerate() {
            let n = complex_normal(rng);
            *w = if b == 0 {
                n
            } else {
                (rho_f * prev.0 + innov_f * n.0, rho_f * prev.1 + innov_f * n.1)
            };
            prev = *w;
        }
    };

    // stationary start
    let mut h = vec![vec![(0.0, 0.0); b_dim]; u_dim];
    for hu in h.iter_mut() {
        draw_field(&mut rng, hu);
    }
    let sh_std = cfg.shadowing_std_db;
    let sh_c = cfg.shadowing_corr;
    let mut shadow_db: Vec<f64> = (0..u_dim)
        .map(|_| sh_std * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let slot_len = l_dim * b_dim * u_dim;
    let mut gains = vec![0f32; slot_len * num_slots];
    let mut w = vec![(0.0, 0.0); b_dim];
    for t in 0..num_slots {
        if t > 0 {
            for s in shadow_db.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *s = sh_c * *s + (1.0 - sh_c * sh_c).sqrt() * sh_std * n;
            }
        }
        let slot = &mut gains[t * slot_len..(t + 1) * slot_len];
        for u in 0..u_dim {
            let scale = cfg.pathloss_gain[u] * db_to_lin(shadow_db[u]);
            let a = rho_sym[u];
            let innov_t = (1.0 - a * a).sqrt();
            for l in 0..l_dim {
                if !(t == 0 && l == 0) {
                    draw_field(&mut rng, &mut w);
                    for (hb, wb) in h[u].iter_mut().zip(&w) {
                        hb.0 = a * hb.0 + innov_t * wb.0;
                        hb.1 = a * hb.1 + innov_t * wb.1;
                    }
                }
                for b in 0..b_dim {
                    let (re, im) = h[u][b];
                    slot[(l * b_dim + b) * u_dim + u] = ((re * re + im * im) * scale) as f32;
                }
            }
        }
    }

    ChannelTrace::from_parts(
        TraceHeader {
            num_users: u_dim,
            num_prbs: b_dim,
            data_symbols: l_dim,
            num_slots,
            seed: cfg.seed,
            params_hash: cfg.params_hash(),
        },
        gains,
    )
}

/// Serializes a trace to the binary layout in the module docs.
pub fn encode_trace(trace: &ChannelTrace) -> Vec<u8> {
    let h = &trace.header;
    let mut buf = Vec::with_capacity(TRACE_HEADER_LEN + 4 * trace.gains.len());
    buf.extend_from_slice(TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.num_users as u32).to_le_bytes());
    buf.extend_from_slice(&(h.num_prbs as u32).to_le_bytes());
    buf.extend_from_slice(&(h.data_symbols as u32).to_le_bytes());
    buf.extend_from_slice(&(h.num_slots as u64).to_le_bytes());
    buf.extend_from_slice(&h.seed.to_le_bytes());
    buf.extend_from_slice(&h.params_hash.to_le_bytes());
    buf.resize(TRACE_HEADER_LEN, 0);
    for g in &trace.gains {
        buf.extend_from_slice(&g.to_le_bytes());
    }
    buf
}

pub fn decode_trace(bytes: &[u8]) -> Result<ChannelTrace, ChannelError> {
    let fmt = |offset: usize, reason: &str| ChannelError::FormatError { offset, reason: reason.to_string() };
    if bytes.len() < TRACE_HEADER_LEN {
        return Err(fmt(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != TRACE_MAGIC {
        return Err(fmt(0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != TRACE_VERSION {
        return Err(fmt(8, "unsupported version"));
    }
    let header = TraceHeader {
        num_users: u32_at(12) as usize,
        num_prbs: u32_at(16) as usize,
        data_symbols: u32_at(20) as usize,
        num_slots: u64_at(24) as usize,
        seed: u64_at(32),
        params_hash: u64_at(40),
    };
    if header.slot_len() == 0 || header.num_slots == 0 {
        return Err(fmt(12, "zero dimension"));
    }
    let count = header
        .slot_len()
        .checked_mul(header.num_slots)
        .ok_or_else(|| fmt(24, "dimension overflow"))?;
    let body = &bytes[TRACE_HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(fmt(
            TRACE_HEADER_LEN + body.len().min(count * 4),
            &format!("body holds {} bytes, header implies {}", body.len(), count * 4),
        ));
    }
    let gains: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = gains.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(fmt(TRACE_HEADER_LEN + 4 * i, "gain is negative or non-finite"));
    }
    Ok(ChannelTrace { header, gains })
}

pub fn save_trace(trace: &ChannelTrace, path: &Path) -> Result<(), ChannelError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_trace(trace))?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<ChannelTrace, ChannelError> {
    decode_trace(&fs::read(path)?)
}

/// Location of the JSON sidecar recording generator params for a trace.
pub fn sidecar_path(trace_path: &Path) -> PathBuf {
    let mut s = trace_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_sidecar(cfg: &ChannelGenConfig, trace_path: &Path) -> Result<PathBuf, ChannelError> {
    let p = sidecar_path(trace_path);
    fs::write(&p, serde_json::to_string_pretty(cfg)?)?;
    Ok(p)
}

pub fn load_sidecar(trace_path: &Path) -> Result<ChannelGenConfig, ChannelError> {
    Ok(serde_json::from_slice(&fs::read(sidecar_path(trace_path))?)?)
}
