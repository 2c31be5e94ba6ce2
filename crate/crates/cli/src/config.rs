use std::fs;
use std::path::{Path, PathBuf};

use prbsim::channel::ChannelGenConfig;
use prbsim::env::EnvConfig;
use prbsim::grid::CellConfig;
use prbsim::metrics::MetricsConfig;
use prbsim::phymac::{McsTable, PhyConfig};
use prbsim::rl::curriculum::CurriculumConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub trace: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            trace: "trace.bin".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub cell: CellConfig,
    pub channel: ChannelGenConfig,
    pub metrics: MetricsConfig,
    pub phy: PhyConfig,
    /// CSV with `index,efficiency,threshold_db` rows replacing the built-in table.
    pub mcs_table: Option<PathBuf>,
    pub curriculum: CurriculumConfig,
    /// Slots written by `gen-channels` when `--slots` is absent.
    pub trace_slots: usize,
    /// Slots evaluated by `eval` when `--slots` is absent.
    pub eval_slots: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            cell: CellConfig::default(),
            channel: ChannelGenConfig::default(),
            metrics: MetricsConfig::default(),
            phy: PhyConfig::default(),
            mcs_table: None,
            curriculum: CurriculumConfig::default(),
            trace_slots: 4000,
            eval_slots: 2000,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if let Some(t) = &cfg.mcs_table {
            if !t.exists() {
                return Err(CliError::Usage(format!("MCS table {} does not exist", t.display())));
            }
        }
        Ok(cfg)
    }

    /// Flag, then config file, then `PRBSIM_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = match (flag, self.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => match std::env::var("PRBSIM_SEED") {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("PRBSIM_SEED={v:?} is not an unsigned integer")))?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn env_config(&self) -> Result<EnvConfig, CliError> {
        let mut phy = self.phy.clone();
        if let Some(path) = &self.mcs_table {
            let f = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            phy.mcs = McsTable::from_csv(f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
        let cfg = EnvConfig { cell: self.cell.clone(), phy, metrics: self.metrics.clone() };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// First 8 bytes of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let d = Sha256::digest(&json);
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}
