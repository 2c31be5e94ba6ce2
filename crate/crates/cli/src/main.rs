mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use prbsim::channel::{generate_trace, load_trace, save_sidecar, save_trace, ChannelError, ChannelTrace};
use prbsim::env::{calibrate_t_norm, EnvError, Environment};
use prbsim::eval::{parse_schemes, run_matched_eval, summarize, EvalError, EvalPolicies, EvalReport, Scheme, Summary};
use prbsim::rl::checkpoint::{load_checkpoint, save_checkpoint};
use prbsim::rl::curriculum::{run_curriculum, Phase, PolicyPair};
use prbsim::rl::RlError;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::ZeroCalibration => CliError::Numeric(e.to_string()),
            EnvError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RlError> for CliError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::NonFiniteLoss | RlError::FrozenPolicyChanged { .. } => CliError::Numeric(e.to_string()),
            RlError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            RlError::Env(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownScheme(_) => CliError::Usage(e.to_string()),
            EvalError::Env(inner) => inner.into(),
            EvalError::Rl(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "prbsim", version, about = "OFDMA downlink simulator with a hierarchical PRB/power controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed; `PRBSIM_SEED` is used when neither is set.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic channel trace.
    GenChannels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        slots: Option<usize>,
        /// Output trace path (defaults to `paths.trace`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the training curriculum or the power-only ablation.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated curriculum phases, e.g. `1` or `1,2,3`.
        #[arg(long)]
        phases: Option<String>,
        /// Train an ablation instead of the curriculum.
        #[arg(long, value_parser = ["power-only"])]
        ablation: Option<String>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Checkpoint directory (defaults to `paths.checkpoints`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Matched-channel evaluation of the selected schemes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pf,prb,power,joint")]
        schemes: String,
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Report directory (defaults to `paths.reports`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-summarize an existing per-slot CSV.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the directory of `--input`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn prepare(common: &Common) -> Result<(RunConfig, u64), CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let seed = cfg.resolve_seed(common.seed)?;
    println!("config hash: {:016x}", cfg.hash());
    Ok((cfg, seed))
}

fn load_matching_trace(path: &Path, cfg: &RunConfig) -> Result<Arc<ChannelTrace>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("trace {} does not exist", path.display())));
    }
    let trace = load_trace(path)?;
    if !trace.matches(&cfg.cell) {
        return Err(CliError::Data(format!("trace {} does not match the cell config", path.display())));
    }
    Ok(Arc::new(trace))
}

fn gen_channels(common: Common, slots: Option<usize>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (mut cfg, seed) = prepare(&common)?;
    cfg.channel.seed = seed;
    let slots = slots.unwrap_or(cfg.trace_slots);
    let out = out.unwrap_or_else(|| cfg.paths.trace.clone());
    let trace = generate_trace(&cfg.channel, &cfg.cell, slots)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_trace(&trace, &out)?;
    save_sidecar(&cfg.channel, &out)?;
    let h = trace.header();
    println!(
        "wrote {}: users={} prbs={} symbols={} slots={} seed={} params_hash={:016x}",
        out.display(),
        h.num_users,
        h.num_prbs,
        h.data_symbols,
        h.num_slots,
        h.seed,
        h.params_hash
    );
    Ok(())
}

fn parse_phases(s: &str) -> Result<Vec<Phase>, CliError> {
    let phases = s
        .split(',')
        .map(|p| match p.trim() {
            "1" => Ok(Phase::Prb),
            "2" => Ok(Phase::Power),
            "3" => Ok(Phase::Joint),
            other => Err(CliError::Usage(format!("unknown phase {other:?}; expected 1, 2 or 3"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if phases.windows(2).any(|w| w[0].id() >= w[1].id()) {
        return Err(CliError::Usage("phases must be strictly increasing".into()));
    }
    Ok(phases)
}

fn checkpoint_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Prb => "phase1.ckpt",
        Phase::Power => "phase2.ckpt",
        Phase::Joint => "phase3.ckpt",
        Phase::PowerOnly => "power_only.ckpt",
    }
}

fn train(
    common: Common,
    phases: Option<String>,
    ablation: Option<String>,
    resume: Option<PathBuf>,
    trace: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let (mut cfg, seed) = prepare(&common)?;
    cfg.curriculum.seed = seed;
    let hash = cfg.hash();

    let init = match &resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config_hash != hash {
                eprintln!("warning: {} was written under config hash {:016x}", path.display(), ck.config_hash);
            }
            PolicyPair::from_checkpoint(ck)
        }
        None => PolicyPair::default(),
    };
    let phases = match (&ablation, &phases) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--ablation cannot be combined with --phases".into())),
        (Some(_), None) if resume.is_some() => {
            return Err(CliError::Usage("--ablation cannot be combined with --resume".into()))
        }
        (Some(_), None) => vec![Phase::PowerOnly],
        (None, Some(p)) => parse_phases(p)?,
        (None, None) => [Phase::Prb, Phase::Power, Phase::Joint]
            .into_iter()
            .filter(|p| p.id() > init.phase)
            .collect(),
    };
    if phases.is_empty() {
        return Err(CliError::Usage("nothing to train: the checkpoint already completed phase 3".into()));
    }

    let trace_path = trace.unwrap_or_else(|| cfg.paths.trace.clone());
    let trace = load_matching_trace(&trace_path, &cfg)?;
    let env_cfg = cfg.env_config()?;
    let t_norm = calibrate_t_norm(&trace, &env_cfg, seed)?;
    println!("T_norm: {t_norm:.6e} bit/s");
    let mut env = Environment::new(trace, env_cfg, t_norm, seed)?;

    let out_dir = out_dir.unwrap_or_else(|| cfg.paths.checkpoints.clone());
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let (_, log) = run_curriculum(&mut env, &cfg.curriculum, &phases, init, |phase, pair| {
        let path = out_dir.join(checkpoint_name(phase));
        save_checkpoint(&pair.to_checkpoint(hash), &path)?;
        println!("phase {} done: {}", phase.id(), path.display());
        Ok(())
    })?;

    let log_name = if ablation.is_some() { "power_only_log.csv" } else { "train_log.csv" };
    let log_path = out_dir.join(log_name);
    let f = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    log.write_csv(f)?;
    if let Some(last) = log.rows.last() {
        println!(
            "{} iterations, {} slots, final mean reward {:.4}; log: {}",
            log.rows.len(),
            last.slots,
            last.mean_reward,
            log_path.display()
        );
    }
    Ok(())
}

fn load_policies(dir: &Path, schemes: &[Scheme]) -> Result<EvalPolicies, CliError> {
    let mut p = EvalPolicies::default();
    let need = |file: &str, scheme: Scheme| -> Result<PolicyPair, CliError> {
        let path = dir.join(file);
        if !path.exists() {
            return Err(EvalError::MissingCheckpoint(scheme).into());
        }
        Ok(PolicyPair::from_checkpoint(load_checkpoint(&path)?))
    };
    let missing = |s: Scheme| CliError::from(EvalError::MissingCheckpoint(s));
    for &s in schemes {
        match s {
            Scheme::PfBaseline => {}
            Scheme::PrbAgent if p.prb_agent.is_none() => {
                p.prb_agent = Some(need("phase1.ckpt", s)?.prb.ok_or_else(|| missing(s))?.net);
            }
            Scheme::PowerAgent if p.power_agent.is_none() => {
                p.power_agent = Some(need("power_only.ckpt", s)?.pow.ok_or_else(|| missing(s))?.net);
            }
            Scheme::PrbPlusPower if p.joint.is_none() => {
                let pair = need("phase3.ckpt", s)?;
                match (pair.prb, pair.pow) {
                    (Some(a), Some(b)) => p.joint = Some((a.net, b.net)),
                    _ => return Err(missing(s)),
                }
            }
            _ => {}
        }
    }
    Ok(p)
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<6} {:>7} {:>14} {:>14} {:>14} {:>9} {:>9} {:>9}",
        "scheme", "slots", "mean_bps", "median_bps", "p10_bps", "jain", "jain_med", "dT_%"
    );
    for s in &summary.schemes {
        let delta = s.delta_mean_pct.map_or("-".to_string(), |d| format!("{d:+.2}"));
        println!(
            "{:<6} {:>7} {:>14.6e} {:>14.6e} {:>14.6e} {:>9.4} {:>9.4} {:>9}",
            s.scheme.name(),
            s.slots,
            s.mean_bps,
            s.median_bps,
            s.p10_bps,
            s.jain_mean,
            s.jain_median,
            delta
        );
    }
}

fn write_summary(summary: &Summary, dir: &Path) -> Result<(), CliError> {
    let path = dir.join("summary.json");
    summary.write_json(fs::File::create(&path).map_err(|e| io_err(&path, e))?)?;
    let path = dir.join("cdf.csv");
    summary.write_cdf_csv(fs::File::create(&path).map_err(|e| io_err(&path, e))?)?;
    Ok(())
}

fn eval(
    common: Common,
    schemes: String,
    slots: Option<usize>,
    trace: Option<PathBuf>,
    checkpoints: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, seed) = prepare(&common)?;
    let schemes = parse_schemes(&schemes)?;
    let trace_path = trace.unwrap_or_else(|| cfg.paths.trace.clone());
    let trace = load_matching_trace(&trace_path, &cfg)?;
    let slots = slots.unwrap_or_else(|| cfg.eval_slots.min(trace.num_slots()));
    let ck_dir = checkpoints.unwrap_or_else(|| cfg.paths.checkpoints.clone());
    let policies = load_policies(&ck_dir, &schemes)?;
    let env_cfg = cfg.env_config()?;
    let t_norm = calibrate_t_norm(&trace, &env_cfg, seed)?;
    println!("T_norm: {t_norm:.6e} bit/s");

    let report = run_matched_eval(&trace, &env_cfg, t_norm, &schemes, &policies, slots, seed, cfg.curriculum.kappa_max)?;
    let summary = summarize(&report)?;

    let out_dir = out_dir.unwrap_or_else(|| cfg.paths.reports.clone());
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let path = out_dir.join("per_slot.csv");
    report.write_csv(fs::File::create(&path).map_err(|e| io_err(&path, e))?)?;
    write_summary(&summary, &out_dir)?;
    print_summary(&summary);
    println!("reports written to {}", out_dir.display());
    Ok(())
}

fn report(common: Common, input: PathBuf, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    prepare(&common)?;
    let f = fs::File::open(&input).map_err(|e| io_err(&input, e))?;
    let report = EvalReport::read_csv(f)?;
    let summary = summarize(&report)?;
    let out_dir = out_dir
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    write_summary(&summary, &out_dir)?;
    print_summary(&summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenChannels { common, slots, out } => gen_channels(common, slots, out),
        Command::Train { common, phases, ablation, resume, trace, out_dir } => {
            train(common, phases, ablation, resume, trace, out_dir)
        }
        Command::Eval { common, schemes, slots, trace, checkpoints, out_dir } => {
            eval(common, schemes, slots, trace, checkpoints, out_dir)
        }
        Command::Report { common, input, out_dir } => report(common, input, out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
