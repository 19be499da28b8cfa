//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::detectors::{Detector, OampConfig};
use crate::harness::{
    self, checkpoint_digest, parse_snr_list, reduce_check, run_ber, run_diagnose, DetectorInfo, ReportFormat,
    SweepOptions,
};
use crate::model::{ChannelModel, SystemConfig};
use crate::training::{load_checkpoint, save_checkpoint, train_with_progress, AdamHyper, GradMethod, TrainConfig, TrainSnr};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "oampnet", version, about = "OAMP / OAMP-Net MIMO detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the per-layer scalars and write a checkpoint.
    Train(TrainArgs),
    /// BER against SNR for one detector.
    Sweep(SweepArgs),
    /// Per-layer tracked and measured error variances.
    Diagnose(DiagnoseArgs),
    /// Check that the network at γ = θ = 1 reproduces OAMP.
    ReduceCheck(ReduceArgs),
}

#[derive(Args, Debug, Clone)]
struct SystemArgs {
    #[arg(long, default_value_t = 4)]
    ntx: usize,
    #[arg(long, default_value_t = 4)]
    nrx: usize,
    /// QAM order (4, 16, 64, ...).
    #[arg(long = "mod", default_value_t = 4)]
    modulation: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ChannelKind::Rayleigh)]
    channel: ChannelKind,
    /// Exponential correlation coefficient; required with `--channel kronecker`.
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ChannelKind {
    Rayleigh,
    Kronecker,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DetectorKind {
    Oamp,
    Oampnet,
    Zf,
    Lmmse,
    Ml,
    Exact,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GradArg {
    Reverse,
    CentralDifference,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    sys: SystemArgs,
    /// Training SNR in dB.
    #[arg(long, default_value_t = 9.0, conflicts_with = "snr_range")]
    snr: f64,
    /// Draw the training SNR uniformly from `lo:hi` dB.
    #[arg(long)]
    snr_range: Option<String>,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1000)]
    batch: usize,
    #[arg(long, default_value_t = 5000)]
    train_samples: usize,
    #[arg(long, default_value_t = 1000)]
    val_samples: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Share one scalar per layer (`θ_t = γ_t`).
    #[arg(long)]
    tied: bool,
    #[arg(long, value_enum, default_value_t = GradArg::Reverse)]
    grad: GradArg,
    /// Output checkpoint path.
    #[arg(long, alias = "out")]
    checkpoint: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long, value_enum)]
    detector: DetectorKind,
    /// `start:stop:step` in dB (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0:16:2")]
    snr_list: String,
    /// Defaults to the checkpoint's layer count, or 10.
    #[arg(long)]
    layers: Option<usize>,
    /// Trained parameters for `--detector oampnet`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = harness::DEFAULT_MIN_ERRORS)]
    min_errors: u64,
    #[arg(long, default_value_t = harness::DEFAULT_MAX_BITS)]
    max_bits: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report zero wall time so that identical runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long)]
    layers: Option<usize>,
    /// Diagnose trained parameters instead of plain OAMP.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    realizations: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, default_value_t = 200)]
    realizations: usize,
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
}

impl SystemArgs {
    fn system(&self, snr_db: f64) -> Result<SystemConfig> {
        SystemConfig::new(self.ntx, self.nrx, self.modulation, snr_db, self.seed)
    }

    fn channel(&self) -> Result<ChannelModel> {
        match (self.channel, self.rho) {
            (ChannelKind::Rayleigh, None) => Ok(ChannelModel::Rayleigh),
            (ChannelKind::Rayleigh, Some(_)) => {
                Err(Error::InvalidConfig("--rho only applies to --channel kronecker".into()))
            }
            (ChannelKind::Kronecker, Some(rho)) => Ok(ChannelModel::Kronecker { rho }),
            (ChannelKind::Kronecker, None) => {
                Err(Error::InvalidConfig("--channel kronecker needs --rho".into()))
            }
        }
    }
}

fn format(f: FormatArg) -> ReportFormat {
    match f {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidConfig(format!("bad SNR range {text:?}, expected lo:hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let snr = match &a.snr_range {
        Some(r) => {
            let (lo, hi) = parse_range(r)?;
            TrainSnr::Range { lo, hi }
        }
        None => TrainSnr::Fixed { snr_db: a.snr },
    };
    let nominal = match snr {
        TrainSnr::Fixed { snr_db } => snr_db,
        TrainSnr::Range { lo, hi } => (lo + hi) / 2.0,
    };
    let sys = a.sys.system(nominal)?;
    let channel = a.sys.channel()?;
    let tcfg = TrainConfig {
        epochs: a.epochs,
        train_samples_per_epoch: a.train_samples,
        val_samples_per_epoch: a.val_samples,
        batch_size: a.batch,
        adam: AdamHyper {
            learning_rate: a.lr,
            ..AdamHyper::default()
        },
        snr,
        seed: a.sys.seed,
        grad_method: match a.grad {
            GradArg::Reverse => GradMethod::Reverse,
            GradArg::CentralDifference => GradMethod::CentralDifference,
        },
        fd_step: 1e-5,
        tied: a.tied,
    };
    let ocfg = OampConfig::with_layers(a.layers);
    let quiet = a.quiet;
    let report_every = (a.epochs / 20).max(1);
    let ck = train_with_progress(&sys, channel, &tcfg, &ocfg, &mut |epoch, loss| {
        if !quiet && (epoch % report_every == 0 || epoch == a.epochs) {
            eprintln!("epoch {epoch:>6}  validation loss {loss:.6}");
        }
    })?;
    save_checkpoint(&ck, &a.checkpoint)?;
    eprintln!(
        "best epoch {} (validation loss {:.6}), wrote {}",
        ck.epoch,
        ck.validation_history[ck.epoch],
        a.checkpoint.display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let sys = a.sys.system(0.0)?;
    let channel = a.sys.channel()?;
    let snrs = parse_snr_list(&a.snr_list)?;
    if a.checkpoint.is_some() && a.detector != DetectorKind::Oampnet {
        return Err(Error::InvalidConfig("--checkpoint only applies to --detector oampnet".into()));
    }
    let (detector, digest) = match a.detector {
        DetectorKind::Oamp => (Detector::Oamp(OampConfig::with_layers(a.layers.unwrap_or(10))), None),
        DetectorKind::Oampnet => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--detector oampnet needs --checkpoint".into()))?;
            let ck = load_checkpoint(path)?;
            let config = OampConfig::with_layers(a.layers.unwrap_or(ck.layers));
            let params = ck.params_for(&config)?;
            (Detector::OampNet { params, config }, Some(checkpoint_digest(&ck)?))
        }
        DetectorKind::Zf => (Detector::Zf, None),
        DetectorKind::Lmmse => (Detector::Lmmse, None),
        DetectorKind::Ml => (Detector::Ml, None),
        DetectorKind::Exact => (Detector::Exact, None),
    };
    let opts = SweepOptions {
        min_errors: a.min_errors,
        max_bits: a.max_bits,
        timing: !a.no_timing,
    };
    let info = DetectorInfo::of(&detector, digest);
    let report = run_ber(&detector, info, &sys, channel, &snrs, &opts)?;
    emit(&harness::render_report(&report, format(a.format))?, a.out.as_deref())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let sys = a.sys.system(a.snr)?;
    let channel = a.sys.channel()?;
    let (cfg, params) = match &a.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let cfg = OampConfig::with_layers(a.layers.unwrap_or(ck.layers));
            let params = ck.params_for(&cfg)?;
            (cfg, Some(params))
        }
        None => (OampConfig::with_layers(a.layers.unwrap_or(10)), None),
    };
    let rows = run_diagnose(&sys, channel, &cfg, params.as_ref(), a.realizations)?;
    emit(&harness::render_diagnostics(&rows, format(a.format))?, a.out.as_deref())
}

fn cmd_reduce(a: ReduceArgs) -> Result<bool> {
    let sys = a.sys.system(a.snr)?;
    let channel = a.sys.channel()?;
    let r = reduce_check(&sys, channel, &OampConfig::with_layers(a.layers), a.realizations, a.tolerance)?;
    println!(
        "{} instances, max |difference| {:e} (tolerance {:e}): {}",
        r.instances,
        r.max_abs_diff,
        r.tolerance,
        if r.passed { "PASS" } else { "FAIL" }
    );
    Ok(r.passed)
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// usage errors, 2 for configuration or runtime failures.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Diagnose(a) => cmd_diagnose(a).map(|_| true),
        Command::ReduceCheck(a) => cmd_reduce(a),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
