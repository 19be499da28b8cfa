//! Monte-Carlo BER sweeps, per-layer diagnostics and the reduction audit.

mod diagnose;
mod report;

pub use diagnose::{reduce_check, run_diagnose, DiagnoseRow, ReduceReport};
pub use report::{export_report, read_report, write_diagnostics, ReportFormat};
pub(crate) use report::{render_diagnostics, render_report};

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constellation::{qam_real_alphabet, Constellation};
use crate::detectors::Detector;
use crate::model::{real_embed_vector, sample_noise, ChannelModel, ChannelSampler, NoiseModel, RealChannel, SystemConfig};
use crate::rng::{self, label};
use crate::training::Checkpoint;
use crate::{Error, Result};

pub const DEFAULT_MIN_ERRORS: u64 = 1000;
pub const DEFAULT_MAX_BITS: u64 = 100_000_000;
/// Trials simulated per parallel chunk.
pub const CHUNK_TRIALS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    /// Stopped at the bit cap before reaching the error target.
    pub censored: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorInfo {
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub system: SystemConfig,
    pub channel: ChannelModel,
    pub detector: DetectorInfo,
    pub min_errors: u64,
    pub max_bits: u64,
    pub seed: u64,
    pub points: Vec<BerPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub min_errors: u64,
    pub max_bits: u64,
    /// Record wall-clock time per point. Off gives byte-stable reports.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            min_errors: DEFAULT_MIN_ERRORS,
            max_bits: DEFAULT_MAX_BITS,
            timing: true,
        }
    }
}

/// Hex SHA-256 of the checkpoint's TOML encoding.
pub fn checkpoint_digest(ck: &Checkpoint) -> Result<String> {
    Ok(hex::encode(Sha256::digest(ck.to_toml()?.as_bytes())))
}

impl DetectorInfo {
    pub fn of(detector: &Detector, checkpoint_digest: Option<String>) -> Self {
        let layers = match detector {
            Detector::Oamp(cfg) | Detector::OampNet { config: cfg, .. } => Some(cfg.layers),
            _ => None,
        };
        Self {
            algorithm: detector.name().to_string(),
            layers,
            checkpoint_digest,
        }
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list of dB values.
pub fn parse_snr_list(text: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::InvalidConfig(format!("bad SNR list {text:?}: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let parts: Vec<&str> = text.split(':').collect();
    let list = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || !step.is_finite() {
                return Err(bad("step must be positive"));
            }
            if stop < start {
                return Err(bad("stop is below start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| start + i as f64 * step).collect()
        }
        [single] => single.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected start:stop:step or a comma-separated list")),
    };
    if list.iter().any(|v| !v.is_finite()) {
        return Err(bad("values must be finite"));
    }
    Ok(list)
}

/// One transmitted block with everything needed to score or diagnose it.
#[derive(Debug, Clone)]
pub(crate) struct Trial {
    pub h: RealChannel,
    pub x: DVector<f64>,
    pub n: DVector<f64>,
    pub y: DVector<f64>,
}

pub(crate) fn draw_trial<R: Rng + ?Sized>(
    sys: &SystemConfig,
    sampler: &ChannelSampler,
    c: &Constellation,
    sigma2: f64,
    rng: &mut R,
) -> Trial {
    let h = sampler.sample(rng).to_real();
    let q = c.levels().len();
    let x = DVector::from_fn(2 * sys.n_tx, |_, _| c.levels()[rng.random_range(0..q)]);
    let n = real_embed_vector(&sample_noise(sys.n_rx, NoiseModel { sigma2 }, rng));
    let y = h.matrix() * &x + &n;
    Trial { h, x, n, y }
}

fn point_seed(seed: u64, snr_db: f64) -> u64 {
    rng::derive_seed(seed, &[label::SWEEP, snr_db.to_bits()])
}

fn run_point(
    detector: &Detector,
    sys: &SystemConfig,
    sampler: &ChannelSampler,
    c: &Constellation,
    snr_db: f64,
    opts: &SweepOptions,
) -> Result<BerPoint> {
    let start = Instant::now();
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let seed = point_seed(sys.seed, snr_db);
    let bits_per_trial = (2 * sys.n_tx * c.bits_per_level()) as u64;
    let (mut bits, mut errors) = (0u64, 0u64);
    let mut next = 0u64;
    'outer: loop {
        let chunk: Vec<u64> = (next..next + CHUNK_TRIALS as u64)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::substream(seed, &[i]);
                let t = draw_trial(sys, sampler, c, sigma2, &mut r);
                let decided = detector.decide(&t.y, &t.h, sigma2, c)?;
                c.bit_errors(&decided, t.x.as_slice())
            })
            .collect::<Result<_>>()?;
        next += CHUNK_TRIALS as u64;
        // scanning in trial order makes the stopping point independent of scheduling
        for e in chunk {
            bits += bits_per_trial;
            errors += e;
            if errors >= opts.min_errors || bits >= opts.max_bits {
                break 'outer;
            }
        }
    }
    Ok(BerPoint {
        snr_db,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        censored: errors < opts.min_errors,
        wall_time_s: if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// BER against SNR. Points are reported in increasing SNR order and each
/// uses its own random stream keyed by the SNR value.
pub fn run_ber(
    detector: &Detector,
    info: DetectorInfo,
    sys: &SystemConfig,
    channel: ChannelModel,
    snr_list: &[f64],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    sys.validate()?;
    if opts.min_errors == 0 {
        return Err(Error::InvalidConfig("min_errors must be at least 1".into()));
    }
    if opts.max_bits == 0 {
        return Err(Error::InvalidConfig("max_bits must be positive".into()));
    }
    let mut snrs = snr_list.to_vec();
    if snrs.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("SNR values must be finite".into()));
    }
    snrs.sort_by(f64::total_cmp);
    if snrs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("SNR list contains duplicates".into()));
    }
    let c = qam_real_alphabet(sys.constellation_order)?;
    let sampler = ChannelSampler::new(sys, channel)?;
    let points = snrs
        .iter()
        .map(|&snr| run_point(detector, sys, &sampler, &c, snr, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        system: *sys,
        channel,
        detector: info,
        min_errors: opts.min_errors,
        max_bits: opts.max_bits,
        seed: sys.seed,
        points,
    })
}

/// SNR at which the BER curve crosses `target`, by linear interpolation of
/// `log10(BER)` between adjacent points. Zero-error points are skipped.
pub fn snr_at_ber(points: &[BerPoint], target: f64) -> Option<f64> {
    let usable: Vec<&BerPoint> = points.iter().filter(|p| p.errors > 0).collect();
    let lt = target.log10();
    usable.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        let (la, lb) = (a.ber.log10(), b.ber.log10());
        if la >= lt && lb <= lt && la != lb {
            Some(a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db))
        } else if la == lt {
            Some(a.snr_db)
        } else {
            None
        }
    })
}
