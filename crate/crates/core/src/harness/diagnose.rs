use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draw_trial;
use crate::constellation::qam_real_alphabet;
use crate::detectors::{
    empirical_errors, oamp_detect, oampnet_forward, orthogonality_stat, LayerTrace, NetParams, OampConfig,
};
use crate::model::{ChannelModel, ChannelSampler, SystemConfig};
use crate::rng::{self, label};
use crate::{Error, Result};

/// Per-layer averages over many realizations; `t` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRow {
    pub t: usize,
    /// Tracked `v_t²`.
    pub v2: f64,
    /// Tracked `τ_t²`.
    pub tau2: f64,
    pub v2_emp: f64,
    pub tau2_emp: f64,
    /// Mean normalized correlation between `x̂_t − x` and `Hᵀ n`.
    pub ortho: f64,
}

fn check_realizations(realizations: usize) -> Result<()> {
    if realizations == 0 {
        return Err(Error::InvalidConfig("realization count must be positive".into()));
    }
    Ok(())
}

/// Runs the network (or plain OAMP when `params` is `None`) on fresh
/// realizations at `sys.snr_db` and averages the per-layer statistics.
pub fn run_diagnose(
    sys: &SystemConfig,
    channel: ChannelModel,
    cfg: &OampConfig,
    params: Option<&NetParams>,
    realizations: usize,
) -> Result<Vec<DiagnoseRow>> {
    sys.validate()?;
    cfg.validate()?;
    check_realizations(realizations)?;
    let c = qam_real_alphabet(sys.constellation_order)?;
    let sampler = ChannelSampler::new(sys, channel)?;
    let sigma2 = 10f64.powf(-sys.snr_db / 10.0);

    let per_run: Vec<Vec<[f64; 5]>> = (0..realizations as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(sys.seed, &[label::DIAGNOSE, i]);
            let t = draw_trial(sys, &sampler, &c, sigma2, &mut r);
            let res = match params {
                Some(p) => oampnet_forward(&t.y, &t.h, sigma2, &c, p, cfg)?,
                None => oamp_detect(&t.y, &t.h, sigma2, &c, cfg)?,
            };
            let emp = empirical_errors(&res.trace, &t.x);
            Ok(res
                .trace
                .layers
                .iter()
                .zip(emp)
                .map(|(l, e)| [l.v2, l.tau2, e.v2, e.tau2, orthogonality_stat(&l.x_hat, &t.x, &t.h, &t.n)])
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![[0.0; 5]; cfg.layers];
    for run in &per_run {
        for (acc, row) in sums.iter_mut().zip(run) {
            for k in 0..5 {
                acc[k] += row[k];
            }
        }
    }
    let n = realizations as f64;
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, s)| DiagnoseRow {
            t: i + 1,
            v2: s[0] / n,
            tau2: s[1] / n,
            v2_emp: s[2] / n,
            tau2_emp: s[3] / n,
            ortho: s[4] / n,
        })
        .collect())
}

/// Outcome of comparing the network at `γ = θ = 1` against OAMP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReduceReport {
    pub instances: usize,
    /// Largest per-entry difference over all traced quantities and layers.
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn trace_diff(a: &LayerTrace, b: &LayerTrace) -> f64 {
    if a.layers.len() != b.layers.len() {
        return f64::INFINITY;
    }
    let vec_diff = |u: &nalgebra::DVector<f64>, v: &nalgebra::DVector<f64>| (u - v).amax();
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(p, q)| {
            [
                vec_diff(&p.x_hat, &q.x_hat),
                vec_diff(&p.r, &q.r),
                vec_diff(&p.x_hat_next, &q.x_hat_next),
                (p.v2 - q.v2).abs(),
                (p.tau2 - q.tau2).abs(),
                (p.tr_wh - q.tr_wh).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn reduce_check(
    sys: &SystemConfig,
    channel: ChannelModel,
    cfg: &OampConfig,
    instances: usize,
    tolerance: f64,
) -> Result<ReduceReport> {
    sys.validate()?;
    cfg.validate()?;
    check_realizations(instances)?;
    let c = qam_real_alphabet(sys.constellation_order)?;
    let sampler = ChannelSampler::new(sys, channel)?;
    let sigma2 = 10f64.powf(-sys.snr_db / 10.0);
    let ones = NetParams::ones(cfg.layers, false);
    let diffs: Vec<f64> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(sys.seed, &[label::CHECK, i]);
            let t = draw_trial(sys, &sampler, &c, sigma2, &mut r);
            let a = oamp_detect(&t.y, &t.h, sigma2, &c, cfg)?;
            let b = oampnet_forward(&t.y, &t.h, sigma2, &c, &ones, cfg)?;
            Ok(trace_diff(&a.trace, &b.trace).max((a.xhat - b.xhat).amax()))
        })
        .collect::<Result<_>>()?;
    let max_abs_diff = diffs.into_iter().fold(0.0, f64::max);
    Ok(ReduceReport {
        instances,
        max_abs_diff,
        tolerance,
        passed: max_abs_diff <= tolerance,
    })
}
