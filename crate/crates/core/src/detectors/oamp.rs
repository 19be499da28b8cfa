//! OAMP iterations and the unfolded OAMP-Net forward pass.
//!
//! Each layer runs, in order:
//!
//! 1. `v_t² = max((‖y − H x̂_t‖² − n_rx σ²) / tr(HᵀH), ε)`
//! 2. `W_t` from `v_t²` (LMMSE, rescaled so that `tr(I − W_t H) = 0`)
//! 3. `r_t = x̂_t + γ_t W_t (y − H x̂_t)`
//! 4. `τ_t² = tr(C_t C_tᵀ) v_t² / (2 n_tx) + θ_t² σ² tr(W_t W_tᵀ) / (4 n_tx)`
//!    with `C_t = I − θ_t W_t H`
//! 5. `x̂_{t+1} = E[x | r_t, τ_t²]`, elementwise
//!
//! OAMP is the special case `γ_t = θ_t = 1`.

use nalgebra::{DMatrix, DVector};

use super::linear::{check_observation, decorrelation_factor, lmmse_parts, pseudo_inverse, LmmseParts};
use super::{
    DetectionResult, LayerRecord, LayerTrace, LinearEstimatorKind, NetParams, OampConfig,
};
use crate::constellation::Constellation;
use crate::model::RealChannel;
use crate::{Error, Result};

/// Lower bound on `τ_t²` before it reaches the denoiser.
pub const TAU2_FLOOR: f64 = 1e-12;

/// Per-channel quantities shared by all layers.
pub(crate) struct ChannelContext<'a> {
    pub h: &'a DMatrix<f64>,
    pub hht: DMatrix<f64>,
    pub tr_hth: f64,
    /// `W` for estimators that do not depend on `v_t²`.
    pub fixed_w: Option<DMatrix<f64>>,
    pub sigma2: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub rescale: bool,
}

impl<'a> ChannelContext<'a> {
    pub fn new(h: &'a RealChannel, sigma2: f64, cfg: &OampConfig) -> Result<Self> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be finite and nonnegative, got {sigma2}"
            )));
        }
        let m = h.matrix();
        let tr_hth = m.norm_squared();
        if tr_hth <= 0.0 {
            return Err(Error::InvalidConfig("channel matrix is all zero".into()));
        }
        let fixed_w = match cfg.estimator {
            LinearEstimatorKind::LmmseDecorrelated => None,
            LinearEstimatorKind::MatchedFilter => Some(m.transpose()),
            LinearEstimatorKind::PseudoInverse => Some(pseudo_inverse(h)?),
        };
        let fixed_w = match fixed_w {
            Some(w) if cfg.decorrelate => {
                let (scale, _) = decorrelation_factor(&w, m)?;
                Some(w * scale)
            }
            other => other,
        };
        let hht = if fixed_w.is_none() {
            m * m.transpose()
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(Self {
            h: m,
            hht,
            tr_hth,
            fixed_w,
            sigma2,
            n_tx: h.n_tx(),
            n_rx: h.n_rx(),
            rescale: cfg.rescales(),
        })
    }
}

/// LMMSE pieces plus the rescale applied on top of them.
pub(crate) struct LmmseLayer {
    pub parts: LmmseParts,
    /// `2 n_tx / tr(Ŵ H)`
    pub scale: f64,
    pub tr_what_h: f64,
}

/// Everything a layer computes; the trainer replays it backwards.
pub(crate) struct LayerState {
    pub residual: DVector<f64>,
    pub v2: f64,
    pub v2_clamped: bool,
    pub w: DMatrix<f64>,
    pub lmmse: Option<LmmseLayer>,
    /// `W_t H`
    pub wh: DMatrix<f64>,
    pub r: DVector<f64>,
    pub tau2: f64,
    pub tau2_floored: bool,
    pub x_next: DVector<f64>,
}

fn variance_from_residual(residual_energy: f64, n_rx: usize, sigma2: f64, tr_hth: f64) -> f64 {
    (residual_energy - n_rx as f64 * sigma2) / tr_hth
}

/// `max((‖y − H x̂‖² − n_rx σ²) / tr(HᵀH), ε)`.
pub fn residual_variance(
    y: &DVector<f64>,
    h: &RealChannel,
    xhat: &DVector<f64>,
    sigma2: f64,
    epsilon: f64,
) -> Result<f64> {
    check_observation(y, h)?;
    let m = h.matrix();
    let tr_hth = m.norm_squared();
    if tr_hth <= 0.0 {
        return Err(Error::InvalidConfig("channel matrix is all zero".into()));
    }
    let e = y - m * xhat;
    Ok(variance_from_residual(e.norm_squared(), h.n_rx(), sigma2, tr_hth).max(epsilon))
}

fn tau2_raw(w: &DMatrix<f64>, wh: &DMatrix<f64>, theta: f64, v2: f64, sigma2: f64, n_tx: usize) -> f64 {
    let n = wh.nrows();
    let mut tr_cct = 0.0;
    for j in 0..n {
        for i in 0..n {
            let c = if i == j { 1.0 } else { 0.0 } - theta * wh[(i, j)];
            tr_cct += c * c;
        }
    }
    let n_tx = n_tx as f64;
    tr_cct * v2 / (2.0 * n_tx) + theta * theta * sigma2 * w.norm_squared() / (4.0 * n_tx)
}

/// Predicted equivalent-channel variance `τ²` of the linear stage, floored at [`TAU2_FLOOR`].
pub fn layer_tau2(
    w: &DMatrix<f64>,
    h: &RealChannel,
    theta: f64,
    v2: f64,
    sigma2: f64,
    n_tx: usize,
) -> Result<f64> {
    if !(theta.is_finite() && v2.is_finite() && sigma2.is_finite()) || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer variance inputs".into()));
    }
    let wh = w * h.matrix();
    Ok(tau2_raw(w, &wh, theta, v2, sigma2, n_tx).max(TAU2_FLOOR))
}

pub(crate) fn layer_step(
    ctx: &ChannelContext<'_>,
    y: &DVector<f64>,
    c: &Constellation,
    cfg: &OampConfig,
    x_hat: &DVector<f64>,
    gamma: f64,
    theta: f64,
) -> Result<LayerState> {
    let residual = y - ctx.h * x_hat;
    let raw_v2 = variance_from_residual(residual.norm_squared(), ctx.n_rx, ctx.sigma2, ctx.tr_hth);
    let v2_clamped = !(raw_v2 > cfg.epsilon);
    let v2 = if v2_clamped { cfg.epsilon } else { raw_v2 };

    let (w, lmmse) = match &ctx.fixed_w {
        Some(w) => (w.clone(), None),
        None => {
            let parts = lmmse_parts(ctx.h, &ctx.hht, v2, ctx.sigma2)?;
            if ctx.rescale {
                let (scale, tr_what_h) = decorrelation_factor(&parts.w_hat, ctx.h)?;
                let w = &parts.w_hat * scale;
                (w, Some(LmmseLayer { parts, scale, tr_what_h }))
            } else {
                (parts.w_hat.clone(), Some(LmmseLayer { parts, scale: 1.0, tr_what_h: f64::NAN }))
            }
        }
    };

    let wh = &w * ctx.h;
    let r = x_hat + (&w * &residual) * gamma;
    let raw_tau2 = tau2_raw(&w, &wh, theta, v2, ctx.sigma2, ctx.n_tx);
    if !raw_tau2.is_finite() || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("layer output (tau2 = {raw_tau2})")));
    }
    let tau2_floored = !(raw_tau2 > TAU2_FLOOR);
    let tau2 = if tau2_floored { TAU2_FLOOR } else { raw_tau2 };
    let x_next = r.map(|ri| c.posterior_stats(ri, tau2).mean);

    Ok(LayerState {
        residual,
        v2,
        v2_clamped,
        w,
        lmmse,
        wh,
        r,
        tau2,
        tau2_floored,
        x_next,
    })
}

pub(crate) fn check_inputs(y: &DVector<f64>, h: &RealChannel, cfg: &OampConfig) -> Result<()> {
    cfg.validate()?;
    check_observation(y, h)?;
    if !h.matrix().nrows().is_multiple_of(2) || !h.matrix().ncols().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(
            "real channel dimensions must be even".into(),
        ));
    }
    Ok(())
}

fn run_layers(
    y: &DVector<f64>,
    h: &RealChannel,
    sigma2: f64,
    c: &Constellation,
    cfg: &OampConfig,
    scalars: impl Fn(usize) -> (f64, f64),
) -> Result<DetectionResult> {
    check_inputs(y, h, cfg)?;
    let ctx = ChannelContext::new(h, sigma2, cfg)?;
    let mut x_hat = DVector::zeros(h.matrix().ncols());
    let mut trace = LayerTrace::default();
    for t in 0..cfg.layers {
        let (gamma, theta) = scalars(t);
        let state = layer_step(&ctx, y, c, cfg, &x_hat, gamma, theta)?;
        let tr_wh = state.wh.trace();
        trace.layers.push(LayerRecord {
            x_hat: x_hat.clone(),
            r: state.r,
            x_hat_next: state.x_next.clone(),
            v2: state.v2,
            tau2: state.tau2,
            tr_wh,
        });
        x_hat = state.x_next;
    }
    Ok(DetectionResult { xhat: x_hat, trace })
}

/// OAMP detection from `x̂_1 = 0`.
pub fn oamp_detect(
    y: &DVector<f64>,
    h: &RealChannel,
    sigma2: f64,
    c: &Constellation,
    cfg: &OampConfig,
) -> Result<DetectionResult> {
    run_layers(y, h, sigma2, c, cfg, |_| (1.0, 1.0))
}

/// OAMP-Net forward pass with per-layer `(γ_t, θ_t)`.
pub fn oampnet_forward(
    y: &DVector<f64>,
    h: &RealChannel,
    sigma2: f64,
    c: &Constellation,
    params: &NetParams,
    cfg: &OampConfig,
) -> Result<DetectionResult> {
    if params.layers() != cfg.layers {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter layers for a {}-layer network",
            params.layers(),
            cfg.layers
        )));
    }
    run_layers(y, h, sigma2, c, cfg, |t| (params.gamma(t), params.theta(t)))
}
