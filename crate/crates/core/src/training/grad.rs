//! Loss gradients with respect to the per-layer scalars.
//!
//! The reverse pass replays a recorded forward pass. Every layer depends on
//! its input `x̂_t` through the residual `e = y − H x̂_t` (and hence `v_t²`, and
//! hence `W_t`) and directly through `r_t = x̂_t + γ_t W_t e`. With
//! `A = v² H Hᵀ + (σ²/2) I` the LMMSE matrix `Ŵ = v² Hᵀ A⁻¹` satisfies
//! `dŴ/dv² = (σ²/2) Hᵀ A⁻²`, and the de-correlated
//! `W = c Ŵ`, `c = 2n / tr(Ŵ H)`, gives
//! `dW = c (dŴ − tr(dŴ H) / tr(Ŵ H) · Ŵ)`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::constellation::Constellation;
use crate::detectors::{
    check_inputs, layer_step, oampnet_forward, trace_of_product, ChannelContext, LayerState,
    NetParams, OampConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    #[default]
    Reverse,
    CentralDifference,
}

/// Squared error `‖x̂ − x‖²` of a single estimate.
pub fn squared_error(xhat: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (xhat - x).norm_squared()
}

fn finite_or(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Mean L2 loss of the network over a batch.
pub fn batch_loss(
    batch: &[Sample],
    params: &NetParams,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            oampnet_forward(&s.y, &s.h, s.sigma2, c, params, cfg)
                .map(|res| squared_error(&res.xhat, &s.x))
        })
        .collect::<Result<_>>()?;
    finite_or(mean(&losses), "batch loss")
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Loss of one sample and its gradient per layer `(∂γ_t, ∂θ_t)`.
pub(crate) fn sample_gradient(
    sample: &Sample,
    params: &NetParams,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<(f64, Vec<(f64, f64)>)> {
    check_inputs(&sample.y, &sample.h, cfg)?;
    if params.layers() != cfg.layers {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter layers for a {}-layer network",
            params.layers(),
            cfg.layers
        )));
    }
    let ctx = ChannelContext::new(&sample.h, sample.sigma2, cfg)?;
    let h = ctx.h;
    let dim = h.ncols();

    let mut states: Vec<LayerState> = Vec::with_capacity(cfg.layers);
    let mut x_hat = DVector::zeros(dim);
    for t in 0..cfg.layers {
        let st = layer_step(&ctx, &sample.y, c, cfg, &x_hat, params.gamma(t), params.theta(t))?;
        x_hat = st.x_next.clone();
        states.push(st);
    }
    let diff = &x_hat - &sample.x;
    let loss = diff.norm_squared();

    let n_tx = ctx.n_tx as f64;
    let sigma2 = ctx.sigma2;
    let mut grads = vec![(0.0, 0.0); cfg.layers];
    let mut g_x = diff * 2.0;
    for t in (0..cfg.layers).rev() {
        let st = &states[t];
        let (gamma, theta) = (params.gamma(t), params.theta(t));

        // denoiser
        let mut g_r = DVector::zeros(dim);
        let mut g_tau2 = 0.0;
        for i in 0..dim {
            let ps = c.posterior_stats(st.r[i], st.tau2);
            g_r[i] = g_x[i] * ps.d_r;
            g_tau2 += g_x[i] * ps.d_tau2;
        }
        if st.tau2_floored {
            g_tau2 = 0.0;
        }

        // τ² = tr(CCᵀ) v² / (2n) + θ² σ² ‖W‖² / (4n),  C = I − θ W H
        let mut cmat = -&st.wh * theta;
        for i in 0..dim {
            cmat[(i, i)] += 1.0;
        }
        let tr_cct = cmat.norm_squared();
        let tr_ctg = cmat.dot(&st.wh);
        let w_norm2 = st.w.norm_squared();
        let d_tau2_d_theta =
            -2.0 * tr_ctg * st.v2 / (2.0 * n_tx) + 2.0 * theta * sigma2 * w_norm2 / (4.0 * n_tx);
        let g_theta = g_tau2 * d_tau2_d_theta;
        let mut g_v2 = g_tau2 * tr_cct / (2.0 * n_tx);
        let mut g_w = (&cmat * h.transpose()) * (-g_tau2 * theta * st.v2 / n_tx)
            + &st.w * (g_tau2 * theta * theta * sigma2 / (2.0 * n_tx));

        // r = x̂ + γ W e
        let we = &st.w * &st.residual;
        let g_gamma = g_r.dot(&we);
        g_w.ger(gamma, &g_r, &st.residual, 1.0);
        let mut g_e = st.w.transpose() * &g_r * gamma;
        let mut g_in = g_r;

        // W depends on v² only through the LMMSE matrix
        if let Some(lm) = &st.lmmse {
            let d_t = lm.parts.chol.solve(&lm.parts.z) * (sigma2 / 2.0);
            let d = d_t.transpose();
            let dw = if ctx.rescale {
                let tr_dh = trace_of_product(&d, h);
                (&d - &lm.parts.w_hat * (tr_dh / lm.tr_what_h)) * lm.scale
            } else {
                d
            };
            g_v2 += g_w.dot(&dw);
        }

        // v² = (‖e‖² − n_rx σ²) / tr(HᵀH)
        if !st.v2_clamped {
            g_e.axpy(2.0 * g_v2 / ctx.tr_hth, &st.residual, 1.0);
        }
        // e = y − H x̂
        g_in -= h.transpose() * g_e;

        grads[t] = (g_gamma, g_theta);
        g_x = g_in;
    }
    Ok((finite_or(loss, "sample loss")?, grads))
}

fn flatten(params: &NetParams, per_layer: &[(f64, f64)]) -> Vec<f64> {
    if params.is_tied() {
        per_layer.iter().map(|(g, t)| g + t).collect()
    } else {
        per_layer.iter().flat_map(|&(g, t)| [g, t]).collect()
    }
}

/// Mean loss and its gradient in the layout of [`NetParams::to_vec`].
pub fn loss_and_grad(
    batch: &[Sample],
    params: &NetParams,
    cfg: &OampConfig,
    c: &Constellation,
    method: GradMethod,
    fd_step: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("gradient of an empty batch".into()));
    }
    match method {
        GradMethod::Reverse => {
            let per_sample: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|s| sample_gradient(s, params, cfg, c).map(|(l, g)| (l, flatten(params, &g))))
                .collect::<Result<_>>()?;
            // fixed summation order keeps results independent of thread count
            let n = per_sample.len() as f64;
            let mut grad = vec![0.0; params.trainable_count()];
            let mut loss = 0.0;
            for (l, g) in &per_sample {
                loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            grad.iter_mut().for_each(|g| *g /= n);
            for g in &grad {
                finite_or(*g, "gradient")?;
            }
            Ok((finite_or(loss / n, "batch loss")?, grad))
        }
        GradMethod::CentralDifference => {
            let loss = batch_loss(batch, params, cfg, c)?;
            let base = params.to_vec();
            let mut grad = Vec::with_capacity(base.len());
            for k in 0..base.len() {
                let mut plus = base.clone();
                plus[k] += fd_step;
                let mut minus = base.clone();
                minus[k] -= fd_step;
                let lp = batch_loss(batch, &params.with_values(&plus)?, cfg, c)?;
                let lm = batch_loss(batch, &params.with_values(&minus)?, cfg, c)?;
                grad.push((lp - lm) / (2.0 * fd_step));
            }
            Ok((loss, grad))
        }
    }
}

/// Gradient only; see [`loss_and_grad`].
pub fn grad_params(
    batch: &[Sample],
    params: &NetParams,
    cfg: &OampConfig,
    c: &Constellation,
    method: GradMethod,
    fd_step: f64,
) -> Result<Vec<f64>> {
    loss_and_grad(batch, params, cfg, c, method, fd_step).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::qam_real_alphabet;
    use crate::detectors::LinearEstimatorKind;
    use crate::model::{ChannelModel, ChannelSampler, SystemConfig};
    use crate::rng;
    use crate::training::{generate_batch, TrainSnr};

    fn data(n_tx: usize, n_rx: usize, order: u32, snr_db: f64, model: ChannelModel, n: usize, seed: u64) -> Vec<Sample> {
        let sys = SystemConfig::new(n_tx, n_rx, order, snr_db, seed).unwrap();
        let sampler = ChannelSampler::new(&sys, model).unwrap();
        generate_batch(&sys, &sampler, TrainSnr::Fixed { snr_db }, n, &mut rng::from_seed(seed)).unwrap()
    }

    fn perturbed(layers: usize, tied: bool, seed: u64) -> NetParams {
        use rand::Rng;
        let mut r = rng::from_seed(seed ^ 0xabc);
        let base = NetParams::ones(layers, tied);
        let v: Vec<f64> = base.to_vec().iter().map(|x| x + 0.4 * (r.random::<f64>() - 0.5)).collect();
        base.with_values(&v).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
        num / den
    }

    #[test]
    fn reverse_matches_central_difference() {
        let mut checked = 0;
        for k in 0..20u64 {
            let (n_tx, n_rx, order) = [(2, 2, 4), (4, 4, 4), (2, 4, 16), (4, 6, 16), (3, 3, 64)][k as usize % 5];
            let snr = 4.0 + 3.0 * (k % 4) as f64;
            let model = if k % 3 == 0 { ChannelModel::Kronecker { rho: 0.5 } } else { ChannelModel::Rayleigh };
            let layers = 1 + (k as usize % 4);
            let tied = k % 5 == 4;
            let batch = data(n_tx, n_rx, order, snr, model, 4, 100 + k);
            let params = perturbed(layers, tied, k);
            let cfg = OampConfig::with_layers(layers);
            let c = qam_real_alphabet(order).unwrap();
            let (l_rev, g_rev) = loss_and_grad(&batch, &params, &cfg, &c, GradMethod::Reverse, 1e-5).unwrap();
            let (l_fd, g_fd) = loss_and_grad(&batch, &params, &cfg, &c, GradMethod::CentralDifference, 1e-6).unwrap();
            assert!((l_rev - l_fd).abs() <= 1e-12 * l_fd.max(1.0));
            let e = rel_err(&g_rev, &g_fd);
            assert!(e <= 1e-3, "configuration {k}: relative error {e}\n{g_rev:?}\n{g_fd:?}");
            checked += 1;
        }
        assert_eq!(checked, 20);
    }

    #[test]
    fn other_estimators_match_central_difference() {
        for (kind, decorrelate) in [
            (LinearEstimatorKind::MatchedFilter, true),
            (LinearEstimatorKind::PseudoInverse, false),
            (LinearEstimatorKind::PseudoInverse, true),
        ] {
            let batch = data(3, 5, 4, 8.0, ChannelModel::Rayleigh, 3, 7);
            let params = perturbed(3, false, 11);
            let cfg = OampConfig { estimator: kind, decorrelate, ..OampConfig::with_layers(3) };
            let c = qam_real_alphabet(4).unwrap();
            let g_rev = grad_params(&batch, &params, &cfg, &c, GradMethod::Reverse, 1e-5).unwrap();
            let g_fd = grad_params(&batch, &params, &cfg, &c, GradMethod::CentralDifference, 1e-6).unwrap();
            assert!(rel_err(&g_rev, &g_fd) <= 1e-3, "{kind:?}: {g_rev:?} vs {g_fd:?}");
        }
    }

    #[test]
    fn difference_error_shrinks_with_step() {
        let batch = data(4, 4, 4, 8.0, ChannelModel::Rayleigh, 4, 3);
        let params = perturbed(3, false, 5);
        let cfg = OampConfig::with_layers(3);
        let c = qam_real_alphabet(4).unwrap();
        let g_rev = grad_params(&batch, &params, &cfg, &c, GradMethod::Reverse, 0.0).unwrap();
        let errs: Vec<f64> = [1e-2, 5e-3]
            .iter()
            .map(|&h| rel_err(&grad_params(&batch, &params, &cfg, &c, GradMethod::CentralDifference, h).unwrap(), &g_rev))
            .collect();
        // second-order scheme: halving the step cuts the error about fourfold
        assert!(errs[1] < errs[0] * 0.4, "{errs:?}");
    }

    #[test]
    fn directional_derivative() {
        let batch = data(4, 4, 16, 12.0, ChannelModel::Rayleigh, 4, 21);
        let params = perturbed(4, false, 2);
        let cfg = OampConfig::with_layers(4);
        let c = qam_real_alphabet(16).unwrap();
        let g = grad_params(&batch, &params, &cfg, &c, GradMethod::Reverse, 0.0).unwrap();
        let base = params.to_vec();
        let dir: Vec<f64> = (0..base.len()).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let h = 1e-6;
        let shift = |s: f64| {
            let v: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
            batch_loss(&batch, &params.with_values(&v).unwrap(), &cfg, &c).unwrap()
        };
        let fd = (shift(h) - shift(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{fd} vs {an}");
    }

    #[test]
    fn spec_gradient_examples() {
        let batch = data(4, 4, 4, 8.0, ChannelModel::Rayleigh, 6, 33);
        let params = perturbed(5, false, 8);
        let cfg = OampConfig::with_layers(5);
        let c = qam_real_alphabet(4).unwrap();
        let base = params.to_vec();
        let at = |step: f64, dir: &[f64]| {
            let v: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + step * d).collect();
            batch_loss(&batch, &params.with_values(&v).unwrap(), &cfg, &c).unwrap()
        };
        let g = grad_params(&batch, &params, &cfg, &c, GradMethod::Reverse, 0.0).unwrap();
        assert_eq!(at(0.0, &g), batch_loss(&batch, &params, &cfg, &c).unwrap());

        let coarse = grad_params(&batch, &params, &cfg, &c, GradMethod::CentralDifference, 1e-4).unwrap();
        let fine = grad_params(&batch, &params, &cfg, &c, GradMethod::CentralDifference, 1e-5).unwrap();
        assert!(rel_err(&coarse, &fine) <= 1e-2);

        let d = 1e-5;
        let along = (at(d, &g) - at(-d, &g)) / (2.0 * d);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        assert!((along - g2).abs() <= 0.01 * g2, "{along} vs {g2}");
    }

    #[test]
    fn empty_batch_rejected() {
        let c = qam_real_alphabet(4).unwrap();
        let r = loss_and_grad(&[], &NetParams::ones(2, false), &OampConfig::with_layers(2), &c, GradMethod::Reverse, 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn layer_count_mismatch_rejected() {
        let batch = data(2, 2, 4, 8.0, ChannelModel::Rayleigh, 1, 1);
        let c = qam_real_alphabet(4).unwrap();
        assert!(sample_gradient(&batch[0], &NetParams::ones(3, false), &OampConfig::with_layers(2), &c).is_err());
    }
}
