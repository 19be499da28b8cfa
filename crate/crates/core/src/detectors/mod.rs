//! MIMO detectors operating on the real-valued model `y = H x + n`.

mod diagnostics;
mod exact;
mod linear;
mod oamp;

pub use diagnostics::{empirical_errors, orthogonality_stat, EmpiricalErrors};
pub use exact::{exact_posterior_mean, ml_detect, MAX_HYPOTHESES};
pub use linear::{decorrelate_scale, lmmse_detect, lmmse_matrix, pseudo_inverse, zf_detect};
pub use oamp::{layer_tau2, oamp_detect, oampnet_forward, residual_variance, TAU2_FLOOR};

pub(crate) use linear::trace_of_product;
pub(crate) use oamp::{check_inputs, layer_step, ChannelContext, LayerState};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::model::RealChannel;
use crate::{Error, Result};

/// Choice of the linear estimator `W_t` inside each OAMP layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearEstimatorKind {
    /// `W = Hᵀ`.
    MatchedFilter,
    /// `W = H⁺`.
    PseudoInverse,
    /// LMMSE matrix at the current `v_t²`, rescaled to be de-correlated.
    #[default]
    LmmseDecorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OampConfig {
    /// Number of layers `T`.
    pub layers: usize,
    /// Floor applied to `v_t²`.
    pub epsilon: f64,
    pub estimator: LinearEstimatorKind,
    /// Apply the de-correlating trace rescaling to the matched-filter and
    /// pseudo-inverse estimators too. The LMMSE estimator is always rescaled.
    #[serde(default)]
    pub decorrelate: bool,
}

impl Default for OampConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            epsilon: 1e-9,
            estimator: LinearEstimatorKind::LmmseDecorrelated,
            decorrelate: false,
        }
    }
}

impl OampConfig {
    pub fn with_layers(layers: usize) -> Self {
        Self {
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidConfig("layer count must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "variance floor epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub(crate) fn rescales(&self) -> bool {
        self.estimator == LinearEstimatorKind::LmmseDecorrelated || self.decorrelate
    }
}

/// Learnable per-layer scalars `(γ_t, θ_t)`.
///
/// In tied mode only `γ` is stored and `θ_t ≡ γ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    gamma: Vec<f64>,
    theta: Option<Vec<f64>>,
}

impl NetParams {
    /// The OAMP operating point `γ_t = θ_t = 1`.
    pub fn ones(layers: usize, tied: bool) -> Self {
        Self {
            gamma: vec![1.0; layers],
            theta: (!tied).then(|| vec![1.0; layers]),
        }
    }

    pub fn new(gamma: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if gamma.len() != theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gamma values but {} theta values",
                gamma.len(),
                theta.len()
            )));
        }
        Ok(Self {
            gamma,
            theta: Some(theta),
        })
    }

    pub fn tied(gamma: Vec<f64>) -> Self {
        Self { gamma, theta: None }
    }

    pub fn layers(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_tied(&self) -> bool {
        self.theta.is_none()
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub fn theta(&self, t: usize) -> f64 {
        match &self.theta {
            Some(theta) => theta[t],
            None => self.gamma[t],
        }
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    /// Explicit `θ` values (`None` when tied).
    pub fn thetas(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    /// Number of trainable scalars: `2T`, or `T` when tied.
    pub fn trainable_count(&self) -> usize {
        self.to_vec().len()
    }

    /// Flattened trainable vector `(γ_1, θ_1, …, γ_T, θ_T)`, or `(γ_1, …, γ_T)` when tied.
    pub fn to_vec(&self) -> Vec<f64> {
        match &self.theta {
            Some(theta) => self
                .gamma
                .iter()
                .zip(theta)
                .flat_map(|(&g, &t)| [g, t])
                .collect(),
            None => self.gamma.clone(),
        }
    }

    /// Inverse of [`NetParams::to_vec`] for the same layer count and tying.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.trainable_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} trainable scalars",
                values.len(),
                self.trainable_count()
            )));
        }
        Ok(match self.theta {
            Some(_) => Self {
                gamma: values.iter().step_by(2).copied().collect(),
                theta: Some(values.iter().skip(1).step_by(2).copied().collect()),
            },
            None => Self::tied(values.to_vec()),
        })
    }
}

/// Per-layer quantities of one detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// Layer input `x̂_t`.
    pub x_hat: DVector<f64>,
    /// Linear-stage output `r_t`.
    pub r: DVector<f64>,
    /// Denoiser output `x̂_{t+1}`.
    pub x_hat_next: DVector<f64>,
    pub v2: f64,
    pub tau2: f64,
    /// `tr(W_t H)`; equals `2 n_tx` for a de-correlated estimator.
    pub tr_wh: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTrace {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Soft estimate: the final posterior mean for iterative detectors, the
    /// linear estimate for ZF/LMMSE, the symbol vector for ML.
    pub xhat: DVector<f64>,
    pub trace: LayerTrace,
}

impl DetectionResult {
    pub(crate) fn untraced(xhat: DVector<f64>) -> Self {
        Self {
            xhat,
            trace: LayerTrace::default(),
        }
    }
}

/// Any detector the harness can sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Oamp(OampConfig),
    OampNet { params: NetParams, config: OampConfig },
    Zf,
    Lmmse,
    Ml,
    /// Hard decision on the exact marginal posterior means.
    Exact,
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Oamp(_) => "oamp",
            Detector::OampNet { .. } => "oampnet",
            Detector::Zf => "zf",
            Detector::Lmmse => "lmmse",
            Detector::Ml => "ml",
            Detector::Exact => "exact",
        }
    }

    pub fn detect(
        &self,
        y: &DVector<f64>,
        h: &RealChannel,
        sigma2: f64,
        c: &Constellation,
    ) -> Result<DetectionResult> {
        match self {
            Detector::Oamp(cfg) => oamp_detect(y, h, sigma2, c, cfg),
            Detector::OampNet { params, config } => oampnet_forward(y, h, sigma2, c, params, config),
            Detector::Zf => zf_detect(y, h),
            Detector::Lmmse => lmmse_detect(y, h, sigma2, c),
            Detector::Ml => ml_detect(y, h, c).map(DetectionResult::untraced),
            Detector::Exact => exact_posterior_mean(y, h, sigma2, c).map(DetectionResult::untraced),
        }
    }

    /// Detected symbol vector after nearest-level decisions.
    pub fn decide(
        &self,
        y: &DVector<f64>,
        h: &RealChannel,
        sigma2: f64,
        c: &Constellation,
    ) -> Result<Vec<f64>> {
        let res = self.detect(y, h, sigma2, c)?;
        Ok(c.hard_decision(res.xhat.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        for t in [1, 5, 10] {
            assert_eq!(NetParams::ones(t, false).trainable_count(), 2 * t);
            assert_eq!(NetParams::ones(t, true).trainable_count(), t);
        }
    }

    #[test]
    fn flattening_round_trips() {
        let p = NetParams::new(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(p.with_values(&p.to_vec()).unwrap(), p);
        let tied = NetParams::tied(vec![0.5, 0.7]);
        assert_eq!(tied.theta(1), 0.7);
        assert_eq!(tied.with_values(&[1.0, 2.0]).unwrap().gamma(1), 2.0);
        assert!(tied.with_values(&[1.0]).is_err());
        assert!(NetParams::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OampConfig::default().validate().is_ok());
        assert!(OampConfig::with_layers(0).validate().is_err());
        let cfg = OampConfig {
            epsilon: 0.0,
            ..OampConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
