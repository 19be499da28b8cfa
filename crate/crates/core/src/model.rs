//! MIMO system model: channels, noise and the real-valued embedding.
//!
//! The complex model `ȳ = H̄ x̄ + n̄` is mapped onto the real model
//! `y = H x + n` of twice the dimension by stacking real and imaginary
//! parts. Channel entries have variance `1 / n_tx` and symbols have unit
//! average energy, so the noise variance per complex component is
//! `σ² = 10^(-snr_db / 10)`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Root record of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// QAM order `P`; must be a perfect square.
    pub constellation_order: u32,
    pub snr_db: f64,
    pub seed: u64,
}

impl SystemConfig {
    pub fn new(
        n_tx: usize,
        n_rx: usize,
        constellation_order: u32,
        snr_db: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            n_tx,
            n_rx,
            constellation_order,
            snr_db,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::InvalidConfig(format!(
                "antenna counts must be positive (n_tx = {}, n_rx = {})",
                self.n_tx, self.n_rx
            )));
        }
        let p = self.constellation_order;
        let root = (p as f64).sqrt().round() as u32;
        if p < 4 || root * root != p || !root.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "constellation order {p} must be a perfect square >= 4 with a power-of-two root"
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidConfig("snr_db must be finite".into()));
        }
        Ok(())
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }
}

/// One complex channel realization, `n_rx × n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexChannel(pub DMatrix<Complex64>);

/// Real embedding of a channel, `2 n_rx × 2 n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealChannel(pub DMatrix<f64>);

impl ComplexChannel {
    pub fn n_rx(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.0.ncols()
    }

    pub fn to_real(&self) -> RealChannel {
        real_embed_matrix(self)
    }
}

impl RealChannel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Number of complex transmit antennas.
    pub fn n_tx(&self) -> usize {
        self.0.ncols() / 2
    }

    /// Number of complex receive antennas.
    pub fn n_rx(&self) -> usize {
        self.0.nrows() / 2
    }

    /// Recovers the complex channel from its embedding (reads the left block column).
    pub fn to_complex(&self) -> ComplexChannel {
        let (m, n) = (self.n_rx(), self.n_tx());
        ComplexChannel(DMatrix::from_fn(m, n, |i, j| {
            Complex64::new(self.0[(i, j)], self.0[(i + m, j)])
        }))
    }
}

/// Complex noise variance per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2: f64,
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
pub fn real_embed_matrix(hbar: &ComplexChannel) -> RealChannel {
    let (m, n) = (hbar.n_rx(), hbar.n_tx());
    let mut h = DMatrix::zeros(2 * m, 2 * n);
    for i in 0..m {
        for j in 0..n {
            let z = hbar.0[(i, j)];
            h[(i, j)] = z.re;
            h[(i, j + n)] = -z.im;
            h[(i + m, j)] = z.im;
            h[(i + m, j + n)] = z.re;
        }
    }
    RealChannel(h)
}

/// `[Re v; Im v]`.
pub fn real_embed_vector(v: &DVector<Complex64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`real_embed_vector`]; the input length must be even.
pub fn complex_from_real_vector(v: &DVector<f64>) -> Result<DVector<Complex64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch(format!(
            "real vector of odd length {} has no complex counterpart",
            v.len()
        )));
    }
    let n = v.len() / 2;
    Ok(DVector::from_fn(n, |i, _| Complex64::new(v[i], v[i + n])))
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// i.i.d. circularly-symmetric Gaussian entries with variance `1 / n_tx`.
pub fn sample_rayleigh<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> ComplexChannel {
    let var = 1.0 / config.n_tx as f64;
    ComplexChannel(DMatrix::from_fn(config.n_rx, config.n_tx, |_, _| {
        complex_gaussian(rng, var)
    }))
}

/// Exponential correlation matrix with entries `rho^|i-j|`.
pub fn exp_corr_matrix(n: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!(
            "correlation coefficient must lie in [0, 1), got {rho}"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        rho.powi((i as i32 - j as i32).abs())
    }))
}

/// Symmetric square root of a PSD matrix via eigendecomposition; eigenvalues
/// within rounding of zero are clamped.
pub fn matrix_sqrt_psd(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !r.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "square root of a {}x{} matrix",
            r.nrows(),
            r.ncols()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix square root input".into()));
    }
    let sym = (r + r.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Kronecker-correlated channel `R_rx^{1/2} A R_tx^{1/2}` with Rayleigh `A`.
pub fn sample_kronecker<R: Rng + ?Sized>(
    r_rx: &DMatrix<f64>,
    r_tx: &DMatrix<f64>,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ComplexChannel> {
    let sampler = ChannelSampler::kronecker(r_rx, r_tx, config)?;
    Ok(sampler.sample(rng))
}

/// Fading model selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelModel {
    Rayleigh,
    /// Exponential correlation with the same `rho` on both ends.
    Kronecker { rho: f64 },
}

/// Channel generator with correlation square roots precomputed.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    config: SystemConfig,
    model: ChannelModel,
    correlation: Option<(DMatrix<Complex64>, DMatrix<Complex64>)>,
}

impl ChannelSampler {
    pub fn new(config: &SystemConfig, model: ChannelModel) -> Result<Self> {
        match model {
            ChannelModel::Rayleigh => Ok(Self {
                config: *config,
                model,
                correlation: None,
            }),
            ChannelModel::Kronecker { rho } => {
                let r_rx = exp_corr_matrix(config.n_rx, rho)?;
                let r_tx = exp_corr_matrix(config.n_tx, rho)?;
                let mut s = Self::kronecker(&r_rx, &r_tx, config)?;
                s.model = model;
                Ok(s)
            }
        }
    }

    fn kronecker(r_rx: &DMatrix<f64>, r_tx: &DMatrix<f64>, config: &SystemConfig) -> Result<Self> {
        if r_rx.shape() != (config.n_rx, config.n_rx) || r_tx.shape() != (config.n_tx, config.n_tx)
        {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrices {:?} / {:?} for a {}x{} channel",
                r_rx.shape(),
                r_tx.shape(),
                config.n_rx,
                config.n_tx
            )));
        }
        let rx = complexify(&matrix_sqrt_psd(r_rx)?);
        let tx = complexify(&matrix_sqrt_psd(r_tx)?);
        Ok(Self {
            config: *config,
            model: ChannelModel::Kronecker { rho: f64::NAN },
            correlation: Some((rx, tx)),
        })
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexChannel {
        let a = sample_rayleigh(&self.config, rng);
        match &self.correlation {
            None => a,
            Some((rx, tx)) => ComplexChannel(rx * a.0 * tx),
        }
    }
}

/// `σ² = 10^(-snr_db / 10)` under unit symbol energy and `1 / n_tx` channel variance.
pub fn sigma2_from_snr(config: &SystemConfig) -> NoiseModel {
    NoiseModel {
        sigma2: 10f64.powf(-config.snr_db / 10.0),
    }
}

/// i.i.d. complex noise with variance `σ²` per component.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, noise: NoiseModel, rng: &mut R) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| complex_gaussian(rng, noise.sigma2))
}

/// `ȳ = H̄ x̄ + n̄`.
pub fn transmit<R: Rng + ?Sized>(
    hbar: &ComplexChannel,
    xbar: &DVector<Complex64>,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<DVector<Complex64>> {
    if xbar.len() != hbar.n_tx() {
        return Err(Error::DimensionMismatch(format!(
            "symbol vector of length {} for a channel with {} transmit antennas",
            xbar.len(),
            hbar.n_tx()
        )));
    }
    let n = sample_noise(hbar.n_rx(), noise, rng);
    Ok(&hbar.0 * xbar + n)
}
