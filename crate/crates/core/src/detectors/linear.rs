//! Linear estimators: LMMSE matrix, de-correlating rescale, ZF and LMMSE baselines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::DetectionResult;
use crate::constellation::Constellation;
use crate::model::RealChannel;
use crate::{Error, Result};

/// Pieces of the LMMSE computation kept for reuse by the trainer.
#[derive(Debug, Clone)]
pub(crate) struct LmmseParts {
    /// Factor of `A = v² H Hᵀ + (σ²/2) I`.
    pub chol: Cholesky<f64, Dyn>,
    /// `A⁻¹ H`, so that `Ŵ = v² Zᵀ`.
    pub z: DMatrix<f64>,
    pub w_hat: DMatrix<f64>,
}

pub(crate) fn lmmse_parts(
    h: &DMatrix<f64>,
    hht: &DMatrix<f64>,
    v2: f64,
    sigma2: f64,
) -> Result<LmmseParts> {
    if !v2.is_finite() || !sigma2.is_finite() {
        return Err(Error::NonFinite(format!("LMMSE inputs v2 = {v2}, sigma2 = {sigma2}")));
    }
    if v2 <= 0.0 || sigma2 < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "LMMSE needs v2 > 0 and sigma2 >= 0 (v2 = {v2}, sigma2 = {sigma2})"
        )));
    }
    let mut a = hht * v2;
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2 / 2.0;
    }
    let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite)?;
    let z = chol.solve(h);
    let w_hat = z.transpose() * v2;
    Ok(LmmseParts { chol, z, w_hat })
}

/// `Ŵ = v² Hᵀ (v² H Hᵀ + (σ²/2) I)⁻¹`, computed as an SPD solve against `H`.
pub fn lmmse_matrix(h: &RealChannel, v2: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    let h = h.matrix();
    let hht = h * h.transpose();
    Ok(lmmse_parts(h, &hht, v2, sigma2)?.w_hat)
}

/// `tr(Ŵ H)` without forming the product.
pub(crate) fn trace_of_product(w: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let mut tr = 0.0;
    for i in 0..w.nrows() {
        for k in 0..w.ncols() {
            tr += w[(i, k)] * h[(k, i)];
        }
    }
    tr
}

/// Scale factor `2 n_tx / tr(Ŵ H)`.
pub(crate) fn decorrelation_factor(w_hat: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(f64, f64)> {
    let tr = trace_of_product(w_hat, h);
    if !tr.is_finite() || tr.abs() < 1e-12 {
        return Err(Error::SingularScaling(tr.abs()));
    }
    Ok((h.ncols() as f64 / tr, tr))
}

/// `W = (2 n_tx / tr(Ŵ H)) Ŵ`, so that `tr(I − W H) = 0`.
pub fn decorrelate_scale(w_hat: &DMatrix<f64>, h: &RealChannel) -> Result<DMatrix<f64>> {
    let h = h.matrix();
    if w_hat.shape() != (h.ncols(), h.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "estimator {:?} for channel {:?}",
            w_hat.shape(),
            h.shape()
        )));
    }
    let (scale, _) = decorrelation_factor(w_hat, h)?;
    Ok(w_hat * scale)
}

/// Moore-Penrose pseudo-inverse; fails unless `H` has full column rank.
pub fn pseudo_inverse(h: &RealChannel) -> Result<DMatrix<f64>> {
    let h = h.matrix();
    let svd = h.clone().svd(true, true);
    let max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * max.max(f64::MIN_POSITIVE))
        .count();
    if rank < h.ncols() {
        return Err(Error::RankDeficient);
    }
    svd.pseudo_inverse(1e-10 * max)
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Zero forcing: `H⁺ y`.
pub fn zf_detect(y: &DVector<f64>, h: &RealChannel) -> Result<DetectionResult> {
    check_observation(y, h)?;
    Ok(DetectionResult::untraced(pseudo_inverse(h)? * y))
}

/// Linear MMSE: `Ŵ y` with `Ŵ` evaluated at the prior symbol variance.
pub fn lmmse_detect(
    y: &DVector<f64>,
    h: &RealChannel,
    sigma2: f64,
    c: &Constellation,
) -> Result<DetectionResult> {
    check_observation(y, h)?;
    let w = lmmse_matrix(h, c.energy_per_dim(), sigma2)?;
    Ok(DetectionResult::untraced(w * y))
}

pub(crate) fn check_observation(y: &DVector<f64>, h: &RealChannel) -> Result<()> {
    if y.len() != h.matrix().nrows() {
        return Err(Error::DimensionMismatch(format!(
            "observation of length {} for a channel with {} rows",
            y.len(),
            h.matrix().nrows()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::qam_real_alphabet;
    use crate::model::{sample_rayleigh, SystemConfig};
    use crate::rng;

    fn channel(n: usize, seed: u64) -> RealChannel {
        let cfg = SystemConfig::new(n, n, 4, 10.0, seed).unwrap();
        sample_rayleigh(&cfg, &mut rng::from_seed(seed)).to_real()
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_channel() {
        let h = RealChannel(DMatrix::identity(4, 4));
        let w = lmmse_matrix(&h, 1.0, 2.0).unwrap();
        assert!((w - DMatrix::identity(4, 4) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn large_prior_variance_approaches_pseudo_inverse() {
        let h = channel(4, 3);
        let w = lmmse_matrix(&h, 1e8, 0.1).unwrap();
        // oracle: normal-equation pseudo-inverse via an LU inverse
        let m = h.matrix();
        let pinv = (m.transpose() * m).try_inverse().unwrap() * m.transpose();
        assert!(rel(&w, &pinv) < 1e-4);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        for seed in 0..5 {
            let h = channel(4, seed);
            let m = h.matrix();
            let (v2, sigma2) = (0.37, 0.21);
            let a = m * m.transpose() * v2 + DMatrix::identity(8, 8) * (sigma2 / 2.0);
            let oracle = m.transpose() * a.lu().try_inverse().unwrap() * v2;
            assert!(rel(&lmmse_matrix(&h, v2, sigma2).unwrap(), &oracle) < 1e-10);
        }
    }

    #[test]
    fn lmmse_rejects_bad_inputs() {
        let h = channel(2, 1);
        assert!(lmmse_matrix(&h, f64::NAN, 0.1).is_err());
        assert!(lmmse_matrix(&h, 1.0, f64::INFINITY).is_err());
        assert!(lmmse_matrix(&h, 0.0, 0.1).is_err());
    }

    #[test]
    fn decorrelate_examples() {
        let h = channel(4, 9);
        let pinv = pseudo_inverse(&h).unwrap();
        let w = decorrelate_scale(&pinv, &h).unwrap();
        assert!(rel(&w, &pinv) < 1e-14);
        let half = &pinv * 0.5;
        assert!(rel(&decorrelate_scale(&half, &h).unwrap(), &pinv) < 1e-14);

        for seed in 0..10 {
            let h = channel(4, seed);
            let w = decorrelate_scale(&lmmse_matrix(&h, 0.3, 0.5).unwrap(), &h).unwrap();
            let m = DMatrix::identity(8, 8) - &w * h.matrix();
            assert!(m.trace().abs() <= 1e-8);
        }
        let zero = DMatrix::zeros(8, 8);
        assert!(matches!(decorrelate_scale(&zero, &h), Err(Error::SingularScaling(_))));
        assert!(decorrelate_scale(&DMatrix::zeros(4, 8), &h).is_err());
    }

    #[test]
    fn zf_recovers_noiseless() {
        let c = qam_real_alphabet(4).unwrap();
        let h = channel(4, 5);
        let x = DVector::from_fn(8, |i, _| c.levels()[i % 2]);
        let y = h.matrix() * &x;
        let out = zf_detect(&y, &h).unwrap();
        assert_eq!(c.hard_decision(out.xhat.as_slice()), x.as_slice());
        assert!((out.xhat - x).amax() < 1e-12);

        let deficient = RealChannel(DMatrix::zeros(4, 4));
        assert!(matches!(zf_detect(&DVector::zeros(4), &deficient), Err(Error::RankDeficient)));
        assert!(zf_detect(&DVector::zeros(3), &h).is_err());
    }

    #[test]
    fn lmmse_tends_to_zf_without_noise() {
        let c = qam_real_alphabet(4).unwrap();
        for seed in 0..5 {
            let h = channel(4, seed);
            let y = DVector::from_fn(8, |i, _| (i as f64 * 0.37).sin());
            let zf = zf_detect(&y, &h).unwrap().xhat;
            let mmse = lmmse_detect(&y, &h, 1e-10, &c).unwrap().xhat;
            assert!((zf - mmse).amax() < 1e-6);
        }
    }
}
