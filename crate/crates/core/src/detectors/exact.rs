//! Exhaustive-enumeration references: exact posterior means and ML decisions.

use nalgebra::{DMatrix, DVector};

use super::linear::check_observation;
use crate::constellation::Constellation;
use crate::model::RealChannel;
use crate::{Error, Result};

/// Largest hypothesis count either enumerator accepts.
pub const MAX_HYPOTHESES: u128 = 1_000_000;

/// Calls `visit(x, ‖y − H x‖²)` for every real symbol vector.
fn enumerate(
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    c: &Constellation,
    mut visit: impl FnMut(&[usize], f64),
) -> Result<()> {
    let dims = h.ncols();
    let q = c.levels().len();
    let count = (q as u128).checked_pow(dims as u32).unwrap_or(u128::MAX);
    if count > MAX_HYPOTHESES {
        return Err(Error::EnumerationBound(count));
    }
    // Residual is updated one coordinate at a time as the mixed-radix counter advances.
    let mut digits = vec![0usize; dims];
    let mut residual = y.clone();
    for j in 0..dims {
        residual.axpy(-c.levels()[0], &h.column(j), 1.0);
    }
    loop {
        visit(&digits, residual.norm_squared());
        let mut j = 0;
        loop {
            if j == dims {
                return Ok(());
            }
            let old = c.levels()[digits[j]];
            digits[j] = (digits[j] + 1) % q;
            let new = c.levels()[digits[j]];
            residual.axpy(old - new, &h.column(j), 1.0);
            if digits[j] != 0 {
                break;
            }
            j += 1;
        }
    }
}

/// Exact marginal posterior means `E[x_i | y]` under the uniform prior.
pub fn exact_posterior_mean(
    y: &DVector<f64>,
    h: &RealChannel,
    sigma2: f64,
    c: &Constellation,
) -> Result<DVector<f64>> {
    check_observation(y, h)?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "exact posterior needs finite sigma2 > 0, got {sigma2}"
        )));
    }
    let m = h.matrix();
    let dims = m.ncols();
    let mut hyps: Vec<(Vec<usize>, f64)> = Vec::new();
    let log_prior: Vec<f64> = c.prior().iter().map(|p| p.ln()).collect();
    enumerate(y, m, c, |digits, dist2| {
        let lp: f64 = digits.iter().map(|&d| log_prior[d]).sum();
        // real noise variance σ²/2 per component: exp(-‖y - Hx‖² / σ²)
        hyps.push((digits.to_vec(), -dist2 / sigma2 + lp));
    })?;
    let max = hyps.iter().map(|(_, e)| *e).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc = vec![0.0; dims];
    for (digits, e) in &hyps {
        let w = (e - max).exp();
        z += w;
        for (a, &d) in acc.iter_mut().zip(digits) {
            *a += w * c.levels()[d];
        }
    }
    Ok(DVector::from_iterator(dims, acc.into_iter().map(|a| a / z)))
}

/// Maximum-likelihood decision `argmin ‖y − H x‖²` over the full alphabet.
pub fn ml_detect(y: &DVector<f64>, h: &RealChannel, c: &Constellation) -> Result<DVector<f64>> {
    check_observation(y, h)?;
    let mut best = (f64::INFINITY, vec![0usize; h.matrix().ncols()]);
    enumerate(y, h.matrix(), c, |digits, dist2| {
        if dist2 < best.0 {
            best = (dist2, digits.to_vec());
        }
    })?;
    Ok(DVector::from_iterator(
        best.1.len(),
        best.1.iter().map(|&d| c.levels()[d]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::qam_real_alphabet;
    use crate::model::{sample_rayleigh, SystemConfig};
    use crate::rng;

    fn setup(n: usize, seed: u64) -> (RealChannel, DVector<f64>, Constellation) {
        let c = qam_real_alphabet(4).unwrap();
        let cfg = SystemConfig::new(n, n, 4, 10.0, seed).unwrap();
        let h = sample_rayleigh(&cfg, &mut rng::from_seed(seed)).to_real();
        let x = DVector::from_fn(2 * n, |i, _| c.levels()[(i * 7 + seed as usize) % 2]);
        (h, x, c)
    }

    #[test]
    fn posterior_concentrates_without_noise() {
        for seed in 0..5 {
            let (h, x, c) = setup(2, seed);
            let y = h.matrix() * &x;
            let m = exact_posterior_mean(&y, &h, 1e-6, &c).unwrap();
            assert!((m - &x).amax() < 1e-9);
            assert_eq!(ml_detect(&y, &h, &c).unwrap(), x);
        }
    }

    #[test]
    fn posterior_reverts_to_prior_mean() {
        let (h, x, c) = setup(2, 1);
        let y = h.matrix() * &x;
        let m = exact_posterior_mean(&y, &h, 1e6, &c).unwrap();
        assert!(m.amax() < 1e-5);
    }

    #[test]
    fn enumeration_bound() {
        let c = qam_real_alphabet(16).unwrap();
        let cfg = SystemConfig::new(8, 8, 16, 10.0, 0).unwrap();
        let h = sample_rayleigh(&cfg, &mut rng::from_seed(0)).to_real();
        let y = DVector::zeros(16);
        assert!(matches!(exact_posterior_mean(&y, &h, 0.1, &c), Err(Error::EnumerationBound(_))));
        assert!(ml_detect(&y, &h, &c).is_err());
    }

    #[test]
    fn brute_force_ml_agrees() {
        let (h, x, c) = setup(2, 3);
        let y = h.matrix() * &x + DVector::from_fn(4, |i, _| 0.3 * (i as f64).cos());
        let mut best = (f64::INFINITY, DVector::zeros(4));
        for code in 0..16u32 {
            let cand = DVector::from_fn(4, |i, _| c.levels()[((code >> i) & 1) as usize]);
            let d = (&y - h.matrix() * &cand).norm_squared();
            if d < best.0 {
                best = (d, cand);
            }
        }
        assert_eq!(ml_detect(&y, &h, &c).unwrap(), best.1);
    }
}
