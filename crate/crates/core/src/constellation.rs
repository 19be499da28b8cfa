//! Real-valued QAM alphabet, Gray labels and the posterior-mean denoiser.
//!
//! A square `P`-QAM constellation factors into two independent real
//! dimensions with `√P` equally spaced levels each. Levels are indexed in
//! ascending order and level `i` carries the reflected Gray label
//! `i ^ (i >> 1)`, written most-significant bit first.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    levels: Vec<f64>,
    prior: Vec<f64>,
    labels: Vec<u32>,
    bits_per_level: usize,
}

/// Posterior mean together with the derivatives the trainer needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorStats {
    pub mean: f64,
    /// d mean / d r
    pub d_r: f64,
    /// d mean / d tau²
    pub d_tau2: f64,
}

/// Levels and Gray labels of a unit-energy square QAM alphabet.
pub fn qam_real_alphabet(order_p: u32) -> Result<Constellation> {
    let root = (order_p as f64).sqrt().round() as usize;
    if order_p < 4 || root * root != order_p as usize || !root.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "QAM order {order_p} is not a perfect square >= 4 with a power-of-two root"
        )));
    }
    let raw: Vec<f64> = (0..root)
        .map(|i| 2.0 * i as f64 - (root as f64 - 1.0))
        .collect();
    // unit average complex energy: 2 * mean(s^2) = 1
    let mean_sq = raw.iter().map(|s| s * s).sum::<f64>() / root as f64;
    let scale = (0.5 / mean_sq).sqrt();
    let levels = raw.iter().map(|s| s * scale).collect();
    let prior = vec![1.0 / root as f64; root];
    let labels = (0..root as u32).map(|i| i ^ (i >> 1)).collect();
    Ok(Constellation {
        levels,
        prior,
        labels,
        bits_per_level: root.trailing_zeros() as usize,
    })
}

impl Constellation {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Bits carried by one real dimension, `log2(√P)`.
    pub fn bits_per_level(&self) -> usize {
        self.bits_per_level
    }

    /// Distance between adjacent levels.
    pub fn spacing(&self) -> f64 {
        self.levels[1] - self.levels[0]
    }

    pub fn min_level(&self) -> f64 {
        self.levels[0]
    }

    pub fn max_level(&self) -> f64 {
        *self.levels.last().unwrap()
    }

    /// `E[s²]` per real dimension under the prior.
    pub fn energy_per_dim(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.prior)
            .map(|(s, p)| p * s * s)
            .sum()
    }

    /// Index of the level exactly equal to `symbol` (within 1e-12).
    pub fn level_index(&self, symbol: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| (l - symbol).abs() <= 1e-12)
            .ok_or(Error::UnknownSymbol(symbol))
    }

    /// Index of the nearest level; midpoints resolve to the lower level.
    pub fn nearest_index(&self, value: f64) -> usize {
        let mut idx = 0;
        // strict comparison sends exact midpoints to the lower level
        while idx + 1 < self.levels.len() && value > (self.levels[idx] + self.levels[idx + 1]) / 2.0 {
            idx += 1;
        }
        idx
    }

    /// Maps groups of `bits_per_level` bits (MSB first) to levels.
    pub fn bits_to_symbols(&self, bits: &[bool]) -> Result<Vec<f64>> {
        let k = self.bits_per_level;
        if !bits.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch(format!(
                "{} bits cannot be split into groups of {k}",
                bits.len()
            )));
        }
        Ok(bits
            .chunks(k)
            .map(|group| {
                let label = group.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                self.levels[gray_decode(label) as usize]
            })
            .collect())
    }

    pub fn symbols_to_bits(&self, symbols: &[f64]) -> Result<Vec<bool>> {
        let k = self.bits_per_level;
        let mut bits = Vec::with_capacity(symbols.len() * k);
        for &s in symbols {
            let label = self.labels[self.level_index(s)?];
            bits.extend((0..k).rev().map(|b| (label >> b) & 1 == 1));
        }
        Ok(bits)
    }

    /// Elementwise posterior mean `E[s | r]` for `r = s + w`, `w ~ N(0, tau2)`.
    pub fn posterior_mean(&self, r: f64, tau2: f64) -> Result<f64> {
        if !(tau2 > 0.0) || !tau2.is_finite() || !r.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "posterior mean needs finite r and tau2 > 0 (r = {r}, tau2 = {tau2})"
            )));
        }
        Ok(self.posterior_stats(r, tau2).mean)
    }

    /// Posterior mean and its partial derivatives. The caller guarantees
    /// `tau2 > 0`; the Gaussian exponents are shifted by their maximum.
    pub fn posterior_stats(&self, r: f64, tau2: f64) -> PosteriorStats {
        let mut max_exp = f64::NEG_INFINITY;
        for (s, p) in self.levels.iter().zip(&self.prior) {
            let e = -(s - r) * (s - r) / (2.0 * tau2) + p.ln();
            max_exp = max_exp.max(e);
        }
        let n = self.levels.len();
        let weight = |i: usize| {
            let s = self.levels[i];
            (-(s - r) * (s - r) / (2.0 * tau2) + self.prior[i].ln() - max_exp).exp()
        };
        // Mirrored levels are accumulated in pairs so that the mean is exactly odd in r.
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        let (mut d2, mut sd2) = (0.0, 0.0);
        for lo in 0..n / 2 {
            let hi = n - 1 - lo;
            let (wl, wh) = (weight(lo), weight(hi));
            let s = self.levels[hi];
            let (dl, dh) = ((self.levels[lo] - r).powi(2), (s - r).powi(2));
            z += wh + wl;
            m1 += s * (wh - wl);
            m2 += s * s * (wh + wl);
            d2 += wl * dl + wh * dh;
            sd2 += s * (wh * dh - wl * dl);
        }
        let mean = m1 / z;
        let var = (m2 / z - mean * mean).max(0.0);
        let cov = sd2 / z - mean * d2 / z;
        PosteriorStats {
            mean,
            d_r: var / tau2,
            d_tau2: cov / (2.0 * tau2 * tau2),
        }
    }

    /// Nearest-level decision for every entry.
    pub fn hard_decision(&self, xhat: &[f64]) -> Vec<f64> {
        xhat.iter()
            .map(|&v| self.levels[self.nearest_index(v)])
            .collect()
    }

    /// Hamming distance between the Gray labels of two symbol vectors.
    pub fn bit_errors(&self, decided: &[f64], truth: &[f64]) -> Result<u64> {
        if decided.len() != truth.len() {
            return Err(Error::DimensionMismatch(format!(
                "decided vector has {} entries, truth has {}",
                decided.len(),
                truth.len()
            )));
        }
        let mut errors = 0u64;
        for (&d, &t) in decided.iter().zip(truth) {
            let a = self.labels[self.level_index(d)?];
            let b = self.labels[self.level_index(t)?];
            errors += (a ^ b).count_ones() as u64;
        }
        Ok(errors)
    }
}

fn gray_decode(mut g: u32) -> u32 {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}
