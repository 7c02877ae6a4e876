use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Lower bound on every diagonal covariance entry.
pub const SIGMA2_MIN: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture over UVB albedos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbedoGmm {
    means: Vec<Vec3>,
    variances: Vec<Vec3>,
    weights: Vec<f64>,
}

impl AlbedoGmm {
    /// Validates shapes, rejects variances below [`SIGMA2_MIN`], and
    /// renormalizes weights that sum to one within 1e-6.
    pub fn new(means: Vec<Vec3>, variances: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if variances.len() != k || weights.len() != k {
            return Err(Error::InvalidInput("mixture parameter lengths differ".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("non-finite mixture mean".into()));
        }
        for (i, v) in variances.iter().enumerate() {
            if v.iter().any(|s| !(s.is_finite() && *s >= SIGMA2_MIN)) {
                return Err(Error::InvalidInput(format!(
                    "component {i} variance {v:?} below {SIGMA2_MIN}"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {sum}")));
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            means,
            variances,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec3] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec3] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.k() {
            return Err(Error::InvalidInput("weight count mismatch".into()));
        }
        self.weights = normalize_weights(weights)?;
        Ok(())
    }

    /// Every mean shifted by `-shift` (used to move between illumination
    /// modulated and body reflectance).
    pub fn shifted(&self, shift: &Vec3) -> Self {
        let mut out = self.clone();
        for m in out.means.iter_mut() {
            for d in 0..3 {
                m[d] -= shift[d];
            }
        }
        out
    }

    /// Component permutation; `order[i]` is the source index of output `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            means: order.iter().map(|&i| self.means[i]).collect(),
            variances: order.iter().map(|&i| self.variances[i]).collect(),
            weights: order.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// `ln N(x | μ_k, Σ_k)` for diagonal Σ.
    #[inline]
    pub fn log_density(&self, k: usize, x: &Vec3) -> f64 {
        let m = &self.means[k];
        let v = &self.variances[k];
        let mut q = 0.0;
        let mut logdet = 0.0;
        for d in 0..3 {
            let r = x[d] - m[d];
            q += r * r / v[d];
            logdet += v[d].ln();
        }
        -0.5 * (q + logdet + 3.0 * LN_2PI)
    }

    /// `ln π_k + ln N(x | μ_k, Σ_k)`, `-inf` for empty components.
    #[inline]
    pub fn log_joint(&self, k: usize, x: &Vec3) -> f64 {
        let w = self.weights[k];
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        w.ln() + self.log_density(k, x)
    }

    /// `ln Σ_k π_k N(x | μ_k, Σ_k)` with max-shifted exponents.
    pub fn log_likelihood(&self, x: &Vec3) -> f64 {
        let mut buf = [0.0f64; 64];
        if self.k() <= buf.len() {
            for k in 0..self.k() {
                buf[k] = self.log_joint(k, x);
            }
            crate::math::log_sum_exp(&buf[..self.k()])
        } else {
            let v: Vec<f64> = (0..self.k()).map(|k| self.log_joint(k, x)).collect();
            crate::math::log_sum_exp(&v)
        }
    }
}

fn normalize_weights(mut w: Vec<f64>) -> Result<Vec<f64>> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput("mixture weights must be nonnegative".into()));
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidInput("mixture weights sum to zero".into()));
    }
    for x in w.iter_mut() {
        *x /= s;
    }
    Ok(w)
}
