//! Exhaustive illuminant selection over the candidate grid.

use crate::energy::{AlbedoGmm, Illuminant};
use crate::math::Vec3;
use crate::naming::{compositions_of_means, typicality, ColorComposition, NamingModel};
use crate::colorspace::BrighteningBasis;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pixels are scored in this many interleaved passes so an early abort sees
/// samples from the whole image.
const VISIT_STRIDE: usize = 61;

/// Mixture with per-component constants precomputed for repeated scoring.
struct Scorer {
    means: Vec<Vec3>,
    inv_var: Vec<Vec3>,
    log_norm: Vec<f64>,
    /// `−ln Σ_k π_k max_x N(x | μ_k, Σ_k)`: no pixel can cost less.
    floor: f64,
}

impl Scorer {
    fn new(gmm: &AlbedoGmm) -> Self {
        let mut means = Vec::new();
        let mut inv_var = Vec::new();
        let mut log_norm = Vec::new();
        for k in 0..gmm.k() {
            let w = gmm.weights()[k];
            if w <= 0.0 {
                continue;
            }
            let v = gmm.variances()[k];
            means.push(gmm.means()[k]);
            inv_var.push([1.0 / v[0], 1.0 / v[1], 1.0 / v[2]]);
            log_norm.push(w.ln() - 0.5 * (v[0].ln() + v[1].ln() + v[2].ln() + 3.0 * LN_2PI));
        }
        let m = log_norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = log_norm.iter().map(|l| (l - m).exp()).sum();
        Self {
            means,
            inv_var,
            log_norm,
            floor: -(m + s.ln()),
        }
    }

    /// `−ln Σ_k π_k N(x − l | μ_k, Σ_k)`.
    #[inline]
    fn cost(&self, x: &Vec3, l: &Vec3, buf: &mut [f64]) -> f64 {
        let r = [x[0] - l[0], x[1] - l[1], x[2] - l[2]];
        let mut m = f64::NEG_INFINITY;
        for k in 0..self.means.len() {
            let mu = &self.means[k];
            let iv = &self.inv_var[k];
            let d0 = r[0] - mu[0];
            let d1 = r[1] - mu[1];
            let d2 = r[2] - mu[2];
            let v = self.log_norm[k] - 0.5 * (d0 * d0 * iv[0] + d1 * d1 * iv[1] + d2 * d2 * iv[2]);
            buf[k] = v;
            m = m.max(v);
        }
        let s: f64 = buf[..self.means.len()].iter().map(|v| (v - m).exp()).sum();
        -(m + s.ln())
    }
}

fn visit_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    for offset in 0..VISIT_STRIDE.min(n.max(1)) {
        order.extend((offset..n).step_by(VISIT_STRIDE));
    }
    order
}

/// Outcome of [`select_illuminant`].
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminantChoice {
    pub index: usize,
    pub illuminant: Illuminant,
    /// `E_d` at the chosen candidate.
    pub energy: f64,
    /// Candidates whose scoring ran to completion.
    pub fully_scored: usize,
}

/// Data energy `E_d` of the samples `x_p = [I^u, I^v, R^b]` under each
/// candidate, minimized exactly. Ties go to the lowest grid index.
///
/// `current` is scored first so that its energy bounds the search;
/// candidates whose partial sum plus the per-pixel floor for the unscored
/// rest already exceeds the best are abandoned.
pub fn select_illuminant(
    samples: &[Vec3],
    gmm: &AlbedoGmm,
    candidates: &[Illuminant],
    current: Option<usize>,
) -> IlluminantChoice {
    assert!(!candidates.is_empty(), "illuminant grid is empty");
    let scorer = Scorer::new(gmm);
    let order = visit_order(samples.len());
    let mut buf = vec![0.0; scorer.means.len()];
    let full = |l: &Vec3, buf: &mut [f64]| -> f64 {
        order.iter().map(|&p| scorer.cost(&samples[p], l, buf)).sum()
    };

    let first = current.filter(|&i| i < candidates.len()).unwrap_or(0);
    let mut best = (full(&candidates[first].uvb, &mut buf), first);
    let mut fully_scored = 1;
    let n = samples.len() as f64;
    for (i, cand) in candidates.iter().enumerate() {
        if i == first {
            continue;
        }
        let mut partial = 0.0;
        let mut abandoned = false;
        for (visited, &p) in order.iter().enumerate() {
            partial += scorer.cost(&samples[p], &cand.uvb, &mut buf);
            let rest = (n - visited as f64 - 1.0) * scorer.floor;
            if visited % 64 == 63 && partial + rest > best.0 + 1e-9 * best.0.abs().max(1.0) {
                abandoned = true;
                break;
            }
        }
        if abandoned {
            continue;
        }
        fully_scored += 1;
        if partial < best.0 || (partial == best.0 && i < best.1) {
            best = (partial, i);
        }
    }
    IlluminantChoice {
        index: best.1,
        illuminant: candidates[best.1],
        energy: best.0,
        fully_scored,
    }
}

/// Reference scorer without pruning, used by tests and diagnostics.
pub fn data_energy_at(samples: &[Vec3], gmm: &AlbedoGmm, l: &Illuminant) -> f64 {
    let scorer = Scorer::new(gmm);
    let mut buf = vec![0.0; scorer.means.len()];
    visit_order(samples.len())
        .iter()
        .map(|&p| scorer.cost(&samples[p], &l.uvb, &mut buf))
        .sum()
}

/// Initial illuminant: the candidate minimizing the naming energy of the
/// shifted means. Candidates within `tie_tolerance` of the minimum are
/// treated as tied and the most typical one wins, then the lowest index.
/// Returns the index and its naming energy.
pub fn initial_illuminant(
    modulated_means: &[Vec3],
    weights: &[f64],
    candidates: &[Illuminant],
    model: &NamingModel,
    basis: &BrighteningBasis,
    y: &ColorComposition,
    tie_tolerance: f64,
) -> (usize, f64) {
    let shift = |c: &Illuminant| -> Vec<Vec3> {
        modulated_means
            .iter()
            .map(|m| [m[0] - c.uvb[0], m[1] - c.uvb[1], m[2] - c.uvb[2]])
            .collect()
    };
    let energies: Vec<f64> = candidates
        .iter()
        .map(|c| y.squared_distance(&compositions_of_means(model, &shift(c), basis).mix(weights)))
        .collect();
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !(energies[i] <= min + tie_tolerance) {
            continue;
        }
        let t = typicality(&shift(c), weights, basis);
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((i, t));
        }
    }
    let index = best.map_or(0, |b| b.0);
    (index, energies.get(index).copied().unwrap_or(f64::INFINITY))
}
