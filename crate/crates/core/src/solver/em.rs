//! E and M steps over body reflectance samples, plus the plain EM and
//! k-means++ used at initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::energy::{AlbedoGmm, Responsibilities, SIGMA2_MIN};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Result of an E step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub gamma: Responsibilities,
    /// Rows whose joint densities all underflowed; set uniform.
    pub underflow_rows: usize,
    /// `Σ_p ln Σ_k π_k N(x_p | μ_k, Σ_k)`.
    pub log_likelihood: f64,
}

/// Posterior component probabilities of every sample, computed with
/// max-shifted exponents.
pub fn e_step(samples: &[Vec3], gmm: &AlbedoGmm) -> EStep {
    let k = gmm.k();
    let mut values = vec![0.0; samples.len() * k];
    let mut underflow_rows = 0;
    let mut ll = Vec::with_capacity(samples.len());
    let mut logs = vec![0.0; k];
    for (p, x) in samples.iter().enumerate() {
        for (j, l) in logs.iter_mut().enumerate() {
            *l = gmm.log_joint(j, x);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let row = &mut values[p * k..(p + 1) * k];
        if !m.is_finite() {
            underflow_rows += 1;
            row.fill(1.0 / k as f64);
            ll.push(f64::NEG_INFINITY);
            continue;
        }
        let mut s = 0.0;
        for (r, l) in row.iter_mut().zip(&logs) {
            *r = (l - m).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        ll.push(m + s.ln());
    }
    EStep {
        gamma: Responsibilities::new(k, values).expect("shape is consistent"),
        underflow_rows,
        log_likelihood: math::pairwise_sum(&ll),
    }
}

/// Responsibility-weighted means and shrunk diagonal variances.
///
/// `μ_k = Σ_p γ_pk x_p / N_k`, `σ²_kd = Σ_p γ_pk (x_pd − μ_kd)² / (N_k + 2 w_g)`,
/// floored at [`SIGMA2_MIN`]. Components with `N_k < 1` are dropped; the
/// returned list holds the surviving original indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub means: Vec<Vec3>,
    pub variances: Vec<Vec3>,
    pub populations: Vec<f64>,
    pub kept: Vec<usize>,
}

pub fn m_step_mu_sigma(samples: &[Vec3], gamma: &Responsibilities, w_g: f64) -> Result<MStep> {
    if samples.len() != gamma.n() {
        return Err(Error::InvalidInput("responsibilities do not match samples".into()));
    }
    let k = gamma.k();
    let populations = gamma.populations();
    let mut out = MStep {
        means: Vec::new(),
        variances: Vec::new(),
        populations: Vec::new(),
        kept: Vec::new(),
    };
    let mut col = vec![0.0; samples.len()];
    for j in 0..k {
        let nk = populations[j];
        if nk < 1.0 {
            continue;
        }
        let mut mean = [0.0; 3];
        for d in 0..3 {
            for (p, x) in samples.iter().enumerate() {
                col[p] = gamma.row(p)[j] * x[d];
            }
            mean[d] = math::pairwise_sum(&col) / nk;
        }
        let mut var = [0.0; 3];
        for d in 0..3 {
            for (p, x) in samples.iter().enumerate() {
                let r = x[d] - mean[d];
                col[p] = gamma.row(p)[j] * r * r;
            }
            var[d] = (math::pairwise_sum(&col) / (nk + 2.0 * w_g)).max(SIGMA2_MIN);
        }
        out.means.push(mean);
        out.variances.push(var);
        out.populations.push(nk);
        out.kept.push(j);
    }
    if out.kept.is_empty() {
        return Err(Error::Numerical("every mixture component was pruned".into()));
    }
    Ok(out)
}

/// Squared Euclidean distance.
#[inline]
fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns centers and the
/// label of every point. Fewer distinct points than `k` yields fewer centers.
pub fn kmeans<const D: usize>(
    points: &[[f64; D]],
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<[f64; D]>, Vec<usize>) {
    if points.is_empty() || k == 0 {
        return (Vec::new(), vec![0; points.len()]);
    }
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total = math::pairwise_sum(&d2);
        if !(total > 0.0) {
            break;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            acc += d;
            if acc >= target && *d > 0.0 {
                pick = i;
                break;
            }
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
    }

    let mut labels = vec![0usize; points.len()];
    for it in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if *l != best.0 {
                *l = best.0;
                changed = true;
            }
        }
        if it > 0 && !changed {
            break;
        }
        let mut sums = vec![[0.0; D]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for d in 0..D {
                sums[*l][d] += p[d];
            }
        }
        for j in 0..centers.len() {
            if counts[j] > 0 {
                for d in 0..D {
                    centers[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
        }
    }
    (centers, labels)
}

/// Outcome of a plain EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: AlbedoGmm,
    pub iterations: usize,
    pub log_likelihood: f64,
}

/// Standard maximum-likelihood EM from k-means++ centers, stopping after
/// `max_iter` rounds or when the relative log-likelihood change is below
/// `tol`. Components that fall under one expected sample are dropped.
pub fn fit_gmm(
    samples: &[Vec3],
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GmmFit> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to fit".into()));
    }
    let (centers, labels) = kmeans(samples, k.max(1), 20, rng);
    let kk = centers.len();
    let gamma = Responsibilities::hard(samples.len(), kk, |p| labels[p]);
    let m = m_step_mu_sigma(samples, &gamma, 0.0)?;
    let pops: f64 = m.populations.iter().sum();
    let weights = m.populations.iter().map(|v| v / pops).collect();
    let mut gmm = AlbedoGmm::new(m.means, m.variances, weights)?;
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut log_likelihood = prev;
    while iterations < max_iter {
        iterations += 1;
        let e = e_step(samples, &gmm);
        log_likelihood = e.log_likelihood;
        if prev.is_finite() && (log_likelihood - prev).abs() <= tol * prev.abs().max(1e-300) {
            break;
        }
        prev = log_likelihood;
        let m = m_step_mu_sigma(samples, &e.gamma, 0.0)?;
        let pops: f64 = m.populations.iter().sum();
        let weights = m.populations.iter().map(|v| v / pops).collect();
        gmm = AlbedoGmm::new(m.means, m.variances, weights)?;
    }
    Ok(GmmFit {
        gmm,
        iterations,
        log_likelihood,
    })
}
