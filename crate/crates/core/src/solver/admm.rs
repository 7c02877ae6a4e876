//! Mixing-weight update: minimize `−Nᵀ ln π + w_c ‖y − ỹπ‖²` over the simplex
//! by splitting `π = φ = ψ` (log barrier on φ, nonnegativity on ψ) and
//! running explicit gradient steps on the augmented Lagrangian, plus a
//! Newton solver for the same problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::AdmmConfig;
use crate::error::{Error, Result};
use crate::naming::{ColorComposition, CompositionMatrix};

/// Floor applied to populated components of the returned weights.
const PI_FLOOR: f64 = 1e-12;

/// Primal and dual variables of the splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub pi: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: f64,
    pub gamma: Vec<f64>,
    pub upsilon: Vec<f64>,
}

impl AdmmState {
    /// Every vector set to `pi`, `λ = 1`.
    pub fn new(pi: &[f64]) -> Self {
        Self {
            pi: pi.to_vec(),
            phi: pi.to_vec(),
            psi: pi.to_vec(),
            lambda: 1.0,
            gamma: pi.to_vec(),
            upsilon: pi.to_vec(),
        }
    }

    /// `max(|Σπ − 1|, ‖π − φ‖∞, ‖π − ψ‖∞)`.
    pub fn primal_residual(&self) -> f64 {
        let mut r = (self.pi.iter().sum::<f64>() - 1.0).abs();
        for k in 0..self.pi.len() {
            r = r
                .max((self.pi[k] - self.phi[k]).abs())
                .max((self.pi[k] - self.psi[k]).abs());
        }
        r
    }
}

/// Outcome of one weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct PiUpdate {
    pub pi: Vec<f64>,
    pub iterations: usize,
    pub objective_in: f64,
    pub objective_out: f64,
    /// The iterate was worse than the input and the input was kept.
    pub kept_input: bool,
}

/// `−Σ N_k ln π_k + w_c ‖y − ỹπ‖²`. Components with `N_k = 0` contribute
/// nothing to the first sum.
pub fn pi_objective(
    n: &[f64],
    a: &CompositionMatrix,
    y: &ColorComposition,
    w_c: f64,
    pi: &[f64],
) -> f64 {
    let mut e = 0.0;
    for (nk, pk) in n.iter().zip(pi) {
        if *nk > 0.0 {
            e -= nk * pk.ln();
        }
    }
    e + w_c * y.squared_distance(&a.mix(pi))
}

/// The closed-form minimizer when `w_c = 0`: `π_k = N_k / ΣN`.
pub fn proportional_pi(n: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = n.iter().sum();
    if n.is_empty() || !(s > 0.0) || n.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("populations must be nonnegative and not all zero".into()));
    }
    Ok(n.iter().map(|v| v / s).collect())
}

/// Simplex KKT residual `max_k π_k |g_k − Σ_j π_j g_j|` of the scaled
/// objective; zero exactly at a stationary point with `π > 0`.
fn stationarity(nn: &[f64], wc: f64, gram: &[f64], aty: &[f64], pi: &[f64]) -> f64 {
    let k = pi.len();
    if pi.iter().zip(nn).any(|(p, w)| *p <= 0.0 && *w > 0.0) {
        return f64::INFINITY;
    }
    let g: Vec<f64> = (0..k)
        .map(|i| {
            let ata_pi: f64 = (0..k).map(|j| gram[i * k + j] * pi[j]).sum();
            let barrier = if nn[i] > 0.0 { -nn[i] / pi[i] } else { 0.0 };
            barrier + 2.0 * wc * (ata_pi - aty[i])
        })
        .collect();
    let mean: f64 = pi.iter().zip(&g).map(|(p, gi)| p * gi).sum();
    pi.iter()
        .zip(&g)
        .map(|(p, gi)| (p * (gi - mean)).abs())
        .fold(0.0, f64::max)
}

/// Runs the splitting from `pi_t` until the objective drop is below `t_d`
/// with the constraints met to `residual_tol`, or `max_iter` is reached.
///
/// Returns `pi_t` untouched when it already satisfies the simplex KKT
/// conditions to `stationary_tol`.
///
/// The objective is divided by `ΣN` internally so the step size does not
/// depend on image size. The returned weights are `ψ`, with populated
/// components floored at 1e-12, renormalized.
pub fn update_pi(
    n: &[f64],
    a: &CompositionMatrix,
    y: &ColorComposition,
    w_c: f64,
    pi_t: &[f64],
    cfg: &AdmmConfig,
) -> Result<PiUpdate> {
    let k = n.len();
    if k == 0 {
        return Err(Error::InvalidInput("no mixture components".into()));
    }
    if a.k() != k || pi_t.len() != k {
        return Err(Error::InvalidInput("weight update dimensions differ".into()));
    }
    let total: f64 = n.iter().sum();
    if !(total > 0.0) || n.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("populations must be nonnegative and not all zero".into()));
    }
    let objective_in = pi_objective(n, a, y, w_c, pi_t);
    if k == 1 {
        return Ok(PiUpdate {
            pi: vec![1.0],
            iterations: 0,
            objective_in,
            objective_out: pi_objective(n, a, y, w_c, &[1.0]),
            kept_input: false,
        });
    }

    let nn: Vec<f64> = n.iter().map(|v| v / total).collect();
    let wc = w_c / total;
    let gram = a.gram();
    let aty = a.project(y);
    let scaled = |pi: &[f64]| pi_objective(&nn, a, y, wc, pi);

    if stationarity(&nn, wc, &gram, &aty, pi_t) <= cfg.stationary_tol {
        return Ok(PiUpdate {
            pi: pi_t.to_vec(),
            iterations: 0,
            objective_in,
            objective_out: objective_in,
            kept_input: false,
        });
    }

    let mut s = AdmmState::new(pi_t);
    let (rho, eta) = (cfg.rho, cfg.eta);
    let start = scaled(&s.pi);
    let mut prev = start;
    let mut iterations = 0;
    let mut grad = vec![0.0; k];
    while iterations < cfg.max_iter {
        iterations += 1;
        for i in 0..k {
            let mut ata_pi = 0.0;
            for j in 0..k {
                ata_pi += gram[i * k + j] * s.pi[j];
            }
            grad[i] = 2.0 * wc * ata_pi - 2.0 * wc * aty[i]
                + s.gamma[i]
                + rho * (s.pi[i] - s.phi[i])
                + s.upsilon[i]
                + rho * (s.pi[i] - s.psi[i])
                + s.lambda;
        }
        for i in 0..k {
            s.pi[i] -= eta * grad[i];
        }
        for i in 0..k {
            // the barrier gradient is taken at the fresh π
            let barrier = if nn[i] > 0.0 { -nn[i] / s.pi[i] } else { 0.0 };
            s.phi[i] -= eta * (barrier - s.gamma[i] - rho * (s.pi[i] - s.phi[i]));
            s.psi[i] = (s.pi[i] + s.upsilon[i] / rho).max(0.0);
        }
        s.lambda += eta * (s.pi.iter().sum::<f64>() - 1.0);
        for i in 0..k {
            s.gamma[i] += eta * (s.pi[i] - s.phi[i]);
            s.upsilon[i] += eta * (s.pi[i] - s.psi[i]);
        }

        let obj = if s.pi.iter().zip(&nn).all(|(p, w)| *p > 0.0 || *w == 0.0) {
            scaled(&s.pi)
        } else {
            f64::INFINITY
        };
        if s.pi.iter().any(|v| !v.is_finite()) || (obj.is_finite() && obj > 10.0 * start.abs() + 10.0) {
            return Err(Error::Numerical(format!(
                "mixing-weight update diverged after {iterations} iterations"
            )));
        }
        let drop = prev - obj;
        if obj.is_finite() {
            prev = obj;
        }
        if drop.abs() < cfg.t_d && s.primal_residual() < cfg.residual_tol {
            break;
        }
    }

    let mut pi: Vec<f64> = s
        .psi
        .iter()
        .zip(n)
        .map(|(p, nk)| if *nk > 0.0 { p.max(PI_FLOOR) } else { p.max(0.0) })
        .collect();
    let sum: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= sum;
    }
    let objective_out = pi_objective(n, a, y, w_c, &pi);
    if objective_out > objective_in + 1e-8 * objective_in.abs().max(1.0) {
        return Ok(PiUpdate {
            pi: pi_t.to_vec(),
            iterations,
            objective_in,
            objective_out: objective_in,
            kept_input: true,
        });
    }
    Ok(PiUpdate {
        pi,
        iterations,
        objective_in,
        objective_out,
        kept_input: false,
    })
}

/// Equality-constrained Newton on the same objective, started from `pi_t`.
///
/// Components with `N_k = 0` are fixed at zero; the log barrier keeps the
/// others strictly positive, so every iterate is feasible and the objective
/// never increases. Stops once the Newton decrement of the `ΣN`-scaled
/// objective falls below `tol` or after `max_iter` steps.
pub fn update_pi_newton(
    n: &[f64],
    a: &CompositionMatrix,
    y: &ColorComposition,
    w_c: f64,
    pi_t: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PiUpdate> {
    let k = n.len();
    if k == 0 {
        return Err(Error::InvalidInput("no mixture components".into()));
    }
    if a.k() != k || pi_t.len() != k {
        return Err(Error::InvalidInput("weight update dimensions differ".into()));
    }
    let total: f64 = n.iter().sum();
    if !(total > 0.0) || n.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("populations must be nonnegative and not all zero".into()));
    }
    let objective_in = pi_objective(n, a, y, w_c, pi_t);
    let active: Vec<usize> = (0..k).filter(|&i| n[i] > 0.0).collect();
    let m = active.len();
    let nn: Vec<f64> = active.iter().map(|&i| n[i] / total).collect();
    let wc = w_c / total;
    let gram_full = a.gram();
    let aty_full = a.project(y);
    let gram = DMatrix::from_fn(m, m, |r, c| gram_full[active[r] * k + active[c]]);
    let aty = DVector::from_iterator(m, active.iter().map(|&i| aty_full[i]));
    let f = |x: &DVector<f64>| -> f64 {
        let q = x.dot(&(&gram * x)) - 2.0 * x.dot(&aty);
        wc * q - x.iter().zip(&nn).map(|(p, w)| w * p.ln()).sum::<f64>()
    };

    // strictly interior start: blend the input with the uniform point
    let mut x = DVector::from_iterator(m, active.iter().map(|&i| pi_t[i].max(0.0)));
    let s = x.sum();
    let uniform = 1.0 / m as f64;
    x = if s > 0.0 { x / s } else { DVector::from_element(m, uniform) };
    if x.iter().any(|p| *p <= 0.0) {
        x = x * 0.99 + DVector::from_element(m, 0.01 * uniform);
    }
    let mut fx = f(&x);
    let mut iterations = 0;
    let ones = DVector::from_element(m, 1.0);
    while iterations < max_iter {
        iterations += 1;
        let g = (&gram * &x - &aty) * (2.0 * wc)
            - DVector::from_iterator(m, x.iter().zip(&nn).map(|(p, w)| w / p));
        let mut h = &gram * (2.0 * wc);
        for i in 0..m {
            h[(i, i)] += nn[i] / (x[i] * x[i]);
        }
        let Some(chol) = h.cholesky() else { break };
        // eliminate the multiplier of Σπ = 1
        let hg = chol.solve(&g);
        let h1 = chol.solve(&ones);
        let nu = -hg.sum() / h1.sum();
        let d = -(hg + h1 * nu);
        let decrement = -g.dot(&d);
        if !(decrement > tol) {
            break;
        }
        let mut t = 1.0f64;
        for i in 0..m {
            if d[i] < 0.0 {
                t = t.min(-0.99 * x[i] / d[i]);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x + &d * t;
            let ft = f(&trial);
            if ft <= fx - 1e-4 * t * decrement {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let mut pi = vec![0.0; k];
    for (r, &i) in active.iter().enumerate() {
        pi[i] = x[r].max(PI_FLOOR);
    }
    let sum: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= sum;
    }
    let objective_out = pi_objective(n, a, y, w_c, &pi);
    if objective_out > objective_in {
        return Ok(PiUpdate {
            pi: pi_t.to_vec(),
            iterations,
            objective_in,
            objective_out: objective_in,
            kept_input: true,
        });
    }
    Ok(PiUpdate {
        pi,
        iterations,
        objective_in,
        objective_out,
        kept_input: false,
    })
}
