use super::config::{DescentConfig, DescentMethod};
use crate::energy::RbObjective;
use crate::error::{Error, Result};

/// Outcome of the reflectance-brightness update.
#[derive(Debug, Clone, PartialEq)]
pub struct RbUpdate {
    pub rb: Vec<f64>,
    pub iterations: usize,
    pub objective_in: f64,
    pub objective_out: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Descent on the `R^b` objective with Armijo backtracking.
///
/// Search directions are preconditioned by the inverse Hessian diagonal:
/// pixel variances of the mixture span several orders of magnitude, and
/// without the scaling one stiff component forces every pixel to take its
/// tiny step. With [`DescentMethod::ConjugateGradient`] directions are
/// conjugated and the first trial step is the exact minimizer along the line
/// (the objective is quadratic in `R^b` for fixed responsibilities), which
/// reaches the low-frequency modes of the pairwise terms in far fewer steps.
pub fn optimize_rb(obj: &RbObjective, rb0: &[f64], cfg: &DescentConfig) -> Result<RbUpdate> {
    if rb0.len() != obj.len() {
        return Err(Error::InvalidInput("R^b field has the wrong length".into()));
    }
    let diag = obj.hessian_diagonal();
    let precondition = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .zip(&diag)
            .map(|(gi, hi)| if *hi > 0.0 { gi / hi } else { 0.0 })
            .collect()
    };
    let conjugate = cfg.method == DescentMethod::ConjugateGradient;
    let mut rb = rb0.to_vec();
    let mut f = obj.value(&rb);
    if !f.is_finite() {
        return Err(Error::Numerical(format!("R^b objective is {f} at the starting point")));
    }
    let objective_in = f;
    let mut iterations = 0;
    let mut trial = vec![0.0; rb.len()];
    let mut g = obj.gradient(&rb);
    let mut z = precondition(&g);
    let mut dir: Vec<f64> = z.iter().map(|v| -v).collect();
    let mut gz = dot(&g, &z);
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // lost conjugacy: restart along the preconditioned gradient
            dir = z.iter().map(|v| -v).collect();
            slope = -gz;
            if !(slope < 0.0) {
                break;
            }
        }
        let mut step = cfg.initial_step;
        if conjugate {
            for ((t, r), d) in trial.iter_mut().zip(&rb).zip(&dir) {
                *t = r + d;
            }
            let curvature = dot(&dir, &obj.gradient(&trial)) - slope;
            if curvature > 0.0 {
                step = -slope / curvature;
            }
        }
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            for ((t, r), d) in trial.iter_mut().zip(&rb).zip(&dir) {
                *t = r + step * d;
            }
            let ft = obj.value(&trial);
            if !ft.is_finite() {
                return Err(Error::Numerical(format!("R^b objective became {ft}")));
            }
            if ft <= f + cfg.armijo_c * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= cfg.shrink;
        }
        let Some(ft) = accepted else { break };
        std::mem::swap(&mut rb, &mut trial);
        let drop = f - ft;
        f = ft;
        if drop <= cfg.rel_tol * f.abs().max(1e-12) {
            break;
        }
        g = obj.gradient(&rb);
        z = precondition(&g);
        let gz_new = dot(&g, &z);
        let beta = if conjugate && gz > 0.0 { gz_new / gz } else { 0.0 };
        gz = gz_new;
        for (d, zi) in dir.iter_mut().zip(&z) {
            *d = -zi + beta * *d;
        }
    }
    Ok(RbUpdate {
        rb,
        iterations,
        objective_in,
        objective_out: f,
    })
}
