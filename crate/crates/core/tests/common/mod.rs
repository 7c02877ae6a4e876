//! Independent oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use intrinsic_core::colorspace::{make_basis, rgb_to_uvb, BrighteningBasis, LinearImage, UvbImage};
use intrinsic_core::energy::{
    classify_edges, rb_gradient, total_energy, AlbedoGmm, DataForm, EnergyInputs, EnergyWeights,
    Illuminant, Responsibilities,
};
use intrinsic_core::math::Vec3;
use intrinsic_core::naming::{ColorComposition, CompositionMatrix, NamingModel, TERM_COUNT};
use intrinsic_core::solver::{e_step, m_step_mu_sigma, pi_objective, PiUpdate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    let v: Vec3 = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // exponential spacings give a uniform draw
    let e: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn random_composition(rng: &mut ChaCha8Rng) -> [f64; TERM_COUNT] {
    let v = random_simplex(rng, TERM_COUNT);
    let mut c = [0.0; TERM_COUNT];
    c.copy_from_slice(&v);
    c
}

/// Largest relative deviation between the analytic `R^b` gradient and
/// central differences of the soft total energy, over `states` random
/// 16x16 problems.
pub fn gradient_check(states: usize, h: f64, seed: u64) -> f64 {
    let model = NamingModel::parametric();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let (w, hgt) = (16, 16);
        let pixels: Vec<Vec3> = (0..w * hgt)
            .map(|_| [r.gen_range(0.05..1.0), r.gen_range(0.05..1.0), r.gen_range(0.05..1.0)])
            .collect();
        let mask: Vec<bool> = (0..w * hgt).map(|_| r.gen_bool(0.9)).collect();
        let img = LinearImage::new(w, hgt, pixels, mask).unwrap();
        let basis = make_basis(random_direction(&mut r)).unwrap();
        let uvb = rgb_to_uvb(&img, &basis);
        let weights = EnergyWeights::standard(img.masked_count(), 3);
        let edges = classify_edges(&uvb, &weights);
        let k = r.gen_range(1..=4);
        let means: Vec<Vec3> = (0..k)
            .map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-2.0..0.0)])
            .collect();
        let vars: Vec<Vec3> = (0..k)
            .map(|_| [r.gen_range(0.01..0.5), r.gen_range(0.01..0.5), r.gen_range(0.01..0.5)])
            .collect();
        let gmm = AlbedoGmm::new(means, vars, random_simplex(&mut r, k)).unwrap();
        let l = Illuminant::from_uvb([r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3), r.gen_range(-0.5..0.5)], &basis);
        let n = img.masked_count();
        let gamma: Vec<f64> = (0..n).flat_map(|_| random_simplex(&mut r, k)).collect();
        let gamma = Responsibilities::new(k, gamma).unwrap();
        let rb: Vec<f64> = (0..w * hgt).map(|_| r.gen_range(-2.0..0.5)).collect();
        let y = ColorComposition::uniform();
        let inputs = EnergyInputs {
            uvb: &uvb,
            edges: &edges,
            weights: &weights,
            model: &model,
            basis: &basis,
            annotation: &y,
        };
        let energy = |rb: &[f64]| total_energy(rb, &gmm, &l, &gamma, &inputs, DataForm::Soft).unwrap().total;
        let g = rb_gradient(&rb, &uvb, &gmm, &l, &edges, &gamma, &weights).unwrap();
        let mut fd = vec![0.0; rb.len()];
        let mut x = rb.clone();
        for p in 0..rb.len() {
            x[p] = rb[p] + h;
            let plus = energy(&x);
            x[p] = rb[p] - h;
            let minus = energy(&x);
            x[p] = rb[p];
            fd[p] = (plus - minus) / (2.0 * h);
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// A random mixing-weight subproblem with at most `max_k` components.
pub struct PiInstance {
    pub n: Vec<f64>,
    pub a: CompositionMatrix,
    pub y: ColorComposition,
    pub w_c: f64,
    pub start: Vec<f64>,
}

pub fn pi_instance(r: &mut ChaCha8Rng, max_k: usize) -> PiInstance {
    let k = r.gen_range(1..=max_k);
    let n: Vec<f64> = (0..k).map(|_| r.gen_range(1.0..200.0)).collect();
    let total: f64 = n.iter().sum();
    let a = CompositionMatrix::from_columns((0..k).map(|_| random_composition(r)).collect());
    let y = ColorComposition::new(random_composition(r)).unwrap();
    let w_c = r.gen_range(0.0..5.0) * total;
    let start = random_simplex(r, k);
    PiInstance { n, a, y, w_c, start }
}

/// Exhaustive search over the simplex at `resolution`.
pub fn grid_argmin(inst: &PiInstance, resolution: f64) -> Vec<f64> {
    let steps = (1.0 / resolution).round() as usize;
    let f = |pi: &[f64]| pi_objective(&inst.n, &inst.a, &inst.y, inst.w_c, pi);
    let mut best = (f64::INFINITY, vec![]);
    let mut consider = |pi: Vec<f64>| {
        let v = f(&pi);
        if v < best.0 {
            best = (v, pi);
        }
    };
    match inst.n.len() {
        1 => consider(vec![1.0]),
        2 => {
            for i in 1..steps {
                let a = i as f64 / steps as f64;
                consider(vec![a, 1.0 - a]);
            }
        }
        3 => {
            for i in 1..steps {
                for j in 1..steps - i {
                    let a = i as f64 / steps as f64;
                    let b = j as f64 / steps as f64;
                    consider(vec![a, b, 1.0 - a - b]);
                }
            }
        }
        k => panic!("grid search supports K <= 3, got {k}"),
    }
    best.1
}

pub struct PiCheck {
    pub max_dev: f64,
    pub max_simplex_err: f64,
    pub increases: usize,
}

/// Runs `solve` on `count` random instances and compares it to grid search.
pub fn pi_oracle(count: usize, seed: u64, solve: impl Fn(&PiInstance) -> PiUpdate) -> PiCheck {
    let mut r = rng(seed);
    let mut out = PiCheck {
        max_dev: 0.0,
        max_simplex_err: 0.0,
        increases: 0,
    };
    for _ in 0..count {
        let inst = pi_instance(&mut r, 3);
        let upd = solve(&inst);
        let grid = grid_argmin(&inst, 0.001);
        let dev = upd.pi.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.max_dev = out.max_dev.max(dev);
        let sum_err = (upd.pi.iter().sum::<f64>() - 1.0).abs();
        let neg = upd.pi.iter().map(|p| (-p).max(0.0)).fold(0.0, f64::max);
        out.max_simplex_err = out.max_simplex_err.max(sum_err).max(neg);
        let before = pi_objective(&inst.n, &inst.a, &inst.y, inst.w_c, &inst.start);
        let after = pi_objective(&inst.n, &inst.a, &inst.y, inst.w_c, &upd.pi);
        if after > before + 1e-9 * before.abs().max(1.0) {
            out.increases += 1;
        }
    }
    out
}

/// `Σ_p ln Σ_k π_k N(x_p | μ_k, Σ_k)` from the textbook density.
pub fn direct_log_likelihood(samples: &[Vec3], gmm: &AlbedoGmm) -> f64 {
    samples
        .iter()
        .map(|x| {
            (0..gmm.k())
                .map(|k| gmm.weights()[k] * gaussian(x, &gmm.means()[k], &gmm.variances()[k]))
                .sum::<f64>()
                .ln()
        })
        .sum()
}

pub fn gaussian(x: &Vec3, mean: &Vec3, var: &Vec3) -> f64 {
    let mut p = 1.0;
    for d in 0..3 {
        let r = x[d] - mean[d];
        p *= (-(r * r) / (2.0 * var[d])).exp() / (2.0 * std::f64::consts::PI * var[d]).sqrt();
    }
    p
}

/// Clustered samples around `k` random centers.
pub fn clustered_samples(r: &mut ChaCha8Rng, k: usize, per: usize) -> Vec<Vec3> {
    let mut out = Vec::new();
    for _ in 0..k {
        let c: Vec3 = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let s = r.gen_range(0.05..0.3);
        for _ in 0..per {
            out.push([
                c[0] + s * r.gen_range(-1.0..1.0),
                c[1] + s * r.gen_range(-1.0..1.0),
                c[2] + s * r.gen_range(-1.0..1.0),
            ]);
        }
    }
    out
}

/// Worst log-likelihood decrease of one E+M step with fixed weights and no
/// sparsity shrinkage, over `datasets` random problems.
pub fn em_worst_decrease(datasets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut done = 0;
    while done < datasets {
        let k = r.gen_range(1..=4);
        let per = r.gen_range(20..60);
        let x = clustered_samples(&mut r, k, per);
        let means: Vec<Vec3> = (0..k).map(|_| x[r.gen_range(0..x.len())]).collect();
        let vars = vec![[0.1; 3]; k];
        let pi = random_simplex(&mut r, k);
        let gmm = AlbedoGmm::new(means, vars, pi.clone()).unwrap();
        let e = e_step(&x, &gmm);
        let m = m_step_mu_sigma(&x, &e.gamma, 0.0).unwrap();
        if m.kept.len() != k {
            // a starved component leaves the family; try another draw
            continue;
        }
        let next = AlbedoGmm::new(m.means, m.variances, pi).unwrap();
        let before = direct_log_likelihood(&x, &gmm);
        let after = direct_log_likelihood(&x, &next);
        worst = worst.max(before - after);
        done += 1;
    }
    worst
}

/// A random basis and a batch of positive RGB pixels.
pub fn random_pixels(r: &mut ChaCha8Rng, count: usize) -> (BrighteningBasis, Vec<Vec3>) {
    let basis = make_basis(random_direction(r)).unwrap();
    let px = (0..count)
        .map(|_| {
            [
                10f64.powf(r.gen_range(-3.0..0.5)),
                10f64.powf(r.gen_range(-3.0..0.5)),
                10f64.powf(r.gen_range(-3.0..0.5)),
            ]
        })
        .collect();
    (basis, px)
}

/// Per-window optimal scale by ternary search, not the closed form.
pub fn brute_force_lmse(est: &[f64], gt: &[f64], mask: &[bool], w: usize, h: usize, window: usize, stride: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut y = 0;
    while y + window <= h {
        let mut x = 0;
        while x + window <= w {
            let idx: Vec<usize> = (y..y + window)
                .flat_map(|yy| (x..x + window).map(move |xx| yy * w + xx))
                .filter(|&i| mask[i])
                .collect();
            if idx.len() >= 10 {
                let err = |a: f64| idx.iter().map(|&i| (a * est[i] - gt[i]).powi(2)).sum::<f64>();
                let (mut lo, mut hi) = (-100.0, 100.0);
                for _ in 0..300 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if err(m1) < err(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                num += err(0.5 * (lo + hi));
                den += idx.iter().map(|&i| gt[i] * gt[i]).sum::<f64>();
            }
            x += stride;
        }
        y += stride;
    }
    num / den
}

pub fn uvb_of(img: &LinearImage, basis: &BrighteningBasis) -> UvbImage {
    rgb_to_uvb(img, basis)
}
