mod common;

use common::*;
use intrinsic_core::energy::{AlbedoGmm, Responsibilities};
use intrinsic_core::math::Vec3;
use intrinsic_core::metrics::{almse, correlation, lmse, si_mse, Field};
use intrinsic_core::solver::{e_step, m_step_mu_sigma, update_pi, update_pi_newton, AdmmConfig};
use rand::Rng;

#[test]
fn rb_gradient_matches_finite_differences() {
    let err = gradient_check(10, 1e-5, 11);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn newton_weights_match_grid_search() {
    let c = pi_oracle(20, 5, |i| update_pi_newton(&i.n, &i.a, &i.y, i.w_c, &i.start, 1e-12, 50).unwrap());
    assert!(c.max_dev < 2e-3, "deviation {}", c.max_dev);
    assert!(c.max_simplex_err < 1e-9);
    assert_eq!(c.increases, 0);
}

#[test]
fn admm_weights_match_grid_search() {
    let cfg = AdmmConfig::default();
    let c = pi_oracle(10, 6, |i| update_pi(&i.n, &i.a, &i.y, i.w_c, &i.start, &cfg).unwrap());
    assert!(c.max_dev < 0.02, "deviation {}", c.max_dev);
    assert!(c.max_simplex_err < 1e-6);
    assert_eq!(c.increases, 0);
}

#[test]
fn e_step_matches_textbook_posterior() {
    let mut r = rng(21);
    let x = clustered_samples(&mut r, 3, 30);
    let gmm = AlbedoGmm::new(
        vec![x[0], x[40], x[80]],
        vec![[0.05, 0.1, 0.2], [0.3, 0.1, 0.1], [0.2, 0.2, 0.05]],
        vec![0.2, 0.5, 0.3],
    )
    .unwrap();
    let e = e_step(&x, &gmm);
    for (p, s) in x.iter().enumerate() {
        let joint: Vec<f64> = (0..3)
            .map(|k| gmm.weights()[k] * gaussian(s, &gmm.means()[k], &gmm.variances()[k]))
            .collect();
        let z: f64 = joint.iter().sum();
        for k in 0..3 {
            assert!((e.gamma.row(p)[k] - joint[k] / z).abs() < 1e-12);
        }
    }
    let ll = direct_log_likelihood(&x, &gmm);
    assert!((e.log_likelihood - ll).abs() < 1e-9 * ll.abs());
}

#[test]
fn fixed_weight_em_never_lowers_likelihood() {
    let worst = em_worst_decrease(20, 3);
    assert!(worst <= 1e-8, "likelihood dropped by {worst}");
}

#[test]
fn variance_shrinkage_on_two_points() {
    // two points fully in one component: mean is the midpoint and the
    // variance is the squared half-gap times 2 / (2 + 2 w_g)
    let x: Vec<Vec3> = vec![[0.0, 1.0, -1.0], [2.0, 1.0, 3.0]];
    let gamma = Responsibilities::new(1, vec![1.0, 1.0]).unwrap();
    for (w_g, want) in [(0.0, [1.0, 1e-6, 4.0]), (1.0, [0.5, 1e-6, 2.0]), (3.0, [0.25, 1e-6, 1.0])] {
        let m = m_step_mu_sigma(&x, &gamma, w_g).unwrap();
        assert_eq!(m.means[0], [1.0, 1.0, 1.0]);
        for d in 0..3 {
            assert!((m.variances[0][d] - want[d]).abs() < 1e-15, "w_g {w_g}: {:?}", m.variances[0]);
        }
    }
    // split responsibilities: N_k = 1.5, weighted mean 1/3 toward the second point
    let gamma = Responsibilities::new(1, vec![1.0, 0.5]).unwrap();
    let m = m_step_mu_sigma(&x, &gamma, 0.5).unwrap();
    let mean0 = (0.0 * 1.0 + 2.0 * 0.5) / 1.5;
    assert!((m.means[0][0] - mean0).abs() < 1e-15);
    let var0 = (1.0 * mean0.powi(2) + 0.5 * (2.0 - mean0).powi(2)) / (1.5 + 1.0);
    assert!((m.variances[0][0] - var0).abs() < 1e-15);
}

#[test]
fn lmse_matches_brute_force_scale_search() {
    let mut r = rng(8);
    for _ in 0..5 {
        let (w, h) = (45, 37);
        let gt: Vec<f64> = (0..w * h).map(|_| r.gen_range(0.1..1.0)).collect();
        let est: Vec<f64> = gt.iter().map(|g| g * r.gen_range(0.5..1.5) + r.gen_range(0.0..0.1)).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| r.gen_bool(0.8)).collect();
        let e = Field::new(&est, &mask, w, h).unwrap();
        let g = Field::new(&gt, &mask, w, h).unwrap();
        let got = lmse(&e, &g, 20, 10).unwrap();
        let want = brute_force_lmse(&est, &gt, &mask, w, h, 20, 10);
        assert!((got - want).abs() < 1e-9 * want.max(1e-12), "{got} vs {want}");
    }
}

#[test]
fn global_metrics_match_direct_formulas() {
    let mut r = rng(9);
    let (w, h) = (30, 30);
    let gt: Vec<f64> = (0..w * h).map(|_| r.gen_range(0.1..1.0)).collect();
    let est: Vec<f64> = gt.iter().map(|g| 2.0 * g + r.gen_range(-0.1..0.1)).collect();
    let mask = vec![true; w * h];
    let e = Field::new(&est, &mask, w, h).unwrap();
    let g = Field::new(&gt, &mask, w, h).unwrap();

    let n = (w * h) as f64;
    let (me, mg) = (est.iter().sum::<f64>() / n, gt.iter().sum::<f64>() / n);
    let cov: f64 = est.iter().zip(&gt).map(|(a, b)| (a - me) * (b - mg)).sum();
    let sa: f64 = est.iter().map(|a| (a - me).powi(2)).sum::<f64>().sqrt();
    let sb: f64 = gt.iter().map(|b| (b - mg).powi(2)).sum::<f64>().sqrt();
    assert!((correlation(&e, &g).unwrap() - cov / (sa * sb)).abs() < 1e-12);

    // closed-form global scale, then the normalized residual
    let alpha = est.iter().zip(&gt).map(|(a, b)| a * b).sum::<f64>() / est.iter().map(|a| a * a).sum::<f64>();
    let res: f64 = est.iter().zip(&gt).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    let energy: f64 = gt.iter().map(|b| b * b).sum();
    assert!((si_mse(&e, &g).unwrap() - res / energy).abs() < 1e-12);

    // with one global scale every window sees the same alpha
    let a = almse(&e, &g, 20, 10).unwrap();
    assert!(a >= lmse(&e, &g, 20, 10).unwrap() - 1e-15);
}
