use intrinsic_core::colorspace::{make_basis, BrighteningBasis};
use intrinsic_core::energy::{data_energy, data_energy_soft, AlbedoGmm, Illuminant};
use intrinsic_core::colorspace::{LinearImage, UvbImage};
use intrinsic_core::math::Vec3;
use intrinsic_core::metrics::{lmse, si_mse, Field};
use intrinsic_core::naming::{ColorComposition, CompositionMatrix, NamingModel, TERM_COUNT};
use intrinsic_core::solver::e_step;
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Vec3> {
    (0.05f64..1.0, 0.05f64..1.0, 0.05f64..1.0).prop_map(|(a, b, c)| {
        let n = (a * a + b * b + c * c).sqrt();
        [a / n, b / n, c / n]
    })
}

fn basis() -> impl Strategy<Value = BrighteningBasis> {
    direction().prop_map(|n| make_basis(n).unwrap())
}

fn rgb() -> impl Strategy<Value = Vec3> {
    (1e-3f64..3.0, 1e-3f64..3.0, 1e-3f64..3.0).prop_map(|(a, b, c)| [a, b, c])
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn gmm(k: usize) -> impl Strategy<Value = AlbedoGmm> {
    (
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -2.0f64..0.5), k),
        prop::collection::vec((0.01f64..0.5, 0.01f64..0.5, 0.01f64..0.5), k),
        simplex(k),
    )
        .prop_map(|(m, v, w)| {
            AlbedoGmm::new(
                m.into_iter().map(|(a, b, c)| [a, b, c]).collect(),
                v.into_iter().map(|(a, b, c)| [a, b, c]).collect(),
                w,
            )
            .unwrap()
        })
}

fn samples(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5, -2.5f64..1.0).prop_map(|(a, b, c)| [a, b, c]), n)
}

proptest! {
    #[test]
    fn uvb_round_trip(b in basis(), c in rgb()) {
        let back = b.uvb_to_rgb(&b.rgb_to_uvb(&c));
        for d in 0..3 {
            prop_assert!((back[d] - c[d]).abs() <= 1e-9 * c[d]);
        }
    }

    #[test]
    fn basis_is_orthonormal(b in basis()) {
        let dot = |x: &Vec3, y: &Vec3| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        for (x, y, want) in [(&b.u, &b.u, 1.0), (&b.v, &b.v, 1.0), (&b.n, &b.n, 1.0), (&b.u, &b.v, 0.0), (&b.u, &b.n, 0.0), (&b.v, &b.n, 0.0)] {
            prop_assert!((dot(x, y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn brightening_leaves_chroma_unchanged(b in basis(), c in rgb(), k in -2.0f64..2.0) {
        let scaled = [c[0] * (k * b.n[0]).exp(), c[1] * (k * b.n[1]).exp(), c[2] * (k * b.n[2]).exp()];
        let (p, q) = (b.rgb_to_uvb(&c), b.rgb_to_uvb(&scaled));
        prop_assert!((p[0] - q[0]).abs() < 1e-10);
        prop_assert!((p[1] - q[1]).abs() < 1e-10);
        prop_assert!((q[2] - p[2] - k).abs() < 1e-10);
    }

    #[test]
    fn relabeling_components_permutes_responsibilities(g in gmm(4), x in samples(30), order in Just(vec![2usize, 0, 3, 1])) {
        let p = g.permuted(&order);
        let (a, b) = (e_step(&x, &g), e_step(&x, &p));
        prop_assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-9 * a.log_likelihood.abs().max(1.0));
        for row in 0..x.len() {
            for (new, &old) in order.iter().enumerate() {
                prop_assert!((b.gamma.row(row)[new] - a.gamma.row(row)[old]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn responsibilities_are_distributions(g in gmm(3), x in samples(20)) {
        let e = e_step(&x, &g);
        for row in 0..x.len() {
            let s: f64 = e.gamma.row(row).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(e.gamma.row(row).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn mixing_compositions_is_linear(
        cols in prop::collection::vec(simplex(TERM_COUNT), 3),
        p in simplex(3),
        q in simplex(3),
        t in 0.0f64..1.0,
    ) {
        let a = CompositionMatrix::from_columns(cols.iter().map(|c| {
            let mut v = [0.0; TERM_COUNT];
            v.copy_from_slice(c);
            v
        }).collect());
        let r: Vec<f64> = p.iter().zip(&q).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let (mp, mq, mr) = (a.mix(&p), a.mix(&q), a.mix(&r));
        for i in 0..TERM_COUNT {
            prop_assert!((mr[i] - (t * mp[i] + (1.0 - t) * mq[i])).abs() < 1e-12);
        }
        let s: f64 = mr.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_data_energy_bounds_the_hard_one(g in gmm(3), x in samples(25), gammas in prop::collection::vec(simplex(3), 25)) {
        // with b = 0 the body reflectance is the UVB value itself
        let uvb = UvbImage::new(25, 1, x.clone(), vec![true; 25]).unwrap();
        let rb: Vec<f64> = x.iter().map(|v| v[2]).collect();
        let l = Illuminant::neutral();
        let hard = data_energy(&rb, &uvb, &g, &l);
        let gamma = intrinsic_core::energy::Responsibilities::new(3, gammas.concat()).unwrap();
        let soft = data_energy_soft(&rb, &uvb, &g, &l, &gamma).unwrap();
        prop_assert!(soft >= hard - 1e-9 * hard.abs().max(1.0));
        // equality at the posterior, up to its entropy
        let post = e_step(&x, &g).gamma;
        let soft_post = data_energy_soft(&rb, &uvb, &g, &l, &post).unwrap();
        let entropy: f64 = post.values().iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
        prop_assert!((soft_post - entropy - hard).abs() < 1e-8 * hard.abs().max(1.0));
    }

    #[test]
    fn naming_gives_a_distribution(c in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)) {
        for model in [NamingModel::default(), NamingModel::parametric()] {
            let p = model.probabilities(&[c.0, c.1, c.2]);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn composition_json_round_trip(v in simplex(TERM_COUNT)) {
        let mut a = [0.0; TERM_COUNT];
        a.copy_from_slice(&v);
        let c = ColorComposition::new(a).unwrap();
        let back = ColorComposition::from_json_value(&c.to_json_value()).unwrap();
        for i in 0..TERM_COUNT {
            prop_assert!((back.values()[i] - c.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_positive_rescaling(
        vals in prop::collection::vec(0.05f64..1.0, 30 * 30),
        noise in prop::collection::vec(0.8f64..1.2, 30 * 30),
        alpha in 0.1f64..10.0,
    ) {
        let est: Vec<f64> = vals.iter().zip(&noise).map(|(a, b)| a * b).collect();
        let scaled: Vec<f64> = est.iter().map(|e| e * alpha).collect();
        let mask = vec![true; 900];
        let g = Field::new(&vals, &mask, 30, 30).unwrap();
        let e1 = Field::new(&est, &mask, 30, 30).unwrap();
        let e2 = Field::new(&scaled, &mask, 30, 30).unwrap();
        let (a, b) = (lmse(&e1, &g, 20, 10).unwrap(), lmse(&e2, &g, 20, 10).unwrap());
        prop_assert!((a - b).abs() < 1e-10 * a.max(1e-12));
        let (a, b) = (si_mse(&e1, &g).unwrap(), si_mse(&e2, &g).unwrap());
        prop_assert!((a - b).abs() < 1e-10 * a.max(1e-12));
    }

    #[test]
    fn masked_pixels_do_not_change_the_image_uvb(b in basis(), c in rgb(), other in rgb()) {
        let img = LinearImage::new(2, 1, vec![c, other], vec![true, false]).unwrap();
        let uvb = intrinsic_core::colorspace::rgb_to_uvb(&img, &b);
        let direct = b.rgb_to_uvb(&c);
        for d in 0..3 {
            prop_assert!((uvb.values()[0][d] - direct[d]).abs() < 1e-15);
        }
    }
}
