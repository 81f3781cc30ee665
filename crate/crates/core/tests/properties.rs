//! Invariants of the risk estimators, divergences and distance correlation.

use casn::eval::distance_correlation;
use casn::model::{GaussianEncoder, LinearHead, Mlp, Variance};
use casn::risk::{beta_divergence, estimate_risk, exact_point_risk, gaussian_kl, mc_point_risk, DiscreteDomain, LabeledBatch};
use casn::rng::{normals, Key};
use casn::Tensor;
use proptest::prelude::*;

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn per_point_decomposition_is_exact(
        seed in any::<u64>(),
        samples in 1usize..40,
        y in 0u8..2,
        w in vec_in(3, -2.0, 2.0),
        b in -1.0f64..1.0,
        mc in vec_in(3, -1.0, 1.0),
        mb in vec_in(3, -1.0, 1.0),
        sd in 0.01f64..2.0,
    ) {
        let head = LinearHead::new(w, b).unwrap();
        let std = vec![sd; 3];
        let p = mc_point_risk(&head, &mc, &std, &mb, &std, y, samples, Key::new(seed));
        let identity = p.sf * (1.0 - p.nc) + (1.0 - p.sf) * p.nc;
        prop_assert!((p.m - identity).abs() <= 1e-12);
        prop_assert!(p.r() <= p.m + 2.0 * p.sf + 1e-12);
        let var = vec![sd * sd; 3];
        let e = exact_point_risk(&head, &mc, &var, &mb, &var, y);
        prop_assert!((e.m - (e.sf * (1.0 - e.nc) + (1.0 - e.sf) * e.nc)).abs() <= 1e-12);
    }

    #[test]
    fn batch_report_respects_the_bound(seed in any::<u64>(), n in 2usize..20, mc in 1usize..16) {
        let key = Key::new(seed);
        let x = Tensor::new(vec![n, 4], normals(key.fold(0), n * 4)).unwrap();
        let y = (0..n).map(|i| u8::from(x.at(i, 1) > 0.0)).collect();
        let batch = LabeledBatch::new(x, y).unwrap();
        let enc = |k| GaussianEncoder::new(Mlp::new(key.fold(k), 4, &[5], 3), Variance::Fixed(0.5)).unwrap();
        let head = LinearHead::init(key.fold(3), 3);
        let r = estimate_risk(&batch, &enc(1), &enc(2), &head, mc, key.fold(4)).unwrap();
        prop_assert!(r.r <= r.m + 2.0 * r.sf + 1e-12);
        let mean_m: f64 = r.per_sample.iter().map(|p| p.m).sum::<f64>() / n as f64;
        prop_assert!((mean_m - r.m).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(mu in vec_in(4, -3.0, 3.0), var in vec_in(4, 0.01, 5.0), pm in vec_in(4, -3.0, 3.0), pv in vec_in(4, 0.01, 5.0)) {
        prop_assert!(gaussian_kl(&mu, &var, &pm, &pv).unwrap() >= 0.0);
        prop_assert!(gaussian_kl(&mu, &var, &mu, &var).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn beta_is_one_on_equal_domains_and_grows_with_k(raw_t in vec_in(6, 0.01, 1.0), raw_s in vec_in(6, 0.01, 1.0)) {
        let norm = |r: &[f64]| { let t: f64 = r.iter().sum(); r.iter().map(|v| v / t).collect::<Vec<_>>() };
        let points: Vec<(Vec<f64>, u8)> = (0..6).map(|i| (vec![i as f64], (i % 2) as u8)).collect();
        let t = DiscreteDomain::new(points.clone(), norm(&raw_t)).unwrap();
        let s = DiscreteDomain::new(points, norm(&raw_s)).unwrap();
        for k in [2.0, 5.0, f64::INFINITY] {
            prop_assert!((beta_divergence(&s, &s, k).unwrap() - 1.0).abs() <= 1e-9);
        }
        let mut last = 0.0;
        for k in [1.0, 2.0, 4.0, 8.0, 64.0, f64::INFINITY] {
            let b = beta_divergence(&t, &s, k).unwrap();
            prop_assert!(b >= last - 1e-9);
            last = b;
        }
        let ratio_max = t.probs.iter().zip(&s.probs).map(|(a, b)| a / b).fold(0.0, f64::max);
        prop_assert!((last - ratio_max).abs() <= 1e-9);
    }
}

fn rand_matrix(key: Key, n: usize, p: usize) -> Tensor {
    Tensor::new(vec![n, p], normals(key, n * p)).unwrap()
}

fn rotate_2d(t: &Tensor, angle: f64) -> Tensor {
    let (c, s) = (angle.cos(), angle.sin());
    let rows: Vec<[f64; 2]> = (0..t.rows())
        .map(|i| [c * t.at(i, 0) - s * t.at(i, 1), s * t.at(i, 0) + c * t.at(i, 1)])
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dcor_is_symmetric_and_invariant(seed in any::<u64>(), n in 3usize..40, shift in -5.0f64..5.0, scale in 0.1f64..10.0, angle in 0.0f64..6.28) {
        let key = Key::new(seed);
        let a = rand_matrix(key.fold(0), n, 2);
        // b depends on a so the statistic is not near zero
        let noise = rand_matrix(key.fold(1), n, 1);
        let b = Tensor::new(vec![n, 1], (0..n).map(|i| a.at(i, 0).powi(2) + 0.3 * noise.at(i, 0)).collect()).unwrap();
        let base = distance_correlation(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((base - distance_correlation(&b, &a).unwrap()).abs() <= 1e-12);
        let moved = a.map(|v| scale * v + shift);
        prop_assert!((base - distance_correlation(&moved, &b).unwrap()).abs() <= 1e-9);
        prop_assert!((base - distance_correlation(&rotate_2d(&a, angle), &b).unwrap()).abs() <= 1e-9);
        prop_assert!((base - distance_correlation(&a, &b.map(|v| scale * v - shift)).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn dcor_stays_in_unit_interval() {
    for i in 0..10_000u64 {
        let key = Key::new(i);
        let n = 2 + (i as usize % 9);
        let a = rand_matrix(key.fold(0), n, 1 + (i as usize % 3));
        let b = rand_matrix(key.fold(1), n, 1 + (i as usize % 2));
        let d = distance_correlation(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&d), "trial {i}: {d}");
    }
}
