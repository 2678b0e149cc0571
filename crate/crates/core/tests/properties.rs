use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scengan::data::{denormalize, normalize, window_into_days};
use scengan::eval::{generator_stats, pearson_matrix, pearson_of_series};
use scengan::losses::log_prior_grad;
use scengan::nn::init_weights;
use scengan::sghmc::{clip_weights, rmsprop_precondition};
use scengan::{
    MlpNetwork, ParameterVector, PriorSpec, Provenance, RmsPropState, ScenarioBatch, SiteSeries,
};

fn vec_strategy(max_len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, 1..max_len)
}

proptest! {
    #[test]
    fn clip_is_idempotent_and_bounded(theta in vec_strategy(64, 10.0), c in 1e-4f64..5.0) {
        let t = ParameterVector(theta);
        let once = clip_weights(&t, c);
        prop_assert!(once.max_abs() <= c);
        prop_assert_eq!(clip_weights(&once, c), once.clone());
        for (a, b) in t.as_slice().iter().zip(once.as_slice()) {
            if a.abs() <= c {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn log_prior_grad_is_linear(theta in vec_strategy(32, 5.0), k in -3.0f64..3.0, gamma in 0.1f64..10.0) {
        let prior = PriorSpec::gaussian(gamma).unwrap();
        let t = ParameterVector(theta);
        let lhs = log_prior_grad(&t.scale(k), &prior);
        let rhs = log_prior_grad(&t, &prior).scale(k);
        for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let flat = log_prior_grad(&t, &PriorSpec::flat());
        prop_assert!(flat.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_prior_grad_matches_density_slope(theta in vec_strategy(8, 3.0), gamma in 0.3f64..5.0) {
        let prior = PriorSpec::gaussian(gamma).unwrap();
        let t = ParameterVector(theta);
        let g = log_prior_grad(&t, &prior);
        let h = 1e-6;
        for i in 0..t.len() {
            let mut up = t.clone();
            up.0[i] += h;
            let mut down = t.clone();
            down.0[i] -= h;
            let fd = (prior.log_density(&up) - prior.log_density(&down)) / (2.0 * h);
            prop_assert!((fd - g.0[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn rmsprop_step_is_bounded_by_inverse_sqrt_one_minus_decay(g in vec_strategy(16, 1e3)) {
        let (dir, _) = rmsprop_precondition(&RmsPropState::new(g.len()), &ParameterVector(g)).unwrap();
        let bound = 1.0 / (1.0 - 0.9f64).sqrt();
        prop_assert!(dir.max_abs() <= bound + 1e-9);
    }

    #[test]
    fn parameter_layout_round_trips(latent in 1usize..5, h in 1usize..6, out in 1usize..6, seed in 0u64..1000) {
        let net = MlpNetwork::generator(latent, &[h], out).unwrap();
        let theta = init_weights(&net, seed);
        let blocks = theta.unflatten(&net).unwrap();
        prop_assert_eq!(blocks.len(), 2);
        prop_assert_eq!(ParameterVector::flatten(&net, &blocks).unwrap(), theta);
    }

    #[test]
    fn scenario_layout_round_trips(
        n_sites in 1usize..4,
        t in 1usize..10,
        n in 1usize..6,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * n_sites * t).map(|_| rng.gen()).collect();
        let b = ScenarioBatch::new(n_sites, t, data.clone(), Provenance::Synthetic).unwrap();
        let back = ScenarioBatch::from_matrix(n_sites, t, b.to_matrix(), Provenance::Synthetic).unwrap();
        prop_assert_eq!(back.values(), &data[..]);
        for i in 0..n {
            for s in 0..n_sites {
                prop_assert_eq!(b.site(i, s), &data[(i * n_sites + s) * t..(i * n_sites + s + 1) * t]);
            }
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        seed in 0u64..1000,
        a in prop::collection::vec(0.1f64..10.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series: Vec<Vec<f64>> = (0..3).map(|_| (0..40).map(|_| rng.gen()).collect()).collect();
        let moved: Vec<Vec<f64>> = series
            .iter()
            .enumerate()
            .map(|(k, s)| s.iter().map(|v| a[k] * v + b[k]).collect())
            .collect();
        let p = pearson_of_series(&series).unwrap();
        let q = pearson_of_series(&moved).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((p.get(i, j).unwrap() - q.get(i, j).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn variance_scales_quadratically(seed in 0u64..1000, k in 0.05f64..1.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..8 * 12).map(|_| rng.gen()).collect();
        let b = ScenarioBatch::new(1, 12, data.clone(), Provenance::Synthetic).unwrap();
        let scaled = ScenarioBatch::new(1, 12, data.iter().map(|v| k * v).collect(), Provenance::Synthetic).unwrap();
        let s = generator_stats(&b).unwrap();
        let t = generator_stats(&scaled).unwrap();
        for (v, w) in s.variances.iter().zip(&t.variances) {
            prop_assert!((k * k * v - w).abs() <= 1e-12);
        }
        for (m, n) in s.means.iter().zip(&t.means) {
            prop_assert!((k * m - n).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_then_denormalize_is_identity(values in prop::collection::vec(0.0f64..250.0, 1..50), cap in 250.0f64..1000.0) {
        let n = normalize(&values, cap).unwrap();
        prop_assert_eq!(n.overage_count, 0);
        prop_assert!(n.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for (x, y) in values.iter().zip(denormalize(&n.values, cap)) {
            prop_assert!((x - y).abs() <= 1e-12 * cap);
        }
    }

    #[test]
    fn window_count_is_floor_of_days(len in 1usize..500, res_idx in 0usize..3) {
        let res = [60usize, 30, 15][res_idx];
        let per_day = 1440 / res;
        let s = SiteSeries {
            site_id: "a".into(),
            capacity_mw: 1.0,
            resolution_minutes: res,
            values: vec![0.5; len],
        };
        match window_into_days(&[s]) {
            Ok(w) => {
                prop_assert_eq!(w.batch.len(), len / per_day);
                prop_assert_eq!(w.dropped_points, len % per_day);
            }
            Err(_) => prop_assert!(len < per_day),
        }
    }
}

#[test]
fn pooled_pearson_matches_series_form() {
    let b = ScenarioBatch::new(
        2,
        3,
        vec![0.1, 0.5, 0.2, 0.3, 0.6, 0.4, 0.9, 0.7, 0.8, 0.2, 0.1, 0.0],
        Provenance::Synthetic,
    )
    .unwrap();
    let pooled = pearson_matrix(&b).unwrap();
    let series = vec![
        vec![0.1, 0.5, 0.2, 0.9, 0.7, 0.8],
        vec![0.3, 0.6, 0.4, 0.2, 0.1, 0.0],
    ];
    assert_eq!(pooled, pearson_of_series(&series).unwrap());
}
