use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scengan::data::{
    equicorrelation, paired_correlation, synth_mixed_wind_solar, synth_spatiotemporal,
    synth_two_regime_wind,
};
use scengan::eval::pearson_matrix;
use scengan::ModeClassifier;

#[test]
fn classifiers_recover_synthetic_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed_offset in 0..3 {
        let mixed = synth_mixed_wind_solar(2000, 24, &mut rng).unwrap();
        let clf = ModeClassifier::for_labels(&mixed.labels).unwrap();
        let acc = clf.accuracy(&mixed.batch, &mixed.labels).unwrap();
        assert!(
            acc >= 0.99,
            "wind/solar accuracy {acc} (draw {seed_offset})"
        );

        let regimes = synth_two_regime_wind(2000, 24, &mut rng).unwrap();
        let clf = ModeClassifier::for_labels(&regimes.labels).unwrap();
        let acc = clf.accuracy(&regimes.batch, &regimes.labels).unwrap();
        assert!(
            acc >= 0.99,
            "calm/gusty accuracy {acc} (draw {seed_offset})"
        );
    }
}

#[test]
fn classifiers_hold_at_five_minute_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mixed = synth_mixed_wind_solar(400, 288, &mut rng).unwrap();
    let acc = ModeClassifier::WindSolar
        .accuracy(&mixed.batch, &mixed.labels)
        .unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn independent_sites_have_small_empirical_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = synth_spatiotemporal(500, 4, 24, &equicorrelation(4, 0.0), &mut rng).unwrap();
    let m = pearson_matrix(&b).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let r = m.get(i, j).unwrap();
            if i == j {
                assert!((r - 1.0).abs() < 1e-12);
            } else {
                assert!(r.abs() <= 0.1, "rho[{i}][{j}] = {r}");
            }
        }
    }
}

#[test]
fn strongly_correlated_sites_stay_correlated() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let b = synth_spatiotemporal(500, 4, 24, &equicorrelation(4, 0.9), &mut rng).unwrap();
    let m = pearson_matrix(&b).unwrap();
    for i in 0..4 {
        for j in 0..i {
            let r = m.get(i, j).unwrap();
            assert!(r >= 0.6, "rho[{i}][{j}] = {r}");
        }
    }
}

#[test]
fn block_structure_is_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let target = paired_correlation(4, 0.8, 0.0);
    let b = synth_spatiotemporal(500, 4, 24, &target, &mut rng).unwrap();
    let m = pearson_matrix(&b).unwrap();
    assert!(m.get(0, 1).unwrap() > 0.6);
    assert!(m.get(2, 3).unwrap() > 0.6);
    assert!(m.get(0, 2).unwrap().abs() < 0.15);
    assert!(m.get(1, 3).unwrap().abs() < 0.15);
}

#[test]
fn synthetic_families_are_deterministic_per_seed() {
    let a = synth_two_regime_wind(50, 24, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = synth_two_regime_wind(50, 24, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let c = synth_two_regime_wind(50, 24, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a.batch, b.batch);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.batch, c.batch);
}
