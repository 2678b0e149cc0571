use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scengan::data::synth_two_regime_wind;
use scengan::losses::posterior_grad_generator;
use scengan::nn::init_weights;
use scengan::sghmc::sghmc_step_in_place;
use scengan::{
    Checkpoint, GanNets, Matrix, MlpNetwork, ParameterVector, PriorSpec, RmsPropState, SghmcConfig,
    Trainer, TrainingConfig,
};

fn nets() -> GanNets {
    GanNets::new(
        MlpNetwork::generator(3, &[6], 24).unwrap(),
        MlpNetwork::discriminator(24, &[6]).unwrap(),
    )
    .unwrap()
}

/// With a critic that outputs a constant, only the prior acts on the
/// generator, so noiseless sampling shrinks its weights toward zero.
fn shrink_ratio(running_n: u64, steps: usize) -> f64 {
    let nets = nets();
    let theta_d = ParameterVector::zeros(nets.discriminator.param_count());
    let mut theta = init_weights(&nets.generator, 5);
    let start = theta.norm();
    let z = Matrix::from_vec(4, 3, vec![0.3; 12]).unwrap();
    let prior = PriorSpec::gaussian(1.0).unwrap();
    let cfg = SghmcConfig::new(1e-2, 0.0, 1).unwrap();
    let mut rms = RmsPropState::new(theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut prev = start;
    for _ in 0..steps {
        sghmc_step_in_place(
            &mut theta,
            |th| posterior_grad_generator(&nets, th, &[&theta_d], &z, &prior, running_n),
            &cfg,
            &mut rms,
            &mut rng,
        )
        .unwrap();
        let now = theta.norm();
        // preconditioned steps are about alpha in size, so allow jitter near zero
        assert!(
            now <= prev.max(0.1),
            "prior pull grew the weights: {prev} -> {now}"
        );
        prev = now;
    }
    prev / start
}

#[test]
fn prior_pulls_weights_toward_zero() {
    let r = shrink_ratio(1, 300);
    assert!(r < 0.05, "{r}");
}

#[test]
fn prior_gradient_vanishes_with_data() {
    let nets = nets();
    let theta_d = ParameterVector::zeros(nets.discriminator.param_count());
    let theta = init_weights(&nets.generator, 5);
    let z = Matrix::from_vec(4, 3, vec![0.3; 12]).unwrap();
    let prior = PriorSpec::gaussian(0.5).unwrap();
    let g1 = posterior_grad_generator(&nets, &theta, &[&theta_d], &z, &prior, 10).unwrap();
    let g2 = posterior_grad_generator(&nets, &theta, &[&theta_d], &z, &prior, 1000).unwrap();
    // theta / (N gamma^2)
    for ((a, b), t) in g1
        .as_slice()
        .iter()
        .zip(g2.as_slice())
        .zip(theta.as_slice())
    {
        assert!((a - t / (10.0 * 0.25)).abs() < 1e-15);
        assert!((b - t / (1000.0 * 0.25)).abs() < 1e-15);
    }
}

fn config() -> TrainingConfig {
    TrainingConfig {
        m: 8,
        latent_dim: 3,
        j_particles: 3,
        d_particles: 2,
        seed: 77,
        max_epochs: 30,
        ..TrainingConfig::default()
    }
}

#[test]
fn checkpoint_file_round_trip_and_resume() {
    let data = synth_two_regime_wind(64, 24, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .batch;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");

    let mut full = Trainer::new(config(), &data, nets()).unwrap();
    full.run().unwrap();

    let mut first = Trainer::new(config(), &data, nets()).unwrap();
    for _ in 0..13 {
        first.step().unwrap();
    }
    first.checkpoint().save(&path).unwrap();
    assert!(!path.with_extension("tmp").exists());
    drop(first);

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.state.epoch, 13);
    let mut resumed = Trainer::resume(loaded, &data).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.checkpoint(), full.checkpoint());
    assert_eq!(resumed.state().loss_history.len(), 30);
}

#[test]
fn resume_rejects_other_data() {
    let data = synth_two_regime_wind(64, 24, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .batch;
    let other = synth_two_regime_wind(65, 24, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .batch;
    let t = Trainer::new(config(), &data, nets()).unwrap();
    assert!(Trainer::resume(t.checkpoint(), &other).is_err());
}

#[test]
fn particles_differ_and_stay_finite() {
    let data = synth_two_regime_wind(64, 24, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .batch;
    let mut t = Trainer::new(config(), &data, nets()).unwrap();
    t.run().unwrap();
    let e = t.ensemble();
    assert_eq!(e.generators.len(), 3);
    assert_eq!(e.discriminators.len(), 2);
    assert_ne!(e.generators[0].theta, e.generators[1].theta);
    assert!(e.generators.iter().all(|p| p.theta.is_finite()));
    assert!(e.discriminators.iter().all(|p| p.theta.max_abs() <= 0.01));
    // 30 outer iterations of 5 critic batches and 1 generator batch of 8
    assert_eq!(t.state().running_n, 30 * 6 * 8);
}

#[test]
fn seed_changes_the_run() {
    let data = synth_two_regime_wind(64, 24, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .batch;
    let mut a = Trainer::new(config(), &data, nets()).unwrap();
    let mut b = Trainer::new(
        TrainingConfig {
            seed: 78,
            ..config()
        },
        &data,
        nets(),
    )
    .unwrap();
    a.step().unwrap();
    b.step().unwrap();
    assert_ne!(
        a.ensemble().generators[0].theta,
        b.ensemble().generators[0].theta
    );
}
