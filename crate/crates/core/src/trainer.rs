//! Bayesian GAN training: ensembles of generator and critic weight particles
//! sampled with SGHMC against each other.
//!
//! One outer iteration runs
//!
//! 1. `n_d_mc x n_discri` critic rounds: draw a real mini-batch and a latent
//!    batch, bump the running sample count by `m`, move every critic particle
//!    with one sampler step against the generator snapshot, clip to `[-c, c]`;
//! 2. `n_g_mc` generator rounds: draw a latent batch, bump the count, move
//!    every generator particle against the critic snapshot.
//!
//! Particles within a phase are independent given the snapshot and are
//! updated in parallel; each owns its rng stream, so results do not depend
//! on the worker count.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EpochBatcher, Provenance, ScenarioBatch};
use crate::error::{Error, Result};
use crate::losses::{
    critic_posterior_grad, generate_fakes, generator_loss, posterior_grad_generator, scores,
    GanNets, LossReport, PriorSpec,
};
use crate::nn::{forward, init_weights_with, Matrix, MlpNetwork, ParameterVector};
use crate::sghmc::{clip_weights_in_place, sghmc_step_in_place, RmsPropState, SghmcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergencePolicy {
    pub window: usize,
    pub tol: f64,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        Self {
            window: 10,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub eta: f64,
    /// Critic weight clipping bound.
    pub c: f64,
    /// Mini-batch size.
    pub m: usize,
    /// Critic rounds per Monte Carlo iteration.
    pub n_discri: usize,
    pub n_d_mc: usize,
    pub n_g_mc: usize,
    /// Sampler inner iterations per update.
    pub m_inner: usize,
    pub j_particles: usize,
    pub d_particles: usize,
    pub prior_g: PriorSpec,
    pub prior_d: PriorSpec,
    pub latent_dim: usize,
    /// Hard cap on outer iterations.
    pub max_epochs: u64,
    pub seed: u64,
    pub convergence: ConvergencePolicy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: crate::sghmc::DEFAULT_ALPHA,
            eta: crate::sghmc::DEFAULT_ETA,
            c: 0.01,
            m: 32,
            n_discri: 5,
            n_d_mc: 1,
            n_g_mc: 1,
            m_inner: 2,
            j_particles: 2,
            d_particles: 1,
            prior_g: PriorSpec::gaussian(1.0).expect("positive"),
            prior_d: PriorSpec::gaussian(1.0).expect("positive"),
            latent_dim: 32,
            max_epochs: 5000,
            seed: 0,
            convergence: ConvergencePolicy::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m", self.m),
            ("n_discri", self.n_discri),
            ("n_d_mc", self.n_d_mc),
            ("n_g_mc", self.n_g_mc),
            ("m_inner", self.m_inner),
            ("j_particles", self.j_particles),
            ("d_particles", self.d_particles),
            ("latent_dim", self.latent_dim),
            ("convergence.window", self.convergence.window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.convergence.window < 2 {
            return Err(Error::InvalidConfig(
                "convergence.window must be >= 2".into(),
            ));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "c must be > 0, got {}",
                self.c
            )));
        }
        if !(self.convergence.tol > 0.0) {
            return Err(Error::InvalidConfig("convergence.tol must be > 0".into()));
        }
        self.sghmc().validate()
    }

    pub fn sghmc(&self) -> SghmcConfig {
        SghmcConfig {
            alpha: self.alpha,
            eta: self.eta,
            m_inner: self.m_inner,
        }
    }
}

/// Default generator and critic shapes for `latent_dim` inputs and
/// `sample_width` outputs.
pub fn default_nets(latent_dim: usize, sample_width: usize) -> Result<GanNets> {
    GanNets::new(
        MlpNetwork::generator(latent_dim, &[64, 128], sample_width)?,
        MlpNetwork::discriminator(sample_width, &[128, 64])?,
    )
}

/// One weight sample with its optimizer state and private rng stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: ParameterVector,
    pub rms: RmsPropState,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub nets: GanNets,
    pub n_sites: usize,
    pub timesteps: usize,
    pub generators: Vec<Particle>,
    pub discriminators: Vec<Particle>,
}

/// Rng stream ids: 0 for the run, then generators, then critics.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl ParticleEnsemble {
    pub fn init(
        config: &TrainingConfig,
        nets: GanNets,
        n_sites: usize,
        timesteps: usize,
    ) -> Result<Self> {
        if nets.sample_width() != n_sites * timesteps {
            return Err(Error::mismatch(
                "network sample width vs data",
                n_sites * timesteps,
                nets.sample_width(),
            ));
        }
        if nets.latent_dim() != config.latent_dim {
            return Err(Error::mismatch(
                "generator input vs latent_dim",
                config.latent_dim,
                nets.latent_dim(),
            ));
        }
        let particle = |net: &MlpNetwork, stream: u64| {
            let mut rng = stream_rng(config.seed, stream);
            let theta = init_weights_with(net, &mut rng);
            Particle {
                rms: RmsPropState::new(theta.len()),
                theta,
                rng,
            }
        };
        let j = config.j_particles as u64;
        let generators = (0..j).map(|k| particle(&nets.generator, 1 + k)).collect();
        let discriminators = (0..config.d_particles as u64)
            .map(|k| {
                let mut p = particle(&nets.discriminator, 1 + j + k);
                clip_weights_in_place(&mut p.theta, config.c);
                p
            })
            .collect();
        Ok(Self {
            nets,
            n_sites,
            timesteps,
            generators,
            discriminators,
        })
    }

    pub fn generator_thetas(&self) -> Vec<&ParameterVector> {
        self.generators.iter().map(|p| &p.theta).collect()
    }

    pub fn discriminator_thetas(&self) -> Vec<&ParameterVector> {
        self.discriminators.iter().map(|p| &p.theta).collect()
    }

    fn validate(&self) -> Result<()> {
        let check = |ps: &[Particle], net: &MlpNetwork, what: &str| -> Result<()> {
            for (i, p) in ps.iter().enumerate() {
                if p.theta.len() != net.param_count()
                    || p.rms.accumulator.len() != net.param_count()
                {
                    return Err(Error::Checkpoint(format!(
                        "{what} particle {i} does not match the network shape"
                    )));
                }
                if !p.theta.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "{what} particle {i} has non-finite weights"
                    )));
                }
            }
            Ok(())
        };
        if self.generators.is_empty() || self.discriminators.is_empty() {
            return Err(Error::Checkpoint("ensemble has no particles".into()));
        }
        if self.nets.sample_width() != self.n_sites * self.timesteps {
            return Err(Error::Checkpoint(
                "scenario shape does not match the networks".into(),
            ));
        }
        check(&self.generators, &self.nets.generator, "generator")?;
        check(
            &self.discriminators,
            &self.nets.discriminator,
            "discriminator",
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Samples consumed so far; scales the prior term.
    pub running_n: u64,
    /// Outer iterations completed.
    pub epoch: u64,
    pub loss_history: Vec<LossReport>,
}

/// True once `epoch >= max_epochs`, or when the mean `|V|` over the last
/// `window` reports moved by less than `tol` relative to the same mean one
/// report earlier.
pub fn has_converged(state: &TrainerState, policy: &ConvergencePolicy, max_epochs: u64) -> bool {
    if state.epoch >= max_epochs {
        return true;
    }
    let h = &state.loss_history;
    let w = policy.window.max(2);
    if h.len() < w {
        return false;
    }
    let mean_abs =
        |xs: &[LossReport]| xs.iter().map(|r| r.value_v.abs()).sum::<f64>() / xs.len() as f64;
    let current = mean_abs(&h[h.len() - w..]);
    let previous = mean_abs(&h[h.len().saturating_sub(w + 1)..h.len() - 1]);
    let change = (current - previous).abs();
    change == 0.0 || change < policy.tol * previous.abs()
}

/// Draw `count` standard-normal latent rows.
pub fn sample_latent<R: Rng + ?Sized>(count: usize, latent_dim: usize, rng: &mut R) -> Matrix {
    let data = (0..count * latent_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_vec(count, latent_dim, data).expect("consistent shape")
}

/// Sample `count` scenarios from generator particle `index`.
pub fn generate<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    index: usize,
    count: usize,
    rng: &mut R,
) -> Result<ScenarioBatch> {
    let p = ensemble
        .generators
        .get(index)
        .ok_or(Error::IndexOutOfRange {
            index,
            len: ensemble.generators.len(),
        })?;
    if count == 0 {
        return Err(Error::InvalidConfig("count must be >= 1".into()));
    }
    let z = sample_latent(count, ensemble.nets.latent_dim(), rng);
    let (x, _) = forward(&ensemble.nets.generator, &p.theta, &z)?;
    ScenarioBatch::from_matrix(
        ensemble.n_sites,
        ensemble.timesteps,
        x,
        Provenance::Generated(index),
    )
}

/// Drives training over a borrowed dataset.
pub struct Trainer<'a> {
    config: TrainingConfig,
    data: &'a ScenarioBatch,
    ensemble: ParticleEnsemble,
    state: TrainerState,
    batcher: EpochBatcher,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainingConfig, data: &'a ScenarioBatch, nets: GanNets) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidData("training set is empty".into()));
        }
        let ensemble = ParticleEnsemble::init(&config, nets, data.n_sites(), data.timesteps())?;
        let batcher = EpochBatcher::new(data.len(), config.m)?;
        Ok(Self {
            rng: stream_rng(config.seed, 0),
            config,
            data,
            ensemble,
            state: TrainerState::default(),
            batcher,
        })
    }

    /// Continue a run from a checkpoint over the same dataset.
    pub fn resume(ckpt: Checkpoint, data: &'a ScenarioBatch) -> Result<Self> {
        let shape = DataShape::of(data);
        if shape != ckpt.data_shape {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {:?}, got {:?}",
                ckpt.data_shape, shape
            )));
        }
        Ok(Self {
            config: ckpt.config,
            data,
            ensemble: ckpt.ensemble,
            state: ckpt.state,
            batcher: ckpt.batcher,
            rng: ckpt.run_rng,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn has_converged(&self) -> bool {
        has_converged(
            &self.state,
            &self.config.convergence,
            self.config.max_epochs,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            data_shape: DataShape::of(self.data),
            ensemble: self.ensemble.clone(),
            state: self.state.clone(),
            batcher: self.batcher.clone(),
            run_rng: self.rng.clone(),
            sites: Vec::new(),
        }
    }

    pub fn into_parts(self) -> (ParticleEnsemble, TrainerState) {
        (self.ensemble, self.state)
    }

    /// One outer iteration.
    pub fn step(&mut self) -> Result<&LossReport> {
        self.step_observed(|_| {})
    }

    /// One outer iteration, calling `on_critic_round` after every critic
    /// update round (after clipping).
    pub fn step_observed(
        &mut self,
        mut on_critic_round: impl FnMut(&ParticleEnsemble),
    ) -> Result<&LossReport> {
        let m = self.config.m;
        let sghmc = self.config.sghmc();
        let mut last_real = None;
        for _ in 0..self.config.n_d_mc {
            for _ in 0..self.config.n_discri {
                let idx = self.batcher.next_batch(&mut self.rng);
                let real = self.data.gather(&idx);
                let z = sample_latent(m, self.config.latent_dim, &mut self.rng);
                self.state.running_n += m as u64;
                self.critic_round(&real, &z, &sghmc)?;
                on_critic_round(&self.ensemble);
                last_real = Some(real);
            }
        }
        let mut last_z = None;
        for _ in 0..self.config.n_g_mc {
            let z = sample_latent(m, self.config.latent_dim, &mut self.rng);
            self.state.running_n += m as u64;
            self.generator_round(&z, &sghmc)?;
            last_z = Some(z);
        }
        self.state.epoch += 1;
        let report = self.report(
            last_real.as_ref().expect("n_d_mc, n_discri >= 1"),
            last_z.as_ref().expect("n_g_mc >= 1"),
        )?;
        self.state.loss_history.push(report);
        Ok(self.state.loss_history.last().expect("just pushed"))
    }

    fn critic_round(&mut self, real: &Matrix, z: &Matrix, sghmc: &SghmcConfig) -> Result<()> {
        let ParticleEnsemble {
            nets,
            generators,
            discriminators,
            ..
        } = &mut self.ensemble;
        let gen_thetas: Vec<&ParameterVector> = generators.iter().map(|p| &p.theta).collect();
        let fakes = generate_fakes(&nets.generator, &gen_thetas, z)?;
        let (prior, n, c) = (self.config.prior_d, self.state.running_n, self.config.c);
        let disc = &nets.discriminator;
        discriminators
            .par_iter_mut()
            .map(|p| {
                sghmc_step_in_place(
                    &mut p.theta,
                    |th| critic_posterior_grad(disc, th, real, &fakes, &prior, n),
                    sghmc,
                    &mut p.rms,
                    &mut p.rng,
                )?;
                clip_weights_in_place(&mut p.theta, c);
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    fn generator_round(&mut self, z: &Matrix, sghmc: &SghmcConfig) -> Result<()> {
        let ParticleEnsemble {
            nets,
            generators,
            discriminators,
            ..
        } = &mut self.ensemble;
        let disc_thetas: Vec<&ParameterVector> = discriminators.iter().map(|p| &p.theta).collect();
        let (prior, n) = (self.config.prior_g, self.state.running_n);
        let nets = &*nets;
        generators
            .par_iter_mut()
            .map(|p| {
                sghmc_step_in_place(
                    &mut p.theta,
                    |th| posterior_grad_generator(nets, th, &disc_thetas, z, &prior, n),
                    sghmc,
                    &mut p.rms,
                    &mut p.rng,
                )
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    /// Losses of the current ensemble on the last real and latent batches,
    /// with critic scores averaged over critic particles.
    fn report(&self, real: &Matrix, z: &Matrix) -> Result<LossReport> {
        let e = &self.ensemble;
        let disc = &e.nets.discriminator;
        let k = e.discriminators.len() as f64;
        let avg_scores = |x: &Matrix| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; x.rows()];
            for p in &e.discriminators {
                for (a, s) in acc.iter_mut().zip(scores(disc, &p.theta, x)?) {
                    *a += s;
                }
            }
            Ok(acc.into_iter().map(|a| a / k).collect())
        };
        let real_scores = avg_scores(real)?;
        let fakes = generate_fakes(&e.nets.generator, &e.generator_thetas(), z)?;
        let mut fake_scores = Vec::with_capacity(z.rows() * fakes.len());
        let mut l_g = Vec::with_capacity(fakes.len());
        for f in &fakes {
            let s = avg_scores(f)?;
            l_g.push(generator_loss(&s)?);
            fake_scores.extend(s);
        }
        let r = LossReport::new(l_g, &real_scores, &fake_scores)?;
        if !(r.l_d.is_finite() && r.l_g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss at epoch {}",
                self.state.epoch
            )));
        }
        Ok(r)
    }

    /// Step until [`Trainer::has_converged`].
    pub fn run(&mut self) -> Result<()> {
        while !self.has_converged() {
            self.step()?;
        }
        Ok(())
    }
}

/// Train from scratch until convergence or `max_epochs`.
pub fn train(
    config: TrainingConfig,
    data: &ScenarioBatch,
    nets: GanNets,
) -> Result<(ParticleEnsemble, TrainerState)> {
    let mut t = Trainer::new(config, data, nets)?;
    t.run()?;
    Ok(t.into_parts())
}

pub const CHECKPOINT_FORMAT: &str = "scengan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataShape {
    pub n_samples: usize,
    pub n_sites: usize,
    pub timesteps: usize,
}

impl DataShape {
    pub fn of(b: &ScenarioBatch) -> Self {
        Self {
            n_samples: b.len(),
            n_sites: b.n_sites(),
            timesteps: b.timesteps(),
        }
    }
}

/// Everything needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainingConfig,
    pub data_shape: DataShape,
    pub ensemble: ParticleEnsemble,
    pub state: TrainerState,
    pub batcher: EpochBatcher,
    pub run_rng: ChaCha8Rng,
    /// Site ids and capacities of the training data, in sample row order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<SiteInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteInfo {
    pub id: String,
    pub capacity_mw: f64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed document: {e}")))?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unexpected format tag {other:?}"
                )))
            }
        }
        match v.get("version").and_then(|f| f.as_u64()) {
            Some(n) if n == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "version {other:?} not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
        }
        let ckpt: Checkpoint =
            serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("schema: {e}")))?;
        ckpt.config.validate()?;
        ckpt.ensemble.validate()?;
        if !ckpt.sites.is_empty() && ckpt.sites.len() != ckpt.ensemble.n_sites {
            return Err(Error::Checkpoint(
                "site list does not match the scenario shape".into(),
            ));
        }
        if ckpt.batcher.dataset_len() != ckpt.data_shape.n_samples {
            return Err(Error::Checkpoint(
                "batcher does not match the data shape".into(),
            ));
        }
        Ok(ckpt)
    }

    /// Write atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
