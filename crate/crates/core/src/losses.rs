//! Wasserstein losses, Gaussian weight priors and the posterior gradients
//! that drive the samplers.
//!
//! Both posterior gradients are gradients of a *minimized* objective:
//!
//! * critic: `-mean D(x) + mean_j mean D(G_j(z)) - (1/N) log p(theta_d)`
//! * generator: `-mean_k mean D_k(G(z)) - (1/N) log p(theta_g)`
//!
//! where `N` is the running count of samples seen so far. Opposing particles
//! enter through a uniform average of their scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{backward, backward_full, forward, Matrix, MlpNetwork, ParameterVector};

/// Isotropic zero-mean Gaussian prior over weights, or a flat prior when
/// `gamma` is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub struct PriorSpec {
    gamma: f64,
}

/// On-disk form: either a positive number (the standard deviation) or the
/// string `"flat"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PriorRepr {
    Gamma(f64),
    Named(String),
}

impl TryFrom<PriorRepr> for PriorSpec {
    type Error = String;

    fn try_from(r: PriorRepr) -> std::result::Result<Self, String> {
        match r {
            PriorRepr::Gamma(g) => PriorSpec::gaussian(g).map_err(|e| e.to_string()),
            PriorRepr::Named(s) if s == "flat" => Ok(PriorSpec::flat()),
            PriorRepr::Named(s) => Err(format!(
                "unknown prior {s:?}, expected a number or \"flat\""
            )),
        }
    }
}

impl From<PriorSpec> for PriorRepr {
    fn from(p: PriorSpec) -> Self {
        if p.is_flat() {
            PriorRepr::Named("flat".into())
        } else {
            PriorRepr::Gamma(p.gamma)
        }
    }
}

impl PriorSpec {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || gamma.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "prior standard deviation must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn flat() -> Self {
        Self {
            gamma: f64::INFINITY,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_flat(&self) -> bool {
        self.gamma.is_infinite()
    }

    /// `log p(theta)` up to its additive normalizing constant.
    pub fn log_density(&self, theta: &ParameterVector) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let sq: f64 = theta.as_slice().iter().map(|v| v * v).sum();
        -sq / (2.0 * self.gamma * self.gamma)
    }
}

/// Losses observed at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Generator loss averaged over generator particles.
    pub l_g: f64,
    pub l_g_per_particle: Vec<f64>,
    pub l_d: f64,
    /// Always `-l_d`.
    pub value_v: f64,
    pub wasserstein_estimate: f64,
}

impl LossReport {
    pub fn new(
        l_g_per_particle: Vec<f64>,
        real_scores: &[f64],
        fake_scores: &[f64],
    ) -> Result<Self> {
        let l_d = discriminator_loss(real_scores, fake_scores)?;
        let value_v = value_function(real_scores, fake_scores)?;
        let l_g = mean(&l_g_per_particle)?;
        Ok(Self {
            l_g,
            l_g_per_particle,
            l_d,
            value_v,
            wasserstein_estimate: value_v,
        })
    }
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch("scores"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn generator_loss(fake_scores: &[f64]) -> Result<f64> {
    Ok(-mean(fake_scores)?)
}

pub fn discriminator_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    Ok(-mean(real_scores)? + mean(fake_scores)?)
}

/// Minimax value `mean D(x) - mean D(G(z))`; the empirical Wasserstein-dual
/// estimate for the current critic.
pub fn value_function(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    Ok(-discriminator_loss(real_scores, fake_scores)?)
}

/// Gradient of `log p(theta | gamma)`: `-theta / gamma^2`, zero for a flat prior.
pub fn log_prior_grad(theta: &ParameterVector, prior: &PriorSpec) -> ParameterVector {
    if prior.is_flat() {
        return ParameterVector::zeros(theta.len());
    }
    let inv = 1.0 / (prior.gamma * prior.gamma);
    ParameterVector(theta.as_slice().iter().map(|v| -v * inv).collect())
}

/// Generator and critic architectures used together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanNets {
    pub generator: MlpNetwork,
    pub discriminator: MlpNetwork,
}

impl GanNets {
    pub fn new(generator: MlpNetwork, discriminator: MlpNetwork) -> Result<Self> {
        if generator.output_width() != discriminator.input_width() {
            return Err(Error::mismatch(
                "generator output vs discriminator input",
                discriminator.input_width(),
                generator.output_width(),
            ));
        }
        Ok(Self {
            generator,
            discriminator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.input_width()
    }

    pub fn sample_width(&self) -> usize {
        self.discriminator.input_width()
    }
}

fn check_running_n(running_n: u64) -> Result<()> {
    if running_n == 0 {
        return Err(Error::InvalidConfig(
            "running sample count must be >= 1".into(),
        ));
    }
    Ok(())
}

/// Subtract `(1/N) * grad log p(theta)` from `grad`.
fn add_prior_term(
    grad: &mut ParameterVector,
    theta: &ParameterVector,
    prior: &PriorSpec,
    running_n: u64,
) {
    if prior.is_flat() {
        return;
    }
    let k = 1.0 / (running_n as f64 * prior.gamma * prior.gamma);
    for (g, t) in grad.as_mut_slice().iter_mut().zip(theta.as_slice()) {
        *g += k * t;
    }
}

/// Critic scores, one per row of `batch`.
pub fn scores(net: &MlpNetwork, theta: &ParameterVector, batch: &Matrix) -> Result<Vec<f64>> {
    let (out, _) = forward(net, theta, batch)?;
    Ok(out.into_vec())
}

/// Run every generator particle on the shared latent batch.
pub fn generate_fakes(
    generator: &MlpNetwork,
    generator_particles: &[&ParameterVector],
    noise_batch: &Matrix,
) -> Result<Vec<Matrix>> {
    generator_particles
        .iter()
        .map(|theta| forward(generator, theta, noise_batch).map(|(x, _)| x))
        .collect()
}

/// Critic posterior gradient given pre-computed fake batches (one per
/// generator particle). This is the inner loop of the critic sampler: the
/// fakes stay fixed while the critic moves.
pub fn critic_posterior_grad(
    discriminator: &MlpNetwork,
    theta_d: &ParameterVector,
    real_batch: &Matrix,
    fakes: &[Matrix],
    prior_d: &PriorSpec,
    running_n: u64,
) -> Result<ParameterVector> {
    check_running_n(running_n)?;
    let m = real_batch.rows();
    if m == 0 {
        return Err(Error::EmptyBatch("real batch"));
    }
    if fakes.is_empty() {
        return Err(Error::EmptyBatch("generator particles"));
    }
    for f in fakes {
        if f.rows() != m {
            return Err(Error::mismatch("fake batch size", m, f.rows()));
        }
    }

    let (_, trace) = forward(discriminator, theta_d, real_batch)?;
    let up = Matrix::from_vec(m, 1, vec![-1.0 / m as f64; m])?;
    let mut grad = backward(discriminator, theta_d, &trace, &up)?;

    let w = 1.0 / (m * fakes.len()) as f64;
    let up = Matrix::from_vec(m, 1, vec![w; m])?;
    for fake in fakes {
        let (_, trace) = forward(discriminator, theta_d, fake)?;
        let g = backward(discriminator, theta_d, &trace, &up)?;
        grad.axpy(1.0, &g)?;
    }
    add_prior_term(&mut grad, theta_d, prior_d, running_n);
    Ok(grad)
}

/// Gradient of the critic's posterior objective with respect to `theta_d`.
pub fn posterior_grad_discriminator(
    nets: &GanNets,
    theta_d: &ParameterVector,
    theta_g_particles: &[&ParameterVector],
    real_batch: &Matrix,
    noise_batch: &Matrix,
    prior_d: &PriorSpec,
    running_n: u64,
) -> Result<ParameterVector> {
    if real_batch.rows() != noise_batch.rows() {
        return Err(Error::mismatch(
            "noise batch size",
            real_batch.rows(),
            noise_batch.rows(),
        ));
    }
    let fakes = generate_fakes(&nets.generator, theta_g_particles, noise_batch)?;
    critic_posterior_grad(
        &nets.discriminator,
        theta_d,
        real_batch,
        &fakes,
        prior_d,
        running_n,
    )
}

/// Gradient of the generator's posterior objective with respect to `theta_g`.
pub fn posterior_grad_generator(
    nets: &GanNets,
    theta_g: &ParameterVector,
    theta_d_particles: &[&ParameterVector],
    noise_batch: &Matrix,
    prior_g: &PriorSpec,
    running_n: u64,
) -> Result<ParameterVector> {
    check_running_n(running_n)?;
    let m = noise_batch.rows();
    if m == 0 {
        return Err(Error::EmptyBatch("noise batch"));
    }
    if theta_d_particles.is_empty() {
        return Err(Error::EmptyBatch("discriminator particles"));
    }
    let (fake, g_trace) = forward(&nets.generator, theta_g, noise_batch)?;
    let w = -1.0 / (m * theta_d_particles.len()) as f64;
    let up = Matrix::from_vec(m, 1, vec![w; m])?;
    let mut d_fake = Matrix::zeros(m, fake.cols());
    for theta_d in theta_d_particles {
        let (_, trace) = forward(&nets.discriminator, theta_d, &fake)?;
        let (_, dx) = backward_full(&nets.discriminator, theta_d, &trace, &up)?;
        for (acc, v) in d_fake.as_mut_slice().iter_mut().zip(dx.as_slice()) {
            *acc += v;
        }
    }
    let mut grad = backward(&nets.generator, theta_g, &g_trace, &d_fake)?;
    add_prior_term(&mut grad, theta_g, prior_g, running_n);
    Ok(grad)
}

/// Scalar critic objective whose gradient is [`posterior_grad_discriminator`].
pub fn discriminator_objective(
    nets: &GanNets,
    theta_d: &ParameterVector,
    theta_g_particles: &[&ParameterVector],
    real_batch: &Matrix,
    noise_batch: &Matrix,
    prior_d: &PriorSpec,
    running_n: u64,
) -> Result<f64> {
    check_running_n(running_n)?;
    let real = scores(&nets.discriminator, theta_d, real_batch)?;
    let fakes = generate_fakes(&nets.generator, theta_g_particles, noise_batch)?;
    let mut fake_mean = 0.0;
    for f in &fakes {
        fake_mean += mean(&scores(&nets.discriminator, theta_d, f)?)?;
    }
    fake_mean /= fakes.len() as f64;
    Ok(-mean(&real)? + fake_mean - prior_d.log_density(theta_d) / running_n as f64)
}

/// Scalar generator objective whose gradient is [`posterior_grad_generator`].
pub fn generator_objective(
    nets: &GanNets,
    theta_g: &ParameterVector,
    theta_d_particles: &[&ParameterVector],
    noise_batch: &Matrix,
    prior_g: &PriorSpec,
    running_n: u64,
) -> Result<f64> {
    check_running_n(running_n)?;
    let (fake, _) = forward(&nets.generator, theta_g, noise_batch)?;
    let mut loss = 0.0;
    for theta_d in theta_d_particles {
        loss += generator_loss(&scores(&nets.discriminator, theta_d, &fake)?)?;
    }
    loss /= theta_d_particles.len() as f64;
    Ok(loss - prior_g.log_density(theta_g) / running_n as f64)
}
