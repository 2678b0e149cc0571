//! Stochastic-gradient HMC update with RMSProp preconditioning.
//!
//! One inner iteration is
//!
//! ```text
//! g     <- grad(theta) + n,           n ~ N(0, 2 * eta * alpha * I)
//! theta <- theta - alpha * g / (sqrt(v) + eps),   v <- decay * v + (1 - decay) * g^2
//! ```
//!
//! and a sampler step runs `m_inner` of them. There is no separate momentum
//! buffer; friction only scales the injected noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterVector;

pub const DEFAULT_ALPHA: f64 = 1e-4;
pub const DEFAULT_ETA: f64 = 0.01;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SghmcConfig {
    /// Learning rate.
    pub alpha: f64,
    /// Friction; sets the injected-noise variance `2 * eta * alpha`.
    pub eta: f64,
    /// Inner iterations per sampler step.
    pub m_inner: usize,
}

impl Default for SghmcConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            eta: DEFAULT_ETA,
            m_inner: 2,
        }
    }
}

impl SghmcConfig {
    pub fn new(alpha: f64, eta: f64, m_inner: usize) -> Result<Self> {
        let cfg = Self {
            alpha,
            eta,
            m_inner,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be >= 0, got {}",
                self.eta
            )));
        }
        if self.m_inner == 0 {
            return Err(Error::InvalidConfig("m_inner must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-coordinate variance of the injected noise.
    pub fn noise_variance(&self) -> f64 {
        2.0 * self.eta * self.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub accumulator: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmsPropState {
    pub fn new(len: usize) -> Self {
        Self {
            accumulator: vec![0.0; len],
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
        }
    }

    /// Fold `g` into the accumulator and overwrite `g` with the step direction.
    pub fn precondition_in_place(&mut self, g: &mut [f64]) -> Result<()> {
        if g.len() != self.accumulator.len() {
            return Err(Error::mismatch(
                "rmsprop gradient",
                self.accumulator.len(),
                g.len(),
            ));
        }
        let (d, eps) = (self.decay, self.epsilon);
        for (acc, gi) in self.accumulator.iter_mut().zip(g.iter_mut()) {
            *acc = d * *acc + (1.0 - d) * *gi * *gi;
            *gi /= acc.sqrt() + eps;
        }
        Ok(())
    }
}

/// Add `N(0, 2 eta alpha)` noise to every coordinate of `grad`.
///
/// With `eta == 0` the gradient is returned unchanged and the rng is not
/// touched.
pub fn inject_noise<R: Rng + ?Sized>(
    grad: &ParameterVector,
    cfg: &SghmcConfig,
    rng: &mut R,
) -> ParameterVector {
    let mut out = grad.clone();
    inject_noise_in_place(&mut out, cfg, rng);
    out
}

pub fn inject_noise_in_place<R: Rng + ?Sized>(
    grad: &mut ParameterVector,
    cfg: &SghmcConfig,
    rng: &mut R,
) {
    if cfg.eta == 0.0 {
        return;
    }
    let sd = cfg.noise_variance().sqrt();
    for g in grad.as_mut_slice() {
        let n: f64 = rng.sample(StandardNormal);
        *g += sd * n;
    }
}

/// Functional RMSProp: returns the step direction and the updated state.
pub fn rmsprop_precondition(
    state: &RmsPropState,
    g: &ParameterVector,
) -> Result<(ParameterVector, RmsPropState)> {
    let mut next = state.clone();
    let mut dir = g.clone();
    next.precondition_in_place(dir.as_mut_slice())?;
    Ok((dir, next))
}

/// Run `cfg.m_inner` noisy preconditioned descent iterations from `theta`.
pub fn sghmc_step<R, F>(
    theta: &ParameterVector,
    mut grad_fn: F,
    cfg: &SghmcConfig,
    rms: &RmsPropState,
    rng: &mut R,
) -> Result<(ParameterVector, RmsPropState)>
where
    R: Rng + ?Sized,
    F: FnMut(&ParameterVector) -> Result<ParameterVector>,
{
    let mut theta = theta.clone();
    let mut rms = rms.clone();
    sghmc_step_in_place(&mut theta, &mut grad_fn, cfg, &mut rms, rng)?;
    Ok((theta, rms))
}

pub fn sghmc_step_in_place<R, F>(
    theta: &mut ParameterVector,
    mut grad_fn: F,
    cfg: &SghmcConfig,
    rms: &mut RmsPropState,
    rng: &mut R,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&ParameterVector) -> Result<ParameterVector>,
{
    cfg.validate()?;
    for it in 0..cfg.m_inner {
        let mut g = grad_fn(theta)?;
        if g.len() != theta.len() {
            return Err(Error::mismatch("sampler gradient", theta.len(), g.len()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at sampler inner iteration {it}"
            )));
        }
        inject_noise_in_place(&mut g, cfg, rng);
        rms.precondition_in_place(g.as_mut_slice())?;
        theta.axpy(-cfg.alpha, &g)?;
    }
    Ok(())
}

/// Clamp every coordinate into `[-c, c]`.
pub fn clip_weights(theta: &ParameterVector, c: f64) -> ParameterVector {
    let mut out = theta.clone();
    clip_weights_in_place(&mut out, c);
    out
}

pub fn clip_weights_in_place(theta: &mut ParameterVector, c: f64) {
    let c = c.abs();
    for v in theta.as_mut_slice() {
        *v = v.clamp(-c, c);
    }
}
