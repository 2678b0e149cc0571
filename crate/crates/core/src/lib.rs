//! Renewable power scenario generation with Bayesian GANs.
//!
//! An ensemble of generator weight particles and critic weight particles is
//! sampled with stochastic-gradient HMC under Wasserstein losses and
//! Gaussian weight priors. Each trained generator particle tends to settle on
//! one mode of the historical data (solar vs wind days, calm vs gusty
//! regimes), which the evaluation module quantifies.
//!
//! Modules, bottom-up:
//!
//! * [`nn`]: dense networks with exact reverse-mode gradients
//! * [`losses`]: Wasserstein losses, priors and posterior gradients
//! * [`sghmc`]: the noisy RMSProp-preconditioned sampler step and clipping
//! * [`trainer`]: the particle ensemble training loop and checkpoints
//! * [`data`]: CSV ingestion, day windowing, synthetic datasets
//! * [`eval`]: Pearson matrices, boxplot statistics, mode purity

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod sghmc;
pub mod trainer;

pub use data::{Manifest, Mode, Provenance, ScenarioBatch, SiteSeries, WindRegime};
pub use error::{Error, Result};
pub use eval::{CorrelationMatrix, EvalReport, GeneratorStats, ModeClassifier, ModePurityReport};
pub use losses::{GanNets, LossReport, PriorSpec};
pub use nn::{Activation, LayerSpec, Matrix, MlpNetwork, ParameterVector, Role};
pub use sghmc::{RmsPropState, SghmcConfig};
pub use trainer::{
    default_nets, generate, has_converged, train, Checkpoint, ConvergencePolicy, ParticleEnsemble,
    SiteInfo, Trainer, TrainerState, TrainingConfig,
};
