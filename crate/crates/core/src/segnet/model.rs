use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prior::ShapePrior;
use super::tensor::Tensor;
use super::unet::UNet;
use crate::error::{Error, Result};

/// Network shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub latent: usize,
    pub prior_hidden: usize,
    pub prior_grid: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 3,
            width: 8,
            latent: 16,
            prior_hidden: 64,
            prior_grid: 16,
        }
    }
}

/// Architecture plus the training settings the parameters came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub arch: Architecture,
    pub lambda_prior: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prior >= 0.0 && self.lambda_prior.is_finite()) {
            return Err(Error::Validation("λ_prior must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Optimiser and loss settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_prior: f64,
    pub seed: u64,
    pub w_ce: f64,
    pub w_dice: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            lambda_prior: 0.1,
            seed: 0,
            w_ce: 1.0,
            w_dice: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be ≥ 1".into()));
        }
        if !nonneg(self.w_ce) || !nonneg(self.w_dice) || self.w_ce + self.w_dice <= 0.0 {
            return Err(Error::Validation(
                "loss weights must be ≥ 0 with a positive sum".into(),
            ));
        }
        if !nonneg(self.lambda_prior) || !nonneg(self.learning_rate) {
            return Err(Error::Validation(
                "λ_prior and learning rate must be finite and ≥ 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("moment coefficients must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything needed to run the two-stage pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub hyper: Hyperparams,
    pub unet: UNet,
    pub vae: ShapePrior,
    /// Optional stage-1 localisation network.
    pub roi: Option<UNet>,
}

impl NetworkParams {
    /// Seeded random initialisation.
    pub fn init(arch: Architecture, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unet = UNet::new(arch.depth, arch.width, &mut rng)?;
        let vae = ShapePrior::new(arch.latent, arch.prior_hidden, arch.prior_grid, &mut rng)?;
        let hyper = Hyperparams {
            arch,
            lambda_prior: config.lambda_prior,
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            seed: config.seed,
        };
        hyper.validate()?;
        Ok(NetworkParams {
            hyper,
            unet,
            vae,
            roi: None,
        })
    }

    /// Segmentation and prior tensors in optimiser order.
    pub fn trainable(&self) -> impl Iterator<Item = &Tensor> {
        self.unet.tensors().iter().chain(self.vae.tensors())
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.unet.tensors_mut().iter_mut().chain(self.vae.tensors_mut().iter_mut())
    }
}

/// Gradients mirroring [`NetworkParams::trainable`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub unet: Vec<Tensor>,
    pub vae: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(params: &NetworkParams) -> Self {
        Gradients {
            unet: params.unet.zero_grads(),
            vae: params.vae.zero_grads(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.unet.iter().chain(&self.vae)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.unet.iter_mut().chain(&mut self.vae).zip(other.iter()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.unet.iter_mut().chain(&mut self.vae) {
            t.scale(k);
        }
    }
}
