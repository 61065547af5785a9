use super::layers::softmax_channels;
use super::loss::{d_probs, loss_from_probs, softmax_backward};
use super::model::{Architecture, Gradients, NetworkParams, TrainConfig};
use super::prior::PriorTerms;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::study_io::{class, LabelMap};

/// Numerical floor of the Adam denominator.
pub const ADAM_EPSILON: f64 = 1e-8;

/// Returns `(rows, cols)` of a `[rows, cols]` or `[1, rows, cols]` image.
pub fn image_extent(image: &Tensor) -> Result<(usize, usize)> {
    match image.dims() {
        [r, c] | [1, r, c] => Ok((*r, *c)),
        d => Err(Error::Validation(format!(
            "expected a single-channel 2-D image, got dims {d:?}"
        ))),
    }
}

/// Zero-mean, unit-variance copy of an image; constant images map to 0.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Loss and gradients for one image, with prior noise drawn from
/// `(config.seed, key)`.
pub fn sample_gradient(
    params: &NetworkParams,
    image: &[f64],
    (rows, cols): (usize, usize),
    labels: &[u8],
    config: &TrainConfig,
    key: u64,
) -> Result<(f64, Gradients)> {
    if labels.len() != rows * cols {
        return Err(Error::Validation(format!(
            "{} labels for a {rows}×{cols} image",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class::COUNT) {
        return Err(Error::Validation(format!("label {bad} out of range")));
    }
    let (logits, tape) = params.unet.forward_tape(image, rows, cols)?;
    let probs = softmax_channels(&logits, class::COUNT);
    let mut grads = Gradients::zeros(params);
    let mut dp = d_probs(&probs, labels, config);
    let mut terms = PriorTerms {
        reconstruction: 0.0,
        kl: 0.0,
    };
    if config.lambda_prior > 0.0 {
        let eps = params.vae.sample_noise(config.seed, key);
        let (t, prior_tape) = params.vae.forward_tape(&probs, rows, cols, eps)?;
        terms = t;
        let d_prior = params
            .vae
            .backward(&prior_tape, config.lambda_prior, &mut grads.vae);
        for (a, b) in dp.iter_mut().zip(&d_prior) {
            *a += b;
        }
    }
    let loss = loss_from_probs(&probs, labels, terms, config);
    let dz = softmax_backward(&probs, &dp, class::COUNT);
    params.unet.backward(&tape, &dz, &mut grads.unet);
    Ok((loss, grads))
}

/// Gradient of the total loss for one image used directly as network
/// input; prior noise uses stream 0 of `config.seed`.
pub fn backward(
    params: &NetworkParams,
    image: &Tensor,
    labels: &LabelMap,
    config: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let extent = image_extent(image)?;
    let (s, r, c) = labels.dims();
    if s != 1 || (r, c) != extent {
        return Err(Error::Validation(format!(
            "labels {s}×{r}×{c} do not match image {}×{}",
            extent.0, extent.1
        )));
    }
    sample_gradient(params, image.values(), extent, labels.labels(), config, 0)
}

/// Adam state for the trainable tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &NetworkParams, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            beta1: config.beta1,
            beta2: config.beta2,
            lr: config.learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .trainable_mut()
            .zip(grads.iter())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Trained parameters and the mean loss of every epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub loss_history: Vec<f64>,
}

/// One training pair after validation and standardisation.
struct Prepared {
    input: Vec<f64>,
    extent: (usize, usize),
    labels: Vec<u8>,
}

fn prepare(dataset: &[(Tensor, LabelMap)]) -> Result<Vec<Prepared>> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    dataset
        .iter()
        .map(|(image, labels)| {
            let extent = image_extent(image)?;
            let (s, r, c) = labels.dims();
            if s != 1 || (r, c) != extent {
                return Err(Error::Validation(format!(
                    "labels {s}×{r}×{c} do not match image {}×{}",
                    extent.0, extent.1
                )));
            }
            Ok(Prepared {
                input: standardize(image.values()),
                extent,
                labels: labels.labels().to_vec(),
            })
        })
        .collect()
}

/// Trains from a seeded initialisation. Images are standardised before
/// entering the network; batches are taken in dataset order.
pub fn train(
    dataset: &[(Tensor, LabelMap)],
    arch: Architecture,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = NetworkParams::init(arch, config)?;
    train_from(params, dataset, config, exec)
}

/// Continues training from existing parameters.
pub fn train_from(
    mut params: NetworkParams,
    dataset: &[(Tensor, LabelMap)],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = prepare(dataset)?;
    let mut adam = Adam::new(&params, config);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for start in (0..data.len()).step_by(config.batch_size) {
            let end = (start + config.batch_size).min(data.len());
            let results = par::map_range(exec, end - start, |j| {
                let s = &data[start + j];
                // per-sample prior noise, fixed across epochs
                sample_gradient(&params, &s.input, s.extent, &s.labels, config, (start + j) as u64)
            });
            let mut batch = Gradients::zeros(&params);
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                epoch_loss += loss;
                batch.add_assign(&g);
            }
            batch.scale(1.0 / (end - start) as f64);
            if batch.iter().any(|t| t.values().iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut params, &batch);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(mean);
    }
    params.hyper.lambda_prior = config.lambda_prior;
    params.hyper.learning_rate = config.learning_rate;
    params.hyper.epochs = config.epochs;
    params.hyper.seed = config.seed;
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
