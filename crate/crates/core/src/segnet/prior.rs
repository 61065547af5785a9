//! Variational autoencoder over coarse class-probability masks.
//!
//! Mask probabilities are average-pooled onto a `grid × grid` lattice and
//! flattened class-major. The encoder is one ReLU hidden layer feeding
//! linear heads for `μ` and `log σ²`; the decoder mirrors it and ends in a
//! per-cell softmax over classes. Reconstruction is the cross-entropy of
//! the decoded cells against the pooled input, averaged over cells, which
//! equals the pixel-averaged cross-entropy of the decoder output upsampled
//! back to the mask resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::study_io::class;

#[derive(Clone, Debug, PartialEq)]
pub struct ShapePrior {
    latent: usize,
    hidden: usize,
    grid: usize,
    tensors: Vec<Tensor>,
}

/// Reconstruction and KL values of one mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorTerms {
    pub reconstruction: f64,
    pub kl: f64,
}

impl PriorTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.kl
    }
}

/// Forward state kept for the gradient.
#[derive(Clone, Debug)]
pub struct PriorTape {
    pooled: Vec<f64>,
    h1: Vec<f64>,
    mu: Vec<f64>,
    log_var: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    h2: Vec<f64>,
    q: Vec<f64>,
    block: (usize, usize),
    mask: (usize, usize),
}

// tensor slots
const W1: usize = 0;
const B1: usize = 1;
const W_MU: usize = 2;
const B_MU: usize = 3;
const W_LV: usize = 4;
const B_LV: usize = 5;
const W3: usize = 6;
const B3: usize = 7;
const W4: usize = 8;
const B4: usize = 9;

fn dense(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    let wv = w.values();
    (0..rows)
        .map(|r| {
            let row = &wv[r * cols..(r + 1) * cols];
            b.values()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy·xᵀ`, `db += dy` and returns `Wᵀ·dy`.
fn dense_backward(
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let cols = w.dims()[1];
    let mut dx = vec![0.0; cols];
    let wv = w.values();
    for (r, &g) in dy.iter().enumerate() {
        db.values_mut()[r] += g;
        let dwr = &mut dw.values_mut()[r * cols..(r + 1) * cols];
        for (d, xv) in dwr.iter_mut().zip(x) {
            *d += g * xv;
        }
        let row = &wv[r * cols..(r + 1) * cols];
        for (d, wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
    dx
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        *x = x.max(0.0);
    }
    v
}

/// KL divergence of `N(μ, σ²)` from the standard normal, summed.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

impl ShapePrior {
    pub fn new<R: Rng + ?Sized>(latent: usize, hidden: usize, grid: usize, rng: &mut R) -> Result<Self> {
        if latent == 0 || hidden == 0 || grid == 0 {
            return Err(Error::Validation(
                "shape prior latent, hidden and grid sizes must be ≥ 1".into(),
            ));
        }
        let mut prior = ShapePrior::zeros(latent, hidden, grid);
        for slot in [W1, W_MU, W_LV, W3, W4] {
            let t = &mut prior.tensors[slot];
            let fan_in = t.dims()[1] as f64;
            let gain = if slot == W1 || slot == W3 { 2.0 } else { 1.0 };
            // keep the initial posterior close to the prior
            let scale = if slot == W_MU || slot == W_LV { 0.1 } else { 1.0 };
            let normal = Normal::new(0.0, scale * (gain / fan_in).sqrt()).expect("finite sd");
            for v in t.values_mut() {
                *v = normal.sample(rng);
            }
        }
        Ok(prior)
    }

    pub fn zeros(latent: usize, hidden: usize, grid: usize) -> Self {
        let input = class::COUNT * grid * grid;
        let tensors = vec![
            Tensor::zeros(&[hidden, input]),
            Tensor::zeros(&[hidden]),
            Tensor::zeros(&[latent, hidden]),
            Tensor::zeros(&[latent]),
            Tensor::zeros(&[latent, hidden]),
            Tensor::zeros(&[latent]),
            Tensor::zeros(&[hidden, latent]),
            Tensor::zeros(&[hidden]),
            Tensor::zeros(&[input, hidden]),
            Tensor::zeros(&[input]),
        ];
        ShapePrior {
            latent,
            hidden,
            grid,
            tensors,
        }
    }

    pub fn from_tensors(latent: usize, hidden: usize, grid: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let template = ShapePrior::zeros(latent, hidden, grid);
        if template.tensors.len() != tensors.len()
            || template.tensors.iter().zip(&tensors).any(|(a, b)| a.dims() != b.dims())
        {
            return Err(Error::Validation(format!(
                "shape prior tensors inconsistent with latent {latent}, hidden {hidden}, grid {grid}"
            )));
        }
        Ok(ShapePrior { tensors, ..template })
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.dims())).collect()
    }

    /// Encoder heads `(μ, log σ²)` for a pooled mask.
    pub fn encode(&self, pooled: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let t = &self.tensors;
        let h1 = relu(dense(&t[W1], &t[B1], pooled));
        let mu = dense(&t[W_MU], &t[B_MU], &h1);
        let log_var = dense(&t[W_LV], &t[B_LV], &h1);
        (h1, mu, log_var)
    }

    /// Block-averages `[classes][rows][cols]` probabilities onto the grid.
    pub fn pool(&self, probs: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
        let g = self.grid;
        if rows % g != 0 || cols % g != 0 || probs.len() != class::COUNT * rows * cols {
            return Err(Error::Validation(format!(
                "mask {rows}×{cols} incompatible with a {g}×{g} prior grid"
            )));
        }
        let (br, bc) = (rows / g, cols / g);
        let area = (br * bc) as f64;
        let mut pooled = vec![0.0; class::COUNT * g * g];
        for c in 0..class::COUNT {
            for r in 0..rows {
                let row = &probs[(c * rows + r) * cols..][..cols];
                let out = &mut pooled[(c * g + r / br) * g..][..g];
                for (x, v) in row.iter().enumerate() {
                    out[x / bc] += v;
                }
            }
        }
        for v in &mut pooled {
            *v /= area;
        }
        Ok(pooled)
    }

    /// Terms and tape for probabilities `[classes][rows][cols]`; `eps`
    /// supplies the reparameterisation noise.
    pub fn forward_tape(
        &self,
        probs: &[f64],
        rows: usize,
        cols: usize,
        eps: Vec<f64>,
    ) -> Result<(PriorTerms, PriorTape)> {
        let pooled = self.pool(probs, rows, cols)?;
        let (h1, mu, log_var) = self.encode(&pooled);
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("shape-prior encoder output".into()));
        }
        let z: Vec<f64> = (0..self.latent)
            .map(|i| mu[i] + (0.5 * log_var[i]).exp() * eps[i])
            .collect();
        let t = &self.tensors;
        let h2 = relu(dense(&t[W3], &t[B3], &z));
        let out = dense(&t[W4], &t[B4], &h2);
        let cells = self.grid * self.grid;
        let q = super::layers::softmax_channels(&out, class::COUNT);
        let mut recon = 0.0;
        for (x, qv) in pooled.iter().zip(&q) {
            if *x != 0.0 {
                recon -= x * qv.ln();
            }
        }
        recon /= cells as f64;
        let kl = kl_divergence(&mu, &log_var);
        let terms = PriorTerms {
            reconstruction: recon,
            kl,
        };
        if !recon.is_finite() || !kl.is_finite() {
            return Err(Error::Numeric("shape-prior terms".into()));
        }
        Ok((
            terms,
            PriorTape {
                pooled,
                h1,
                mu,
                log_var,
                eps,
                z,
                h2,
                q,
                block: (rows / self.grid, cols / self.grid),
                mask: (rows, cols),
            },
        ))
    }

    /// Standard-normal noise for one mask, reproducible from `(seed, key)`.
    pub fn sample_noise(&self, seed: u64, key: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key);
        (0..self.latent).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Accumulates gradients of `scale · (reconstruction + kl)` into
    /// `grads` and returns the gradient with respect to the input mask
    /// probabilities `[classes][rows][cols]`.
    pub fn backward(&self, tape: &PriorTape, scale: f64, grads: &mut [Tensor]) -> Vec<f64> {
        let t = &self.tensors;
        let cells = (self.grid * self.grid) as f64;
        let k = class::COUNT;
        let n_cells = self.grid * self.grid;
        // d recon / d logits of each cell, and the direct term on the input
        let mut d_out = vec![0.0; tape.q.len()];
        let mut d_pooled = vec![0.0; tape.pooled.len()];
        for cell in 0..n_cells {
            let mass: f64 = (0..k).map(|c| tape.pooled[c * n_cells + cell]).sum();
            for c in 0..k {
                let i = c * n_cells + cell;
                d_out[i] = scale * (tape.q[i] * mass - tape.pooled[i]) / cells;
                d_pooled[i] = -scale * tape.q[i].ln() / cells;
            }
        }
        let (g_lo, g_hi) = grads.split_at_mut(B4);
        let d_h2 = dense_backward(&t[W4], &tape.h2, &d_out, &mut g_lo[W4], &mut g_hi[0]);
        let d_h2: Vec<f64> = d_h2
            .iter()
            .zip(&tape.h2)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        let (g_lo, g_hi) = grads.split_at_mut(B3);
        let d_z = dense_backward(&t[W3], &tape.z, &d_h2, &mut g_lo[W3], &mut g_hi[0]);
        let mut d_mu = vec![0.0; self.latent];
        let mut d_lv = vec![0.0; self.latent];
        for i in 0..self.latent {
            let sigma = (0.5 * tape.log_var[i]).exp();
            d_mu[i] = d_z[i] + scale * tape.mu[i];
            d_lv[i] = d_z[i] * tape.eps[i] * sigma * 0.5 - scale * 0.5 * (1.0 - tape.log_var[i].exp());
        }
        let (g_lo, g_hi) = grads.split_at_mut(B_MU);
        let mut d_h1 = dense_backward(&t[W_MU], &tape.h1, &d_mu, &mut g_lo[W_MU], &mut g_hi[0]);
        let (g_lo, g_hi) = grads.split_at_mut(B_LV);
        let d_h1b = dense_backward(&t[W_LV], &tape.h1, &d_lv, &mut g_lo[W_LV], &mut g_hi[0]);
        for ((a, b), h) in d_h1.iter_mut().zip(&d_h1b).zip(&tape.h1) {
            *a = if *h > 0.0 { *a + b } else { 0.0 };
        }
        let (g_lo, g_hi) = grads.split_at_mut(B1);
        let d_in = dense_backward(&t[W1], &tape.pooled, &d_h1, &mut g_lo[W1], &mut g_hi[0]);
        for (a, b) in d_pooled.iter_mut().zip(&d_in) {
            *a += b;
        }
        // spread the pooled gradient back over each block
        let (rows, cols) = tape.mask;
        let (br, bc) = tape.block;
        let g = self.grid;
        let area = (br * bc) as f64;
        let mut d_probs = vec![0.0; k * rows * cols];
        for c in 0..k {
            for r in 0..rows {
                let src = &d_pooled[(c * g + r / br) * g..][..g];
                let dst = &mut d_probs[(c * rows + r) * cols..][..cols];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = src[x / bc] / area;
                }
            }
        }
        d_probs
    }
}
