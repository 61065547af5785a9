//! Encoder–decoder network with skip connections.
//!
//! Level `l` carries `width · 2^l` channels. Each level is one 3×3
//! convolution followed by instance normalisation and ReLU; the encoder
//! max-pools between levels and the decoder upsamples (nearest neighbour),
//! concatenates the matching encoder map, then convolves. A 1×1 convolution
//! with bias maps the top decoder level to class logits.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, NormCache, Real, Shape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::study_io::class;

const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    depth: usize,
    width: usize,
    classes: usize,
    tensors: Vec<Tensor>,
}

/// Per-level state kept for the backward pass.
#[derive(Clone, Debug)]
struct LevelCache {
    input: Vec<f64>,
    in_shape: Shape,
    norm: NormCache,
    out: Vec<f64>,
}

/// Intermediate values of a training forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    height: usize,
    width: usize,
    enc: Vec<LevelCache>,
    pool_argmax: Vec<Vec<usize>>,
    dec: Vec<Option<LevelCache>>,
}

impl UNet {
    pub const INPUT_CHANNELS: usize = 1;

    /// Randomly initialised network (He-normal kernels, unit norm gains).
    pub fn new<R: Rng + ?Sized>(depth: usize, width: usize, rng: &mut R) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(Error::Validation("U-Net depth and width must be ≥ 1".into()));
        }
        let mut net = UNet::zeros(depth, width);
        for (i, t) in net.tensors.iter_mut().enumerate() {
            let dims = t.dims().to_vec();
            if dims.len() == 4 {
                let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
                let is_head = i == net_head_index(depth);
                let sd = if is_head { (1.0 / fan_in).sqrt() } else { (2.0 / fan_in).sqrt() };
                let normal = Normal::new(0.0, sd).expect("finite sd");
                for v in t.values_mut() {
                    *v = normal.sample(rng);
                }
            }
        }
        Ok(net)
    }

    /// Network with every kernel, bias and norm shift zero and norm gains 1.
    pub fn zeros(depth: usize, width: usize) -> Self {
        let classes = class::COUNT;
        let ch = |l: usize| width << l;
        let mut tensors = Vec::with_capacity(6 * depth);
        for l in 0..depth {
            let c_in = if l == 0 { Self::INPUT_CHANNELS } else { ch(l - 1) };
            push_block(&mut tensors, ch(l), c_in);
        }
        for l in 0..depth.saturating_sub(1) {
            push_block(&mut tensors, ch(l), ch(l + 1) + ch(l));
        }
        tensors.push(Tensor::zeros(&[classes, ch(0), 1, 1]));
        tensors.push(Tensor::zeros(&[classes]));
        UNet {
            depth,
            width,
            classes,
            tensors,
        }
    }

    /// Rebuilds a network from stored tensors, checking every shape.
    pub fn from_tensors(depth: usize, width: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let template = UNet::zeros(depth, width);
        if template.tensors.len() != tensors.len() {
            return Err(Error::Validation(format!(
                "U-Net (depth {depth}, width {width}) has {} tensors, got {}",
                template.tensors.len(),
                tensors.len()
            )));
        }
        for (i, (a, b)) in template.tensors.iter().zip(&tensors).enumerate() {
            if a.dims() != b.dims() {
                return Err(Error::Validation(format!(
                    "U-Net tensor {i}: expected dims {:?}, got {:?}",
                    a.dims(),
                    b.dims()
                )));
            }
        }
        Ok(UNet { tensors, ..template })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Zero-filled tensors shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.dims())).collect()
    }

    fn channels(&self, level: usize) -> usize {
        self.width << level
    }

    fn enc_index(&self, level: usize) -> usize {
        3 * level
    }

    fn dec_index(&self, level: usize) -> usize {
        3 * self.depth + 3 * level
    }

    fn head_index(&self) -> usize {
        net_head_index(self.depth)
    }

    /// Side lengths must survive `depth − 1` halvings.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << (self.depth - 1);
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Validation(format!(
                "input {height}×{width} is not divisible by {m} for depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    fn block_forward(
        &self,
        index: usize,
        input: Vec<f64>,
        in_shape: Shape,
        c_out: usize,
    ) -> LevelCache {
        let t = &self.tensors;
        let y = layers::conv2d_forward(&input, in_shape, t[index].values(), None, c_out, KERNEL);
        let out_shape = Shape::new(c_out, in_shape.height, in_shape.width);
        let (mut out, norm) = layers::instance_norm_forward(
            &y,
            out_shape,
            t[index + 1].values(),
            t[index + 2].values(),
        );
        layers::relu_inplace(&mut out);
        LevelCache {
            input,
            in_shape,
            norm,
            out,
        }
    }

    /// Logits `[classes][height][width]` for a single-channel image, along
    /// with the tape needed by [`UNet::backward`].
    pub fn forward_tape(&self, image: &[f64], height: usize, width: usize) -> Result<(Vec<f64>, Tape)> {
        self.check_input(height, width)?;
        if image.len() != height * width {
            return Err(Error::Validation(format!(
                "image has {} values, expected {height}×{width}",
                image.len()
            )));
        }
        let d = self.depth;
        let mut enc: Vec<LevelCache> = Vec::with_capacity(d);
        let mut pool_argmax = Vec::with_capacity(d - 1);
        let mut input = image.to_vec();
        let mut shape = Shape::new(Self::INPUT_CHANNELS, height, width);
        for l in 0..d {
            let cache = self.block_forward(self.enc_index(l), input, shape, self.channels(l));
            let out_shape = Shape::new(self.channels(l), shape.height, shape.width);
            if l + 1 < d {
                let (pooled, arg) = layers::max_pool2_forward(&cache.out, out_shape);
                pool_argmax.push(arg);
                input = pooled;
                shape = Shape::new(out_shape.channels, out_shape.height / 2, out_shape.width / 2);
            } else {
                input = Vec::new();
            }
            enc.push(cache);
        }
        let mut dec: Vec<Option<LevelCache>> = vec![None; d.saturating_sub(1)];
        let mut cur_shape = Shape::new(self.channels(d - 1), height >> (d - 1), width >> (d - 1));
        for l in (0..d - 1).rev() {
            let cur = match dec.get(l + 1).and_then(|c| c.as_ref()) {
                Some(c) => &c.out,
                None => &enc[d - 1].out,
            };
            let mut cat = layers::upsample2_forward(cur, cur_shape);
            cat.extend_from_slice(&enc[l].out);
            let cat_shape = Shape::new(
                cur_shape.channels + self.channels(l),
                cur_shape.height * 2,
                cur_shape.width * 2,
            );
            let cache = self.block_forward(self.dec_index(l), cat, cat_shape, self.channels(l));
            cur_shape = Shape::new(self.channels(l), cat_shape.height, cat_shape.width);
            dec[l] = Some(cache);
        }
        let top = match dec.first().and_then(|c| c.as_ref()) {
            Some(c) => &c.out,
            None => &enc[0].out,
        };
        let h = self.head_index();
        let logits = layers::conv2d_forward(
            top,
            Shape::new(self.channels(0), height, width),
            self.tensors[h].values(),
            Some(self.tensors[h + 1].values()),
            self.classes,
            1,
        );
        Ok((
            logits,
            Tape {
                height,
                width,
                enc,
                pool_argmax,
                dec,
            },
        ))
    }

    /// Logits without keeping intermediate state.
    pub fn forward(&self, image: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        // The tape only holds activations that are alive anyway at the
        // decoder's widest point, so the inference path reuses it.
        self.forward_tape(image, height, width).map(|(l, _)| l)
    }

    fn block_backward(
        &self,
        index: usize,
        cache: &LevelCache,
        c_out: usize,
        mut d_out: Vec<f64>,
        grads: &mut [Tensor],
    ) -> Vec<f64> {
        let shape = Shape::new(c_out, cache.in_shape.height, cache.in_shape.width);
        layers::relu_backward_inplace(&mut d_out, &cache.out);
        let (head, tail) = grads.split_at_mut(index + 1);
        let (dg, db) = tail.split_at_mut(1);
        let dy = layers::instance_norm_backward(
            &d_out,
            shape,
            self.tensors[index + 1].values(),
            &cache.norm,
            dg[0].values_mut(),
            db[0].values_mut(),
        );
        layers::conv2d_backward(
            &cache.input,
            cache.in_shape,
            self.tensors[index].values(),
            c_out,
            KERNEL,
            &dy,
            head[index].values_mut(),
            None,
        )
    }

    /// Accumulates parameter gradients for `d_logits` into `grads`.
    pub fn backward(&self, tape: &Tape, d_logits: &[f64], grads: &mut [Tensor]) {
        let d = self.depth;
        let (height, width) = (tape.height, tape.width);
        let h = self.head_index();
        let top = match tape.dec.first().and_then(|c| c.as_ref()) {
            Some(c) => &c.out,
            None => &tape.enc[0].out,
        };
        let (gk, gb) = grads[h..].split_at_mut(1);
        let mut d_cur = layers::conv2d_backward(
            top,
            Shape::new(self.channels(0), height, width),
            self.tensors[h].values(),
            self.classes,
            1,
            d_logits,
            gk[0].values_mut(),
            Some(gb[0].values_mut()),
        );
        // gradients flowing into each encoder output through the skips
        let mut d_skip: Vec<Vec<f64>> = vec![Vec::new(); d];
        for l in 0..d - 1 {
            let cache = tape.dec[l].as_ref().expect("decoder level cached");
            let d_cat = self.block_backward(self.dec_index(l), cache, self.channels(l), d_cur, grads);
            let up_ch = self.channels(l + 1);
            let plane = cache.in_shape.plane();
            d_skip[l] = d_cat[up_ch * plane..].to_vec();
            d_cur = layers::upsample2_backward(
                &d_cat[..up_ch * plane],
                Shape::new(up_ch, cache.in_shape.height / 2, cache.in_shape.width / 2),
            );
        }
        for l in (0..d).rev() {
            let mut d_out = d_cur;
            if l + 1 < d {
                for (a, b) in d_out.iter_mut().zip(&d_skip[l]) {
                    *a += b;
                }
            }
            let cache = &tape.enc[l];
            let d_in = self.block_backward(self.enc_index(l), cache, self.channels(l), d_out, grads);
            d_cur = if l > 0 {
                let prev = &tape.enc[l - 1];
                layers::max_pool2_backward(&d_in, &tape.pool_argmax[l - 1], prev.out.len())
            } else {
                Vec::new()
            };
        }
    }
}

fn net_head_index(depth: usize) -> usize {
    3 * depth + 3 * depth.saturating_sub(1)
}

fn push_block(tensors: &mut Vec<Tensor>, c_out: usize, c_in: usize) {
    tensors.push(Tensor::zeros(&[c_out, c_in, KERNEL, KERNEL]));
    tensors.push(Tensor::from_parts(vec![c_out], vec![1.0; c_out]));
    tensors.push(Tensor::zeros(&[c_out]));
}

/// Forward-only copy of a [`UNet`] with weights converted to `T` and no
/// backward state; the fast path for segmentation.
#[derive(Clone, Debug)]
pub struct InferenceNet<T: Real> {
    depth: usize,
    width: usize,
    classes: usize,
    weights: Vec<Vec<T>>,
}

impl UNet {
    pub fn compile<T: Real>(&self) -> InferenceNet<T> {
        InferenceNet {
            depth: self.depth,
            width: self.width,
            classes: self.classes,
            weights: self
                .tensors
                .iter()
                .map(|t| t.values().iter().map(|&v| T::from_f64(v)).collect())
                .collect(),
        }
    }
}

impl<T: Real> InferenceNet<T> {
    pub fn classes(&self) -> usize {
        self.classes
    }

    fn block(&self, index: usize, input: &[T], shape: Shape, c_out: usize) -> Vec<T> {
        let w = &self.weights;
        let mut y = layers::conv2d_forward(input, shape, &w[index], None, c_out, KERNEL);
        let out_shape = Shape::new(c_out, shape.height, shape.width);
        layers::instance_norm_inplace(&mut y, out_shape, &w[index + 1], &w[index + 2]);
        layers::relu_inplace(&mut y);
        y
    }

    /// Logits `[classes][height][width]`.
    pub fn forward(&self, image: &[T], height: usize, width: usize) -> Result<Vec<T>> {
        let m = 1usize << (self.depth - 1);
        if height % m != 0 || width % m != 0 || image.len() != height * width || height == 0 {
            return Err(Error::Validation(format!(
                "input {height}×{width} ({} values) unsuitable for depth {}",
                image.len(),
                self.depth
            )));
        }
        let d = self.depth;
        let ch = |l: usize| self.width << l;
        let mut skips = Vec::with_capacity(d);
        let mut cur = image.to_vec();
        let mut shape = Shape::new(UNet::INPUT_CHANNELS, height, width);
        for l in 0..d {
            let out = self.block(3 * l, &cur, shape, ch(l));
            shape = Shape::new(ch(l), shape.height, shape.width);
            if l + 1 < d {
                cur = layers::max_pool2_forward(&out, shape).0;
                skips.push(out);
                shape = Shape::new(ch(l), shape.height / 2, shape.width / 2);
            } else {
                cur = out;
            }
        }
        for l in (0..d - 1).rev() {
            let mut cat = layers::upsample2_forward(&cur, shape);
            cat.extend_from_slice(&skips[l]);
            let cat_shape = Shape::new(shape.channels + ch(l), shape.height * 2, shape.width * 2);
            cur = self.block(3 * d + 3 * l, &cat, cat_shape, ch(l));
            shape = Shape::new(ch(l), cat_shape.height, cat_shape.width);
        }
        let h = net_head_index(d);
        Ok(layers::conv2d_forward(
            &cur,
            shape,
            &self.weights[h],
            Some(&self.weights[h + 1]),
            self.classes,
            1,
        ))
    }
}
