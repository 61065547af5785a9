//! Forward and backward kernels for the network's building blocks.
//!
//! Feature maps are `[channels][height][width]` buffers. Convolutions are
//! stride 1 with "same" zero padding and are evaluated as one GEMM per
//! kernel tap over a zero-padded copy of the input: with the output laid out
//! at the padded row pitch, every tap's input window is an ordinary strided
//! matrix, so no im2col buffer is materialised.

/// Shape of a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Floating-point element type of the forward kernels. Training runs in
/// `f64`; inference may use `f32`.
pub trait Real:
    Copy
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `matrixmultiply` kernel for this type.
    ///
    /// # Safety
    /// Same contract as `matrixmultiply::dgemm`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_real!(f64, matrixmultiply::dgemm);
impl_real!(f32, matrixmultiply::sgemm);

/// `c = a·b + beta · c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_off: usize,
    (rsa, csa): (usize, usize),
    b: &[T],
    b_off: usize,
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    c_off: usize,
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |off: usize, rows: usize, cols: usize, rs: usize, cs: usize| {
        off + (rows - 1) * rs + (cols - 1) * cs
    };
    assert!(k == 0 || last(a_off, m, k, rsa, csa) < a.len());
    assert!(k == 0 || last(b_off, k, n, rsb, csb) < b.len());
    assert!(last(c_off, m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above bound every element the kernel touches
    // inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr().add(a_off),
            rsa as isize,
            csa as isize,
            b.as_ptr().add(b_off),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    /// padded row pitch
    wp: usize,
    /// padded plane size
    plane: usize,
    /// GEMM columns per tap
    cols: usize,
}

impl ConvGeom {
    fn new(input: Shape, k: usize) -> Self {
        assert!(k % 2 == 1, "odd kernel sizes only");
        let pad = k / 2;
        let wp = input.width + 2 * pad;
        let hp = input.height + 2 * pad;
        ConvGeom {
            c_in: input.channels,
            h: input.height,
            w: input.width,
            k,
            pad,
            wp,
            plane: hp * wp,
            cols: input.height * wp - 2 * pad,
        }
    }

    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn pad_input<T: Real>(&self, x: &[T]) -> Vec<T> {
        if self.pad == 0 {
            return x.to_vec();
        }
        let mut xp = vec![T::ZERO; self.c_in * self.plane];
        for c in 0..self.c_in {
            for y in 0..self.h {
                let src = &x[(c * self.h + y) * self.w..][..self.w];
                let dst = c * self.plane + (y + self.pad) * self.wp + self.pad;
                xp[dst..dst + self.w].copy_from_slice(src);
            }
        }
        xp
    }
}

/// Inputs with at most this many channels use the patch-matrix path.
const IM2COL_MAX_CHANNELS: usize = 2;

/// Same-padded stride-1 convolution. `kernel` is `[c_out][c_in][k][k]`,
/// `bias` (optional) is `[c_out]`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    shape: Shape,
    kernel: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    k: usize,
) -> Vec<T> {
    let g = ConvGeom::new(shape, k);
    debug_assert_eq!(x.len(), shape.len());
    debug_assert_eq!(kernel.len(), c_out * g.c_in * g.taps());
    if k > 1 && g.c_in <= IM2COL_MAX_CHANNELS {
        let mut y = conv2d_im2col(x, shape, kernel, c_out, k);
        if let Some(b) = bias {
            for (o, plane) in y.chunks_mut(shape.plane()).enumerate() {
                for v in plane {
                    *v += b[o];
                }
            }
        }
        return y;
    }
    let xp = g.pad_input(x);
    let mut yp = vec![T::ZERO; c_out * g.cols];
    let taps = g.taps();
    for ky in 0..k {
        for kx in 0..k {
            let tap = ky * k + kx;
            gemm(
                c_out,
                g.c_in,
                g.cols,
                kernel,
                tap,
                (g.c_in * taps, taps),
                &xp,
                ky * g.wp + kx,
                (g.plane, 1),
                if tap == 0 { T::ZERO } else { T::ONE },
                &mut yp,
                0,
                (g.cols, 1),
            );
        }
    }
    let mut y = vec![T::ZERO; c_out * g.h * g.w];
    for o in 0..c_out {
        let b = bias.map_or(T::ZERO, |b| b[o]);
        for row in 0..g.h {
            let src = &yp[o * g.cols + row * g.wp..][..g.w];
            let dst = &mut y[(o * g.h + row) * g.w..][..g.w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s + b;
            }
        }
    }
    y
}

/// Gradients of a convolution. Kernel and bias gradients are accumulated
/// into `d_kernel` / `d_bias`; the input gradient is returned.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    shape: Shape,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    dy: &[f64],
    d_kernel: &mut [f64],
    d_bias: Option<&mut [f64]>,
) -> Vec<f64> {
    let g = ConvGeom::new(shape, k);
    let xp = g.pad_input(x);
    // output gradient at the padded row pitch; the pad columns stay zero
    let mut dyp = vec![0.0; c_out * g.cols];
    for o in 0..c_out {
        for row in 0..g.h {
            let src = &dy[(o * g.h + row) * g.w..][..g.w];
            dyp[o * g.cols + row * g.wp..][..g.w].copy_from_slice(src);
        }
    }
    if let Some(db) = d_bias {
        for o in 0..c_out {
            db[o] += dy[o * g.h * g.w..(o + 1) * g.h * g.w].iter().sum::<f64>();
        }
    }
    let taps = g.taps();
    let mut dxp = vec![0.0; g.c_in * g.plane];
    for ky in 0..k {
        for kx in 0..k {
            let tap = ky * k + kx;
            let off = ky * g.wp + kx;
            // dK[:, :, tap] += dYp · Xtapᵀ
            gemm(
                c_out,
                g.cols,
                g.c_in,
                &dyp,
                0,
                (g.cols, 1),
                &xp,
                off,
                (1, g.plane),
                1.0,
                d_kernel,
                tap,
                (g.c_in * taps, taps),
            );
            // dXtap += K[:, :, tap]ᵀ · dYp
            gemm(
                g.c_in,
                c_out,
                g.cols,
                kernel,
                tap,
                (taps, g.c_in * taps),
                &dyp,
                0,
                (g.cols, 1),
                1.0,
                &mut dxp,
                off,
                (g.plane, 1),
            );
        }
    }
    if g.pad == 0 {
        return dxp;
    }
    let mut dx = vec![0.0; shape.len()];
    for c in 0..g.c_in {
        for y in 0..g.h {
            let src = c * g.plane + (y + g.pad) * g.wp + g.pad;
            dx[(c * g.h + y) * g.w..][..g.w].copy_from_slice(&dxp[src..src + g.w]);
        }
    }
    dx
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Saved state of an instance-norm call.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-channel normalisation over the spatial plane with affine `gamma`,
/// `beta`.
pub fn instance_norm_forward(
    x: &[f64],
    shape: Shape,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, NormCache) {
    let n = shape.plane();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; shape.channels];
    for c in 0..shape.channels {
        let xs = &x[c * n..(c + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        inv_std[c] = inv;
        for i in 0..n {
            let h = (xs[i] - mean) * inv;
            xhat[c * n + i] = h;
            y[c * n + i] = gamma[c] * h + beta[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Instance normalisation in place, without saving backward state.
pub fn instance_norm_inplace<T: Real>(x: &mut [T], shape: Shape, gamma: &[T], beta: &[T]) {
    let n = shape.plane();
    for c in 0..shape.channels {
        let xs = &mut x[c * n..(c + 1) * n];
        // statistics in f64 regardless of the storage type
        let mean = xs.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
        let var = xs
            .iter()
            .map(|v| (v.to_f64() - mean) * (v.to_f64() - mean))
            .sum::<f64>()
            / n as f64;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let scale = T::from_f64(gamma[c].to_f64() * inv);
        let shift = T::from_f64(beta[c].to_f64() - gamma[c].to_f64() * inv * mean);
        for v in xs {
            *v = *v * scale + shift;
        }
    }
}

pub fn instance_norm_backward(
    dy: &[f64],
    shape: Shape,
    gamma: &[f64],
    cache: &NormCache,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let n = shape.plane();
    let nf = n as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..shape.channels {
        let dys = &dy[c * n..(c + 1) * n];
        let xh = &cache.xhat[c * n..(c + 1) * n];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for i in 0..n {
            sum_dy += dys[i];
            sum_dy_xh += dys[i] * xh[i];
        }
        d_gamma[c] += sum_dy_xh;
        d_beta[c] += sum_dy;
        // in terms of dxhat = gamma·dy
        let g = gamma[c];
        let k = cache.inv_std[c] / nf;
        for i in 0..n {
            dx[c * n + i] = k * g * (nf * dys[i] - sum_dy - xh[i] * sum_dy_xh);
        }
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward_inplace(dy: &mut [f64], activated: &[f64]) {
    for (d, &a) in dy.iter_mut().zip(activated) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2×2 max pooling; returns the pooled map and, per output cell, the flat
/// input index of the winning (first maximal) element.
pub fn max_pool2_forward<T: Real>(x: &[T], shape: Shape) -> (Vec<T>, Vec<usize>) {
    let (h2, w2) = (shape.height / 2, shape.width / 2);
    let mut y = Vec::with_capacity(shape.channels * h2 * w2);
    let mut arg = Vec::with_capacity(y.capacity());
    for c in 0..shape.channels {
        for i in 0..h2 {
            for j in 0..w2 {
                let base = (c * shape.height + 2 * i) * shape.width + 2 * j;
                let cand = [base, base + 1, base + shape.width, base + shape.width + 1];
                let mut best = cand[0];
                for &idx in &cand[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward(dy: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &idx) in dy.iter().zip(argmax) {
        dx[idx] += g;
    }
    dx
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2_forward<T: Real>(x: &[T], shape: Shape) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let mut y = vec![T::ZERO; shape.channels * 4 * h * w];
    for c in 0..shape.channels {
        for i in 0..2 * h {
            let src = &x[(c * h + i / 2) * w..][..w];
            let dst = &mut y[(c * 2 * h + i) * 2 * w..][..2 * w];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[j / 2];
            }
        }
    }
    y
}

/// Gradient of [`upsample2_forward`]; `shape` is the low-resolution shape.
pub fn upsample2_backward(dy: &[f64], shape: Shape) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut dx = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        for i in 0..2 * h {
            let src = &dy[(c * 2 * h + i) * 2 * w..][..2 * w];
            let dst = &mut dx[(c * h + i / 2) * w..][..w];
            for (j, g) in src.iter().enumerate() {
                dst[j / 2] += g;
            }
        }
    }
    dx
}

/// Softmax over the class axis of `[classes][pixels]` logits.
pub fn softmax_channels(logits: &[f64], classes: usize) -> Vec<f64> {
    let n = logits.len() / classes;
    let mut p = vec![0.0; logits.len()];
    for i in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..classes {
            mx = mx.max(logits[c * n + i]);
        }
        let mut z = 0.0;
        for c in 0..classes {
            let e = (logits[c * n + i] - mx).exp();
            p[c * n + i] = e;
            z += e;
        }
        for c in 0..classes {
            p[c * n + i] /= z;
        }
    }
    p
}

/// Explicit patch-matrix convolution, cheaper than per-tap GEMMs when the
/// input has very few channels.
fn conv2d_im2col<T: Real>(x: &[T], shape: Shape, kernel: &[T], c_out: usize, k: usize) -> Vec<T> {
    let (h, w) = (shape.height, shape.width);
    let pad = k / 2;
    let rows_k = shape.channels * k * k;
    let n = h * w;
    let mut col = vec![T::ZERO; rows_k * n];
    for c in 0..shape.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &x[(c * h + sy as usize) * w..][..w];
                    let d = &mut dst[y * w..][..w];
                    let lo = pad.saturating_sub(kx);
                    let hi = (w + pad).saturating_sub(kx).min(w);
                    for xx in lo..hi {
                        d[xx] = src[xx + kx - pad];
                    }
                }
            }
        }
    }
    let mut y = vec![T::ZERO; c_out * n];
    gemm(
        c_out,
        rows_k,
        n,
        kernel,
        0,
        (rows_k, 1),
        &col,
        0,
        (n, 1),
        T::ZERO,
        &mut y,
        0,
        (n, 1),
    );
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_by_one_kernel() {
        let shape = Shape::new(1, 3, 4);
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 1.0).collect();
        let y = conv2d_forward(&x, shape, &[1.0], None, 1, 1);
        assert_eq!(y, x);
        // 3×3 kernel with only the centre tap set
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv2d_forward(&x, shape, &k, None, 1, 3), x);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let shape = Shape::new(2, 4, 4);
        let x: Vec<f64> = (0..32).map(|v| ((v * 7) % 11) as f64).collect();
        let (y, arg) = max_pool2_forward(&x, shape);
        assert_eq!(y.len(), 8);
        for (v, &i) in y.iter().zip(&arg) {
            assert_eq!(*v, x[i]);
        }
        let up = upsample2_forward(&y, Shape::new(2, 2, 2));
        assert_eq!(up.len(), 32);
        let back = upsample2_backward(&vec![1.0; 32], Shape::new(2, 2, 2));
        assert!(back.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn softmax_sums_to_one() {
        let logits = [1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 10.0, -10.0];
        let p = softmax_channels(&logits, 4);
        for i in 0..2 {
            let s: f64 = (0..4).map(|c| p[c * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}

