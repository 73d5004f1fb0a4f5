//! Minimal dense/convolutional layer kit with hand-written backward passes.
//!
//! Everything is f64 and deterministic: forward passes are pure functions of
//! parameters and inputs, backward passes return gradient containers that
//! mirror the parameter structs. Convolutions go through im2col so the heavy
//! lifting is a single matrix product per layer.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Splitmix64-style mixing used to derive independent sub-seeds from one
/// root seed, so every randomized stage is reproducible from a single value.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut z = root ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn seeded_rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(root, parts))
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Fully-connected layer, weights `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, he_std(in_dim)).expect("valid std");
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(rng));
        Dense {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    /// `x: (N, in) -> (N, out)`
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        for mut row in y.rows_mut() {
            row += &self.b;
        }
        y
    }

    /// Returns parameter gradients and the gradient w.r.t. `x`.
    pub fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let gw = gy.t().dot(x);
        let gb = gy.sum_axis(ndarray::Axis(0));
        let gx = gy.dot(&self.w);
        (DenseGrad { w: gw, b: gb }, gx)
    }

    pub fn grad_zeros(&self) -> DenseGrad {
        DenseGrad {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

/// 2-D convolution, weights `(out_c, in_c, k, k)`, square kernel,
/// zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

impl Conv2d {
    pub fn init(
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let normal = Normal::new(0.0, he_std(in_c * k * k)).expect("valid std");
        let w = Array4::from_shape_fn((out_c, in_c, k, k), |_| normal.sample(rng));
        Conv2d {
            w,
            b: Array1::zeros(out_c),
            stride,
            pad,
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn out_size(&self, in_size: usize) -> usize {
        (in_size + 2 * self.pad - self.kernel()) / self.stride + 1
    }

    /// `x: (N, C, H, W) -> (N, OC, OH, OW)`
    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, _c, h, w) = dims4(x);
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let oc = self.w.shape()[0];
        let cols = self.im2col(x);
        let wf = self.weight_matrix();
        let yf = cols.dot(&wf.t());
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for o in 0..oc {
                let bias = self.b[o];
                for i in 0..oh {
                    for j in 0..ow {
                        out[[ni, o, i, j]] = yf[[(ni * oh + i) * ow + j, o]] + bias;
                    }
                }
            }
        }
        out
    }

    /// Backward pass. `x` is the forward input, `gy` the output gradient.
    pub fn backward(&self, x: &Array4<f64>, gy: &Array4<f64>) -> (ConvGrad, Array4<f64>) {
        let (n, c, h, w) = dims4(x);
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let oc = self.w.shape()[0];
        let k = self.kernel();

        let cols = self.im2col(x);
        let mut gyf = Array2::zeros((n * oh * ow, oc));
        let mut gb = Array1::zeros(oc);
        for ni in 0..n {
            for o in 0..oc {
                let mut acc = 0.0;
                for i in 0..oh {
                    for j in 0..ow {
                        let g = gy[[ni, o, i, j]];
                        gyf[[(ni * oh + i) * ow + j, o]] = g;
                        acc += g;
                    }
                }
                gb[o] += acc;
            }
        }
        let wf = self.weight_matrix();
        let gwf = gyf.t().dot(&cols);
        let gw = Array4::from_shape_vec((oc, c, k, k), gwf.into_raw_vec_and_offset().0)
            .expect("gw shape");
        let gcols = gyf.dot(&wf);
        let gx = self.col2im(&gcols, n, c, h, w);
        (ConvGrad { w: gw, b: gb }, gx)
    }

    pub fn grad_zeros(&self) -> ConvGrad {
        ConvGrad {
            w: Array4::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (oc, c, k, _) = dims4(&self.w);
        self.w
            .to_shape((oc, c * k * k))
            .expect("weight reshape")
            .to_owned()
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = dims4(x);
        let k = self.kernel();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let mut cols = Array2::zeros((n * oh * ow, c * k * k));
        let (s, p) = (self.stride as isize, self.pad as isize);
        for ni in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    let row = (ni * oh + i) * ow + j;
                    let mut col = 0;
                    for ci in 0..c {
                        for ki in 0..k {
                            let y = i as isize * s + ki as isize - p;
                            for kj in 0..k {
                                let xx = j as isize * s + kj as isize - p;
                                if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                                    cols[[row, col]] = x[[ni, ci, y as usize, xx as usize]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
        let k = self.kernel();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let mut gx = Array4::zeros((n, c, h, w));
        let (s, p) = (self.stride as isize, self.pad as isize);
        for ni in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    let row = (ni * oh + i) * ow + j;
                    let mut col = 0;
                    for ci in 0..c {
                        for ki in 0..k {
                            let y = i as isize * s + ki as isize - p;
                            for kj in 0..k {
                                let xx = j as isize * s + kj as isize - p;
                                if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                                    gx[[ni, ci, y as usize, xx as usize]] += gcols[[row, col]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub fn dims4<T>(a: &ndarray::Array4<T>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = dims4(x);
    let mut out = Array4::zeros((n, c, 2 * h, 2 * w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x[[ni, ci, i, j]];
                    out[[ni, ci, 2 * i, 2 * j]] = v;
                    out[[ni, ci, 2 * i + 1, 2 * j]] = v;
                    out[[ni, ci, 2 * i, 2 * j + 1]] = v;
                    out[[ni, ci, 2 * i + 1, 2 * j + 1]] = v;
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(gy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = dims4(gy);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    gx[[ni, ci, i, j]] = gy[[ni, ci, 2 * i, 2 * j]]
                        + gy[[ni, ci, 2 * i + 1, 2 * j]]
                        + gy[[ni, ci, 2 * i, 2 * j + 1]]
                        + gy[[ni, ci, 2 * i + 1, 2 * j + 1]];
                }
            }
        }
    }
    gx
}

/// 2x2 max pooling with stride 1. The window is clipped at the lower/right
/// border so the spatial size is preserved. Returns the pooled map and the
/// argmax code (2*di + dj) per output cell for the backward pass.
pub fn maxpool_s1(x: &Array4<f64>) -> (Array4<f64>, Array4<u8>) {
    let (n, c, h, w) = dims4(x);
    let mut out = Array4::zeros((n, c, h, w));
    let mut arg = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut best = f64::NEG_INFINITY;
                    let mut code = 0u8;
                    for di in 0..2usize {
                        if i + di >= h {
                            continue;
                        }
                        for dj in 0..2usize {
                            if j + dj >= w {
                                continue;
                            }
                            let v = x[[ni, ci, i + di, j + dj]];
                            if v > best {
                                best = v;
                                code = (2 * di + dj) as u8;
                            }
                        }
                    }
                    out[[ni, ci, i, j]] = best;
                    arg[[ni, ci, i, j]] = code;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_s1_backward(gy: &Array4<f64>, arg: &Array4<u8>) -> Array4<f64> {
    let (n, c, h, w) = dims4(gy);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let code = arg[[ni, ci, i, j]] as usize;
                    let (di, dj) = (code / 2, code % 2);
                    gx[[ni, ci, i + di, j + dj]] += gy[[ni, ci, i, j]];
                }
            }
        }
    }
    gx
}

/// 2x2 max pooling with stride 2 (halves the spatial size).
pub fn maxpool_s2(x: &Array4<f64>) -> (Array4<f64>, Array4<u8>) {
    let (n, c, h, w) = dims4(x);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((n, c, oh, ow));
    let mut arg = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut code = 0u8;
                    for di in 0..2usize {
                        for dj in 0..2usize {
                            let v = x[[ni, ci, 2 * i + di, 2 * j + dj]];
                            if v > best {
                                best = v;
                                code = (2 * di + dj) as u8;
                            }
                        }
                    }
                    out[[ni, ci, i, j]] = best;
                    arg[[ni, ci, i, j]] = code;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_s2_backward(gy: &Array4<f64>, arg: &Array4<u8>, h: usize, w: usize) -> Array4<f64> {
    let (n, c, oh, ow) = dims4(gy);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let code = arg[[ni, ci, i, j]] as usize;
                    let (di, dj) = (code / 2, code % 2);
                    gx[[ni, ci, 2 * i + di, 2 * j + dj]] += gy[[ni, ci, i, j]];
                }
            }
        }
    }
    gx
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    gy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    gy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    gx
}

pub fn sigmoid<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward through sigmoid given the forward *output* `y`.
pub fn sigmoid_backward<D: ndarray::Dimension>(
    y: &ndarray::Array<f64, D>,
    gy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &v| {
        *g *= v * (1.0 - v);
    });
    gx
}

/// Per-pixel softmax over the channel axis of `(N, C, H, W)`.
pub fn channel_softmax(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = dims4(x);
    let mut out = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut m = f64::NEG_INFINITY;
                for ci in 0..c {
                    m = m.max(x[[ni, ci, i, j]]);
                }
                let mut z = 0.0;
                for ci in 0..c {
                    let e = (x[[ni, ci, i, j]] - m).exp();
                    out[[ni, ci, i, j]] = e;
                    z += e;
                }
                for ci in 0..c {
                    out[[ni, ci, i, j]] /= z;
                }
            }
        }
    }
    out
}

/// Backward through the channel softmax given its output `p`.
pub fn channel_softmax_backward(p: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = dims4(p);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut dot = 0.0;
                for ci in 0..c {
                    dot += gy[[ni, ci, i, j]] * p[[ni, ci, i, j]];
                }
                for ci in 0..c {
                    gx[[ni, ci, i, j]] = p[[ni, ci, i, j]] * (gy[[ni, ci, i, j]] - dot);
                }
            }
        }
    }
    gx
}

/// Softmax cross-entropy over class logits `(N, K)` with integer labels.
/// Returns the mean loss and the logit gradient.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(n, labels.len(), "label count must match batch");
    let mut loss = 0.0;
    let mut glogits = Array2::zeros((n, k));
    for ni in 0..n {
        let row = logits.row(ni);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let logz = z.ln() + m;
        loss += logz - row[labels[ni]];
        for ki in 0..k {
            let p = (row[ki] - logz).exp();
            glogits[[ni, ki]] = (p - if ki == labels[ni] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, glogits)
}

/// Adaptive-moment optimizer over flat parameter blocks. Block order is
/// fixed by the model's `blocks` implementation, so optimizer state can be
/// checkpointed and restored positionally.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "block count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (bi, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            assert_eq!(p.len(), g.len(), "block {bi} length mismatch");
            let m = &mut self.m[bi];
            let v = &mut self.v[bi];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Returns a uniform sample in [lo, hi) from the given rng.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.gen_range(lo..hi)
}
