//! Generator, discriminator and perceptual feature network.
//!
//! The generator encodes the 17-dim utility input with two fully-connected
//! layers, reshapes to a 4x4 feature map and upsamples through deconvolution
//! blocks (nearest 2x upsample + k=5 conv, followed by a k=3 conv). A
//! stride-1 max pool precedes the two output heads: a sigmoid image head and
//! a per-pixel 2-way softmax mask head. The discriminator is the DCGAN-style
//! mirror: stride-2 k=4 convolutions with leaky activations and a sigmoid
//! scalar head. The perceptual network is a small identity classifier whose
//! tapped activations drive the perceptual loss and whose penultimate
//! features drive FID.

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, channel_softmax, channel_softmax_backward, leaky_relu, leaky_relu_backward, maxpool_s1,
    maxpool_s1_backward, maxpool_s2, maxpool_s2_backward, relu, relu_backward, seeded_rng, sigmoid,
    sigmoid_backward, softmax_cross_entropy, upsample2x, upsample2x_backward, Conv2d, ConvGrad,
    Dense, DenseGrad,
};
use crate::types::{
    AttributeVector, FaceRecord, ImageTensor, LandmarkVector, MaskTensor, INPUT_DIM,
};

/// Spatial side of the first feature map the FC encoder produces.
pub const BASE_SIZE: usize = 4;

fn log2_exact(mut v: usize) -> Option<usize> {
    if v == 0 || !v.is_power_of_two() {
        return None;
    }
    let mut n = 0;
    while v > 1 {
        v >>= 1;
        n += 1;
    }
    Some(n)
}

/// Generator architecture description. `channels[0]` is the channel count of
/// the reshaped 4x4 map; every following entry is the output channel count of
/// one deconvolution block, so the output side is `4 * 2^(channels.len()-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_dim: usize,
    pub fc_width: usize,
    pub channels: Vec<usize>,
}

impl GeneratorConfig {
    pub fn new(fc_width: usize, channels: Vec<usize>) -> Result<Self> {
        let cfg = GeneratorConfig {
            input_dim: INPUT_DIM,
            fc_width,
            channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Preset schedule for a given output side. Full scale (128) uses the
    /// 1024-wide encoder and the 512..16 channel ladder; smaller scales
    /// shrink proportionally.
    pub fn for_scale(scale: usize) -> Result<Self> {
        let n_blocks = log2_exact(scale / BASE_SIZE)
            .filter(|_| scale % BASE_SIZE == 0 && scale >= 8)
            .ok_or_else(|| {
                Error::Config(format!("scale {scale} must be a power of two, at least 8"))
            })?;
        let c0 = 4 * scale;
        let channels: Vec<usize> = (0..=n_blocks).map(|i| c0 >> i).collect();
        Self::new(2 * c0, channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != INPUT_DIM {
            return Err(Error::Config(format!(
                "generator input dim must be {INPUT_DIM}, got {}",
                self.input_dim
            )));
        }
        if self.channels.len() < 2 || self.channels.iter().any(|&c| c == 0) || self.fc_width == 0 {
            return Err(Error::Config(
                "generator needs a nonzero fc width and at least one deconv block".into(),
            ));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        BASE_SIZE << (self.channels.len() - 1)
    }

    /// The (side, channels) progression of feature maps, from the reshaped
    /// 4x4 map to the final block output.
    pub fn shape_trace(&self) -> Vec<(usize, usize)> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| (BASE_SIZE << i, c))
            .collect()
    }
}

/// One upsampling stage: nearest 2x upsample, k=5 convolution, then a k=3
/// convolution at the new resolution.
#[derive(Debug, Clone)]
pub struct DeconvBlock {
    pub conv5: Conv2d,
    pub conv3: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DeconvBlockGrad {
    pub conv5: ConvGrad,
    pub conv3: ConvGrad,
}

/// Learnable generator parameters.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub cfg: GeneratorConfig,
    pub fc1: Dense,
    pub fc2: Dense,
    pub blocks: Vec<DeconvBlock>,
    pub head_image: Conv2d,
    pub head_mask: Conv2d,
}

#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub fc1: DenseGrad,
    pub fc2: DenseGrad,
    pub blocks: Vec<DeconvBlockGrad>,
    pub head_image: ConvGrad,
    pub head_mask: ConvGrad,
}

/// Intermediate activations kept for the backward pass.
pub struct GeneratorCache {
    x: Array2<f64>,
    pre1: Array2<f64>,
    a1: Array2<f64>,
    pre2: Array2<f64>,
    // per block: (upsampled input, conv5 pre-act, conv5 act, conv3 pre-act, block output)
    block_io: Vec<(
        Array4<f64>,
        Array4<f64>,
        Array4<f64>,
        Array4<f64>,
        Array4<f64>,
    )>,
    pool_arg: Array4<u8>,
    pooled: Array4<f64>,
    pub image: Array4<f64>,
    pub mask: Array4<f64>,
}

impl GeneratorParams {
    pub fn init(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed, &[0x67]);
        let c0 = cfg.channels[0];
        let fc1 = Dense::init(cfg.fc_width, cfg.input_dim, &mut rng);
        let fc2 = Dense::init(c0 * BASE_SIZE * BASE_SIZE, cfg.fc_width, &mut rng);
        let mut blocks = Vec::new();
        for w in cfg.channels.windows(2) {
            let (cin, cout) = (w[0], w[1]);
            blocks.push(DeconvBlock {
                conv5: Conv2d::init(cout, cin, 5, 1, 2, &mut rng),
                conv3: Conv2d::init(cout, cout, 3, 1, 1, &mut rng),
            });
        }
        let clast = *cfg.channels.last().expect("non-empty channels");
        let head_image = Conv2d::init(3, clast, 3, 1, 1, &mut rng);
        let head_mask = Conv2d::init(2, clast, 3, 1, 1, &mut rng);
        Ok(GeneratorParams {
            cfg,
            fc1,
            fc2,
            blocks,
            head_image,
            head_mask,
        })
    }

    /// Zero-weight instance, useful for contract tests: every output pixel is
    /// the activation of a zero logit.
    pub fn zeros(cfg: GeneratorConfig) -> Result<Self> {
        let mut p = Self::init(cfg, 0)?;
        for b in p.blocks_mut() {
            b.fill(0.0);
        }
        Ok(p)
    }

    pub fn output_size(&self) -> usize {
        self.cfg.output_size()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Batched forward pass. `x` rows are concatenated (attribute, landmark)
    /// vectors. Returns images `(N, 3, S, S)` in [0,1], mask probabilities
    /// `(N, 2, S, S)` and the cache for backprop.
    pub fn forward(&self, x: &Array2<f64>) -> Result<GeneratorCache> {
        if x.shape()[1] != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "generator input must have {} columns, got {}",
                self.cfg.input_dim,
                x.shape()[1]
            )));
        }
        let n = x.shape()[0];
        let pre1 = self.fc1.forward(x);
        let a1 = relu(&pre1);
        let pre2 = self.fc2.forward(&a1);
        let a2 = relu(&pre2);
        let c0 = self.cfg.channels[0];
        let h0 = a2
            .to_shape((n, c0, BASE_SIZE, BASE_SIZE))
            .expect("fc2 width matches 4x4 map")
            .to_owned();

        let mut h = h0;
        let mut block_io = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let up = upsample2x(&h);
            let c5pre = block.conv5.forward(&up);
            let c5 = relu(&c5pre);
            let c3pre = block.conv3.forward(&c5);
            let out = relu(&c3pre);
            block_io.push((up, c5pre, c5, c3pre, out.clone()));
            h = out;
        }
        let (pooled, pool_arg) = maxpool_s1(&h);
        let image = sigmoid(&self.head_image.forward(&pooled));
        let mask = channel_softmax(&self.head_mask.forward(&pooled));
        Ok(GeneratorCache {
            x: x.clone(),
            pre1,
            a1,
            pre2,
            block_io,
            pool_arg,
            pooled,
            image,
            mask,
        })
    }

    /// Backward pass from gradients w.r.t. the image output and the mask
    /// probabilities.
    pub fn backward(
        &self,
        cache: &GeneratorCache,
        g_image: &Array4<f64>,
        g_mask: &Array4<f64>,
    ) -> GeneratorGrads {
        let g_img_logits = sigmoid_backward(&cache.image, g_image);
        let g_mask_logits = channel_softmax_backward(&cache.mask, g_mask);
        let (g_head_image, gp1) = self.head_image.backward(&cache.pooled, &g_img_logits);
        let (g_head_mask, gp2) = self.head_mask.backward(&cache.pooled, &g_mask_logits);
        let g_pooled = gp1 + gp2;
        let mut g = maxpool_s1_backward(&g_pooled, &cache.pool_arg);

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, (up, c5pre, c5, c3pre, _)) in
            self.blocks.iter().zip(cache.block_io.iter()).rev()
        {
            let g_c3pre = relu_backward(c3pre, &g);
            let (g_conv3, g_c5) = block.conv3.backward(c5, &g_c3pre);
            let g_c5pre = relu_backward(c5pre, &g_c5);
            let (g_conv5, g_up) = block.conv5.backward(up, &g_c5pre);
            g = upsample2x_backward(&g_up);
            block_grads.push(DeconvBlockGrad {
                conv5: g_conv5,
                conv3: g_conv3,
            });
        }
        block_grads.reverse();

        let n = cache.x.shape()[0];
        let c0 = self.cfg.channels[0];
        let g_a2 = g
            .to_shape((n, c0 * BASE_SIZE * BASE_SIZE))
            .expect("flatten")
            .to_owned();
        let g_pre2 = relu_backward(&cache.pre2, &g_a2);
        let (g_fc2, g_a1) = self.fc2.backward(&cache.a1, &g_pre2);
        let g_pre1 = relu_backward(&cache.pre1, &g_a1);
        let (g_fc1, _) = self.fc1.backward(&cache.x, &g_pre1);

        GeneratorGrads {
            fc1: g_fc1,
            fc2: g_fc2,
            blocks: block_grads,
            head_image: g_head_image,
            head_mask: g_head_mask,
        }
    }

    pub fn grad_zeros(&self) -> GeneratorGrads {
        GeneratorGrads {
            fc1: self.fc1.grad_zeros(),
            fc2: self.fc2.grad_zeros(),
            blocks: self
                .blocks
                .iter()
                .map(|b| DeconvBlockGrad {
                    conv5: b.conv5.grad_zeros(),
                    conv3: b.conv3.grad_zeros(),
                })
                .collect(),
            head_image: self.head_image.grad_zeros(),
            head_mask: self.head_mask.grad_zeros(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.fc1.w.as_slice().unwrap(),
            self.fc1.b.as_slice().unwrap(),
            self.fc2.w.as_slice().unwrap(),
            self.fc2.b.as_slice().unwrap(),
        ];
        for b in &self.blocks {
            out.push(b.conv5.w.as_slice().unwrap());
            out.push(b.conv5.b.as_slice().unwrap());
            out.push(b.conv3.w.as_slice().unwrap());
            out.push(b.conv3.b.as_slice().unwrap());
        }
        out.push(self.head_image.w.as_slice().unwrap());
        out.push(self.head_image.b.as_slice().unwrap());
        out.push(self.head_mask.w.as_slice().unwrap());
        out.push(self.head_mask.b.as_slice().unwrap());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.fc1.w.as_slice_mut().unwrap(),
            self.fc1.b.as_slice_mut().unwrap(),
            self.fc2.w.as_slice_mut().unwrap(),
            self.fc2.b.as_slice_mut().unwrap(),
        ];
        for b in &mut self.blocks {
            out.push(b.conv5.w.as_slice_mut().unwrap());
            out.push(b.conv5.b.as_slice_mut().unwrap());
            out.push(b.conv3.w.as_slice_mut().unwrap());
            out.push(b.conv3.b.as_slice_mut().unwrap());
        }
        out.push(self.head_image.w.as_slice_mut().unwrap());
        out.push(self.head_image.b.as_slice_mut().unwrap());
        out.push(self.head_mask.w.as_slice_mut().unwrap());
        out.push(self.head_mask.b.as_slice_mut().unwrap());
        out
    }
}

impl GeneratorGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.fc1.w.as_slice().unwrap(),
            self.fc1.b.as_slice().unwrap(),
            self.fc2.w.as_slice().unwrap(),
            self.fc2.b.as_slice().unwrap(),
        ];
        for b in &self.blocks {
            out.push(b.conv5.w.as_slice().unwrap());
            out.push(b.conv5.b.as_slice().unwrap());
            out.push(b.conv3.w.as_slice().unwrap());
            out.push(b.conv3.b.as_slice().unwrap());
        }
        out.push(self.head_image.w.as_slice().unwrap());
        out.push(self.head_image.b.as_slice().unwrap());
        out.push(self.head_mask.w.as_slice().unwrap());
        out.push(self.head_mask.b.as_slice().unwrap());
        out
    }

    /// Adds `scale * other` into self, block by block.
    pub fn accumulate(&mut self, other: &GeneratorGrads, scale: f64) {
        fn acc2(a: &mut Array2<f64>, b: &Array2<f64>, s: f64) {
            a.zip_mut_with(b, |x, y| *x += s * y);
        }
        fn acc1(a: &mut Array1<f64>, b: &Array1<f64>, s: f64) {
            a.zip_mut_with(b, |x, y| *x += s * y);
        }
        fn acc4(a: &mut Array4<f64>, b: &Array4<f64>, s: f64) {
            a.zip_mut_with(b, |x, y| *x += s * y);
        }
        acc2(&mut self.fc1.w, &other.fc1.w, scale);
        acc1(&mut self.fc1.b, &other.fc1.b, scale);
        acc2(&mut self.fc2.w, &other.fc2.w, scale);
        acc1(&mut self.fc2.b, &other.fc2.b, scale);
        for (a, b) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            acc4(&mut a.conv5.w, &b.conv5.w, scale);
            acc1(&mut a.conv5.b, &b.conv5.b, scale);
            acc4(&mut a.conv3.w, &b.conv3.w, scale);
            acc1(&mut a.conv3.b, &b.conv3.b, scale);
        }
        acc4(&mut self.head_image.w, &other.head_image.w, scale);
        acc1(&mut self.head_image.b, &other.head_image.b, scale);
        acc4(&mut self.head_mask.w, &other.head_mask.w, scale);
        acc1(&mut self.head_mask.b, &other.head_mask.b, scale);
    }
}

/// Runs the generator on a single utility vector pair and wraps the outputs
/// in domain types.
pub fn generator_forward(
    attributes: &AttributeVector,
    landmarks: &LandmarkVector,
    params: &GeneratorParams,
) -> Result<(ImageTensor, MaskTensor)> {
    let mut x = Array2::zeros((1, INPUT_DIM));
    for (i, v) in attributes
        .as_array()
        .iter()
        .chain(landmarks.flat().iter())
        .enumerate()
    {
        x[[0, i]] = *v;
    }
    let cache = params.forward(&x)?;
    cache_outputs(&cache)
}

/// Converts first-batch-entry generator outputs into (image, mask) domain types.
pub fn cache_outputs(cache: &GeneratorCache) -> Result<(ImageTensor, MaskTensor)> {
    let s = cache.image.shape()[2];
    let mut chw = Array3::zeros((3, s, s));
    for c in 0..3 {
        for i in 0..s {
            for j in 0..s {
                chw[[c, i, j]] = cache.image[[0, c, i, j]];
            }
        }
    }
    let image = ImageTensor::from_chw(&chw)?;
    let mut probs = Array3::zeros((s, s, 2));
    for i in 0..s {
        for j in 0..s {
            probs[[i, j, 0]] = cache.mask[[0, 0, i, j]];
            probs[[i, j, 1]] = cache.mask[[0, 1, i, j]];
        }
    }
    let mask = MaskTensor::probabilities(probs)?;
    Ok((image, mask))
}

/// Discriminator architecture: each entry of `channels` is one stride-2 k=4
/// convolution, halving the spatial side from `input_size` down to 4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn for_scale(scale: usize) -> Result<Self> {
        let n = log2_exact(scale / BASE_SIZE)
            .filter(|_| scale % BASE_SIZE == 0 && scale >= 8)
            .ok_or_else(|| {
                Error::Config(format!("scale {scale} must be a power of two, at least 8"))
            })?;
        let channels: Vec<usize> = (0..n).map(|i| (16usize << i).min(256)).collect();
        Ok(DiscriminatorConfig {
            input_size: scale,
            channels,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("discriminator needs conv channels".into()));
        }
        if self.input_size != BASE_SIZE << n {
            return Err(Error::Config(format!(
                "discriminator input {} inconsistent with {} conv stages",
                self.input_size, n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub cfg: DiscriminatorConfig,
    pub convs: Vec<Conv2d>,
    pub head: Dense,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub convs: Vec<ConvGrad>,
    pub head: DenseGrad,
}

pub struct DiscriminatorCache {
    // per conv: (input, pre-activation)
    conv_io: Vec<(Array4<f64>, Array4<f64>)>,
    flat: Array2<f64>,
    pub prob: Array1<f64>,
}

impl DiscriminatorParams {
    pub fn init(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed, &[0xd1]);
        let mut convs = Vec::new();
        let mut cin = 3;
        for &cout in &cfg.channels {
            convs.push(Conv2d::init(cout, cin, 4, 2, 1, &mut rng));
            cin = cout;
        }
        let head = Dense::init(1, cin * BASE_SIZE * BASE_SIZE, &mut rng);
        Ok(DiscriminatorParams { cfg, convs, head })
    }

    pub fn zeros(cfg: DiscriminatorConfig) -> Result<Self> {
        let mut p = Self::init(cfg, 0)?;
        for b in p.blocks_mut() {
            b.fill(0.0);
        }
        Ok(p)
    }

    /// `x: (N, 3, S, S)` -> per-sample probability of being a real face.
    pub fn forward(&self, x: &Array4<f64>) -> Result<DiscriminatorCache> {
        let s = self.cfg.input_size;
        let shape = x.shape();
        if shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::Shape(format!(
                "discriminator expects (N, 3, {s}, {s}), got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut h = x.clone();
        let mut conv_io = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(&h);
            let act = leaky_relu(&pre);
            conv_io.push((h, pre));
            h = act;
        }
        let clast = *self.cfg.channels.last().expect("non-empty");
        let flat = h
            .to_shape((n, clast * BASE_SIZE * BASE_SIZE))
            .expect("flatten")
            .to_owned();
        let logit = self.head.forward(&flat);
        let prob = Array1::from_iter(logit.column(0).iter().map(|v| 1.0 / (1.0 + (-v).exp())));
        Ok(DiscriminatorCache {
            conv_io,
            flat,
            prob,
        })
    }

    /// Backward pass from per-sample probability gradients. Returns parameter
    /// gradients and the gradient w.r.t. the input images.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        g_prob: &Array1<f64>,
    ) -> (DiscriminatorGrads, Array4<f64>) {
        let n = g_prob.len();
        let mut g_logit = Array2::zeros((n, 1));
        for i in 0..n {
            let p = cache.prob[i];
            g_logit[[i, 0]] = g_prob[i] * p * (1.0 - p);
        }
        let (g_head, g_flat) = self.head.backward(&cache.flat, &g_logit);
        let clast = *self.cfg.channels.last().expect("non-empty");
        let mut g = g_flat
            .to_shape((n, clast, BASE_SIZE, BASE_SIZE))
            .expect("unflatten")
            .to_owned();
        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for (conv, (input, pre)) in self.convs.iter().zip(cache.conv_io.iter()).rev() {
            let g_pre = leaky_relu_backward(pre, &g);
            let (gc, gx) = conv.backward(input, &g_pre);
            conv_grads.push(gc);
            g = gx;
        }
        conv_grads.reverse();
        (
            DiscriminatorGrads {
                convs: conv_grads,
                head: g_head,
            },
            g,
        )
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(c.w.as_slice().unwrap());
            out.push(c.b.as_slice().unwrap());
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(c.w.as_slice_mut().unwrap());
            out.push(c.b.as_slice_mut().unwrap());
        }
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(self.head.b.as_slice_mut().unwrap());
        out
    }
}

impl DiscriminatorGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(c.w.as_slice().unwrap());
            out.push(c.b.as_slice().unwrap());
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out
    }
}

/// Scores a single image. The result is clamped into the open interval
/// (0, 1); loss functions apply their own probability clipping.
pub fn discriminator_forward(image: &ImageTensor, params: &DiscriminatorParams) -> Result<f64> {
    let s = params.cfg.input_size;
    if image.height() != s || image.width() != s {
        return Err(Error::Shape(format!(
            "discriminator expects {s}x{s} input, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    let chw = image.to_chw();
    let mut x = Array4::zeros((1, 3, s, s));
    for c in 0..3 {
        for i in 0..s {
            for j in 0..s {
                x[[0, c, i, j]] = chw[[c, i, j]];
            }
        }
    }
    let cache = params.forward(&x)?;
    Ok(cache.prob[0].clamp(1e-12, 1.0 - 1e-12))
}

/// Perceptual / identity network architecture: `channels` lists the output
/// channels of k=3 conv blocks, each followed by relu and a stride-2 max
/// pool. A global average pool and a dense classifier head sit on top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualNetConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub n_classes: usize,
}

impl PerceptualNetConfig {
    pub fn for_scale(scale: usize, n_classes: usize) -> Result<Self> {
        let n = log2_exact(scale / BASE_SIZE)
            .filter(|_| scale % BASE_SIZE == 0 && scale >= 8)
            .ok_or_else(|| {
                Error::Config(format!("scale {scale} must be a power of two, at least 8"))
            })?;
        let channels: Vec<usize> = (0..n.max(1)).map(|i| (8usize << i).min(64)).collect();
        Ok(PerceptualNetConfig {
            input_size: scale,
            channels,
            n_classes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "perceptual net needs conv channels and classes".into(),
            ));
        }
        if self.input_size % (1 << n) != 0 || self.input_size >> n == 0 {
            return Err(Error::Config(format!(
                "perceptual input {} cannot be pooled {} times",
                self.input_size, n
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("non-empty")
    }

    /// Default tapped layer set: the first four conv blocks (or all of them
    /// when the network is shallower).
    pub fn default_layer_set(&self) -> Vec<usize> {
        (0..self.channels.len().min(4)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PerceptualNet {
    pub cfg: PerceptualNetConfig,
    pub convs: Vec<Conv2d>,
    pub classifier: Dense,
}

pub struct PerceptualCache {
    // per block: (input, pre-activation, relu output, pool argmax, pooled output)
    block_io: Vec<(
        Array4<f64>,
        Array4<f64>,
        Array4<f64>,
        Array4<u8>,
        Array4<f64>,
    )>,
    /// Global-average-pooled features `(N, C_last)` — the penultimate layer.
    pub features: Array2<f64>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct PerceptualGrads {
    pub convs: Vec<ConvGrad>,
    pub classifier: DenseGrad,
}

impl PerceptualNet {
    pub fn init(cfg: PerceptualNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed, &[0xfe]);
        let mut convs = Vec::new();
        let mut cin = 3;
        for &cout in &cfg.channels {
            convs.push(Conv2d::init(cout, cin, 3, 1, 1, &mut rng));
            cin = cout;
        }
        let classifier = Dense::init(cfg.n_classes, cin, &mut rng);
        Ok(PerceptualNet {
            cfg,
            convs,
            classifier,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.convs.len()
    }

    /// `x: (N, 3, S, S)` forward with full cache.
    pub fn forward(&self, x: &Array4<f64>) -> Result<PerceptualCache> {
        let s = self.cfg.input_size;
        let shape = x.shape();
        if shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::Shape(format!(
                "perceptual net expects (N, 3, {s}, {s}), got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut h = x.clone();
        let mut block_io = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(&h);
            let act = relu(&pre);
            let (pooled, arg) = maxpool_s2(&act);
            block_io.push((h, pre, act, arg, pooled.clone()));
            h = pooled;
        }
        let (_, c, hh, ww) = nn::dims4(&h);
        let norm = 1.0 / (hh * ww) as f64;
        let mut features = Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = 0.0;
                for i in 0..hh {
                    for j in 0..ww {
                        acc += h[[ni, ci, i, j]];
                    }
                }
                features[[ni, ci]] = acc * norm;
            }
        }
        let logits = self.classifier.forward(&features);
        Ok(PerceptualCache {
            block_io,
            features,
            logits,
        })
    }

    /// Activations after each tapped block (post pool), for the perceptual loss.
    pub fn tapped(&self, cache: &PerceptualCache, layer_set: &[usize]) -> Vec<Array4<f64>> {
        layer_set
            .iter()
            .map(|&l| cache.block_io[l].4.clone())
            .collect()
    }

    /// Gradient w.r.t. the network input given gradients at tapped block
    /// outputs (aligned with `layer_set`). Used by the perceptual loss,
    /// where parameters stay frozen.
    pub fn backward_input(
        &self,
        cache: &PerceptualCache,
        layer_set: &[usize],
        tap_grads: &[Array4<f64>],
    ) -> Array4<f64> {
        assert_eq!(layer_set.len(), tap_grads.len());
        let n = cache.features.shape()[0];
        let g_features = Array2::zeros((n, cache.features.shape()[1]));
        let mut taps: Vec<Option<&Array4<f64>>> = vec![None; self.convs.len()];
        for (l, g) in layer_set.iter().zip(tap_grads.iter()) {
            taps[*l] = Some(g);
        }
        let mut sink = Vec::new();
        self.backward_blocks_collect(cache, &g_features, &taps, &mut sink)
    }

    fn backward_blocks_collect(
        &self,
        cache: &PerceptualCache,
        g_features: &Array2<f64>,
        taps: &[Option<&Array4<f64>>],
        grads_out: &mut Vec<ConvGrad>,
    ) -> Array4<f64> {
        let last = cache.block_io.last().expect("at least one block");
        let (_, c, hh, ww) = nn::dims4(&last.4);
        let n = g_features.shape()[0];
        let norm = 1.0 / (hh * ww) as f64;
        let mut g = Array4::zeros((n, c, hh, ww));
        for ni in 0..n {
            for ci in 0..c {
                let gv = g_features[[ni, ci]] * norm;
                for i in 0..hh {
                    for j in 0..ww {
                        g[[ni, ci, i, j]] = gv;
                    }
                }
            }
        }
        let mut conv_grads: Vec<ConvGrad> = Vec::with_capacity(self.convs.len());
        for (bi, (conv, (input, pre, act, arg, pooled))) in self
            .convs
            .iter()
            .zip(cache.block_io.iter())
            .enumerate()
            .rev()
        {
            if let Some(tap) = taps[bi] {
                g.zip_mut_with(tap, |a, b| *a += b);
            }
            let _ = pooled;
            let (_, _, ah, aw) = nn::dims4(act);
            let g_act = maxpool_s2_backward(&g, arg, ah, aw);
            let g_pre = relu_backward(pre, &g_act);
            let (gc, gx) = conv.backward(input, &g_pre);
            conv_grads.push(gc);
            g = gx;
        }
        conv_grads.reverse();
        *grads_out = conv_grads;
        g
    }

    /// Full classifier-training backward returning parameter gradients.
    pub fn backward_train(
        &self,
        cache: &PerceptualCache,
        g_logits: &Array2<f64>,
    ) -> PerceptualGrads {
        let (g_classifier, g_features) = self.classifier.backward(&cache.features, g_logits);
        let mut conv_grads = Vec::new();
        let taps: Vec<Option<&Array4<f64>>> = vec![None; self.convs.len()];
        let _ = self.backward_blocks_collect(cache, &g_features, &taps, &mut conv_grads);
        PerceptualGrads {
            convs: conv_grads,
            classifier: g_classifier,
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(c.w.as_slice().unwrap());
            out.push(c.b.as_slice().unwrap());
        }
        out.push(self.classifier.w.as_slice().unwrap());
        out.push(self.classifier.b.as_slice().unwrap());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(c.w.as_slice_mut().unwrap());
            out.push(c.b.as_slice_mut().unwrap());
        }
        out.push(self.classifier.w.as_slice_mut().unwrap());
        out.push(self.classifier.b.as_slice_mut().unwrap());
        out
    }
}

impl PerceptualGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(c.w.as_slice().unwrap());
            out.push(c.b.as_slice().unwrap());
        }
        out.push(self.classifier.w.as_slice().unwrap());
        out.push(self.classifier.b.as_slice().unwrap());
        out
    }
}

/// Frozen perceptual network plus the tapped layer set.
#[derive(Debug, Clone)]
pub struct PerceptualConfig {
    pub net: PerceptualNet,
    pub layer_set: Vec<usize>,
}

impl PerceptualConfig {
    pub fn new(net: PerceptualNet, layer_set: Vec<usize>) -> Result<Self> {
        if layer_set.is_empty() {
            return Err(Error::Config("layer set must be non-empty".into()));
        }
        if let Some(&bad) = layer_set.iter().find(|&&l| l >= net.n_blocks()) {
            return Err(Error::Config(format!(
                "layer index {bad} out of range for {} blocks",
                net.n_blocks()
            )));
        }
        Ok(PerceptualConfig { net, layer_set })
    }
}

/// Tapped activations for a single image, one tensor per layer in Ω.
pub fn perceptual_features(
    image: &ImageTensor,
    cfg: &PerceptualConfig,
) -> Result<Vec<Array3<f64>>> {
    let x = batch_of_one(image, cfg.net.cfg.input_size)?;
    let cache = cfg.net.forward(&x)?;
    Ok(cfg
        .net
        .tapped(&cache, &cfg.layer_set)
        .into_iter()
        .map(|a| {
            let (_, c, h, w) = nn::dims4(&a);
            let mut out = Array3::zeros((c, h, w));
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        out[[ci, i, j]] = a[[0, ci, i, j]];
                    }
                }
            }
            out
        })
        .collect())
}

/// Penultimate-layer feature vector used for FID.
pub fn penultimate_features(image: &ImageTensor, net: &PerceptualNet) -> Result<Array1<f64>> {
    let x = batch_of_one(image, net.cfg.input_size)?;
    let cache = net.forward(&x)?;
    Ok(cache.features.row(0).to_owned())
}

fn batch_of_one(image: &ImageTensor, size: usize) -> Result<Array4<f64>> {
    let resized = if image.height() != size || image.width() != size {
        image.resized(size)?
    } else {
        image.clone()
    };
    let chw = resized.to_chw();
    let mut x = Array4::zeros((1, 3, size, size));
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                x[[0, c, i, j]] = chw[[c, i, j]];
            }
        }
    }
    Ok(x)
}

/// Stacks face records into a `(N, 3, S, S)` model input batch.
pub fn stack_images(records: &[&FaceRecord], size: usize) -> Result<Array4<f64>> {
    let n = records.len();
    let mut x = Array4::zeros((n, 3, size, size));
    for (ni, r) in records.iter().enumerate() {
        let img = if r.image.height() != size || r.image.width() != size {
            r.image.resized(size)?
        } else {
            r.image.clone()
        };
        let chw = img.to_chw();
        for c in 0..3 {
            for i in 0..size {
                for j in 0..size {
                    x[[ni, c, i, j]] = chw[[c, i, j]];
                }
            }
        }
    }
    Ok(x)
}

/// Settings for identity-classifier pretraining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-3,
            target_accuracy: 0.9,
            seed: 0,
        }
    }
}

/// Trains an identity classifier on labeled records and returns it as a
/// frozen perceptual configuration with the default layer set.
///
/// Fails with a training error (reporting the final accuracy) if the
/// classifier cannot reach the configured training accuracy within the
/// epoch budget.
pub fn pretrain_perceptual(
    records: &[FaceRecord],
    input_size: usize,
    cfg: &PretrainConfig,
) -> Result<PerceptualConfig> {
    let (net, acc) = train_identity_net(records, input_size, cfg)?;
    if acc < cfg.target_accuracy {
        return Err(Error::Training(format!(
            "identity classifier reached accuracy {acc:.3} < target {:.3} after {} epochs",
            cfg.target_accuracy, cfg.epochs
        )));
    }
    let layer_set = net.cfg.default_layer_set();
    PerceptualConfig::new(net, layer_set)
}

/// Trains an identity classification network; returns the net and its final
/// training accuracy. Shared by perceptual pretraining and the evaluation
/// harness identifiers.
pub fn train_identity_net(
    records: &[FaceRecord],
    input_size: usize,
    cfg: &PretrainConfig,
) -> Result<(PerceptualNet, f64)> {
    let mut labels: Vec<String> = records
        .iter()
        .map(|r| {
            r.identity
                .clone()
                .ok_or_else(|| Error::Training(format!("record {} has no identity label", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Training(
            "identity training needs at least 2 identities".into(),
        ));
    }
    let mut counts = vec![0usize; labels.len()];
    let label_of = |r: &FaceRecord| -> usize {
        labels
            .binary_search(r.identity.as_ref().expect("checked above"))
            .expect("known label")
    };
    for r in records {
        counts[label_of(r)] += 1;
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Training(
            "identity training needs at least 2 images per identity".into(),
        ));
    }

    let net_cfg = PerceptualNetConfig::for_scale(input_size, labels.len())?;
    let mut net = PerceptualNet::init(net_cfg, cfg.seed)?;
    let refs: Vec<&FaceRecord> = records.iter().collect();
    let x_all = stack_images(&refs, input_size)?;
    let y_all: Vec<usize> = records.iter().map(label_of).collect();
    let n = records.len();

    let mut opt = nn::Adam::new(cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = 0.0;
    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(cfg.seed, &[0x1d, epoch as u64]);
        // Fisher-Yates with the derived rng keeps epochs reproducible.
        for i in (1..n).rev() {
            let j = (nn::uniform(&mut rng, 0.0, (i + 1) as f64)) as usize;
            order.swap(i, j.min(i));
        }
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut xb = Array4::zeros((chunk.len(), 3, input_size, input_size));
            let mut yb = Vec::with_capacity(chunk.len());
            for (bi, &ri) in chunk.iter().enumerate() {
                for c in 0..3 {
                    for i in 0..input_size {
                        for j in 0..input_size {
                            xb[[bi, c, i, j]] = x_all[[ri, c, i, j]];
                        }
                    }
                }
                yb.push(y_all[ri]);
            }
            let cache = net.forward(&xb)?;
            let (_, g_logits) = softmax_cross_entropy(&cache.logits, &yb);
            let grads = net.backward_train(&cache, &g_logits);
            let gblocks = grads.blocks();
            let mut pblocks = net.blocks_mut();
            opt.step(&mut pblocks, &gblocks);
        }
        // Training accuracy over the full set.
        let cache = net.forward(&x_all)?;
        let mut correct = 0;
        for ni in 0..n {
            let row = cache.logits.row(ni);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            if pred == y_all[ni] {
                correct += 1;
            }
        }
        acc = correct as f64 / n as f64;
        if acc >= cfg.target_accuracy && epoch + 1 >= 3 {
            break;
        }
    }
    Ok((net, acc))
}

/// Maps class indices back to identity labels for trained identity nets.
pub fn sorted_identities(records: &[FaceRecord]) -> Vec<String> {
    let mut labels: Vec<String> = records.iter().filter_map(|r| r.identity.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}
