//! Training objectives: adversarial terms, L2 reconstruction, mask binary
//! cross entropy and the perceptual feature loss.
//!
//! Sign conventions: every value reported here is a quantity to *minimize*.
//! The discriminator loss is the negated classic objective, and the
//! generator's adversarial term uses the non-saturating form
//! `-E[log D(G(v))]`. Norm-based terms are sums over elements (per sample,
//! averaged over the batch); the `normalize` flag divides by element counts
//! for scale experiments.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DiscriminatorGrads, DiscriminatorParams, GeneratorCache, GeneratorGrads, GeneratorParams,
    PerceptualConfig,
};
use crate::nn::dims4;
use crate::types::{FaceRecord, ImageTensor, MaskTensor, INPUT_DIM};

/// Probability clipping applied inside every log term.
pub const PROB_EPS: f64 = 1e-7;

/// Scalar weights for the generator's penalty terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 5.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-step loss values. `total_g` satisfies
/// `adv_g + lambda1*recon_l2 + lambda2*mask_bce + lambda3*perceptual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_g: f64,
    pub recon_l2: f64,
    pub mask_bce: f64,
    pub perceptual: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossBreakdown {
    /// Checks the total identity at the given weights.
    pub fn check_total(&self, weights: &LossWeights, tol: f64) -> bool {
        let expect = self.adv_g
            + weights.lambda1 * self.recon_l2
            + weights.lambda2 * self.mask_bce
            + weights.lambda3 * self.perceptual;
        (expect - self.total_g).abs() <= tol
    }

    fn ensure_finite(&self) -> Result<()> {
        for (name, v) in [
            ("adv_g", self.adv_g),
            ("recon_l2", self.recon_l2),
            ("mask_bce", self.mask_bce),
            ("perceptual", self.perceptual),
            ("total_g", self.total_g),
            ("total_d", self.total_d),
        ] {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("loss term {name} is {v}")));
            }
        }
        Ok(())
    }
}

/// A training batch: utility inputs, target images and mask ground truth.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// `(N, 17)` concatenated attribute + landmark rows.
    pub inputs: Array2<f64>,
    /// `(N, 3, S, S)` target images.
    pub real: Array4<f64>,
    /// `(N, S, S)` binary mask labels.
    pub mask_truth: Array3<f64>,
}

impl TrainBatch {
    pub fn from_records(records: &[&FaceRecord], size: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Corpus("empty batch".into()));
        }
        let n = records.len();
        let mut inputs = Array2::zeros((n, INPUT_DIM));
        let real = crate::model::stack_images(records, size)?;
        let mut mask_truth = Array3::zeros((n, size, size));
        for (ni, r) in records.iter().enumerate() {
            for (k, v) in r.input_vector().iter().enumerate() {
                inputs[[ni, k]] = *v;
            }
            let mask = r
                .mask
                .as_ref()
                .ok_or_else(|| Error::Corpus(format!("record {} has no mask", r.id)))?;
            let labels = mask.as_binary()?;
            if labels.shape() != [size, size] {
                return Err(Error::Shape(format!(
                    "record {} mask is {:?}, expected {size}x{size}",
                    r.id,
                    labels.shape()
                )));
            }
            for i in 0..size {
                for j in 0..size {
                    mask_truth[[ni, i, j]] = labels[[i, j]];
                }
            }
        }
        Ok(TrainBatch {
            inputs,
            real,
            mask_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sum of squared element differences between two same-shape arrays.
pub fn sum_squared_difference(a: ArrayViewD<'_, f64>, b: ArrayViewD<'_, f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Squared L2 reconstruction distance between two images.
pub fn recon_l2(real: &ImageTensor, fake: &ImageTensor) -> Result<f64> {
    sum_squared_difference(real.data().view().into_dyn(), fake.data().view().into_dyn())
}

/// Mean binary cross entropy of predicted face probabilities against binary
/// ground truth. Predictions are clipped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn mask_bce(pred: &MaskTensor, truth: &MaskTensor) -> Result<f64> {
    let y = truth.as_binary()?;
    let p = pred.face_channel();
    if p.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "mask shapes differ: {:?} vs {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let n = y.len() as f64;
    let mut acc = 0.0;
    for (pi, yi) in p.iter().zip(y.iter()) {
        let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
        acc -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
    }
    Ok(acc / n)
}

/// Sum over the tapped layer set of squared feature distances.
pub fn perceptual_loss(
    fake: &ImageTensor,
    real: &ImageTensor,
    cfg: &PerceptualConfig,
) -> Result<f64> {
    let fa = crate::model::perceptual_features(fake, cfg)?;
    let fb = crate::model::perceptual_features(real, cfg)?;
    let mut acc = 0.0;
    for (a, b) in fa.iter().zip(fb.iter()) {
        acc += sum_squared_difference(a.view().into_dyn(), b.view().into_dyn())?;
    }
    Ok(acc)
}

fn clipped_log(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

/// d/dp of `ln(clip(p))`: zero outside the clip range.
fn clipped_log_grad(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Per-term values and output-space gradients, sharing one generator forward.
// ---------------------------------------------------------------------------

/// Non-saturating adversarial generator term and its gradient w.r.t. the
/// generated images.
fn term_adv_g(fake: &Array4<f64>, disc: &DiscriminatorParams) -> Result<(f64, Array4<f64>)> {
    let n = fake.shape()[0] as f64;
    let cache = disc.forward(fake)?;
    let mut value = 0.0;
    let mut g_prob = Array1::zeros(cache.prob.len());
    for (i, &p) in cache.prob.iter().enumerate() {
        value -= clipped_log(p);
        g_prob[i] = -clipped_log_grad(p) / n;
    }
    let (_, g_fake) = disc.backward(&cache, &g_prob);
    Ok((value / n, g_fake))
}

/// Reconstruction term (batch mean of per-sample squared L2 sums) and its
/// image gradient.
fn term_recon(fake: &Array4<f64>, real: &Array4<f64>, normalize: bool) -> (f64, Array4<f64>) {
    let n = fake.shape()[0] as f64;
    let elems = (fake.len() / fake.shape()[0]) as f64;
    let scale = if normalize { 1.0 / elems } else { 1.0 };
    let mut value = 0.0;
    let mut grad = Array4::zeros(fake.raw_dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let d = fake[idx] - real[idx];
        value += d * d;
        *g = 2.0 * d * scale / n;
    }
    (value * scale / n, grad)
}

/// Mask BCE term (mean over pixels and batch) and its gradient w.r.t. the
/// 2-channel mask probabilities.
fn term_bce(mask_probs: &Array4<f64>, truth: &Array3<f64>) -> (f64, Array4<f64>) {
    let (n, _c, h, w) = dims4(mask_probs);
    let npix = (h * w) as f64;
    let nb = n as f64;
    let mut value = 0.0;
    let mut grad = Array4::zeros(mask_probs.raw_dim());
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let y = truth[[ni, i, j]];
                let p = mask_probs[[ni, 1, i, j]];
                let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                value -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
                if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                    grad[[ni, 1, i, j]] = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / (npix * nb);
                }
            }
        }
    }
    (value / (npix * nb), grad)
}

/// Perceptual term over a batch and its gradient w.r.t. the generated images.
fn term_perceptual(
    fake: &Array4<f64>,
    real: &Array4<f64>,
    perceptual: &PerceptualConfig,
    normalize: bool,
) -> Result<(f64, Array4<f64>)> {
    let n = fake.shape()[0] as f64;
    let size = fake.shape()[2];
    if perceptual.net.cfg.input_size != size {
        return Err(Error::Config(format!(
            "perceptual net input {} does not match image size {size}",
            perceptual.net.cfg.input_size
        )));
    }
    let cache_fake = perceptual.net.forward(fake)?;
    let cache_real = perceptual.net.forward(real)?;
    let taps_fake = perceptual.net.tapped(&cache_fake, &perceptual.layer_set);
    let taps_real = perceptual.net.tapped(&cache_real, &perceptual.layer_set);
    let mut value = 0.0;
    let mut tap_grads = Vec::with_capacity(taps_fake.len());
    for (tf, tr) in taps_fake.iter().zip(taps_real.iter()) {
        let elems = (tf.len() / tf.shape()[0]) as f64;
        let scale = if normalize { 1.0 / elems } else { 1.0 };
        let mut g = Array4::zeros(tf.raw_dim());
        for (idx, gv) in g.indexed_iter_mut() {
            let d = tf[idx] - tr[idx];
            value += d * d * scale;
            *gv = 2.0 * d * scale / n;
        }
        tap_grads.push(g);
    }
    let g_fake = perceptual
        .net
        .backward_input(&cache_fake, &perceptual.layer_set, &tap_grads);
    Ok((value / n, g_fake))
}

/// Negated discriminator objective over real and (constant) fake images.
fn term_adv_d(
    real: &Array4<f64>,
    fake: &Array4<f64>,
    disc: &DiscriminatorParams,
) -> Result<(f64, DiscriminatorGrads)> {
    let n = real.shape()[0] as f64;
    let cache_real = disc.forward(real)?;
    let cache_fake = disc.forward(fake)?;
    let mut value = 0.0;
    let mut g_real = Array1::zeros(cache_real.prob.len());
    let mut g_fake = Array1::zeros(cache_fake.prob.len());
    for (i, &p) in cache_real.prob.iter().enumerate() {
        value -= clipped_log(p);
        g_real[i] = -clipped_log_grad(p) / n;
    }
    for (i, &p) in cache_fake.prob.iter().enumerate() {
        value -= clipped_log(1.0 - p);
        // d/dp of -ln(clip(1-p)) = +1/(1-p) inside the clip range.
        g_fake[i] = clipped_log_grad(1.0 - p) / n;
    }
    let (mut grads, _) = disc.backward(&cache_real, &g_real);
    let (grads_fake, _) = disc.backward(&cache_fake, &g_fake);
    for (a, b) in grads.convs.iter_mut().zip(grads_fake.convs.iter()) {
        a.w.zip_mut_with(&b.w, |x, y| *x += y);
        a.b.zip_mut_with(&b.b, |x, y| *x += y);
    }
    grads
        .head
        .w
        .zip_mut_with(&grads_fake.head.w, |x, y| *x += y);
    grads
        .head
        .b
        .zip_mut_with(&grads_fake.head.b, |x, y| *x += y);
    Ok((value / n, grads))
}

// ---------------------------------------------------------------------------
// Public loss entry points.
// ---------------------------------------------------------------------------

/// All generator-side loss terms plus the discriminator objective, values only.
pub fn generator_loss(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    perceptual: Option<&PerceptualConfig>,
    weights: &LossWeights,
    normalize: bool,
) -> Result<LossBreakdown> {
    let (breakdown, _, _) = generator_loss_inner(batch, gen, disc, perceptual, weights, normalize)?;
    Ok(breakdown)
}

/// Loss values together with generator parameter gradients of `total_g`.
pub fn generator_loss_and_grads(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    perceptual: Option<&PerceptualConfig>,
    weights: &LossWeights,
    normalize: bool,
) -> Result<(LossBreakdown, GeneratorGrads)> {
    let (breakdown, cache, (g_image, g_mask)) =
        generator_loss_inner(batch, gen, disc, perceptual, weights, normalize)?;
    let grads = gen.backward(&cache, &g_image, &g_mask);
    Ok((breakdown, grads))
}

#[allow(clippy::type_complexity)]
fn generator_loss_inner(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    perceptual: Option<&PerceptualConfig>,
    weights: &LossWeights,
    normalize: bool,
) -> Result<(LossBreakdown, GeneratorCache, (Array4<f64>, Array4<f64>))> {
    weights.validate()?;
    let cache = gen.forward(&batch.inputs)?;
    let fake = &cache.image;

    let (adv_g, g_adv) = term_adv_g(fake, disc)?;
    let (recon, g_recon) = term_recon(fake, &batch.real, normalize);
    let (bce, g_bce) = term_bce(&cache.mask, &batch.mask_truth);
    let (perc, g_perc) = match perceptual {
        Some(cfg) => term_perceptual(fake, &batch.real, cfg, normalize)?,
        None => (0.0, Array4::zeros(fake.raw_dim())),
    };
    let (adv_d, _) = term_adv_d(&batch.real, fake, disc)?;

    let total_g = adv_g + weights.lambda1 * recon + weights.lambda2 * bce + weights.lambda3 * perc;
    let breakdown = LossBreakdown {
        adv_g,
        recon_l2: recon,
        mask_bce: bce,
        perceptual: perc,
        total_g,
        total_d: adv_d,
    };
    breakdown.ensure_finite()?;

    let mut g_image = g_adv;
    g_image.zip_mut_with(&g_recon, |a, b| *a += weights.lambda1 * b);
    g_image.zip_mut_with(&g_perc, |a, b| *a += weights.lambda3 * b);
    let mut g_mask = g_bce;
    g_mask.mapv_inplace(|v| v * weights.lambda2);
    Ok((breakdown, cache, (g_image, g_mask)))
}

/// Negated discriminator objective; generated images are constants here, so
/// no gradient flows back to the generator.
pub fn discriminator_loss(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
) -> Result<f64> {
    discriminator_loss_and_grads(batch, gen, disc).map(|(v, _)| v)
}

/// Discriminator loss with parameter gradients.
pub fn discriminator_loss_and_grads(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
) -> Result<(f64, DiscriminatorGrads)> {
    let cache = gen.forward(&batch.inputs)?;
    let (value, grads) = term_adv_d(&batch.real, &cache.image, disc)?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss term adv_d is {value}")));
    }
    Ok((value, grads))
}

/// Values of the four generator-side terms (adv_g, recon, bce, perceptual)
/// from a single forward pass, without any backward work. Useful for
/// finite-difference audits where all terms are probed at once.
pub fn generator_term_values(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    perceptual: Option<&PerceptualConfig>,
    normalize: bool,
) -> Result<(f64, f64, f64, f64)> {
    let cache = gen.forward(&batch.inputs)?;
    let fake = &cache.image;
    let n = fake.shape()[0] as f64;
    let d_cache = disc.forward(fake)?;
    let adv_g = -d_cache.prob.iter().map(|&p| clipped_log(p)).sum::<f64>() / n;
    let (recon, _) = term_recon(fake, &batch.real, normalize);
    let (bce, _) = term_bce(&cache.mask, &batch.mask_truth);
    let perc = match perceptual {
        Some(cfg) => term_perceptual(fake, &batch.real, cfg, normalize)?.0,
        None => 0.0,
    };
    Ok((adv_g, recon, bce, perc))
}

// Per-term entry points with generator gradients, so gradient audits can
// check each objective in isolation.

pub fn adv_g_with_grads(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
) -> Result<(f64, GeneratorGrads)> {
    let cache = gen.forward(&batch.inputs)?;
    let (value, g_image) = term_adv_g(&cache.image, disc)?;
    let g_mask = Array4::zeros(cache.mask.raw_dim());
    Ok((value, gen.backward(&cache, &g_image, &g_mask)))
}

pub fn recon_with_grads(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    normalize: bool,
) -> Result<(f64, GeneratorGrads)> {
    let cache = gen.forward(&batch.inputs)?;
    let (value, g_image) = term_recon(&cache.image, &batch.real, normalize);
    let g_mask = Array4::zeros(cache.mask.raw_dim());
    Ok((value, gen.backward(&cache, &g_image, &g_mask)))
}

pub fn bce_with_grads(batch: &TrainBatch, gen: &GeneratorParams) -> Result<(f64, GeneratorGrads)> {
    let cache = gen.forward(&batch.inputs)?;
    let (value, g_mask) = term_bce(&cache.mask, &batch.mask_truth);
    let g_image = Array4::zeros(cache.image.raw_dim());
    Ok((value, gen.backward(&cache, &g_image, &g_mask)))
}

pub fn perceptual_with_grads(
    batch: &TrainBatch,
    gen: &GeneratorParams,
    perceptual: &PerceptualConfig,
    normalize: bool,
) -> Result<(f64, GeneratorGrads)> {
    let cache = gen.forward(&batch.inputs)?;
    let (value, g_image) = term_perceptual(&cache.image, &batch.real, perceptual, normalize)?;
    let g_mask = Array4::zeros(cache.mask.raw_dim());
    Ok((value, gen.backward(&cache, &g_image, &g_mask)))
}
