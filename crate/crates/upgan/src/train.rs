//! Alternating GAN optimization: per step, sample a batch, augment it, take
//! one or more discriminator steps and one generator step. Runs are
//! bit-reproducible given (seed, corpus, config): every random draw is
//! derived statelessly from the root seed and the step index, and optimizer
//! state travels inside checkpoints so a resumed run continues exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augment, AugmentConfig};
use crate::checkpoint::{AdamMeta, Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_and_grads, generator_loss_and_grads, LossBreakdown, LossWeights, TrainBatch,
};
use crate::model::{
    cache_outputs, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams,
    PerceptualConfig, PretrainConfig,
};
use crate::nn::{derive_seed, seeded_rng, uniform, Adam};
use crate::types::{
    AttributeVector, FaceRecord, ImageTensor, LandmarkVector, MaskTensor, INPUT_DIM,
};

/// Number of frozen sample-grid probes (4x4 grid).
pub const PROBE_COUNT: usize = 16;

/// Flat training configuration; every key can appear in the TOML config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub scale: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub normalize_losses: bool,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    pub checkpoint_every: usize,
    pub sample_every: usize,
    pub perceptual_epochs: usize,
    pub perceptual_batch: usize,
    pub perceptual_lr: f64,
    pub perceptual_target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 4,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            d_steps_per_g_step: 1,
            seed: 7,
            scale: 32,
            lambda1: 5.0,
            lambda2: 1.0,
            lambda3: 1.0,
            normalize_losses: false,
            elastic_alpha: 2.0,
            elastic_sigma: 1.5,
            rotation_min_deg: -30.0,
            rotation_max_deg: 30.0,
            checkpoint_every: 500,
            sample_every: 500,
            perceptual_epochs: 40,
            perceptual_batch: 16,
            perceptual_lr: 1e-3,
            perceptual_target_accuracy: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config(
                "d_steps_per_g_step must be at least 1".into(),
            ));
        }
        self.weights().validate()?;
        self.augment().validate()?;
        GeneratorConfig::for_scale(self.scale)?;
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            elastic_alpha: self.elastic_alpha,
            elastic_sigma: self.elastic_sigma,
            rotation_min_deg: self.rotation_min_deg,
            rotation_max_deg: self.rotation_max_deg,
            seed: self.seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One metrics-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<MetricsRecord>,
}

fn probe_inputs(records: &[FaceRecord], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, &[0x9b]);
    (0..PROBE_COUNT)
        .map(|_| {
            let idx =
                (uniform(&mut rng, 0.0, records.len() as f64) as usize).min(records.len() - 1);
            records[idx].input_vector().to_vec()
        })
        .collect()
}

fn write_sample_grid(gen: &GeneratorParams, probes: &[Vec<f64>], path: &Path) -> Result<()> {
    let s = gen.output_size();
    let mut x = Array2::zeros((probes.len(), INPUT_DIM));
    for (i, p) in probes.iter().enumerate() {
        for (j, v) in p.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    let cache = gen.forward(&x)?;
    let cols = 4;
    let rows = probes.len().div_ceil(cols);
    let mut grid = ndarray::Array3::zeros((rows * s, cols * s, 3));
    for (n, _) in probes.iter().enumerate() {
        let (r, c) = (n / cols, n % cols);
        for ch in 0..3 {
            for i in 0..s {
                for j in 0..s {
                    grid[[r * s + i, c * s + j, ch]] = cache.image[[n, ch, i, j]];
                }
            }
        }
    }
    let img = ImageTensor::from_clamped(grid)?;
    crate::dataset::save_png(&img, path)
}

struct TrainState {
    gen: GeneratorParams,
    disc: DiscriminatorParams,
    perceptual: Option<PerceptualConfig>,
    opt_g: Adam,
    opt_d: Adam,
    probes: Vec<Vec<f64>>,
    step: u64,
}

impl TrainState {
    fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let adam_meta = |a: &Adam| AdamMeta {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            t: a.t,
            blocks: a.m.len(),
        };
        Checkpoint {
            meta: CheckpointMeta {
                version: 1,
                step: self.step,
                seed: cfg.seed,
                gen_cfg: self.gen.cfg.clone(),
                disc_cfg: self.disc.cfg.clone(),
                perceptual_cfg: self.perceptual.as_ref().map(|p| p.net.cfg.clone()),
                perceptual_layer_set: self
                    .perceptual
                    .as_ref()
                    .map(|p| p.layer_set.clone())
                    .unwrap_or_default(),
                probes: self.probes.clone(),
                opt_g: Some(adam_meta(&self.opt_g)),
                opt_d: Some(adam_meta(&self.opt_d)),
                train_echo: serde_json::to_value(cfg).ok(),
            },
            gen: self.gen.clone(),
            disc: self.disc.clone(),
            perceptual: self.perceptual.clone(),
            opt_g: Some(self.opt_g.clone()),
            opt_d: Some(self.opt_d.clone()),
        }
    }
}

/// Trains from scratch on the given corpus, writing metrics, checkpoints and
/// sample grids under `out_dir`.
pub fn train(corpus: &[FaceRecord], cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    let resized = resize_corpus(corpus, cfg.scale)?;
    let perceptual = if cfg.lambda3 > 0.0 {
        Some(pretrain_for_training(&resized, cfg)?)
    } else {
        None
    };
    let gen = GeneratorParams::init(
        GeneratorConfig::for_scale(cfg.scale)?,
        derive_seed(cfg.seed, &[0x90]),
    )?;
    let disc = DiscriminatorParams::init(
        DiscriminatorConfig::for_scale(cfg.scale)?,
        derive_seed(cfg.seed, &[0x91]),
    )?;
    let state = TrainState {
        probes: probe_inputs(&resized, cfg.seed),
        gen,
        disc,
        perceptual,
        opt_g: Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2),
        opt_d: Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2),
        step: 0,
    };
    train_loop(state, &resized, cfg, out_dir)
}

/// Resumes training from a checkpoint, continuing to `cfg.steps`. The model
/// configuration embedded in the checkpoint must match the config's scale.
pub fn train_resume(
    ckpt_path: &Path,
    corpus: &[FaceRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ck = Checkpoint::load(ckpt_path)?;
    ck.ensure_matches(
        &GeneratorConfig::for_scale(cfg.scale)?,
        &DiscriminatorConfig::for_scale(cfg.scale)?,
    )?;
    if ck.meta.seed != cfg.seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint seed {} does not match config seed {}",
            ck.meta.seed, cfg.seed
        )));
    }
    let resized = resize_corpus(corpus, cfg.scale)?;
    let opt_g = ck
        .opt_g
        .ok_or_else(|| Error::Checkpoint("checkpoint has no generator optimizer state".into()))?;
    let opt_d = ck.opt_d.ok_or_else(|| {
        Error::Checkpoint("checkpoint has no discriminator optimizer state".into())
    })?;
    let state = TrainState {
        probes: ck.meta.probes.clone(),
        gen: ck.gen,
        disc: ck.disc,
        perceptual: ck.perceptual,
        opt_g,
        opt_d,
        step: ck.meta.step,
    };
    train_loop(state, &resized, cfg, out_dir)
}

fn resize_corpus(corpus: &[FaceRecord], scale: usize) -> Result<Vec<FaceRecord>> {
    corpus
        .iter()
        .map(|r| {
            r.validate()?;
            if r.mask.is_none() {
                return Err(Error::Corpus(format!("record {} has no mask", r.id)));
            }
            r.resized(scale)
        })
        .collect()
}

fn pretrain_for_training(records: &[FaceRecord], cfg: &TrainConfig) -> Result<PerceptualConfig> {
    if records.iter().any(|r| r.identity.is_none()) {
        return Err(Error::Training(
            "perceptual loss requires identity labels on every record; \
             set lambda3 = 0 to train without it"
                .into(),
        ));
    }
    crate::model::pretrain_perceptual(
        records,
        cfg.scale,
        &PretrainConfig {
            epochs: cfg.perceptual_epochs,
            batch_size: cfg.perceptual_batch,
            learning_rate: cfg.perceptual_lr,
            target_accuracy: cfg.perceptual_target_accuracy,
            seed: derive_seed(cfg.seed, &[0x92]),
        },
    )
}

fn train_loop(
    mut state: TrainState,
    corpus: &[FaceRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let augment_cfg = cfg.augment();
    let weights = cfg.weights();

    while state.step < cfg.steps as u64 {
        let step = state.step + 1;
        let batch =
            sample_batch(corpus, cfg, &augment_cfg, step).map_err(|e| wrap_abort(e, &last_good))?;

        let mut d_value = 0.0;
        for _ in 0..cfg.d_steps_per_g_step {
            let (value, dgrads) = discriminator_loss_and_grads(&batch, &state.gen, &state.disc)
                .map_err(|e| wrap_abort(e, &last_good))?;
            d_value = value;
            let gblocks = dgrads.blocks();
            let mut pblocks = state.disc.blocks_mut();
            state.opt_d.step(&mut pblocks, &gblocks);
        }

        let (mut breakdown, ggrads) = generator_loss_and_grads(
            &batch,
            &state.gen,
            &state.disc,
            state.perceptual.as_ref(),
            &weights,
            cfg.normalize_losses,
        )
        .map_err(|e| wrap_abort(e, &last_good))?;
        // report the discriminator value that was actually optimized this step
        breakdown.total_d = d_value;
        {
            let gblocks = ggrads.blocks();
            let mut pblocks = state.gen.blocks_mut();
            state.opt_g.step(&mut pblocks, &gblocks);
        }
        state.step = step;

        let record = MetricsRecord {
            step,
            losses: breakdown,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(metrics_file, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        metrics.push(record);

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
            let path = out_dir.join(format!("checkpoint_step_{step}.ckpt"));
            state.to_checkpoint(cfg).save(&path)?;
            last_good = Some(path);
        }
        if cfg.sample_every > 0 && step % cfg.sample_every as u64 == 0 {
            let path = out_dir.join(format!("samples_step_{step}.png"));
            write_sample_grid(&state.gen, &state.probes, &path)?;
        }
    }

    let final_path = out_dir.join("checkpoint_final.ckpt");
    state.to_checkpoint(cfg).save(&final_path)?;
    metrics_file
        .flush()
        .map_err(|e| Error::io(&metrics_path, e))?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        metrics_path,
        metrics,
    })
}

fn wrap_abort(e: Error, last_good: &Option<PathBuf>) -> Error {
    match last_good {
        Some(p) => Error::Training(format!(
            "aborting: {e}; last good checkpoint: {}",
            p.display()
        )),
        None => Error::Training(format!("aborting: {e}; no checkpoint written yet")),
    }
}

fn sample_batch(
    corpus: &[FaceRecord],
    cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    step: u64,
) -> Result<TrainBatch> {
    let mut rng = seeded_rng(cfg.seed, &[0x57, step]);
    let mut augmented = Vec::with_capacity(cfg.batch_size);
    for slot in 0..cfg.batch_size {
        let idx = (uniform(&mut rng, 0.0, corpus.len() as f64) as usize).min(corpus.len() - 1);
        let record = apply_augment(
            &corpus[idx],
            augment_cfg,
            derive_seed(cfg.seed, &[0xa9, step, slot as u64]),
        )?;
        augmented.push(record);
    }
    let refs: Vec<&FaceRecord> = augmented.iter().collect();
    TrainBatch::from_records(&refs, cfg.scale)
}

/// Pure inference from a checkpoint.
pub fn generate(
    attributes: &AttributeVector,
    landmarks: &LandmarkVector,
    checkpoint: &Checkpoint,
) -> Result<(ImageTensor, MaskTensor)> {
    crate::model::generator_forward(attributes, landmarks, &checkpoint.gen)
}

/// Batched inference for a set of records' utility vectors; returns per
/// record (image, mask) at the checkpoint's scale.
pub fn generate_for_records(
    records: &[FaceRecord],
    checkpoint: &Checkpoint,
) -> Result<Vec<(ImageTensor, MaskTensor)>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut x = Array2::zeros((1, INPUT_DIM));
        for (j, v) in r.input_vector().iter().enumerate() {
            x[[0, j]] = *v;
        }
        let cache = checkpoint.gen.forward(&x)?;
        out.push(cache_outputs(&cache)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_corpus, SynthCorpusConfig};

    fn small_corpus() -> Vec<FaceRecord> {
        generate_synthetic_corpus(&SynthCorpusConfig {
            n: 12,
            identities: 3,
            seed: 3,
        })
        .unwrap()
    }

    fn quick_cfg(steps: usize, out_seed: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            scale: 8,
            seed: out_seed,
            lambda3: 0.0, // tiny runs skip the perceptual net
            checkpoint_every: 0,
            sample_every: 0,
            elastic_alpha: 1.0,
            elastic_sigma: 1.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_runs_produce_identical_metrics() {
        let corpus = small_corpus();
        let cfg = quick_cfg(4, 5);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = train(&corpus, &cfg, d1.path()).unwrap();
        let b = train(&corpus, &cfg, d2.path()).unwrap();
        let ma = fs::read_to_string(&a.metrics_path).unwrap();
        let mb = fs::read_to_string(&b.metrics_path).unwrap();
        assert_eq!(ma, mb);
        assert!(!ma.is_empty());
    }

    #[test]
    fn losses_stay_finite() {
        let corpus = small_corpus();
        let cfg = quick_cfg(6, 9);
        let dir = tempfile::tempdir().unwrap();
        let out = train(&corpus, &cfg, dir.path()).unwrap();
        for m in &out.metrics {
            assert!(m.losses.total_g.is_finite());
            assert!(m.losses.total_d.is_finite());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = small_corpus();
        let dir_full = tempfile::tempdir().unwrap();
        let full_cfg = quick_cfg(8, 11);
        let full = train(&corpus, &full_cfg, dir_full.path()).unwrap();

        let dir_half = tempfile::tempdir().unwrap();
        let half_cfg = TrainConfig {
            steps: 4,
            ..full_cfg.clone()
        };
        let half = train(&corpus, &half_cfg, dir_half.path()).unwrap();

        let dir_resume = tempfile::tempdir().unwrap();
        let resume_cfg = TrainConfig {
            steps: 8,
            ..full_cfg.clone()
        };
        let resumed = train_resume(
            &half.final_checkpoint,
            &corpus,
            &resume_cfg,
            dir_resume.path(),
        )
        .unwrap();

        let tail: Vec<String> = full
            .metrics
            .iter()
            .skip(4)
            .map(|m| serde_json::to_string(m).unwrap())
            .collect();
        let resumed_lines: Vec<String> = resumed
            .metrics
            .iter()
            .map(|m| serde_json::to_string(m).unwrap())
            .collect();
        assert_eq!(tail, resumed_lines);
    }

    #[test]
    fn generator_never_updates_during_d_step_and_vice_versa() {
        let corpus = small_corpus();
        let cfg = quick_cfg(1, 13);
        let resized = resize_corpus(&corpus, cfg.scale).unwrap();
        let mut gen = GeneratorParams::init(
            GeneratorConfig::for_scale(cfg.scale).unwrap(),
            derive_seed(cfg.seed, &[0x90]),
        )
        .unwrap();
        let mut disc = DiscriminatorParams::init(
            DiscriminatorConfig::for_scale(cfg.scale).unwrap(),
            derive_seed(cfg.seed, &[0x91]),
        )
        .unwrap();
        let batch = sample_batch(&resized, &cfg, &cfg.augment(), 1).unwrap();

        let gen_before: Vec<Vec<f64>> = gen.blocks().iter().map(|b| b.to_vec()).collect();
        let (_, dgrads) = discriminator_loss_and_grads(&batch, &gen, &disc).unwrap();
        let mut opt_d = Adam::new(1e-3, 0.5, 0.999);
        {
            let gblocks = dgrads.blocks();
            let mut pblocks = disc.blocks_mut();
            opt_d.step(&mut pblocks, &gblocks);
        }
        let gen_after: Vec<Vec<f64>> = gen.blocks().iter().map(|b| b.to_vec()).collect();
        assert_eq!(gen_before, gen_after, "generator changed during D update");

        let disc_before: Vec<Vec<f64>> = disc.blocks().iter().map(|b| b.to_vec()).collect();
        let (_, ggrads) =
            generator_loss_and_grads(&batch, &gen, &disc, None, &LossWeights::default(), false)
                .unwrap();
        let mut opt_g = Adam::new(1e-3, 0.5, 0.999);
        {
            let gblocks = ggrads.blocks();
            let mut pblocks = gen.blocks_mut();
            opt_g.step(&mut pblocks, &gblocks);
        }
        let disc_after: Vec<Vec<f64>> = disc.blocks().iter().map(|b| b.to_vec()).collect();
        assert_eq!(
            disc_before, disc_after,
            "discriminator changed during G update"
        );
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.scale = 33;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg = TrainConfig::from_toml("steps = 5\nbatch_size = 2\nscale = 8\n").unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.lambda1, 5.0);
    }
}
