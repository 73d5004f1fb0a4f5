//! Obscuration evaluation: identification attacks under two threat models
//! plus Fréchet distance between feature distributions.
//!
//! Threat model I trains the identifier on pristine images only; threat
//! model II trains on a 50/50 interleave of clear and method-obscured images
//! of the same identities. Identification accuracy is top-1. FID uses the
//! penultimate-layer features of a frozen identity network, so magnitudes
//! are comparable only within one evaluation run.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_blur, k_same, pixelate, KSameConfig, KSameOutcome};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{train_identity_net, PerceptualNet, PretrainConfig};
use crate::nn::{derive_seed, seeded_rng, uniform};
use crate::types::{FaceRecord, ImageTensor, ObscurationMethod, ObscurationResult};

/// Which attacker is being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThreatModel {
    /// The attacker has no knowledge of the obscuration method.
    I,
    /// The attacker trains on both clear and obscured images.
    II,
}

/// One identification experiment.
#[derive(Debug, Clone)]
pub struct ThreatScenario {
    pub model: ThreatModel,
    pub method: ObscurationMethod,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Evaluation harness settings; every key can appear in the TOML config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub identifier_size: usize,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub methods: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 11,
            identifier_size: 64,
            train_fraction: 0.8,
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-3,
            methods: vec![
                "none".into(),
                "gaussian:15".into(),
                "pixelate:4".into(),
                "pixelate:8".into(),
                "pixelate:16".into(),
                "ksame:10".into(),
            ],
        }
    }
}

impl EvalConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EvalConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction <= 0.0 {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        for m in &self.methods {
            ObscurationMethod::parse(m)?;
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<ObscurationMethod>> {
        self.methods
            .iter()
            .map(|m| ObscurationMethod::parse(m))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// Anything that can guess an identity from an image.
pub trait Identifier {
    fn predict(&mut self, image: &ImageTensor) -> Result<String>;
}

/// Convolutional identity classifier.
pub struct NetIdentifier {
    pub net: PerceptualNet,
    pub labels: Vec<String>,
    pub train_accuracy: f64,
}

impl Identifier for NetIdentifier {
    fn predict(&mut self, image: &ImageTensor) -> Result<String> {
        let feats = crate::model::penultimate_features(image, &self.net)?;
        let logits = self
            .net
            .classifier
            .forward(&feats.insert_axis(ndarray::Axis(0)));
        let row = logits.row(0);
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Validation("identifier has no classes".into()))?;
        Ok(self.labels[best].clone())
    }
}

/// Bayes-optimal table lookup for k-same output: each surrogate image maps
/// to the majority identity of its cluster. This isolates the 1/k guarantee
/// from classifier capacity.
pub struct LookupIdentifier {
    table: HashMap<Vec<u64>, String>,
    fallback: String,
}

fn image_key(image: &ImageTensor) -> Vec<u64> {
    image.data().iter().map(|v| v.to_bits()).collect()
}

impl LookupIdentifier {
    /// Builds the lookup from a k-same partition over labeled records.
    pub fn from_ksame(outcome: &KSameOutcome, records: &[FaceRecord]) -> Result<Self> {
        let mut table = HashMap::new();
        let mut global_counts: HashMap<String, usize> = HashMap::new();
        for r in records {
            let id = r
                .identity
                .clone()
                .ok_or_else(|| Error::Validation(format!("record {} has no identity", r.id)))?;
            *global_counts.entry(id).or_insert(0) += 1;
        }
        for (ci, cluster) in outcome.clusters.iter().enumerate() {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for &ri in cluster {
                let id = records[ri].identity.as_deref().expect("checked above");
                *counts.entry(id).or_insert(0) += 1;
            }
            let majority = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(id, _)| id.to_string())
                .expect("non-empty cluster");
            table.insert(image_key(&outcome.surrogates[ci]), majority);
        }
        let fallback = global_counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(id, _)| id.clone())
            .ok_or_else(|| Error::Validation("no records".into()))?;
        Ok(LookupIdentifier { table, fallback })
    }
}

impl Identifier for LookupIdentifier {
    fn predict(&mut self, image: &ImageTensor) -> Result<String> {
        Ok(self
            .table
            .get(&image_key(image))
            .cloned()
            .unwrap_or_else(|| self.fallback.clone()))
    }
}

/// Uniform-random guesser over a label set, for calibration tests.
pub struct RandomIdentifier {
    labels: Vec<String>,
    rng: rand_chacha::ChaCha8Rng,
}

impl RandomIdentifier {
    pub fn new(labels: Vec<String>, seed: u64) -> Self {
        RandomIdentifier {
            labels,
            rng: seeded_rng(seed, &[0x4a]),
        }
    }
}

impl Identifier for RandomIdentifier {
    fn predict(&mut self, _image: &ImageTensor) -> Result<String> {
        let i = (uniform(&mut self.rng, 0.0, self.labels.len() as f64) as usize)
            .min(self.labels.len() - 1);
        Ok(self.labels[i].clone())
    }
}

// ---------------------------------------------------------------------------
// Splits and identifier training
// ---------------------------------------------------------------------------

/// Splits record indices into train/test per identity (disjoint by image).
/// Every identity needs at least 2 images so both sides are populated.
pub fn split_by_identity(
    records: &[FaceRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_identity: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let id = r
            .identity
            .as_deref()
            .ok_or_else(|| Error::Split(format!("record {} has no identity", r.id)))?;
        by_identity.entry(id).or_default().push(i);
    }
    if by_identity.len() < 2 {
        return Err(Error::Split("need at least 2 identities".into()));
    }
    let mut identities: Vec<&str> = by_identity.keys().copied().collect();
    identities.sort();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, id) in identities.iter().enumerate() {
        let mut indices = by_identity[id].clone();
        if indices.len() < 2 {
            return Err(Error::Split(format!(
                "identity {id} has {} image(s), need at least 2",
                indices.len()
            )));
        }
        let mut rng = seeded_rng(seed, &[0x3c, k as u64]);
        for i in (1..indices.len()).rev() {
            let j = (uniform(&mut rng, 0.0, (i + 1) as f64) as usize).min(i);
            indices.swap(i, j);
        }
        let n_train =
            ((indices.len() as f64 * train_fraction).floor() as usize).clamp(1, indices.len() - 1);
        train.extend_from_slice(&indices[..n_train]);
        test.extend_from_slice(&indices[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Trains the scenario's identifier. Threat model I sees only the clear
/// training images; threat model II sees a 50/50 interleave of clear and
/// obscured images (`obscured` must align with `train_records`).
pub fn train_identifier(
    train_records: &[FaceRecord],
    obscured: Option<&[ObscurationResult]>,
    scenario: &ThreatScenario,
    cfg: &EvalConfig,
) -> Result<NetIdentifier> {
    let training_set: Vec<FaceRecord> = match scenario.model {
        ThreatModel::I => train_records.to_vec(),
        ThreatModel::II => {
            let obscured = obscured.ok_or_else(|| {
                Error::Split("threat model II needs obscured training images".into())
            })?;
            if obscured.len() != train_records.len() {
                return Err(Error::Split(format!(
                    "obscured set has {} entries for {} training records",
                    obscured.len(),
                    train_records.len()
                )));
            }
            let mut mixed = Vec::with_capacity(2 * train_records.len());
            for (r, o) in train_records.iter().zip(obscured.iter()) {
                mixed.push(r.clone());
                let mut clone = r.clone();
                clone.image = o.image.clone();
                clone.id = format!("{}-obscured", r.id);
                mixed.push(clone);
            }
            mixed
        }
    };
    let (net, acc) = train_identity_net(
        &training_set,
        cfg.identifier_size,
        &PretrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            // identifiers train as long as the budget allows; accuracy is
            // whatever the attacker achieves
            target_accuracy: 1.1,
            seed: derive_seed(scenario.seed, &[0x1f]),
        },
    )?;
    let labels = crate::model::sorted_identities(&training_set);
    Ok(NetIdentifier {
        net,
        labels,
        train_accuracy: acc,
    })
}

/// Top-1 identification accuracy over obscured test images.
pub fn identification_accuracy(
    identifier: &mut dyn Identifier,
    test_set: &[ObscurationResult],
) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Split("empty test set".into()));
    }
    let mut correct = 0usize;
    for item in test_set {
        let truth = item
            .identity
            .as_deref()
            .ok_or_else(|| Error::Validation(format!("{} has no identity", item.source_id)))?;
        if identifier.predict(&item.image)? == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

fn mean_and_cov(x: &Array2<f64>) -> (Array1<f64>, DMatrix<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let dj = row[j] - mean[j];
                cov[(i, j)] += di * dj;
            }
        }
    }
    let norm = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] * norm;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-6 {
            return Err(Error::Numerical(format!(
                "{what} has eigenvalue {v}, far below zero"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are
/// samples). Each set must contain more samples than the feature dimension.
pub fn fid(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<f64> {
    let d = features_a.shape()[1];
    if features_b.shape()[1] != d {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {d} vs {}",
            features_b.shape()[1]
        )));
    }
    for (name, set) in [("a", features_a), ("b", features_b)] {
        if set.shape()[0] <= d {
            return Err(Error::SampleSize(format!(
                "set {name} has {} samples for dimension {d}; need more samples than dimensions",
                set.shape()[0]
            )));
        }
    }
    let (mu_a, cov_a) = mean_and_cov(features_a);
    let (mu_b, cov_b) = mean_and_cov(features_b);
    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = sqrt_psd(&cov_a, "covariance a")?;
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let sqrt_inner = sqrt_psd(&inner, "symmetrized covariance product")?;
    let trace_term = cov_a.trace() + cov_b.trace() - 2.0 * sqrt_inner.trace();
    let value = mean_term + trace_term;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("fid evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

/// Penultimate-layer features for a set of images, one row per image.
pub fn extract_features(images: &[&ImageTensor], net: &PerceptualNet) -> Result<Array2<f64>> {
    let d = net.cfg.feature_dim();
    let mut out = Array2::zeros((images.len(), d));
    for (i, img) in images.iter().enumerate() {
        let f = crate::model::penultimate_features(img, net)?;
        for j in 0..d {
            out[[i, j]] = f[j];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Obscuration application
// ---------------------------------------------------------------------------

/// Shared context for applying obscuration methods to a record set.
pub struct ObscureContext<'a> {
    /// k-same partitions per k, computed over the full record set.
    pub ksame: HashMap<usize, &'a KSameOutcome>,
    pub checkpoint: Option<&'a Checkpoint>,
}

/// Obscures one record (`idx` is its index in the full set, used by k-same).
pub fn obscure_record(
    records: &[FaceRecord],
    idx: usize,
    method: &ObscurationMethod,
    ctx: &ObscureContext<'_>,
) -> Result<ObscurationResult> {
    let record = &records[idx];
    let image = match method {
        ObscurationMethod::None => record.image.clone(),
        ObscurationMethod::Gaussian { kernel_size } => gaussian_blur(&record.image, *kernel_size)?,
        ObscurationMethod::Pixelate { block_size } => pixelate(&record.image, *block_size)?,
        ObscurationMethod::KSame { k } => ctx
            .ksame
            .get(k)
            .ok_or_else(|| Error::Config(format!("no k-same partition for k = {k}")))?
            .surrogate_for(idx)
            .clone(),
        ObscurationMethod::UpGan => {
            let ck = ctx
                .checkpoint
                .ok_or_else(|| Error::Config("upgan method needs a checkpoint".into()))?;
            let (fake, _mask) = crate::train::generate(&record.attributes, &record.landmarks, ck)?;
            // the generated face itself is the obscured image (no swap), so
            // the unobscured background cannot leak identity
            fake.resized(record.image.height())?
        }
    };
    Ok(ObscurationResult {
        image,
        method: *method,
        source_id: record.id.clone(),
        identity: record.identity.clone(),
    })
}

fn obscure_many(
    records: &[FaceRecord],
    indices: &[usize],
    method: &ObscurationMethod,
    ctx: &ObscureContext<'_>,
) -> Result<Vec<ObscurationResult>> {
    indices
        .iter()
        .map(|&i| obscure_record(records, i, method, ctx))
        .collect()
}

// ---------------------------------------------------------------------------
// The full table
// ---------------------------------------------------------------------------

/// One method row of the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub threat_i: f64,
    pub threat_ii: f64,
    /// Absent for "None" (identical distributions by construction).
    pub fid: Option<f64>,
    pub identifier_train_accuracy_i: f64,
    pub identifier_train_accuracy_ii: f64,
}

/// The full evaluation grid plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub corpus: String,
    pub seed: u64,
    pub rows: Vec<MethodReport>,
}

impl MetricsReport {
    /// Plain-text table with one row per method.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(6)
            .max("Method".len());
        out.push_str(&format!(
            "{:<name_w$}  {:>14}  {:>15}  {:>8}\n",
            "Method", "Threat Model I", "Threat Model II", "FID"
        ));
        for row in &self.rows {
            let fid = match row.fid {
                Some(v) => format!("{v:.2}"),
                None => "-".into(),
            };
            out.push_str(&format!(
                "{:<name_w$}  {:>14.3}  {:>15.3}  {:>8}\n",
                row.method, row.threat_i, row.threat_ii, fid
            ));
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Runs the whole grid: per method, threat-I and threat-II identification
/// accuracy plus FID between clear and obscured feature distributions.
pub fn run_table(
    records: &[FaceRecord],
    methods: &[ObscurationMethod],
    cfg: &EvalConfig,
    checkpoint: Option<&Checkpoint>,
    corpus_label: &str,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let (train_idx, test_idx) = split_by_identity(records, cfg.train_fraction, cfg.seed)?;
    let train_records: Vec<FaceRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();

    // k-same partitions are computed over the full corpus, once per k.
    let mut ksame_outcomes: HashMap<usize, KSameOutcome> = HashMap::new();
    for m in methods {
        if let ObscurationMethod::KSame { k } = m {
            if !ksame_outcomes.contains_key(k) {
                ksame_outcomes.insert(*k, k_same(records, &KSameConfig { k: *k })?);
            }
        }
    }
    let ctx = ObscureContext {
        ksame: ksame_outcomes.iter().map(|(k, v)| (*k, v)).collect(),
        checkpoint,
    };

    // The threat-I identifier is method-independent: train it once.
    let scenario_i = ThreatScenario {
        model: ThreatModel::I,
        method: ObscurationMethod::None,
        train_fraction: cfg.train_fraction,
        seed: derive_seed(cfg.seed, &[0x71]),
    };
    let mut identifier_i = train_identifier(&train_records, None, &scenario_i, cfg)?;
    log::info!(
        "threat-I identifier train accuracy: {:.3}",
        identifier_i.train_accuracy
    );

    // FID features come from the frozen perceptual network when a checkpoint
    // provides one; otherwise the threat-I identifier's trunk serves as the
    // frozen feature net.
    let feature_net: PerceptualNet = match checkpoint.and_then(|c| c.perceptual.as_ref()) {
        Some(p) => p.net.clone(),
        None => identifier_i.net.clone(),
    };
    let clear_images: Vec<&ImageTensor> = records.iter().map(|r| &r.image).collect();
    let clear_features = extract_features(&clear_images, &feature_net)?;
    let all_idx: Vec<usize> = (0..records.len()).collect();

    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let obscured_test = obscure_many(records, &test_idx, method, &ctx)?;
        let threat_i = identification_accuracy(&mut identifier_i, &obscured_test)?;

        let (threat_ii, acc_ii) = if *method == ObscurationMethod::None {
            // training on clear + clear is the same stream; reuse the
            // threat-I identifier
            (threat_i, identifier_i.train_accuracy)
        } else {
            let obscured_train = obscure_many(records, &train_idx, method, &ctx)?;
            let scenario_ii = ThreatScenario {
                model: ThreatModel::II,
                method: *method,
                train_fraction: cfg.train_fraction,
                seed: derive_seed(cfg.seed, &[0x72, method_tag(method)]),
            };
            let mut identifier_ii =
                train_identifier(&train_records, Some(&obscured_train), &scenario_ii, cfg)?;
            let acc = identification_accuracy(&mut identifier_ii, &obscured_test)?;
            (acc, identifier_ii.train_accuracy)
        };

        let fid_value = if *method == ObscurationMethod::None {
            None
        } else {
            let obscured_all = obscure_many(records, &all_idx, method, &ctx)?;
            let obscured_images: Vec<&ImageTensor> =
                obscured_all.iter().map(|o| &o.image).collect();
            let obscured_features = extract_features(&obscured_images, &feature_net)?;
            Some(fid(&clear_features, &obscured_features)?)
        };

        rows.push(MethodReport {
            method: method.label(),
            threat_i,
            threat_ii,
            fid: fid_value,
            identifier_train_accuracy_i: identifier_i.train_accuracy,
            identifier_train_accuracy_ii: acc_ii,
        });
        log::info!(
            "{}: threat I {:.3}, threat II {:.3}",
            method.label(),
            threat_i,
            threat_ii
        );
    }
    Ok(MetricsReport {
        corpus: corpus_label.to_string(),
        seed: cfg.seed,
        rows,
    })
}

fn method_tag(m: &ObscurationMethod) -> u64 {
    match m {
        ObscurationMethod::None => 0,
        ObscurationMethod::Gaussian { kernel_size } => 0x100 + *kernel_size as u64,
        ObscurationMethod::Pixelate { block_size } => 0x200 + *block_size as u64,
        ObscurationMethod::KSame { k } => 0x300 + *k as u64,
        ObscurationMethod::UpGan => 0x400,
    }
}

/// Writes the report as JSON and aligned text next to each other.
pub fn write_report(report: &MetricsReport, out_json: &Path, out_txt: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(out_json, json).map_err(|e| Error::io(out_json, e))?;
    std::fs::write(out_txt, report.to_text_table()).map_err(|e| Error::io(out_txt, e))?;
    Ok(())
}
