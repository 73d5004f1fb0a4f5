//! Classical obscuration baselines: Gaussian blurring, pixelation and the
//! k-same average-face method.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FaceRecord, ImageTensor};

/// Blur std derived from the kernel size by the common graphics convention.
pub fn gaussian_sigma(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size - 1) as f64 / 2.0 - 1.0) + 0.8
}

fn reflect_index(v: i64, hi: i64) -> i64 {
    // whole-sample (edge-inclusive) reflection; with a symmetric kernel this
    // conserves total brightness exactly
    let period = 2 * hi;
    let mut m = v.rem_euclid(period);
    if m >= hi {
        m = period - 1 - m;
    }
    m
}

/// Normalized 1-D Gaussian taps for the given odd kernel size.
pub fn gaussian_kernel(kernel_size: usize) -> Result<Vec<f64>> {
    if kernel_size < 3 || kernel_size % 2 == 0 {
        return Err(Error::Argument(format!(
            "kernel size must be odd and at least 3, got {kernel_size}"
        )));
    }
    let sigma = gaussian_sigma(kernel_size);
    let r = (kernel_size / 2) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

/// 2-D Gaussian blur with reflect padding, applied separably per channel.
pub fn gaussian_blur(image: &ImageTensor, kernel_size: usize) -> Result<ImageTensor> {
    let kernel = gaussian_kernel(kernel_size)?;
    let r = (kernel_size / 2) as i64;
    let (h, w) = (image.height() as i64, image.width() as i64);
    let src = image.data();
    let mut tmp = Array3::zeros((h as usize, w as usize, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3usize {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let jj = reflect_index(j + ki as i64 - r, w);
                    acc += kv * src[[i as usize, jj as usize, c]];
                }
                tmp[[i as usize, j as usize, c]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3usize {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let ii = reflect_index(i + ki as i64 - r, h);
                    acc += kv * tmp[[ii as usize, j as usize, c]];
                }
                out[[i as usize, j as usize, c]] = acc;
            }
        }
    }
    ImageTensor::from_clamped(out)
}

/// Replaces each `block_size` x `block_size` tile with its mean color.
/// Ragged edge tiles are allowed; a block larger than the image collapses to
/// the global mean.
pub fn pixelate(image: &ImageTensor, block_size: usize) -> Result<ImageTensor> {
    if block_size < 2 {
        return Err(Error::Argument(format!(
            "block size must be at least 2, got {block_size}"
        )));
    }
    let (h, w) = (image.height(), image.width());
    let block = if block_size > h.min(w) {
        log::warn!("block size {block_size} exceeds image {h}x{w}; using a single tile");
        h.max(w)
    } else {
        block_size
    };
    let src = image.data();
    let mut out = Array3::zeros((h, w, 3));
    let mut i0 = 0;
    while i0 < h {
        let i1 = (i0 + block).min(h);
        let mut j0 = 0;
        while j0 < w {
            let j1 = (j0 + block).min(w);
            let count = ((i1 - i0) * (j1 - j0)) as f64;
            for c in 0..3 {
                let mut acc = 0.0;
                for i in i0..i1 {
                    for j in j0..j1 {
                        acc += src[[i, j, c]];
                    }
                }
                let mean = acc / count;
                for i in i0..i1 {
                    for j in j0..j1 {
                        out[[i, j, c]] = mean;
                    }
                }
            }
            j0 = j1;
        }
        i0 = i1;
    }
    ImageTensor::from_clamped(out)
}

/// k-same configuration: the feature space is the concatenated 17-dim
/// (attribute, landmark) vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSameConfig {
    pub k: usize,
}

impl KSameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// The k-same partition: clusters of record indices, per-record cluster
/// assignment and one surrogate (average face) per cluster.
#[derive(Debug, Clone)]
pub struct KSameOutcome {
    pub clusters: Vec<Vec<usize>>,
    pub assignment: Vec<usize>,
    pub surrogates: Vec<ImageTensor>,
}

impl KSameOutcome {
    pub fn surrogate_for(&self, record_idx: usize) -> &ImageTensor {
        &self.surrogates[self.assignment[record_idx]]
    }
}

fn feature_distance(a: &[f64; 17], b: &[f64; 17]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Greedy k-same clustering: repeatedly take the first unassigned record and
/// gather its k-1 nearest unassigned neighbors in feature space; a final
/// remainder smaller than k merges into the last cluster. Every member of a
/// cluster maps to the same per-pixel average face.
pub fn k_same(records: &[FaceRecord], cfg: &KSameConfig) -> Result<KSameOutcome> {
    cfg.validate()?;
    let n = records.len();
    if n < cfg.k {
        return Err(Error::Config(format!(
            "corpus of {n} records is smaller than k = {}",
            cfg.k
        )));
    }
    let (h, w) = (records[0].image.height(), records[0].image.width());
    for r in records {
        if r.image.height() != h || r.image.width() != w {
            return Err(Error::Shape(format!(
                "record {} is {}x{}, expected {h}x{w}",
                r.id,
                r.image.height(),
                r.image.width()
            )));
        }
    }
    let features: Vec<[f64; 17]> = records.iter().map(|r| r.input_vector()).collect();

    let mut unassigned: Vec<usize> = (0..n).collect();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    while unassigned.len() >= cfg.k {
        let seed = unassigned[0];
        let mut rest: Vec<usize> = unassigned[1..].to_vec();
        // ties break toward lower index; the sort is stable on equal keys
        rest.sort_by(|&a, &b| {
            feature_distance(&features[seed], &features[a])
                .partial_cmp(&feature_distance(&features[seed], &features[b]))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let mut cluster = vec![seed];
        cluster.extend(rest.iter().take(cfg.k - 1).copied());
        unassigned.retain(|i| !cluster.contains(i));
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    if !unassigned.is_empty() {
        let last = clusters
            .last_mut()
            .expect("at least one cluster for n >= k");
        last.extend(unassigned.iter().copied());
        last.sort_unstable();
    }

    let mut assignment = vec![0usize; n];
    let mut surrogates = Vec::with_capacity(clusters.len());
    for (ci, cluster) in clusters.iter().enumerate() {
        let mut acc = Array3::<f64>::zeros((h, w, 3));
        for &ri in cluster {
            assignment[ri] = ci;
            acc.zip_mut_with(records[ri].image.data(), |a, b| *a += b);
        }
        acc.mapv_inplace(|v| v / cluster.len() as f64);
        surrogates.push(ImageTensor::from_clamped(acc)?);
    }
    Ok(KSameOutcome {
        clusters,
        assignment,
        surrogates,
    })
}
