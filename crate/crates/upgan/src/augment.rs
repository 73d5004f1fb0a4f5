//! Training-time augmentation: elastic distortion and random rotation.
//!
//! Both transforms are pure functions of (record, parameters, seed). Images
//! are resampled bilinearly with zero padding, masks with nearest-neighbor
//! so they stay binary, and landmark coordinates are transformed
//! analytically (rotation) or by displacement-field lookup (elastic), never
//! resampled.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dataset::reduce_landmarks;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, uniform};
use crate::types::{FaceRecord, ImageTensor, LandmarkVector, MaskTensor};

/// Augmentation parameters, echoed from the training config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Displacement magnitude in pixels.
    pub elastic_alpha: f64,
    /// Gaussian smoothing std of the displacement field, in pixels.
    pub elastic_sigma: f64,
    /// Rotation range in degrees.
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            elastic_alpha: 8.0,
            elastic_sigma: 6.0,
            rotation_min_deg: -30.0,
            rotation_max_deg: 30.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elastic_alpha < 0.0 {
            return Err(Error::Config("elastic_alpha must be >= 0".into()));
        }
        if self.elastic_sigma <= 0.0 {
            return Err(Error::Config("elastic_sigma must be > 0".into()));
        }
        if self.rotation_min_deg > self.rotation_max_deg
            || self.rotation_min_deg < -180.0
            || self.rotation_max_deg > 180.0
        {
            return Err(Error::Config(
                "rotation range must be within [-180, 180] and ordered".into(),
            ));
        }
        Ok(())
    }
}

fn bilinear(data: &Array3<f64>, y: f64, x: f64, c: usize) -> f64 {
    let (h, w) = (data.shape()[0] as f64, data.shape()[1] as f64);
    if y <= -1.0 || x <= -1.0 || y >= h || x >= w {
        return 0.0;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let (dy, dx) = (y - y0, x - x0);
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h || xx >= w {
            0.0
        } else {
            data[[yy as usize, xx as usize, c]]
        }
    };
    sample(y0, x0) * (1.0 - dy) * (1.0 - dx)
        + sample(y0, x0 + 1.0) * (1.0 - dy) * dx
        + sample(y0 + 1.0, x0) * dy * (1.0 - dx)
        + sample(y0 + 1.0, x0 + 1.0) * dy * dx
}

fn nearest_mask(labels: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = (labels.shape()[0] as i64, labels.shape()[1] as i64);
    let yi = y.round() as i64;
    let xi = x.round() as i64;
    if yi < 0 || xi < 0 || yi >= h || xi >= w {
        0.0
    } else {
        labels[[yi as usize, xi as usize]]
    }
}

fn field_lookup(field: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = (field.shape()[0] as f64, field.shape()[1] as f64);
    let yc = y.clamp(0.0, h - 1.0);
    let xc = x.clamp(0.0, w - 1.0);
    let y0 = yc.floor();
    let x0 = xc.floor();
    let y1 = (y0 + 1.0).min(h - 1.0);
    let x1 = (x0 + 1.0).min(w - 1.0);
    let (dy, dx) = (yc - y0, xc - x0);
    field[[y0 as usize, x0 as usize]] * (1.0 - dy) * (1.0 - dx)
        + field[[y0 as usize, x1 as usize]] * (1.0 - dy) * dx
        + field[[y1 as usize, x0 as usize]] * dy * (1.0 - dx)
        + field[[y1 as usize, x1 as usize]] * dy * dx
}

/// Gaussian-smooths a field with a normalized 1-D kernel applied separably,
/// reflecting at the borders. The output magnitude never exceeds the input's.
fn gaussian_smooth(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (h, w) = (field.shape()[0] as i64, field.shape()[1] as i64);
    let reflect = |v: i64, hi: i64| -> i64 {
        // whole-sample (edge-inclusive) reflection
        let period = 2 * hi;
        let mut m = v.rem_euclid(period);
        if m >= hi {
            m = period - 1 - m;
        }
        m
    };
    let mut tmp = Array2::zeros((h as usize, w as usize));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let jj = reflect(j + ki as i64 - radius, w);
                acc += kv * field[[i as usize, jj as usize]];
            }
            tmp[[i as usize, j as usize]] = acc;
        }
    }
    let mut out = Array2::zeros((h as usize, w as usize));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let ii = reflect(i + ki as i64 - radius, h);
                acc += kv * tmp[[ii as usize, j as usize]];
            }
            out[[i as usize, j as usize]] = acc;
        }
    }
    out
}

/// Builds the smoothed displacement fields (dy, dx) for an elastic pass.
/// Exposed so tests can bound landmark displacement against the raw field.
pub fn elastic_fields(
    height: usize,
    width: usize,
    alpha: f64,
    sigma: f64,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let mut rng = seeded_rng(seed, &[0xe1]);
    let mut dx = Array2::zeros((height, width));
    let mut dy = Array2::zeros((height, width));
    for v in dx.iter_mut() {
        *v = uniform(&mut rng, -1.0, 1.0);
    }
    for v in dy.iter_mut() {
        *v = uniform(&mut rng, -1.0, 1.0);
    }
    let mut dx = gaussian_smooth(&dx, sigma);
    let mut dy = gaussian_smooth(&dy, sigma);
    dx.mapv_inplace(|v| v * alpha);
    dy.mapv_inplace(|v| v * alpha);
    (dy, dx)
}

/// Applies a random smooth displacement field to image, mask and landmarks.
/// The image is backward-warped with bilinear sampling, the mask with
/// nearest-neighbor, and each landmark moves by the field value at its own
/// position (the first-order inverse of the backward warp).
pub fn elastic_distortion(
    record: &FaceRecord,
    alpha: f64,
    sigma: f64,
    seed: u64,
) -> Result<FaceRecord> {
    if alpha < 0.0 {
        return Err(Error::Config("elastic alpha must be >= 0".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Config("elastic sigma must be > 0".into()));
    }
    if alpha == 0.0 {
        return Ok(record.clone());
    }
    let (h, w) = (record.image.height(), record.image.width());
    let (dy, dx) = elastic_fields(h, w, alpha, sigma, seed);

    let src = record.image.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let sy = i as f64 + dy[[i, j]];
            let sx = j as f64 + dx[[i, j]];
            for c in 0..3 {
                out[[i, j, c]] = bilinear(src, sy, sx, c);
            }
        }
    }
    let image = ImageTensor::from_clamped(out)?;

    let mask = match &record.mask {
        Some(m) => {
            let labels = m.as_binary()?;
            let mut out = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let sy = i as f64 + dy[[i, j]];
                    let sx = j as f64 + dx[[i, j]];
                    out[[i, j]] = nearest_mask(labels, sy, sx);
                }
            }
            Some(MaskTensor::binary(out)?)
        }
        None => None,
    };

    let move_point = |p: [f64; 2]| -> [f64; 2] {
        let d_y = field_lookup(&dy, p[1], p[0]);
        let d_x = field_lookup(&dx, p[1], p[0]);
        [p[0] - d_x, p[1] - d_y]
    };
    let (landmarks68, landmarks) = transform_landmarks(record, w, h, move_point);

    Ok(FaceRecord {
        id: record.id.clone(),
        image,
        attributes: record.attributes,
        landmarks68,
        landmarks,
        mask,
        identity: record.identity.clone(),
    })
}

/// Rotates a record by an exact angle (degrees) about the image center:
/// bilinear image resampling with zero padding, nearest-neighbor mask,
/// analytic landmark rotation.
pub fn rotate_record(record: &FaceRecord, theta_deg: f64) -> Result<FaceRecord> {
    if theta_deg == 0.0 {
        return Ok(record.clone());
    }
    let (h, w) = (record.image.height(), record.image.width());
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let theta = theta_deg.to_radians();
    let (sin, cos) = theta.sin_cos();

    let src = record.image.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            // inverse rotation: where did this output pixel come from?
            let ox = j as f64 - cx;
            let oy = i as f64 - cy;
            let sx = cos * ox + sin * oy + cx;
            let sy = -sin * ox + cos * oy + cy;
            for c in 0..3 {
                out[[i, j, c]] = bilinear(src, sy, sx, c);
            }
        }
    }
    let image = ImageTensor::from_clamped(out)?;

    let mask = match &record.mask {
        Some(m) => {
            let labels = m.as_binary()?;
            let mut out = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let ox = j as f64 - cx;
                    let oy = i as f64 - cy;
                    let sx = cos * ox + sin * oy + cx;
                    let sy = -sin * ox + cos * oy + cy;
                    out[[i, j]] = nearest_mask(labels, sy, sx);
                }
            }
            Some(MaskTensor::binary(out)?)
        }
        None => None,
    };

    let move_point = |p: [f64; 2]| -> [f64; 2] {
        let ox = p[0] - cx;
        let oy = p[1] - cy;
        [cos * ox - sin * oy + cx, sin * ox + cos * oy + cy]
    };
    let (landmarks68, landmarks) = transform_landmarks(record, w, h, move_point);

    Ok(FaceRecord {
        id: record.id.clone(),
        image,
        attributes: record.attributes,
        landmarks68,
        landmarks,
        mask,
        identity: record.identity.clone(),
    })
}

/// Samples an angle uniformly from `range_deg` and rotates.
pub fn random_rotation(
    record: &FaceRecord,
    range_deg: (f64, f64),
    seed: u64,
) -> Result<FaceRecord> {
    let (lo, hi) = range_deg;
    if lo > hi || lo < -180.0 || hi > 180.0 {
        return Err(Error::Config(
            "rotation range must be within [-180, 180] and ordered".into(),
        ));
    }
    let mut rng = seeded_rng(seed, &[0x20]);
    let theta = uniform(&mut rng, lo, hi);
    rotate_record(record, theta)
}

/// Applies a coordinate transform to the record's landmarks: the 68-point
/// annotation (when present) is transformed in pixel space and re-reduced,
/// otherwise the 7 normalized points are transformed directly.
fn transform_landmarks(
    record: &FaceRecord,
    width: usize,
    height: usize,
    move_point: impl Fn([f64; 2]) -> [f64; 2],
) -> (Option<crate::types::Landmarks68>, LandmarkVector) {
    match &record.landmarks68 {
        Some(l68) => {
            let moved = l68.map(&move_point);
            let (reduced, clamped) = reduce_landmarks(&moved, width, height);
            if clamped {
                log::warn!(
                    "augmented landmarks left the image in {}, clamped",
                    record.id
                );
            }
            (Some(moved), reduced)
        }
        None => {
            let mut pts = *record.landmarks.points();
            let mut clamped = false;
            for p in &mut pts {
                let moved = move_point([p[0] * width as f64, p[1] * height as f64]);
                let x = moved[0] / width as f64;
                let y = moved[1] / height as f64;
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    clamped = true;
                }
                *p = [x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)];
            }
            if clamped {
                log::warn!(
                    "augmented landmarks left the image in {}, clamped",
                    record.id
                );
            }
            (
                None,
                LandmarkVector::new(pts).expect("clamped coordinates in range"),
            )
        }
    }
}

/// Elastic distortion followed by random rotation, with sub-seeds derived
/// from the given seed.
pub fn apply_augment(record: &FaceRecord, cfg: &AugmentConfig, seed: u64) -> Result<FaceRecord> {
    cfg.validate()?;
    let distorted = elastic_distortion(
        record,
        cfg.elastic_alpha,
        cfg.elastic_sigma,
        crate::nn::derive_seed(seed, &[1]),
    )?;
    random_rotation(
        &distorted,
        (cfg.rotation_min_deg, cfg.rotation_max_deg),
        crate::nn::derive_seed(seed, &[2]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_face;
    use crate::types::AttributeVector;

    fn test_record() -> FaceRecord {
        let attrs = AttributeVector::new(0.3, 0.0, 0.5).unwrap();
        let lms = LandmarkVector::new([
            [0.37, 0.40],
            [0.63, 0.40],
            [0.50, 0.54],
            [0.40, 0.66],
            [0.50, 0.62],
            [0.60, 0.66],
            [0.50, 0.70],
        ])
        .unwrap();
        synth_face(&attrs, &lms, 17)
    }

    #[test]
    fn elastic_alpha_zero_is_identity() {
        let r = test_record();
        let out = elastic_distortion(&r, 0.0, 6.0, 3).unwrap();
        assert_eq!(out.image, r.image);
        assert_eq!(out.mask.as_ref().unwrap(), r.mask.as_ref().unwrap());
        assert_eq!(out.landmarks, r.landmarks);
    }

    #[test]
    fn elastic_same_seed_is_deterministic() {
        let r = test_record();
        let a = elastic_distortion(&r, 8.0, 6.0, 5).unwrap();
        let b = elastic_distortion(&r, 8.0, 6.0, 5).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.landmarks, b.landmarks);
        let c = elastic_distortion(&r, 8.0, 6.0, 6).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn elastic_landmark_displacement_bounded_by_alpha() {
        let r = test_record();
        let alpha = 8.0;
        let out = elastic_distortion(&r, alpha, 6.0, 11).unwrap();
        let s = r.image.width() as f64;
        for (a, b) in r
            .landmarks68
            .as_ref()
            .unwrap()
            .points()
            .iter()
            .zip(out.landmarks68.as_ref().unwrap().points().iter())
        {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            // each axis moves at most alpha, so the total is at most alpha*sqrt(2)
            assert!(d <= alpha * std::f64::consts::SQRT_2 + 1e-9, "moved {d} px");
        }
        let _ = s;
    }

    #[test]
    fn elastic_field_magnitude_bounded() {
        let (dy, dx) = elastic_fields(32, 32, 8.0, 6.0, 4);
        assert!(dy.iter().all(|v| v.abs() <= 8.0));
        assert!(dx.iter().all(|v| v.abs() <= 8.0));
    }

    #[test]
    fn elastic_mask_stays_binary() {
        let r = test_record();
        let out = elastic_distortion(&r, 8.0, 6.0, 7).unwrap();
        let labels = out.mask.as_ref().unwrap().as_binary().unwrap();
        assert!(labels.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn rotation_zero_range_is_identity() {
        let r = test_record();
        let out = random_rotation(&r, (0.0, 0.0), 9).unwrap();
        assert_eq!(out.image, r.image);
        assert_eq!(out.landmarks, r.landmarks);
    }

    #[test]
    fn rotation_composition_on_landmarks() {
        let r = test_record();
        let twice = rotate_record(&rotate_record(&r, 90.0).unwrap(), 90.0).unwrap();
        let once = rotate_record(&r, 180.0).unwrap();
        for (a, b) in twice
            .landmarks
            .points()
            .iter()
            .zip(once.landmarks.points().iter())
        {
            assert!((a[0] - b[0]).abs() < 1e-9);
            assert!((a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_matches_closed_form() {
        // landmark (0.75, 0.5) about center (0.5, 0.5) by 30 degrees
        let mut r = test_record();
        r.landmarks68 = None;
        let mut pts = *r.landmarks.points();
        pts[2] = [0.75, 0.5];
        r.landmarks = LandmarkVector::new(pts).unwrap();
        let out = rotate_record(&r, 30.0).unwrap();
        let nose = out.landmarks.nose();
        let expect_x = 0.5 + 0.25 * (30f64.to_radians().cos());
        let expect_y = 0.5 + 0.25 * (30f64.to_radians().sin());
        assert!((nose[0] - expect_x).abs() < 1e-9, "{nose:?}");
        assert!((nose[1] - expect_y).abs() < 1e-9, "{nose:?}");
    }

    #[test]
    fn rotate_then_reduce_commutes() {
        let r = test_record();
        let rotated = rotate_record(&r, 20.0).unwrap();
        // reduce(rotate(l68)) computed inside rotate_record; compare with
        // rotating the already-reduced points analytically.
        let (h, w) = (r.image.height() as f64, r.image.width() as f64);
        let (cy, cx) = (h / 2.0, w / 2.0);
        let theta = 20f64.to_radians();
        let (sin, cos) = theta.sin_cos();
        for (orig, got) in r
            .landmarks
            .points()
            .iter()
            .zip(rotated.landmarks.points().iter())
        {
            let ox = orig[0] * w - cx;
            let oy = orig[1] * h - cy;
            let ex = (cos * ox - sin * oy + cx) / w;
            let ey = (sin * ox + cos * oy + cy) / h;
            assert!((got[0] - ex).abs() < 1e-6);
            assert!((got[1] - ey).abs() < 1e-6);
        }
    }

    #[test]
    fn full_augment_identity_when_disabled() {
        let r = test_record();
        let cfg = AugmentConfig {
            elastic_alpha: 0.0,
            elastic_sigma: 6.0,
            rotation_min_deg: 0.0,
            rotation_max_deg: 0.0,
            seed: 0,
        };
        let out = apply_augment(&r, &cfg, 31).unwrap();
        assert_eq!(out.image, r.image);
        assert_eq!(out.mask.as_ref().unwrap(), r.mask.as_ref().unwrap());
        assert_eq!(out.landmarks, r.landmarks);
    }

    #[test]
    fn augment_config_validation() {
        let mut cfg = AugmentConfig::default();
        cfg.elastic_sigma = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.rotation_max_deg = 200.0;
        assert!(cfg.validate().is_err());
    }
}
