//! Shared domain types: images, utility vectors, masks and face records.
//!
//! All pipelines operate on these types. Images are `H x W x 3` arrays of
//! `f64` in `[0, 1]`; model-facing images are square (128x128 at full scale,
//! smaller at test scales). Utility is split into a 3-dim attribute vector
//! (age, gender, skin tone) and a 14-dim landmark vector (7 normalized
//! facial points).

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of attribute components (age, gender, skin tone).
pub const ATTRIBUTE_DIM: usize = 3;
/// Number of reduced landmark points.
pub const LANDMARK_POINTS: usize = 7;
/// Flattened landmark dimensionality.
pub const LANDMARK_DIM: usize = 2 * LANDMARK_POINTS;
/// Generator input dimensionality: attributes + landmarks.
pub const INPUT_DIM: usize = ATTRIBUTE_DIM + LANDMARK_DIM;
/// Full-scale model image side length.
pub const FULL_SCALE: usize = 128;
/// Number of points in the raw landmark annotation.
pub const RAW_LANDMARKS: usize = 68;

/// An RGB image with values in `[0, 1]`, stored `(height, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an `(H, W, 3)` array, validating the value range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let shape = data.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape(format!(
                "image must be (H, W, 3), got {:?}",
                shape
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Validation(
                "image values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Wraps an array, clamping values into `[0, 1]`.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        Self::new(data)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// Converts to channel-first `(3, H, W)` layout for model consumption.
    pub fn to_chw(&self) -> Array3<f64> {
        let (h, w) = (self.height(), self.width());
        let mut out = Array3::zeros((3, h, w));
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    out[[c, i, j]] = self.data[[i, j, c]];
                }
            }
        }
        out
    }

    /// Builds an image from a channel-first `(3, H, W)` array, clamping to `[0, 1]`.
    pub fn from_chw(chw: &Array3<f64>) -> Result<Self> {
        let shape = chw.shape();
        if shape[0] != 3 {
            return Err(Error::Shape(format!(
                "expected (3, H, W) layout, got {:?}",
                shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let mut out = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    out[[i, j, c]] = chw[[c, i, j]];
                }
            }
        }
        Self::from_clamped(out)
    }

    /// Mean intensity over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Resizes to `size x size`. Downscaling by an integer factor uses exact
    /// block means; everything else uses bilinear sampling.
    pub fn resized(&self, size: usize) -> Result<Self> {
        let (h, w) = (self.height(), self.width());
        if h == size && w == size {
            return Ok(self.clone());
        }
        let mut out = Array3::zeros((size, size, 3));
        if h % size == 0 && w % size == 0 {
            let (fh, fw) = (h / size, w / size);
            let norm = 1.0 / (fh * fw) as f64;
            for i in 0..size {
                for j in 0..size {
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for di in 0..fh {
                            for dj in 0..fw {
                                acc += self.data[[i * fh + di, j * fw + dj, c]];
                            }
                        }
                        out[[i, j, c]] = acc * norm;
                    }
                }
            }
        } else {
            let sy = h as f64 / size as f64;
            let sx = w as f64 / size as f64;
            for i in 0..size {
                for j in 0..size {
                    let y = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                    let x = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (dy, dx) = (y - y0 as f64, x - x0 as f64);
                    for c in 0..3 {
                        let v = self.data[[y0, x0, c]] * (1.0 - dy) * (1.0 - dx)
                            + self.data[[y0, x1, c]] * (1.0 - dy) * dx
                            + self.data[[y1, x0, c]] * dy * (1.0 - dx)
                            + self.data[[y1, x1, c]] * dy * dx;
                        out[[i, j, c]] = v;
                    }
                }
            }
        }
        Self::from_clamped(out)
    }

    /// Quantizes to 8-bit RGB rows (row-major, RGB interleaved).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.height() * self.width() * 3);
        for i in 0..self.height() {
            for j in 0..self.width() {
                for c in 0..3 {
                    buf.push((self.data[[i, j, c]] * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        buf
    }

    /// Builds an image from 8-bit RGB data, mapping to `[0, 1]`.
    pub fn from_rgb8(height: usize, width: usize, buf: &[u8]) -> Result<Self> {
        if buf.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "rgb8 buffer length {} does not match {}x{}x3",
                buf.len(),
                height,
                width
            )));
        }
        let mut data = Array3::zeros((height, width, 3));
        for i in 0..height {
            for j in 0..width {
                for c in 0..3 {
                    data[[i, j, c]] = buf[(i * width + j) * 3 + c] as f64 / 255.0;
                }
            }
        }
        Self::new(data)
    }
}

/// Static utility: age, gender and skin tone, each normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    /// Age divided by the maximum annotated age (116).
    pub age: f64,
    /// Binary gender label, 0 or 1.
    pub gender: f64,
    /// Skin-tone category index divided by (category count - 1).
    pub skin_tone: f64,
}

impl AttributeVector {
    pub fn new(age: f64, gender: f64, skin_tone: f64) -> Result<Self> {
        for (name, v) in [("age", age), ("skin_tone", skin_tone)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "attribute {name} = {v} outside [0, 1]"
                )));
            }
        }
        if gender != 0.0 && gender != 1.0 {
            return Err(Error::Validation(format!(
                "gender must be 0 or 1, got {gender}"
            )));
        }
        Ok(Self {
            age,
            gender,
            skin_tone,
        })
    }

    pub fn as_array(&self) -> [f64; ATTRIBUTE_DIM] {
        [self.age, self.gender, self.skin_tone]
    }
}

/// Dynamic utility: 7 facial points, coordinates normalized to `[0, 1]`.
///
/// Point order is fixed: left-eye center, right-eye center, nose center,
/// mouth-left, mouth-top, mouth-right, mouth-bottom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkVector {
    points: [[f64; 2]; LANDMARK_POINTS],
}

impl LandmarkVector {
    pub fn new(points: [[f64; 2]; LANDMARK_POINTS]) -> Result<Self> {
        for p in &points {
            for v in p {
                if !(0.0..=1.0).contains(v) || !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "landmark coordinate {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != LANDMARK_DIM {
            return Err(Error::Shape(format!(
                "landmark vector must have {} components, got {}",
                LANDMARK_DIM,
                flat.len()
            )));
        }
        let mut points = [[0.0; 2]; LANDMARK_POINTS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [flat[2 * i], flat[2 * i + 1]];
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[[f64; 2]; LANDMARK_POINTS] {
        &self.points
    }

    pub fn flat(&self) -> [f64; LANDMARK_DIM] {
        let mut out = [0.0; LANDMARK_DIM];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }

    pub fn left_eye(&self) -> [f64; 2] {
        self.points[0]
    }
    pub fn right_eye(&self) -> [f64; 2] {
        self.points[1]
    }
    pub fn nose(&self) -> [f64; 2] {
        self.points[2]
    }
    pub fn mouth_left(&self) -> [f64; 2] {
        self.points[3]
    }
    pub fn mouth_top(&self) -> [f64; 2] {
        self.points[4]
    }
    pub fn mouth_right(&self) -> [f64; 2] {
        self.points[5]
    }
    pub fn mouth_bottom(&self) -> [f64; 2] {
        self.points[6]
    }
}

/// Raw 68-point landmark annotation in pixel coordinates, iBUG ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks68 {
    points: Vec<[f64; 2]>,
}

impl Landmarks68 {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != RAW_LANDMARKS {
            return Err(Error::Annotation(format!(
                "expected {} landmark points, got {}",
                RAW_LANDMARKS,
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Annotation("non-finite landmark coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Applies a pointwise coordinate transform.
    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// A facial mask, either binary ground truth or per-pixel probabilities.
///
/// The probability form holds two softmax-normalized channels per pixel:
/// channel 0 is background, channel 1 is face.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskTensor {
    /// `(H, W)` labels in `{0, 1}`.
    Binary(Array2<f64>),
    /// `(H, W, 2)` probabilities, channels summing to 1 at each pixel.
    Probabilities(Array3<f64>),
}

impl MaskTensor {
    pub fn binary(labels: Array2<f64>) -> Result<Self> {
        if labels.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Validation(
                "binary mask labels must be exactly 0 or 1".into(),
            ));
        }
        Ok(MaskTensor::Binary(labels))
    }

    pub fn probabilities(probs: Array3<f64>) -> Result<Self> {
        let shape = probs.shape();
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::Shape(format!(
                "probability mask must be (H, W, 2), got {:?}",
                shape
            )));
        }
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                let s = probs[[i, j, 0]] + probs[[i, j, 1]];
                if (s - 1.0).abs() > 1e-5 {
                    return Err(Error::Validation(format!(
                        "mask probabilities at ({i}, {j}) sum to {s}, expected 1"
                    )));
                }
            }
        }
        Ok(MaskTensor::Probabilities(probs))
    }

    pub fn height(&self) -> usize {
        match self {
            MaskTensor::Binary(a) => a.shape()[0],
            MaskTensor::Probabilities(a) => a.shape()[0],
        }
    }

    pub fn width(&self) -> usize {
        match self {
            MaskTensor::Binary(a) => a.shape()[1],
            MaskTensor::Probabilities(a) => a.shape()[1],
        }
    }

    /// Returns the binary labels, or a validation error for the probability form.
    pub fn as_binary(&self) -> Result<&Array2<f64>> {
        match self {
            MaskTensor::Binary(a) => Ok(a),
            MaskTensor::Probabilities(_) => Err(Error::Validation(
                "expected binary mask, got probability mask".into(),
            )),
        }
    }

    /// Returns the face-channel probabilities, or the labels for the binary form.
    pub fn face_channel(&self) -> Array2<f64> {
        match self {
            MaskTensor::Binary(a) => a.clone(),
            MaskTensor::Probabilities(p) => {
                let (h, w) = (p.shape()[0], p.shape()[1]);
                Array2::from_shape_fn((h, w), |(i, j)| p[[i, j, 1]])
            }
        }
    }

    /// Thresholds the face channel into a binary mask.
    pub fn binarize(&self, threshold: f64) -> MaskTensor {
        let fc = self.face_channel();
        MaskTensor::Binary(fc.mapv(|v| if v > threshold { 1.0 } else { 0.0 }))
    }

    pub fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }
}

/// One annotated face: the unit every pipeline consumes and produces.
#[derive(Debug, Clone)]
pub struct FaceRecord {
    /// Stable identifier, usually the source filename stem.
    pub id: String,
    pub image: ImageTensor,
    pub attributes: AttributeVector,
    /// Raw 68-point annotation in pixel coordinates, when available.
    pub landmarks68: Option<Landmarks68>,
    /// Reduced 7-point landmarks, normalized.
    pub landmarks: LandmarkVector,
    /// Binary ground-truth facial mask, same size as the image.
    pub mask: Option<MaskTensor>,
    /// Identity label, when the corpus provides one.
    pub identity: Option<String>,
}

impl FaceRecord {
    /// Concatenated `(attributes, landmarks)` feature vector, the generator input.
    pub fn input_vector(&self) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        out[..ATTRIBUTE_DIM].copy_from_slice(&self.attributes.as_array());
        out[ATTRIBUTE_DIM..].copy_from_slice(&self.landmarks.flat());
        out
    }

    /// Validates cross-field invariants (mask size matches the image).
    pub fn validate(&self) -> Result<()> {
        if let Some(mask) = &self.mask {
            if mask.height() != self.image.height() || mask.width() != self.image.width() {
                return Err(Error::Validation(format!(
                    "mask {}x{} does not match image {}x{}",
                    mask.height(),
                    mask.width(),
                    self.image.height(),
                    self.image.width()
                )));
            }
        }
        Ok(())
    }

    /// Rescales the record to a square `size` image. Landmarks are normalized
    /// so only pixel-space fields change; the mask uses majority resampling.
    pub fn resized(&self, size: usize) -> Result<FaceRecord> {
        let (h, w) = (self.image.height(), self.image.width());
        if h == size && w == size {
            return Ok(self.clone());
        }
        let image = self.image.resized(size)?;
        let sy = size as f64 / h as f64;
        let sx = size as f64 / w as f64;
        let landmarks68 = self
            .landmarks68
            .as_ref()
            .map(|l| l.map(|[x, y]| [x * sx, y * sy]));
        let mask = match &self.mask {
            Some(m) => {
                let labels = m.as_binary()?;
                let mut out = Array2::zeros((size, size));
                if h % size == 0 && w % size == 0 {
                    // Integer downscale: majority vote over each block.
                    let (fh, fw) = (h / size, w / size);
                    for i in 0..size {
                        for j in 0..size {
                            let mut acc = 0.0;
                            for di in 0..fh {
                                for dj in 0..fw {
                                    acc += labels[[i * fh + di, j * fw + dj]];
                                }
                            }
                            out[[i, j]] = if acc * 2.0 > (fh * fw) as f64 {
                                1.0
                            } else {
                                0.0
                            };
                        }
                    }
                } else {
                    for i in 0..size {
                        for j in 0..size {
                            let y = (((i as f64 + 0.5) / sy) - 0.5)
                                .round()
                                .clamp(0.0, (h - 1) as f64);
                            let x = (((j as f64 + 0.5) / sx) - 0.5)
                                .round()
                                .clamp(0.0, (w - 1) as f64);
                            out[[i, j]] = labels[[y as usize, x as usize]];
                        }
                    }
                }
                Some(MaskTensor::Binary(out))
            }
            None => None,
        };
        Ok(FaceRecord {
            id: self.id.clone(),
            image,
            attributes: self.attributes,
            landmarks68,
            landmarks: self.landmarks,
            mask,
            identity: self.identity.clone(),
        })
    }
}

/// Obscuration methods compared by the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ObscurationMethod {
    None,
    Gaussian { kernel_size: usize },
    Pixelate { block_size: usize },
    KSame { k: usize },
    UpGan,
}

impl ObscurationMethod {
    /// Parses method specs of the form `none`, `gaussian:15`, `pixelate:8`,
    /// `ksame:10`, `upgan`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (spec, None),
        };
        let need = |what: &str| {
            param
                .ok_or_else(|| Error::Argument(format!("method {name} requires :<{what}>")))
                .and_then(|p| {
                    p.parse::<usize>()
                        .map_err(|_| Error::Argument(format!("bad {what} parameter: {p}")))
                })
        };
        match name {
            "none" => Ok(ObscurationMethod::None),
            "gaussian" => Ok(ObscurationMethod::Gaussian {
                kernel_size: need("kernel_size")?,
            }),
            "pixelate" => Ok(ObscurationMethod::Pixelate {
                block_size: need("block_size")?,
            }),
            "ksame" => Ok(ObscurationMethod::KSame { k: need("k")? }),
            "upgan" => Ok(ObscurationMethod::UpGan),
            other => Err(Error::Argument(format!(
                "unknown obscuration method: {other}"
            ))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ObscurationMethod::None => "None".into(),
            ObscurationMethod::Gaussian { kernel_size } => format!("Gaussian-{kernel_size}"),
            ObscurationMethod::Pixelate { block_size } => format!("Pixelation-{block_size}"),
            ObscurationMethod::KSame { k } => format!("k-same-{k}"),
            ObscurationMethod::UpGan => "UP-GAN".into(),
        }
    }
}

impl std::fmt::Display for ObscurationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// An obscured image plus the provenance needed for evaluation.
#[derive(Debug, Clone)]
pub struct ObscurationResult {
    pub image: ImageTensor,
    pub method: ObscurationMethod,
    pub source_id: String,
    pub identity: Option<String>,
}
