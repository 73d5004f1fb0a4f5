//! Corpus ingest and the deterministic synthetic test corpus.
//!
//! Real corpora follow the UTKFace convention: attributes are encoded in the
//! filename (`<age>_<gender>_<race>_*.ext`, age in 0..=116, 5 skin-tone
//! categories) and a 68-point landmark sidecar sits next to each image
//! (`<stem>.pts`, one `x y` line per point). The synthetic corpus is a
//! procedurally drawn stand-in that carries its own ground truth, so tests
//! and experiments never require downloading data.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, uniform};
use crate::types::{
    AttributeVector, FaceRecord, ImageTensor, LandmarkVector, Landmarks68, MaskTensor, FULL_SCALE,
    LANDMARK_DIM, LANDMARK_POINTS, RAW_LANDMARKS,
};

/// Maximum annotated age in the filename convention.
pub const MAX_AGE: u32 = 116;
/// Number of skin-tone categories in the filename convention.
pub const SKIN_CATEGORIES: u32 = 5;

// ---------------------------------------------------------------------------
// Annotation parsing
// ---------------------------------------------------------------------------

/// Parses the attribute triple from a UTKFace-style filename stem.
pub fn parse_attributes(filename: &str) -> Result<AttributeVector> {
    let stem = filename
        .rsplit_once('.')
        .map(|(s, _)| s)
        .unwrap_or(filename);
    let tokens: Vec<&str> = stem.split('_').collect();
    if tokens.len() < 3 {
        return Err(Error::Parse(format!(
            "filename '{filename}' does not match <age>_<gender>_<race>_*"
        )));
    }
    let age: u32 = tokens[0]
        .parse()
        .map_err(|_| Error::Parse(format!("age token '{}' is not an integer", tokens[0])))?;
    if age > MAX_AGE {
        return Err(Error::Parse(format!(
            "age token '{}' exceeds the maximum of {MAX_AGE}",
            tokens[0]
        )));
    }
    let gender: u32 = tokens[1]
        .parse()
        .map_err(|_| Error::Parse(format!("gender token '{}' is not an integer", tokens[1])))?;
    if gender > 1 {
        return Err(Error::Parse(format!(
            "gender token '{}' must be 0 or 1",
            tokens[1]
        )));
    }
    let race: u32 = tokens[2]
        .parse()
        .map_err(|_| Error::Parse(format!("race token '{}' is not an integer", tokens[2])))?;
    if race >= SKIN_CATEGORIES {
        return Err(Error::Parse(format!(
            "race token '{}' must be below {SKIN_CATEGORIES}",
            tokens[2]
        )));
    }
    AttributeVector::new(
        age as f64 / MAX_AGE as f64,
        gender as f64,
        race as f64 / (SKIN_CATEGORIES - 1) as f64,
    )
}

/// Reads a 68-point landmark sidecar: one `x y` line per point.
pub fn read_landmark_file(path: &Path) -> Result<Landmarks68> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Annotation(format!("bad landmark line '{line}'")))?;
        let y: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Annotation(format!("bad landmark line '{line}'")))?;
        points.push([x, y]);
    }
    Landmarks68::new(points)
}

/// Writes a landmark sidecar in the same format.
pub fn write_landmark_file(path: &Path, landmarks: &Landmarks68) -> Result<()> {
    let mut out = String::new();
    for p in landmarks.points() {
        out.push_str(&format!("{} {}\n", p[0], p[1]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads one annotated face: the image, filename attributes and the landmark
/// sidecar, with reduced landmarks and a derived convex-hull mask.
pub fn parse_annotation(image_path: &Path, landmark_path: &Path) -> Result<FaceRecord> {
    let filename = image_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parse(format!("bad image path {}", image_path.display())))?;
    let attributes = parse_attributes(filename)?;
    let landmarks68 = read_landmark_file(landmark_path)?;
    let image = load_image(image_path)?;
    let (landmarks, clamped) = reduce_landmarks(&landmarks68, image.width(), image.height());
    if clamped {
        log::warn!("landmarks outside image bounds in {filename}, clamped");
    }
    let mask = derive_mask(&landmarks68, (image.height(), image.width()))?;
    let id = filename
        .rsplit_once('.')
        .map(|(s, _)| s)
        .unwrap_or(filename)
        .to_string();
    Ok(FaceRecord {
        id,
        image,
        attributes,
        landmarks68: Some(landmarks68),
        landmarks,
        mask: Some(mask),
        identity: None,
    })
}

// ---------------------------------------------------------------------------
// Landmark reduction
// ---------------------------------------------------------------------------

/// Reduces 68 iBUG-ordered points to the 7-point landmark vector: eye
/// centers are the means of each eye's 6 points (36..42, 42..48), the nose
/// center is point 30, and the mouth anchors are points 48/51/54/57.
/// Coordinates are normalized by image width/height and clamped into [0, 1];
/// the flag reports whether any clamping happened.
pub fn reduce_landmarks(
    landmarks68: &Landmarks68,
    width: usize,
    height: usize,
) -> (LandmarkVector, bool) {
    let pts = landmarks68.points();
    let mean_of = |range: std::ops::Range<usize>| -> [f64; 2] {
        let n = range.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in range {
            sx += pts[i][0];
            sy += pts[i][1];
        }
        [sx / n, sy / n]
    };
    let raw = [
        mean_of(36..42),
        mean_of(42..48),
        pts[30],
        pts[48],
        pts[51],
        pts[54],
        pts[57],
    ];
    let mut clamped = false;
    let mut points = [[0.0; 2]; LANDMARK_POINTS];
    for (i, p) in raw.iter().enumerate() {
        let x = p[0] / width as f64;
        let y = p[1] / height as f64;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            clamped = true;
        }
        points[i] = [x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)];
    }
    (
        LandmarkVector::new(points).expect("clamped coordinates are in range"),
        clamped,
    )
}

// ---------------------------------------------------------------------------
// Mask derivation
// ---------------------------------------------------------------------------

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain convex hull. Returns hull vertices in order;
/// collinear inputs collapse to the two extreme points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    let n = pts.len();
    if n <= 2 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * n);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 1e-12 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 1e-12
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn hull_area(hull: &[[f64; 2]]) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc.abs() / 2.0
}

fn bresenham(mask: &mut Array2<f64>, p0: [f64; 2], p1: [f64; 2]) {
    let (h, w) = (mask.shape()[0] as i64, mask.shape()[1] as i64);
    let clampi = |v: f64, hi: i64| (v.round() as i64).clamp(0, hi - 1);
    let (mut x0, mut y0) = (clampi(p0[0], w), clampi(p0[1], h));
    let (x1, y1) = (clampi(p1[0], w), clampi(p1[1], h));
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        mask[[y0 as usize, x0 as usize]] = 1.0;
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn dilate_once(mask: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            'scan: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (y, x) = (i as i64 + di, j as i64 + dj);
                    if y >= 0 && y < h as i64 && x >= 0 && x < w as i64 {
                        if mask[[y as usize, x as usize]] == 1.0 {
                            out[[i, j]] = 1.0;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Rasterizes the filled convex hull of the 68 landmark points as a binary
/// mask. Pixel (row, col) is inside when the point (col, row) lies inside or
/// on the hull. A degenerate (collinear) hull falls back to the bounding
/// segment dilated by one pixel.
pub fn derive_mask(landmarks68: &Landmarks68, size: (usize, usize)) -> Result<MaskTensor> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::Shape("mask size must be nonzero".into()));
    }
    let hull = convex_hull(landmarks68.points());
    let mut mask = Array2::zeros((h, w));
    if hull.len() < 3 || hull_area(&hull) < 1e-9 {
        let (p0, p1) = extreme_pair(landmarks68.points());
        bresenham(&mut mask, p0, p1);
        mask = dilate_once(&mask);
        return MaskTensor::binary(mask);
    }
    for i in 0..h {
        for j in 0..w {
            let pt = [j as f64, i as f64];
            let mut inside = true;
            for e in 0..hull.len() {
                let a = hull[e];
                let b = hull[(e + 1) % hull.len()];
                if cross(a, b, pt) < -1e-9 {
                    inside = false;
                    break;
                }
            }
            if inside {
                mask[[i, j]] = 1.0;
            }
        }
    }
    MaskTensor::binary(mask)
}

fn extreme_pair(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = points[0];
    let mut hi = points[0];
    for &p in points {
        if p < lo {
            lo = p;
        }
        if p > hi {
            hi = p;
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Synthetic faces
// ---------------------------------------------------------------------------

struct FaceGeometry {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

fn face_geometry(landmarks: &LandmarkVector, age: f64, size: usize) -> FaceGeometry {
    let s = size as f64;
    let px = |p: [f64; 2]| [p[0] * s, p[1] * s];
    let el = px(landmarks.left_eye());
    let er = px(landmarks.right_eye());
    let mouth = [
        px(landmarks.mouth_left()),
        px(landmarks.mouth_top()),
        px(landmarks.mouth_right()),
        px(landmarks.mouth_bottom()),
    ];
    let eye_mid = [(el[0] + er[0]) / 2.0, (el[1] + er[1]) / 2.0];
    let mouth_mid = [
        mouth.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        mouth.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    let cx = (eye_mid[0] + mouth_mid[0]) / 2.0;
    let cy = (eye_mid[1] + mouth_mid[1]) / 2.0;
    let span = (er[0] - el[0]).abs().max(4.0);
    let age_factor = 0.92 + 0.16 * age;
    let mut rx = (span * 0.95).max(span / 2.0 + 0.06 * s) * age_factor;
    let mut ry = ((mouth_mid[1] - eye_mid[1]).abs() * 1.45).max(0.12 * s) * age_factor;
    let margin = 3.0;
    rx = rx.min(cx - margin).min(s - 1.0 - cx - margin).max(2.0);
    ry = ry.min(cy - margin).min(s - 1.0 - cy - margin).max(2.0);
    FaceGeometry { cx, cy, rx, ry }
}

fn fill_ellipse(img: &mut Array3<f64>, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) {
    let (h, w) = (img.shape()[0] as i64, img.shape()[1] as i64);
    let i0 = ((cy - ry).floor() as i64).clamp(0, h - 1);
    let i1 = ((cy + ry).ceil() as i64).clamp(0, h - 1);
    let j0 = ((cx - rx).floor() as i64).clamp(0, w - 1);
    let j1 = ((cx + rx).ceil() as i64).clamp(0, w - 1);
    for i in i0..=i1 {
        for j in j0..=j1 {
            let dx = (j as f64 - cx) / rx;
            let dy = (i as f64 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                for c in 0..3 {
                    img[[i as usize, j as usize, c]] = color[c];
                }
            }
        }
    }
}

fn fill_quad(img: &mut Array3<f64>, quad: &[[f64; 2]; 4], color: [f64; 3]) {
    let hull = convex_hull(quad);
    if hull.len() < 3 {
        return;
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let min_y = quad.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = quad.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let min_x = quad.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = quad.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    for i in (min_y.floor().max(0.0) as usize)..=(max_y.ceil().min(h as f64 - 1.0) as usize) {
        for j in (min_x.floor().max(0.0) as usize)..=(max_x.ceil().min(w as f64 - 1.0) as usize) {
            let pt = [j as f64, i as f64];
            let inside =
                (0..hull.len()).all(|e| cross(hull[e], hull[(e + 1) % hull.len()], pt) >= -1e-9);
            if inside {
                for c in 0..3 {
                    img[[i, j, c]] = color[c];
                }
            }
        }
    }
}

/// Deterministic procedural face used by the synthetic corpus: a skin-toned
/// ellipse with eyes, nose and mouth painted at the landmark positions and an
/// identity-seeded texture pattern. The record carries its own binary mask
/// and a 68-point template whose eye means, nose point and mouth anchors
/// reduce exactly back to the input landmarks.
pub fn synth_face(
    attributes: &AttributeVector,
    landmarks: &LandmarkVector,
    identity_seed: u64,
) -> FaceRecord {
    let size = FULL_SCALE;
    let s = size as f64;
    let mut rng = seeded_rng(identity_seed, &[0x5f]);
    // Identity-stable draws, fixed order.
    let wave: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                uniform(&mut rng, 0.0, std::f64::consts::PI),
                uniform(
                    &mut rng,
                    std::f64::consts::TAU / 24.0,
                    std::f64::consts::TAU / 9.0,
                ),
                uniform(&mut rng, 0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let eye_r = 2.2 + uniform(&mut rng, 0.0, 1.2);
    let brow_dy = 4.0 + uniform(&mut rng, 0.0, 2.0);
    let nose_shade = 0.72 + uniform(&mut rng, 0.0, 0.16);
    let pupil = 0.05 + uniform(&mut rng, 0.0, 0.06);

    let geo = face_geometry(landmarks, attributes.age, size);
    let base = 0.30 + 0.50 * attributes.skin_tone;
    let tint = [(base * 1.06).min(1.0), base, base * 0.92];

    let mut img = Array3::zeros((size, size, 3));
    let mut mask = Array2::zeros((size, size));
    const TEX_AMP: f64 = 0.05;
    for i in 0..size {
        for j in 0..size {
            let bg = 0.10 + 0.06 * (i as f64 / s);
            let dx = (j as f64 - geo.cx) / geo.rx;
            let dy = (i as f64 - geo.cy) / geo.ry;
            let r2 = dx * dx + dy * dy;
            if r2 <= 1.0 {
                mask[[i, j]] = 1.0;
                let mut tex = 0.0;
                for &(angle, freq, phase) in &wave {
                    let u = angle.cos() * j as f64 + angle.sin() * i as f64;
                    tex += TEX_AMP * (freq * u + phase).sin();
                }
                let shade = 1.0 - 0.22 * r2 * r2;
                for c in 0..3 {
                    img[[i, j, c]] = (tint[c] * shade + tex).clamp(0.0, 1.0);
                }
            } else {
                for c in 0..3 {
                    img[[i, j, c]] = bg;
                }
            }
        }
    }

    let px = |p: [f64; 2]| [p[0] * s, p[1] * s];
    let el = px(landmarks.left_eye());
    let er = px(landmarks.right_eye());
    let nose = px(landmarks.nose());
    let ml = px(landmarks.mouth_left());
    let mt = px(landmarks.mouth_top());
    let mr = px(landmarks.mouth_right());
    let mb = px(landmarks.mouth_bottom());

    // Brows: thicker for gender = 1.
    let brow_thick = 1.4 + 1.6 * attributes.gender;
    for e in [el, er] {
        fill_quad(
            &mut img,
            &[
                [e[0] - 2.0 * eye_r, e[1] - brow_dy - brow_thick],
                [e[0] + 2.0 * eye_r, e[1] - brow_dy - brow_thick],
                [e[0] + 2.0 * eye_r, e[1] - brow_dy],
                [e[0] - 2.0 * eye_r, e[1] - brow_dy],
            ],
            [0.12, 0.10, 0.09],
        );
    }
    // Eyes: sclera ellipse plus pupil.
    for e in [el, er] {
        fill_ellipse(
            &mut img,
            e[0],
            e[1],
            eye_r * 1.8,
            eye_r * 1.1,
            [0.93, 0.93, 0.90],
        );
        fill_ellipse(
            &mut img,
            e[0],
            e[1],
            eye_r * 0.65,
            eye_r * 0.65,
            [pupil, pupil, pupil + 0.02],
        );
    }
    // Nose: small darker wedge ending at the nose landmark.
    fill_quad(
        &mut img,
        &[
            [nose[0] - 1.2, nose[1] - 6.0],
            [nose[0] + 1.2, nose[1] - 6.0],
            [nose[0] + 3.0, nose[1] + 1.5],
            [nose[0] - 3.0, nose[1] + 1.5],
        ],
        [
            tint[0] * nose_shade,
            tint[1] * nose_shade,
            tint[2] * nose_shade,
        ],
    );
    // Mouth: filled quad through the four anchors.
    fill_quad(
        &mut img,
        &[ml, mt, mr, mb],
        [0.40 + 0.15 * base, 0.16 + 0.08 * base, 0.18 + 0.08 * base],
    );

    let landmarks68 = synth_landmark_template(landmarks, &geo, eye_r, brow_dy, size);
    let image = ImageTensor::from_clamped(img).expect("painted image in range");
    FaceRecord {
        id: format!("synth-{identity_seed}"),
        image,
        attributes: *attributes,
        landmarks68: Some(landmarks68),
        landmarks: *landmarks,
        mask: Some(MaskTensor::Binary(mask)),
        identity: None,
    }
}

/// Builds a 68-point template consistent with the 7 reduced landmarks: each
/// eye hexagon averages exactly to its center, point 30 is the nose and
/// points 48/51/54/57 are the mouth anchors.
fn synth_landmark_template(
    landmarks: &LandmarkVector,
    geo: &FaceGeometry,
    eye_r: f64,
    brow_dy: f64,
    size: usize,
) -> Landmarks68 {
    let s = size as f64;
    let px = |p: [f64; 2]| [p[0] * s, p[1] * s];
    let el = px(landmarks.left_eye());
    let er = px(landmarks.right_eye());
    let nose = px(landmarks.nose());
    let ml = px(landmarks.mouth_left());
    let mt = px(landmarks.mouth_top());
    let mr = px(landmarks.mouth_right());
    let mb = px(landmarks.mouth_bottom());

    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(RAW_LANDMARKS);
    // 0..17: jaw along the lower face ellipse.
    let (rxj, ryj) = (geo.rx * 0.92, geo.ry * 0.92);
    for i in 0..17 {
        let t = std::f64::consts::PI * (i as f64 / 16.0);
        pts.push([geo.cx - rxj * t.cos(), geo.cy + ryj * t.sin()]);
    }
    // 17..27: brows, five points per side.
    for e in [el, er] {
        for k in 0..5 {
            let off = (k as f64 - 2.0) * eye_r * 0.9;
            let lift = (1.0 - (off / (2.0 * eye_r)).powi(2)) * 1.5;
            pts.push([e[0] + off, e[1] - brow_dy - 1.0 - lift]);
        }
    }
    // 27..31: nose bridge, ending exactly at the nose landmark.
    let bridge_top = [(el[0] + er[0]) / 2.0, (el[1] + er[1]) / 2.0 + 1.0];
    for k in 0..4 {
        let t = k as f64 / 3.0;
        pts.push([
            bridge_top[0] + (nose[0] - bridge_top[0]) * t,
            bridge_top[1] + (nose[1] - bridge_top[1]) * t,
        ]);
    }
    // 31..36: nostril row.
    for k in 0..5 {
        pts.push([nose[0] + (k as f64 - 2.0) * 2.2, nose[1] + 3.0]);
    }
    // 36..48: eye hexagons with offsets that average to zero.
    for e in [el, er] {
        let (a, b, c) = (eye_r * 1.6, eye_r * 0.8, eye_r * 0.7);
        for off in [[-a, 0.0], [-b, -c], [b, -c], [a, 0.0], [b, c], [-b, c]] {
            pts.push([e[0] + off[0], e[1] + off[1]]);
        }
    }
    // 48..60: outer lip ring through the four anchors.
    let ring = [ml, mt, mr, mb];
    for seg in 0..4 {
        let p0 = ring[seg];
        let p1 = ring[(seg + 1) % 4];
        pts.push(p0);
        for k in 1..3 {
            let t = k as f64 / 3.0;
            pts.push([p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t]);
        }
    }
    // 60..68: inner lip ring, shrunk toward the mouth centroid.
    let mc = [
        (ml[0] + mt[0] + mr[0] + mb[0]) / 4.0,
        (ml[1] + mt[1] + mr[1] + mb[1]) / 4.0,
    ];
    for seg in 0..4 {
        let p0 = ring[seg];
        let p1 = ring[(seg + 1) % 4];
        for t in [0.0, 0.5] {
            let q = [p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t];
            pts.push([mc[0] + (q[0] - mc[0]) * 0.5, mc[1] + (q[1] - mc[1]) * 0.5]);
        }
    }
    debug_assert_eq!(pts.len(), RAW_LANDMARKS);
    for p in &mut pts {
        p[0] = p[0].clamp(0.0, s - 1.0);
        p[1] = p[1].clamp(0.0, s - 1.0);
    }
    Landmarks68::new(pts).expect("template has 68 points")
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation and manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub n: usize,
    pub identities: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub identity: String,
    pub identity_seed: u64,
    pub age: f64,
    pub gender: f64,
    pub skin_tone: f64,
    /// 14 normalized landmark coordinates.
    pub landmarks: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub format: String,
    pub seed: u64,
    pub records: Vec<ManifestRecord>,
}

/// Samples a plausible 7-point landmark layout.
pub fn sample_landmarks(rng: &mut rand_chacha::ChaCha8Rng) -> LandmarkVector {
    let eye_y = 0.40 + uniform(rng, -0.04, 0.04);
    let eye_dx = 0.135 + uniform(rng, -0.02, 0.02);
    let cx = 0.5 + uniform(rng, -0.035, 0.035);
    let el = [cx - eye_dx, eye_y + uniform(rng, -0.01, 0.01)];
    let er = [cx + eye_dx, eye_y + uniform(rng, -0.01, 0.01)];
    let nose = [
        cx + uniform(rng, -0.015, 0.015),
        eye_y + 0.14 + uniform(rng, -0.02, 0.02),
    ];
    let mouth_y = eye_y + 0.26 + uniform(rng, -0.025, 0.025);
    let half_w = 0.10 + uniform(rng, -0.015, 0.025);
    let ml = [cx - half_w, mouth_y];
    let mr = [cx + half_w, mouth_y];
    let mt = [cx, mouth_y - 0.035 - uniform(rng, 0.0, 0.015)];
    let mb = [cx, mouth_y + 0.035 + uniform(rng, 0.0, 0.015)];
    LandmarkVector::new([el, er, nose, ml, mt, mr, mb]).expect("sampled landmarks in range")
}

fn jitter_landmarks(
    base: &LandmarkVector,
    rng: &mut rand_chacha::ChaCha8Rng,
    amount: f64,
) -> LandmarkVector {
    let mut pts = *base.points();
    for p in &mut pts {
        p[0] = (p[0] + uniform(rng, -amount, amount)).clamp(0.05, 0.95);
        p[1] = (p[1] + uniform(rng, -amount, amount)).clamp(0.05, 0.95);
    }
    LandmarkVector::new(pts).expect("jittered landmarks in range")
}

/// Generates `n` records across `identities` identities. Attributes and a
/// base landmark layout are fixed per identity; per-image landmarks jitter
/// around the base so each identity shows pose variation.
pub fn generate_synthetic_corpus(cfg: &SynthCorpusConfig) -> Result<Vec<FaceRecord>> {
    if cfg.n == 0 || cfg.identities == 0 || cfg.identities > cfg.n {
        return Err(Error::Config(format!(
            "bad synthetic corpus shape: n={}, identities={}",
            cfg.n, cfg.identities
        )));
    }
    let mut records = Vec::with_capacity(cfg.n);
    for idx in 0..cfg.n {
        let identity = idx % cfg.identities;
        let identity_seed = crate::nn::derive_seed(cfg.seed, &[0x1d, identity as u64]);
        let mut id_rng = seeded_rng(identity_seed, &[0xa7]);
        let age_raw = 10 + (uniform(&mut id_rng, 0.0, 1.0) * 70.0) as u32;
        let gender = if uniform(&mut id_rng, 0.0, 1.0) < 0.5 {
            0.0
        } else {
            1.0
        };
        let skin_cat = (uniform(&mut id_rng, 0.0, 1.0) * SKIN_CATEGORIES as f64) as u32;
        let skin_cat = skin_cat.min(SKIN_CATEGORIES - 1);
        let attributes = AttributeVector::new(
            age_raw as f64 / MAX_AGE as f64,
            gender,
            skin_cat as f64 / (SKIN_CATEGORIES - 1) as f64,
        )?;
        let base_landmarks = sample_landmarks(&mut id_rng);
        let mut img_rng = seeded_rng(cfg.seed, &[0x1e, idx as u64]);
        let landmarks = jitter_landmarks(&base_landmarks, &mut img_rng, 0.02);
        let mut record = synth_face(&attributes, &landmarks, identity_seed);
        record.id = format!(
            "{}_{}_{}_id{:03}-{:04}",
            age_raw, gender as u32, skin_cat, identity, idx
        );
        record.identity = Some(format!("id-{identity:03}"));
        records.push(record);
    }
    Ok(records)
}

/// Builds the manifest describing a synthetic corpus, sufficient to
/// regenerate every record bit-identically.
pub fn corpus_manifest(cfg: &SynthCorpusConfig, records: &[FaceRecord]) -> SyntheticManifest {
    let recs = records
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let identity_idx = idx % cfg.identities;
            ManifestRecord {
                id: r.id.clone(),
                identity: r.identity.clone().unwrap_or_default(),
                identity_seed: crate::nn::derive_seed(cfg.seed, &[0x1d, identity_idx as u64]),
                age: r.attributes.age,
                gender: r.attributes.gender,
                skin_tone: r.attributes.skin_tone,
                landmarks: r.landmarks.flat().to_vec(),
            }
        })
        .collect();
    SyntheticManifest {
        format: "synthetic-manifest".into(),
        seed: cfg.seed,
        records: recs,
    }
}

fn record_from_manifest(entry: &ManifestRecord) -> Result<FaceRecord> {
    let attributes = AttributeVector::new(entry.age, entry.gender, entry.skin_tone)?;
    if entry.landmarks.len() != LANDMARK_DIM {
        return Err(Error::Corpus(format!(
            "manifest record {} has {} landmark values",
            entry.id,
            entry.landmarks.len()
        )));
    }
    let landmarks = LandmarkVector::from_flat(&entry.landmarks)?;
    let mut record = synth_face(&attributes, &landmarks, entry.identity_seed);
    record.id = entry.id.clone();
    record.identity = if entry.identity.is_empty() {
        None
    } else {
        Some(entry.identity.clone())
    };
    Ok(record)
}

// ---------------------------------------------------------------------------
// Image IO
// ---------------------------------------------------------------------------

/// Decodes an image file (PNG or JPEG) into `[0, 1]` floats.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ImageTensor::from_rgb8(h, w, img.as_raw())
}

/// Writes an image as 8-bit PNG.
pub fn save_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let buf = image.to_rgb8();
    let img = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, buf)
        .ok_or_else(|| Error::Shape("pixel buffer mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes a binary mask as an 8-bit grayscale-style PNG (0 or 255).
pub fn save_mask_png(mask: &MaskTensor, path: &Path) -> Result<()> {
    let fc = mask.face_channel();
    let (h, w) = (fc.shape()[0], fc.shape()[1]);
    let mut buf = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        for j in 0..w {
            let v = (fc[[i, j]] * 255.0).round().clamp(0.0, 255.0) as u8;
            buf.extend_from_slice(&[v, v, v]);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Shape("pixel buffer mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Corpus loading
// ---------------------------------------------------------------------------

/// Supported corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Utkface,
    SyntheticManifest,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utkface" => Ok(CorpusFormat::Utkface),
            "synthetic-manifest" => Ok(CorpusFormat::SyntheticManifest),
            other => Err(Error::Argument(format!("unknown corpus format: {other}"))),
        }
    }
}

enum CorpusEntry {
    File { image: PathBuf, landmarks: PathBuf },
    Synth(Box<ManifestRecord>),
}

/// Lazy corpus reader: yields records in stable filename/manifest order and
/// skips unreadable entries with a logged count.
pub struct CorpusStream {
    entries: std::vec::IntoIter<CorpusEntry>,
    skipped: usize,
}

impl CorpusStream {
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl Iterator for CorpusStream {
    type Item = FaceRecord;

    fn next(&mut self) -> Option<FaceRecord> {
        loop {
            let entry = self.entries.next()?;
            let result = match &entry {
                CorpusEntry::File { image, landmarks } => parse_annotation(image, landmarks),
                CorpusEntry::Synth(rec) => record_from_manifest(rec),
            };
            match result {
                Ok(r) => return Some(r),
                Err(e) => {
                    self.skipped += 1;
                    log::warn!("skipping corpus entry: {e}");
                }
            }
        }
    }
}

/// Opens a corpus for streaming. For `utkface`, `path` is a directory of
/// images with `.pts` sidecars; for `synthetic-manifest`, `path` is the
/// manifest file or a directory containing `manifest.json`.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusStream> {
    let entries = match format {
        CorpusFormat::Utkface => {
            let dir = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            let mut images: Vec<PathBuf> = dir
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|s| s.to_str()),
                        Some("png") | Some("jpg") | Some("jpeg")
                    )
                })
                .collect();
            images.sort();
            if images.is_empty() {
                return Err(Error::Corpus(format!(
                    "no images found in {}",
                    path.display()
                )));
            }
            images
                .into_iter()
                .map(|image| {
                    let landmarks = image.with_extension("pts");
                    CorpusEntry::File { image, landmarks }
                })
                .collect::<Vec<_>>()
        }
        CorpusFormat::SyntheticManifest => {
            let manifest_path = if path.is_dir() {
                path.join("manifest.json")
            } else {
                path.to_path_buf()
            };
            let text =
                fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let manifest: SyntheticManifest = serde_json::from_str(&text)?;
            if manifest.format != "synthetic-manifest" {
                return Err(Error::Corpus(format!(
                    "unexpected manifest format '{}'",
                    manifest.format
                )));
            }
            if manifest.records.is_empty() {
                return Err(Error::Corpus("manifest lists no records".into()));
            }
            manifest
                .records
                .into_iter()
                .map(|r| CorpusEntry::Synth(Box::new(r)))
                .collect()
        }
    };
    Ok(CorpusStream {
        entries: entries.into_iter(),
        skipped: 0,
    })
}

/// Loads a whole corpus into memory, failing if nothing could be read.
pub fn load_corpus_vec(path: &Path, format: CorpusFormat) -> Result<Vec<FaceRecord>> {
    let mut stream = load_corpus(path, format)?;
    let records: Vec<FaceRecord> = stream.by_ref().collect();
    if stream.skipped() > 0 {
        log::warn!("skipped {} unreadable corpus entries", stream.skipped());
    }
    if records.is_empty() {
        return Err(Error::Corpus(format!(
            "no readable records in {}",
            path.display()
        )));
    }
    Ok(records)
}

/// Writes a synthetic corpus to disk: `manifest.json`, one PNG per record
/// (UTKFace-style filename) and a landmark sidecar.
pub fn write_synthetic_corpus(
    dir: &Path,
    cfg: &SynthCorpusConfig,
    records: &[FaceRecord],
    write_images: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = corpus_manifest(cfg, records);
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    if write_images {
        for r in records {
            let img_path = dir.join(format!("{}.png", r.id));
            save_png(&r.image, &img_path)?;
            if let Some(l68) = &r.landmarks68 {
                write_landmark_file(&img_path.with_extension("pts"), l68)?;
            }
        }
    }
    Ok(())
}
