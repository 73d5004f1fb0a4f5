//! Independent oracles shared by the integration suites. Everything here is
//! deliberately written along a different route than the library code it
//! checks: dense linear algebra instead of iterative solves, direct 2-D
//! convolution instead of separable passes, simplex enumeration instead of
//! hull rasterization.
//!
//! Each test binary picks the oracles it needs.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use upgan::types::ImageTensor;

/// Central finite difference of `f` along one parameter block entry.
pub const FD_STEP: f64 = 1e-5;

/// Relative error metric used by the gradient audits.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Solves the blending system directly: dense Laplacian over the mask
/// pixels, LU factorization, one solve per channel. Returns the composite
/// (target outside the mask, solution inside), unclipped.
pub fn dense_poisson_solve(
    source: &ImageTensor,
    target: &ImageTensor,
    mask: &Array2<f64>,
) -> Array3<f64> {
    let (h, w) = (target.height(), target.width());
    let mut index = Array2::from_elem((h, w), usize::MAX);
    let mut pixels = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] == 1.0 {
                assert!(i > 0 && j > 0 && i < h - 1 && j < w - 1, "mask at border");
                index[[i, j]] = pixels.len();
                pixels.push((i, j));
            }
        }
    }
    let n = pixels.len();
    let src = source.data();
    let tgt = target.data();
    let mut out = tgt.clone();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (p, &(i, j)) in pixels.iter().enumerate() {
        a[(p, p)] = 4.0;
        for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
            let q = index[[ni, nj]];
            if q != usize::MAX {
                a[(p, q)] = -1.0;
            }
        }
    }
    let lu = a.lu();
    for c in 0..3 {
        let mut b = DVector::<f64>::zeros(n);
        for (p, &(i, j)) in pixels.iter().enumerate() {
            let mut v = 4.0 * src[[i, j, c]]
                - src[[i - 1, j, c]]
                - src[[i + 1, j, c]]
                - src[[i, j - 1, c]]
                - src[[i, j + 1, c]];
            for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                if index[[ni, nj]] == usize::MAX {
                    v += tgt[[ni, nj, c]];
                }
            }
            b[p] = v;
        }
        let x = lu.solve(&b).expect("dense Poisson system is invertible");
        for (p, &(i, j)) in pixels.iter().enumerate() {
            out[[i, j, c]] = x[p];
        }
    }
    out
}

/// Direct double-loop Gaussian convolution with an explicit 2-D kernel and
/// edge-inclusive reflection, matching the blur's padding convention but not
/// its separable implementation.
pub fn brute_force_blur(image: &ImageTensor, kernel_size: usize) -> Array3<f64> {
    let sigma = 0.3 * ((kernel_size - 1) as f64 / 2.0 - 1.0) + 0.8;
    let r = (kernel_size / 2) as i64;
    let mut kernel = Array2::zeros((kernel_size, kernel_size));
    let mut sum = 0.0;
    for i in 0..kernel_size {
        for j in 0..kernel_size {
            let di = i as i64 - r;
            let dj = j as i64 - r;
            let v = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            kernel[[i, j]] = v;
            sum += v;
        }
    }
    kernel.mapv_inplace(|v| v / sum);

    let reflect = |v: i64, hi: i64| -> i64 {
        let period = 2 * hi;
        let mut m = v.rem_euclid(period);
        if m >= hi {
            m = period - 1 - m;
        }
        m
    };
    let (h, w) = (image.height() as i64, image.width() as i64);
    let src = image.data();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3usize {
                let mut acc = 0.0;
                for ki in 0..kernel_size {
                    for kj in 0..kernel_size {
                        let ii = reflect(i + ki as i64 - r, h);
                        let jj = reflect(j + kj as i64 - r, w);
                        acc += kernel[[ki, kj]] * src[[ii as usize, jj as usize, c]];
                    }
                }
                out[[i as usize, j as usize, c]] = acc;
            }
        }
    }
    out
}

fn point_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], u: [f64; 2], v: [f64; 2]| {
        (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
    };
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let has_neg = d1 < -1e-9 || d2 < -1e-9 || d3 < -1e-9;
    let has_pos = d1 > 1e-9 || d2 > 1e-9 || d3 > 1e-9;
    !(has_neg && has_pos)
}

/// Brute-force convex-hull membership: a point lies in the hull of a set iff
/// it lies in some triangle of three set members (or on a segment / point
/// for degenerate sets).
pub fn point_in_hull_brute(p: [f64; 2], points: &[[f64; 2]]) -> bool {
    let n = points.len();
    for i in 0..n {
        if (points[i][0] - p[0]).abs() < 1e-9 && (points[i][1] - p[1]).abs() < 1e-9 {
            return true;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                if point_in_triangle(p, points[i], points[j], points[k]) {
                    return true;
                }
            }
        }
    }
    // collinear sets: check segments
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points[i], points[j]);
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross.abs() < 1e-9 {
                let t = if (b[0] - a[0]).abs() > (b[1] - a[1]).abs() {
                    if (b[0] - a[0]).abs() < 1e-12 {
                        continue;
                    }
                    (p[0] - a[0]) / (b[0] - a[0])
                } else {
                    if (b[1] - a[1]).abs() < 1e-12 {
                        continue;
                    }
                    (p[1] - a[1]) / (b[1] - a[1])
                };
                if (-1e-9..=1.0 + 1e-9).contains(&t) {
                    return true;
                }
            }
        }
    }
    false
}
