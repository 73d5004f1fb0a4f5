//! Gradient-domain face compositing: solve the discrete Poisson equation so
//! the pasted region keeps the source's gradients under the target's
//! boundary values (plain gradient transfer, no mixing).

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::types::{FaceRecord, ImageTensor, MaskTensor};

/// Max-residual threshold for the iterative solver.
pub const SOLVER_TOL: f64 = 1e-4;
/// Iteration cap for the iterative solver.
pub const SOLVER_CAP: usize = 10_000;

/// Result of a Poisson blend: the composite plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct BlendOutcome {
    pub image: ImageTensor,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
}

struct PoissonSystem {
    /// (row, col) of each unknown pixel.
    pixels: Vec<(usize, usize)>,
    /// per unknown: interior neighbor indices.
    interior_neighbors: Vec<Vec<usize>>,
    /// per unknown: boundary neighbor pixels (row, col).
    boundary_neighbors: Vec<Vec<(usize, usize)>>,
}

impl PoissonSystem {
    fn build(mask: &Array2<f64>) -> Result<Self> {
        let (h, w) = (mask.shape()[0], mask.shape()[1]);
        let mut index = Array2::from_elem((h, w), usize::MAX);
        let mut pixels = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if mask[[i, j]] == 1.0 {
                    if i == 0 || j == 0 || i == h - 1 || j == w - 1 {
                        return Err(Error::Boundary(format!(
                            "mask touches the image border at ({i}, {j})"
                        )));
                    }
                    index[[i, j]] = pixels.len();
                    pixels.push((i, j));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::Boundary("mask interior is empty".into()));
        }
        let mut interior_neighbors = Vec::with_capacity(pixels.len());
        let mut boundary_neighbors = Vec::with_capacity(pixels.len());
        for &(i, j) in &pixels {
            let mut interior = Vec::new();
            let mut boundary = Vec::new();
            for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                let idx = index[[ni, nj]];
                if idx == usize::MAX {
                    boundary.push((ni, nj));
                } else {
                    interior.push(idx);
                }
            }
            interior_neighbors.push(interior);
            boundary_neighbors.push(boundary);
        }
        Ok(PoissonSystem {
            pixels,
            interior_neighbors,
            boundary_neighbors,
        })
    }

    fn len(&self) -> usize {
        self.pixels.len()
    }

    /// y = A x with A = 4I - interior adjacency (symmetric positive definite).
    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (p, yp) in y.iter_mut().enumerate() {
            let mut acc = 4.0 * x[p];
            for &q in &self.interior_neighbors[p] {
                acc -= x[q];
            }
            *yp = acc;
        }
    }

    /// Right-hand side: source Laplacian plus Dirichlet boundary data.
    fn rhs(&self, source: &Array3<f64>, target: &Array3<f64>, channel: usize) -> Vec<f64> {
        self.pixels
            .iter()
            .enumerate()
            .map(|(p, &(i, j))| {
                let mut b = 4.0 * source[[i, j, channel]]
                    - source[[i - 1, j, channel]]
                    - source[[i + 1, j, channel]]
                    - source[[i, j - 1, channel]]
                    - source[[i, j + 1, channel]];
                for &(bi, bj) in &self.boundary_neighbors[p] {
                    b += target[[bi, bj, channel]];
                }
                b
            })
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Conjugate-gradient solve of `A x = b`, starting from `x0`, until the
/// residual max-norm drops to `tol` or `cap` iterations elapse. Returns the
/// iterate, iteration count and final residual max-norm.
fn conjugate_gradient(
    sys: &PoissonSystem,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    cap: usize,
) -> (Vec<f64>, usize, f64) {
    let n = sys.len();
    let mut x = x0;
    let mut ax = vec![0.0; n];
    sys.matvec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
    let mut res = max_abs(&r);
    if res <= tol {
        return (x, 0, res);
    }
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=cap {
        sys.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return (x, it, res);
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = max_abs(&r);
        if res <= tol {
            return (x, it, res);
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, cap, res)
}

/// Solves, per channel, the discrete Poisson equation `lap u = lap source`
/// inside the mask with Dirichlet boundary `u = target` outside. The output
/// equals the target exactly outside the mask and is clipped to `[0, 1]`.
///
/// The mask must be binary, non-empty, and must not touch the image border.
/// If the solver fails to reach tolerance it returns its best iterate with
/// `converged = false`.
pub fn poisson_blend(
    source: &ImageTensor,
    target: &ImageTensor,
    mask: &MaskTensor,
) -> Result<BlendOutcome> {
    let (h, w) = (target.height(), target.width());
    if source.height() != h || source.width() != w {
        return Err(Error::Shape(format!(
            "source {}x{} does not match target {h}x{w}",
            source.height(),
            source.width()
        )));
    }
    let labels = mask.as_binary()?;
    if labels.shape() != [h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {h}x{w}",
            labels.shape()
        )));
    }
    let sys = PoissonSystem::build(labels)?;
    let src = source.data();
    let tgt = target.data();

    let mut out = tgt.clone();
    let mut converged = true;
    let mut iterations = 0;
    let mut max_residual = 0.0f64;
    for c in 0..3 {
        let b = sys.rhs(src, tgt, c);
        let x0: Vec<f64> = sys.pixels.iter().map(|&(i, j)| src[[i, j, c]]).collect();
        let (x, iters, res) = conjugate_gradient(&sys, &b, x0, SOLVER_TOL, SOLVER_CAP);
        iterations = iterations.max(iters);
        max_residual = max_residual.max(res);
        if res > SOLVER_TOL {
            converged = false;
        }
        for (p, &(i, j)) in sys.pixels.iter().enumerate() {
            out[[i, j, c]] = x[p];
        }
    }
    if !converged {
        log::warn!(
            "poisson solver stopped at residual {max_residual:.2e} after {iterations} iterations"
        );
    }
    Ok(BlendOutcome {
        image: ImageTensor::from_clamped(out)?,
        converged,
        iterations,
        max_residual,
    })
}

/// Erodes a binary mask by one pixel: a pixel survives only if all four
/// neighbors exist and are set, so the result never touches the border.
pub fn erode_mask(labels: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (labels.shape()[0], labels.shape()[1]);
    let mut out = Array2::zeros((h, w));
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            if labels[[i, j]] == 1.0
                && labels[[i - 1, j]] == 1.0
                && labels[[i + 1, j]] == 1.0
                && labels[[i, j - 1]] == 1.0
                && labels[[i, j + 1]] == 1.0
            {
                out[[i, j]] = 1.0;
            }
        }
    }
    out
}

/// Composites a generated face onto the original: the generated mask is
/// binarized at 0.5, eroded by one pixel so its boundary is anchored, and
/// the generated pixels are Poisson-blended into the original image.
pub fn swap_face(
    record: &FaceRecord,
    generated: &ImageTensor,
    gen_mask: &MaskTensor,
) -> Result<ImageTensor> {
    let (h, w) = (record.image.height(), record.image.width());
    if generated.height() != h || generated.width() != w {
        return Err(Error::Shape(format!(
            "generated {}x{} does not match original {h}x{w}",
            generated.height(),
            generated.width()
        )));
    }
    let binary = gen_mask.binarize(0.5);
    let eroded = erode_mask(binary.as_binary()?);
    if eroded.sum() == 0.0 {
        return Err(Error::Swap(
            "generated mask is empty after binarization and erosion".into(),
        ));
    }
    let outcome = poisson_blend(generated, &record.image, &MaskTensor::Binary(eroded))?;
    if !outcome.converged {
        log::warn!(
            "swap for {} did not fully converge (residual {:.2e})",
            record.id,
            outcome.max_residual
        );
    }
    Ok(outcome.image)
}
