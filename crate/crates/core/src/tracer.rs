//! Reduction of each (ray, kernel) pair to a 1D Gaussian along the ray, and
//! the two-stage kernel selection (screen-space boxes on a coarse grid, then
//! per-ray density threshold and nearest-K′ cut).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{ceil, floor, ln, sqrt, Mat3, Vec3};
use crate::scene::{Camera, GaussianKernel, GaussianScene};

/// Kernels whose camera-space center has z at or below this are skipped.
pub const BEHIND_CAMERA_EPS: f64 = 1e-4;

/// A kernel seen along one ray: ρ(t) ∝ exp(q − (t − l)²/(2σ²)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracedKernel {
    pub kernel_index: usize,
    /// Ray length of peak density.
    pub l: f64,
    /// Log of peak density, ≤ 0.
    pub q: f64,
    /// Standard deviation along the ray.
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionConfig {
    pub eta: f64,
    pub k_prime: usize,
    pub coarse_enabled: bool,
    pub coarse_downsample: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            k_prime: 20,
            coarse_enabled: true,
            coarse_downsample: 8,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.k_prime == 0 {
            return Err(invalid("k_prime must be at least 1"));
        }
        if self.coarse_downsample == 0 {
            return Err(invalid("coarse_downsample must be at least 1"));
        }
        Ok(())
    }

    pub fn exhaustive(self) -> Self {
        Self {
            coarse_enabled: false,
            ..self
        }
    }
}

/// Trace one camera-space kernel along a unit ray direction.
pub fn trace_kernel(
    dir: Vec3,
    kernel_index: usize,
    kernel: &GaussianKernel,
) -> Result<TracedKernel> {
    trace_raw(dir, kernel_index, kernel.center, &kernel.inv_cov)
        .ok_or_else(|| invalid(format!("kernel {kernel_index}: DᵀΣ⁻¹D <= 0 along ray")))
}

#[inline]
pub(crate) fn trace_raw(
    dir: Vec3,
    kernel_index: usize,
    center: Vec3,
    inv_cov: &Mat3,
) -> Option<TracedKernel> {
    let a_d = inv_cov.mul_vec(dir);
    let a = dir.dot(a_d);
    if a.is_nan() || a <= 0.0 {
        return None;
    }
    // Σ⁻¹ is symmetric so MᵀΣ⁻¹D = DᵀΣ⁻¹M.
    let b = center.dot(a_d);
    let l = b / a;
    let v = center - dir * l;
    let q = (-0.5 * inv_cov.bilinear(v, v)).min(0.0);
    Some(TracedKernel {
        kernel_index,
        l,
        q,
        sigma: 1.0 / sqrt(a),
    })
}

/// Per-kernel constants for screening many rays cheaply.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PreparedKernel {
    /// Σ⁻¹ entries xx, yy, zz, xy, xz, yz.
    a: [f64; 6],
    am: Vec3,
    c: f64,
}

impl PreparedKernel {
    pub(crate) fn new(center: Vec3, inv_cov: &Mat3) -> Self {
        let m = &inv_cov.m;
        let am = inv_cov.mul_vec(center);
        Self {
            a: [m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2]],
            am,
            c: center.dot(am),
        }
    }

    /// Whether e^q may exceed η along `dir`. Uses
    /// q = −½(MᵀAM − (DᵀAM)²/DᵀAD), which cancels badly for distant kernels,
    /// so a small slack keeps it conservative; survivors are traced exactly.
    #[inline]
    pub(crate) fn may_pass(&self, dd: &[f64; 6], dir: Vec3, ln_eta: f64) -> bool {
        let a = &self.a;
        let ad =
            a[0] * dd[0] + a[1] * dd[1] + a[2] * dd[2] + a[3] * dd[3] + a[4] * dd[4] + a[5] * dd[5];
        if ad.is_nan() || ad <= 0.0 {
            return false;
        }
        let b = dir.dot(self.am);
        let q = -0.5 * (self.c - b * b / ad);
        q > ln_eta - 1e-9 * (1.0 + self.c)
    }
}

/// Products of direction components in [`PreparedKernel`] order.
#[inline]
pub(crate) fn direction_products(d: Vec3) -> [f64; 6] {
    [
        d.x * d.x,
        d.y * d.y,
        d.z * d.z,
        2.0 * d.x * d.y,
        2.0 * d.x * d.z,
        2.0 * d.y * d.z,
    ]
}

/// Keep kernels with e^q > η, then the K′ with smallest l, sorted by l
/// (ties broken by kernel index).
pub fn fine_select(traced: &[TracedKernel], cfg: &SelectionConfig) -> Vec<TracedKernel> {
    let mut out: Vec<TracedKernel> = traced
        .iter()
        .copied()
        .filter(|t| passes_threshold(t.q, crate::math::ln(cfg.eta)))
        .collect();
    sort_by_depth(&mut out);
    out.truncate(cfg.k_prime);
    out
}

#[inline]
pub(crate) fn passes_threshold(q: f64, ln_eta: f64) -> bool {
    // e^q > η, compared in the log domain.
    q > ln_eta
}

pub(crate) fn sort_by_depth(list: &mut [TracedKernel]) {
    list.sort_unstable_by(|a, b| {
        a.l.partial_cmp(&b.l)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.kernel_index.cmp(&b.kernel_index))
    });
}

/// Screen-space box in continuous pixel coordinates (inclusive bounds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenBox {
    pub row_min: f64,
    pub row_max: f64,
    pub col_min: f64,
    pub col_max: f64,
}

/// Bounding box of the rays whose peak density on the kernel reaches η.
///
/// That ray set is the cone through the ellipsoid
/// (X−M)ᵀΣ⁻¹(X−M) ≤ 2·ln(1/η). Its extent in x/z (and y/z) is bounded by
/// the two planes through the camera center tangent to the ellipsoid.
/// Returns `None` when the ellipsoid reaches the z = 0 plane (the box is
/// then unbounded and the kernel must be considered everywhere).
pub fn screen_box(camera: &Camera, center: Vec3, cov: &Mat3, eta: f64) -> Option<ScreenBox> {
    let r2 = 2.0 * ln(1.0 / eta);
    let mz = center.z;
    let czz = cov.m[2][2];
    let a = mz * mz - r2 * czz;
    if a.is_nan() || a <= 0.0 || mz <= 0.0 {
        return None;
    }
    // Tangent planes x − s·z = 0: (M_x − s M_z)² = r²·nᵀΣn, n = (1, 0, −s).
    let slope_range = |axis: usize| -> Option<(f64, f64)> {
        let m = center[axis];
        let caa = cov.m[axis][axis];
        let caz = cov.m[axis][2];
        let b = m * mz - r2 * caz;
        let c = m * m - r2 * caa;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let root = sqrt(disc);
        Some(((b - root) / a, (b + root) / a))
    };
    let (sx_lo, sx_hi) = slope_range(0)?;
    let (sy_lo, sy_hi) = slope_range(1)?;
    let f = camera.focal();
    Some(ScreenBox {
        row_min: camera.oy() + f * sx_lo,
        row_max: camera.oy() + f * sx_hi,
        col_min: camera.ox() + f * sy_lo,
        col_max: camera.ox() + f * sy_hi,
    })
}

/// Per coarse cell, the candidate kernel indices (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct PixelKernelMap {
    cell: usize,
    rows: usize,
    cols: usize,
    lists: Vec<Vec<u32>>,
    /// Kernels dropped for lying behind the camera.
    pub behind_camera: usize,
}

impl PixelKernelMap {
    pub fn cell_size(&self) -> usize {
        self.cell
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cell_candidates(&self, cell_row: usize, cell_col: usize) -> &[u32] {
        &self.lists[cell_row * self.cols + cell_col]
    }

    /// Candidates for the pixel (i, j).
    pub fn candidates(&self, i: usize, j: usize) -> &[u32] {
        self.cell_candidates(i / self.cell, j / self.cell)
    }

    /// Mean candidate count over cells.
    pub fn mean_candidates(&self) -> f64 {
        if self.lists.is_empty() {
            return 0.0;
        }
        self.lists.iter().map(|l| l.len()).sum::<usize>() as f64 / self.lists.len() as f64
    }
}

/// Rasterise each kernel's η-level screen box onto a grid of
/// `coarse_downsample`-pixel cells. `scene` must already be in camera
/// coordinates.
pub fn coarse_select(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
) -> Result<PixelKernelMap> {
    cfg.validate()?;
    let cell = cfg.coarse_downsample;
    let rows = camera.height().div_ceil(cell);
    let cols = camera.width().div_ceil(cell);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); rows * cols];
    let mut behind = 0;
    let max_i = (camera.height() - 1) as f64;
    let max_j = (camera.width() - 1) as f64;
    for (k, kernel) in scene.kernels().iter().enumerate() {
        if kernel.center.z <= BEHIND_CAMERA_EPS {
            behind += 1;
            continue;
        }
        let cov = match kernel.inv_cov.inverse() {
            Some(c) => c,
            None => continue,
        };
        // Pixel centers sit on integer coordinates; a pixel is covered when
        // its center lies inside the box.
        let (i0, i1, j0, j1) = match screen_box(camera, kernel.center, &cov, cfg.eta) {
            Some(b) => (
                ceil(b.row_min).max(0.0),
                floor(b.row_max).min(max_i),
                ceil(b.col_min).max(0.0),
                floor(b.col_max).min(max_j),
            ),
            None => (0.0, max_i, 0.0, max_j),
        };
        if i0 > i1 || j0 > j1 {
            continue;
        }
        let (ci0, ci1) = (i0 as usize / cell, i1 as usize / cell);
        let (cj0, cj1) = (j0 as usize / cell, j1 as usize / cell);
        for ci in ci0..=ci1 {
            for cj in cj0..=cj1 {
                lists[ci * cols + cj].push(k as u32);
            }
        }
    }
    Ok(PixelKernelMap {
        cell,
        rows,
        cols,
        lists,
        behind_camera: behind,
    })
}
