//! Closed-form transmittance and kernel-to-pixel weights, and the full
//! render pipeline.
//!
//! Along a ray each selected kernel contributes the line density
//! ρ_k(t) = e^{q_k}·N(t; l_k, σ_k²), so the accumulated density up to t is
//! Σ e^{q_m}·Φ((t − l_m)/σ_m) with Φ the standard normal CDF. The weight of
//! kernel k is its peak density times the transmittance at its own peak:
//! W_k = T(l_k)·e^{q_k}.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{exp, normal_cdf, Vec3};
use crate::par;
use crate::scene::{view_transform, Camera, ChannelKind, GaussianScene, Image};
use crate::tracer::{
    coarse_select, direction_products, passes_threshold, sort_by_depth, trace_raw, PreparedKernel,
    SelectionConfig, TracedKernel, BEHIND_CAMERA_EPS,
};

/// |z| beyond which Φ(z) is taken as exactly 0 or 1 (Φ(−9) ≈ 1e-19).
const CDF_SATURATION: f64 = 9.0;

/// Floor on the per-pixel weight sum for normalised weights.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[inline]
pub(crate) fn saturating_cdf(z: f64) -> f64 {
    if z > CDF_SATURATION {
        1.0
    } else if z < -CDF_SATURATION {
        0.0
    } else {
        normal_cdf(z)
    }
}

/// Accumulated optical depth Σ e^{q_m}·Φ((t − l_m)/σ_m), without τ.
#[inline]
pub(crate) fn optical_depth(traced: &[TracedKernel], t: f64) -> f64 {
    traced
        .iter()
        .map(|m| exp(m.q) * saturating_cdf((t - m.l) / m.sigma))
        .sum()
}

/// T(t) = exp(−τ·Σ_m e^{q_m}·(erf((t − l_m)/(σ_m√2)) + 1)/2).
pub fn transmittance_at(traced: &[TracedKernel], tau: f64, t: f64) -> f64 {
    if t == f64::INFINITY {
        return exp(-tau * traced.iter().map(|m| exp(m.q)).sum::<f64>());
    }
    exp(-tau * optical_depth(traced, t))
}

/// Weights of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBlend {
    /// (kernel index, W) in ascending l order.
    pub weights: Vec<(usize, f64)>,
    /// 1 − T(+∞).
    pub alpha: f64,
}

/// Closed-form weights for one ray's (fine-selected) kernel list.
pub fn blend(traced: &[TracedKernel], tau: f64) -> RayBlend {
    let mut sorted = traced.to_vec();
    sort_by_depth(&mut sorted);
    let weights = sorted
        .iter()
        .map(|k| {
            (
                k.kernel_index,
                transmittance_at(&sorted, tau, k.l) * exp(k.q),
            )
        })
        .collect();
    RayBlend {
        weights,
        alpha: 1.0 - transmittance_at(&sorted, tau, f64::INFINITY),
    }
}

/// One retained (pixel, kernel) interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelEntry {
    pub kernel: u32,
    pub l: f64,
    pub q: f64,
    pub sigma: f64,
    /// T(l_k).
    pub transmittance: f64,
    /// W_{p,k} = T(l_k)·e^{q_k}.
    pub weight: f64,
}

/// Per-pixel sparse kernel weight lists (CSR layout, pixels row-major).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    offsets: Vec<usize>,
    entries: Vec<PixelEntry>,
}

impl WeightStore {
    pub fn pixel_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Entries of pixel `p` (row-major index), ascending in l.
    pub fn pixel(&self, p: usize) -> &[PixelEntry] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn entries(&self) -> &[PixelEntry] {
        &self.entries
    }

    pub fn weight_sum(&self, p: usize) -> f64 {
        self.pixel(p).iter().map(|e| e.weight).sum()
    }

    /// W_{p,k} / max(Σ_k W_{p,k}, ε).
    pub fn normalized_weights(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let denom = self.weight_sum(p).max(NORMALIZE_EPS);
        self.pixel(p)
            .iter()
            .map(move |e| (e.kernel as usize, e.weight / denom))
    }

    /// Mean and maximum number of kernels per pixel.
    pub fn kernels_per_pixel(&self) -> (f64, usize) {
        let n = self.pixel_count();
        if n == 0 {
            return (0.0, 0);
        }
        let max = (0..n).map(|p| self.pixel(p).len()).max().unwrap_or(0);
        (self.entries.len() as f64 / n as f64, max)
    }
}

/// Output of a render: attribute image, alpha, expected ray depth and the
/// retained weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub image: Image,
    pub alpha: Image,
    /// Σ W·l / Σ W per pixel (0 where nothing was hit), in ray-length units.
    pub depth: Vec<f64>,
    pub weights: WeightStore,
    /// Kernels skipped because their center lies behind the camera.
    pub behind_camera: usize,
}

impl RenderBuffers {
    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// Pixels per parallel block. Fixed so results do not depend on the
/// number of worker threads.
const MAX_BLOCKS: usize = 64;

/// Per-pixel candidate lookup and fine selection.
pub(crate) struct Selector<'a> {
    kernels: &'a [crate::scene::GaussianKernel],
    camera: &'a Camera,
    cfg: SelectionConfig,
    map: Option<crate::tracer::PixelKernelMap>,
    all: Vec<u32>,
    prepared: Vec<PreparedKernel>,
    ln_eta: f64,
    pub(crate) behind_camera: usize,
}

impl<'a> Selector<'a> {
    pub(crate) fn new(
        cam_scene: &'a GaussianScene,
        camera: &'a Camera,
        cfg: &SelectionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let map = if cfg.coarse_enabled {
            Some(coarse_select(cam_scene, camera, cfg)?)
        } else {
            None
        };
        let kernels = cam_scene.kernels();
        let all = if map.is_none() {
            (0..kernels.len() as u32).collect()
        } else {
            Vec::new()
        };
        let behind_camera = kernels
            .iter()
            .filter(|k| k.center.z <= BEHIND_CAMERA_EPS)
            .count();
        Ok(Self {
            kernels,
            camera,
            cfg: *cfg,
            map,
            all,
            prepared: kernels
                .iter()
                .map(|k| PreparedKernel::new(k.center, &k.inv_cov))
                .collect(),
            ln_eta: crate::math::ln(cfg.eta),
            behind_camera,
        })
    }

    /// Fine-selected kernels of pixel (i, j), depth-sorted, into `out`.
    pub(crate) fn select(&self, i: usize, j: usize, out: &mut Vec<TracedKernel>) {
        let dir = self.camera.ray_direction(i, j);
        let cands: &[u32] = match &self.map {
            Some(m) => m.candidates(i, j),
            None => &self.all,
        };
        out.clear();
        let dd = direction_products(dir);
        for &k in cands {
            let kern = &self.kernels[k as usize];
            if kern.center.z <= BEHIND_CAMERA_EPS
                || !self.prepared[k as usize].may_pass(&dd, dir, self.ln_eta)
            {
                continue;
            }
            if let Some(t) = trace_raw(dir, k as usize, kern.center, &kern.inv_cov) {
                if passes_threshold(t.q, self.ln_eta) {
                    out.push(t);
                }
            }
        }
        let kp = self.cfg.k_prime;
        if out.len() > kp {
            out.select_nth_unstable_by(kp, |a, b| {
                a.l.partial_cmp(&b.l)
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.kernel_index.cmp(&b.kernel_index))
            });
            out.truncate(kp);
        }
        sort_by_depth(out);
    }
}

/// Weights of an already sorted, selected list, written into `out`.
pub(crate) fn blend_into(sel: &[TracedKernel], tau: f64, out: &mut Vec<PixelEntry>) -> f64 {
    let start = out.len();
    let mut total = 0.0;
    for k in sel {
        let e = exp(k.q);
        total += e;
        out.push(PixelEntry {
            kernel: k.kernel_index as u32,
            l: k.l,
            q: k.q,
            sigma: k.sigma,
            transmittance: 0.0,
            weight: e,
        });
    }
    // `weight` holds e^{q} until every transmittance is known.
    let entries = &mut out[start..];
    for ki in 0..entries.len() {
        let lk = entries[ki].l;
        let depth: f64 = entries
            .iter()
            .map(|m| m.weight * saturating_cdf((lk - m.l) / m.sigma))
            .sum();
        entries[ki].transmittance = exp(-tau * depth);
    }
    for e in entries.iter_mut() {
        e.weight *= e.transmittance;
    }
    1.0 - exp(-tau * total)
}

/// Render the scene's attributes through `camera`.
pub fn render(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
) -> Result<RenderBuffers> {
    let cam_scene = view_transform(scene, camera);
    let selector = Selector::new(&cam_scene, camera, cfg)?;
    let behind = selector.behind_camera;
    let (h, w) = (camera.height(), camera.width());
    let dim = scene.attr_dim();
    let tau = scene.tau();
    let blocks = par::block_ranges(h * w, MAX_BLOCKS);
    let per_block = par::map_blocks(blocks.len(), |b| {
        let range = blocks[b].clone();
        let mut entries = Vec::new();
        let mut counts = Vec::with_capacity(range.len());
        let mut image = vec![0.0; range.len() * dim];
        let mut alpha = Vec::with_capacity(range.len());
        let mut depth = Vec::with_capacity(range.len());
        let mut sel = Vec::new();
        for (local, p) in range.enumerate() {
            let start = entries.len();
            selector.select(p / w, p % w, &mut sel);
            let a = blend_into(&sel, tau, &mut entries);
            let px = &mut image[local * dim..(local + 1) * dim];
            let (mut wsum, mut wl) = (0.0, 0.0);
            for e in &entries[start..] {
                let c = &scene.kernel(e.kernel as usize).attr;
                for (o, ci) in px.iter_mut().zip(c) {
                    *o += e.weight * ci;
                }
                wsum += e.weight;
                wl += e.weight * e.l;
            }
            counts.push(entries.len() - start);
            alpha.push(a);
            depth.push(if wsum > 0.0 { wl / wsum } else { 0.0 });
        }
        (entries, counts, image, alpha, depth)
    });
    let mut store = WeightStore {
        offsets: Vec::with_capacity(h * w + 1),
        entries: Vec::new(),
    };
    store.offsets.push(0);
    let mut image = Vec::with_capacity(h * w * dim);
    let mut alpha = Vec::with_capacity(h * w);
    let mut depth = Vec::with_capacity(h * w);
    for (entries, counts, img, a, d) in per_block {
        for c in counts {
            let last = *store.offsets.last().unwrap();
            store.offsets.push(last + c);
        }
        store.entries.extend(entries);
        image.extend(img);
        alpha.extend(a);
        depth.extend(d);
    }
    let kind = if dim == 3 {
        ChannelKind::Color
    } else {
        ChannelKind::Feature
    };
    Ok(RenderBuffers {
        image: Image::from_data(h, w, dim, kind, image)?,
        alpha: Image::from_data(h, w, 1, ChannelKind::Alpha, alpha)?,
        depth,
        weights: store,
        behind_camera: behind,
    })
}

/// Recompute image[p] = Σ_k W_{p,k}·c_k from retained weights and a K×D
/// attribute table.
pub fn composite(
    weights: &WeightStore,
    attrs: &[f64],
    dim: usize,
    height: usize,
    width: usize,
) -> Result<Image> {
    if weights.pixel_count() != height * width {
        return Err(Error::ShapeMismatch {
            what: "weight store",
            expected: alloc::format!("{} pixels", height * width),
            found: alloc::format!("{}", weights.pixel_count()),
        });
    }
    let mut img = Image::zeros(height, width, dim, ChannelKind::Feature);
    let data = img.data_mut();
    for p in 0..height * width {
        let px = &mut data[p * dim..(p + 1) * dim];
        for e in weights.pixel(p) {
            let c = attrs
                .get(e.kernel as usize * dim..(e.kernel as usize + 1) * dim)
                .ok_or_else(|| invalid("attribute table shorter than kernel indices"))?;
            for (o, ci) in px.iter_mut().zip(c) {
                *o += e.weight * ci;
            }
        }
    }
    Ok(img)
}

/// Diffuse shading of a rendered normal map.
///
/// `normals` must come from rendering world-space unit normals as kernel
/// attributes through `camera`; the surface point of each pixel is its
/// expected depth along the pixel ray. `light_pos` is in world
/// coordinates.
pub fn shade_lambert(
    normals: &RenderBuffers,
    camera: &Camera,
    light_pos: Vec3,
    light_color: Vec3,
) -> Result<Image> {
    normals
        .image
        .expect_shape(camera.height(), camera.width(), 3)?;
    let light = camera.to_camera(light_pos);
    let r = camera.rotation();
    let (h, w) = (camera.height(), camera.width());
    let mut out = Image::zeros(h, w, 3, ChannelKind::Color);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            if normals.alpha.data()[p] <= 0.0 {
                continue;
            }
            let n_world = Vec3::from_array([
                normals.image.pixel(i, j)[0],
                normals.image.pixel(i, j)[1],
                normals.image.pixel(i, j)[2],
            ]);
            let Some(n) = (*r * n_world).normalized() else {
                continue;
            };
            let point = camera.ray_direction(i, j) * normals.depth[p];
            let Some(to_light) = (light - point).normalized() else {
                continue;
            };
            let k = n.dot(to_light).max(0.0);
            let px = out.pixel_mut(i, j);
            px[0] = k * light_color.x;
            px[1] = k * light_color.y;
            px[2] = k * light_color.z;
        }
    }
    Ok(out)
}
