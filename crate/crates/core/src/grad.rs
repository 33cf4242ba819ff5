//! Analytic backward pass through the render, and a central-difference
//! gradient checker.
//!
//! Per pixel the weights are W_k = T(l_k)·e^{q_k} with
//! T(l_k) = exp(−τ·Σ_m e^{q_m}·Φ((l_k − l_m)/σ_m)). Gradients reach each
//! kernel along two paths: its own peak density e^{q_k}, and the
//! transmittance of every kernel behind it (which is how occluded kernels
//! and occluders receive gradient). Either path can be blocked.
//!
//! Selection (coarse boxes, the η threshold and the K′ cut) is a discrete
//! choice frozen from the forward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::blender::{render, RenderBuffers};
use crate::error::{invalid, Error, Result};
use crate::math::{exp, normal_cdf, normal_pdf, rotation_from_axis_angle, Mat3, Vec3};
use crate::par;
use crate::scene::{view_transform, Camera, GaussianScene, Image};
use crate::tracer::SelectionConfig;

/// |z| beyond which the CDF is saturated (matches the forward pass).
const CDF_SATURATION: f64 = 9.0;

/// Which gradient paths through W_k = T(l_k)·e^{q_k} stay open.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientPaths {
    /// Gradient through T(l_k) (and the alpha map, which is 1 − T(∞)).
    pub transmittance: bool,
    /// Gradient through the e^{q_k} factor of W_k.
    pub density: bool,
}

impl Default for GradientPaths {
    fn default() -> Self {
        Self::FULL
    }
}

impl GradientPaths {
    pub const FULL: GradientPaths = GradientPaths {
        transmittance: true,
        density: true,
    };
    pub const NO_TRANSMITTANCE: GradientPaths = GradientPaths {
        transmittance: false,
        density: true,
    };
    pub const NO_DENSITY: GradientPaths = GradientPaths {
        transmittance: true,
        density: false,
    };
    pub const NONE: GradientPaths = GradientPaths {
        transmittance: false,
        density: false,
    };
}

/// Gradients of a scalar loss w.r.t. every scene and camera parameter.
///
/// `d_inv_cov[k]` is the symmetric gradient G with dL = tr(Gᵀ·dΣ⁻¹) for any
/// symmetric perturbation dΣ⁻¹; perturbing the off-diagonal pair (i, j) and
/// (j, i) together by h changes the loss by 2·G_ij·h.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_center: Vec<Vec3>,
    pub d_inv_cov: Vec<Mat3>,
    /// K×D row-major.
    pub d_attr: Vec<f64>,
    pub attr_dim: usize,
    pub d_rotation: Mat3,
    pub d_translation: Vec3,
}

impl GradientBundle {
    pub fn zeros(kernels: usize, attr_dim: usize) -> Self {
        Self {
            d_center: vec![Vec3::ZERO; kernels],
            d_inv_cov: vec![Mat3::ZERO; kernels],
            d_attr: vec![0.0; kernels * attr_dim],
            attr_dim,
            d_rotation: Mat3::ZERO,
            d_translation: Vec3::ZERO,
        }
    }

    /// Gradient w.r.t. a left perturbation R ← exp([δ]×)·R of the camera
    /// rotation.
    pub fn rotation_tangent(&self, rotation: &Mat3) -> Vec3 {
        so3_tangent(&self.d_rotation, rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.d_center.iter().all(|v| v.is_finite())
            && self.d_inv_cov.iter().all(|m| m.is_finite())
            && self.d_attr.iter().all(|v| v.is_finite())
            && self.d_rotation.is_finite()
            && self.d_translation.is_finite()
    }

    pub fn add_assign(&mut self, o: &GradientBundle) {
        for (a, b) in self.d_center.iter_mut().zip(&o.d_center) {
            *a += *b;
        }
        for (a, b) in self.d_inv_cov.iter_mut().zip(&o.d_inv_cov) {
            *a += *b;
        }
        for (a, b) in self.d_attr.iter_mut().zip(&o.d_attr) {
            *a += *b;
        }
        self.d_rotation += o.d_rotation;
        self.d_translation += o.d_translation;
    }
}

/// Project a matrix gradient G = dL/dR onto the tangent of SO(3) at R for
/// left perturbations exp([δ]×)·R.
pub fn so3_tangent(d_rotation: &Mat3, rotation: &Mat3) -> Vec3 {
    let x = *d_rotation * rotation.transpose();
    Vec3::new(
        x.m[2][1] - x.m[1][2],
        x.m[0][2] - x.m[2][0],
        x.m[1][0] - x.m[0][1],
    )
}

/// Forward render with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct Tape {
    pub scene: GaussianScene,
    pub camera: Camera,
    pub cfg: SelectionConfig,
    pub buffers: RenderBuffers,
}

impl Tape {
    pub fn record(scene: &GaussianScene, camera: &Camera, cfg: &SelectionConfig) -> Result<Tape> {
        Ok(Tape {
            scene: scene.clone(),
            camera: camera.clone(),
            cfg: *cfg,
            buffers: render(scene, camera, cfg)?,
        })
    }
}

const MAX_BLOCKS: usize = 16;

struct Partial {
    d_center: Vec<Vec3>,
    d_inv_cov: Vec<Mat3>,
    d_attr: Vec<f64>,
}

/// Backpropagate image and alpha gradients through the recorded render.
pub fn backward(
    tape: &Tape,
    d_image: &Image,
    d_alpha: Option<&Image>,
    paths: GradientPaths,
) -> Result<GradientBundle> {
    let cam = &tape.camera;
    let (h, w) = (cam.height(), cam.width());
    let dim = tape.scene.attr_dim();
    d_image.expect_shape(h, w, dim)?;
    if let Some(a) = d_alpha {
        a.expect_shape(h, w, 1)?;
    }
    let n = tape.scene.len();
    let tau = tape.scene.tau();
    let cam_scene = view_transform(&tape.scene, cam);
    let store = &tape.buffers.weights;
    if store.pixel_count() != h * w {
        return Err(Error::ShapeMismatch {
            what: "tape",
            expected: format!("{} pixels", h * w),
            found: format!("{}", store.pixel_count()),
        });
    }
    let grad_img = d_image.data();
    let grad_alpha = d_alpha.map(|a| a.data());
    let blocks = par::block_ranges(h * w, MAX_BLOCKS);
    let partials = par::map_blocks(blocks.len(), |b| {
        let mut part = Partial {
            d_center: vec![Vec3::ZERO; n],
            d_inv_cov: vec![Mat3::ZERO; n],
            d_attr: vec![0.0; n * dim],
        };
        // Per-entry gradients w.r.t. e^q, l and σ.
        let mut d_e: Vec<f64> = Vec::new();
        let mut d_l: Vec<f64> = Vec::new();
        let mut d_s: Vec<f64> = Vec::new();
        let mut e_q: Vec<f64> = Vec::new();
        for p in blocks[b].clone() {
            let entries = store.pixel(p);
            if entries.is_empty() {
                continue;
            }
            let g = &grad_img[p * dim..(p + 1) * dim];
            let ga = grad_alpha.map_or(0.0, |a| a[p]);
            let cnt = entries.len();
            d_e.clear();
            d_e.resize(cnt, 0.0);
            d_l.clear();
            d_l.resize(cnt, 0.0);
            d_s.clear();
            d_s.resize(cnt, 0.0);
            e_q.clear();
            e_q.extend(entries.iter().map(|m| exp(m.q)));

            for (ki, e) in entries.iter().enumerate() {
                let k = e.kernel as usize;
                let attr = &tape.scene.kernel(k).attr;
                let mut g_w = 0.0;
                for c in 0..dim {
                    g_w += g[c] * attr[c];
                    part.d_attr[k * dim + c] += e.weight * g[c];
                }
                if g_w == 0.0 {
                    continue;
                }
                if paths.density {
                    d_e[ki] += g_w * e.transmittance;
                }
                if paths.transmittance {
                    // W_k = T_k·E_k, T_k = exp(−τ·S_k).
                    let g_s = -tau * e.weight * g_w;
                    for (mi, m) in entries.iter().enumerate() {
                        let z = (e.l - m.l) / m.sigma;
                        if z > CDF_SATURATION {
                            d_e[mi] += g_s;
                            continue;
                        }
                        if z < -CDF_SATURATION {
                            continue;
                        }
                        d_e[mi] += g_s * normal_cdf(z);
                        let c = g_s * e_q[mi] * normal_pdf(z) / m.sigma;
                        d_l[ki] += c;
                        d_l[mi] -= c;
                        d_s[mi] -= c * z;
                    }
                }
            }
            if paths.transmittance && ga != 0.0 {
                // alpha = 1 − exp(−τ·Σ E_m).
                let alpha = 1.0 - exp(-tau * e_q.iter().sum::<f64>());
                let g_e = ga * tau * (1.0 - alpha);
                for de in d_e.iter_mut() {
                    *de += g_e;
                }
            }

            let (i, j) = (p / w, p % w);
            let dir = cam.ray_direction(i, j);
            for (ei, e) in entries.iter().enumerate() {
                let (ge, gl, gs) = (d_e[ei], d_l[ei], d_s[ei]);
                if ge == 0.0 && gl == 0.0 && gs == 0.0 {
                    continue;
                }
                let k = e.kernel as usize;
                let kern = cam_scene.kernel(k);
                let a_mat = &kern.inv_cov;
                let a_d = a_mat.mul_vec(dir);
                let a = dir.dot(a_d);
                let v = kern.center - dir * e.l;
                let a_v = a_mat.mul_vec(v);
                let gq = ge * e_q[ei];
                // q = −½ VᵀAV with V = M − l·D and l = DᵀAM / DᵀAD.
                let dm = a_v * (-gq) + a_d * (gl / a);
                let s3 = e.sigma * e.sigma * e.sigma;
                let outer_dv = dir.outer(v);
                let dv_sym = (outer_dv + outer_dv.transpose()) * (gl / (2.0 * a));
                let da = v.outer(v) * (-0.5 * gq) + dv_sym + dir.outer(dir) * (-0.5 * s3 * gs);
                part.d_center[k] += dm;
                part.d_inv_cov[k] += da;
            }
        }
        part
    });

    // Fixed-order reduction.
    let mut cam_center = vec![Vec3::ZERO; n];
    let mut cam_inv_cov = vec![Mat3::ZERO; n];
    let mut d_attr = vec![0.0; n * dim];
    for part in partials {
        for k in 0..n {
            cam_center[k] += part.d_center[k];
            cam_inv_cov[k] += part.d_inv_cov[k];
        }
        for (a, b) in d_attr.iter_mut().zip(&part.d_attr) {
            *a += *b;
        }
    }

    // Back through M_cam = R·M + T and A_cam = R·A·Rᵀ.
    let r = cam.rotation();
    let rt = r.transpose();
    let mut out = GradientBundle::zeros(n, dim);
    out.d_attr = d_attr;
    for k in 0..n {
        let gm = cam_center[k];
        let ga = cam_inv_cov[k].symmetrized();
        let world = tape.scene.kernel(k);
        out.d_center[k] = rt * gm;
        out.d_inv_cov[k] = (rt * ga * *r).symmetrized();
        out.d_translation += gm;
        out.d_rotation += gm.outer(world.center) + ga * *r * world.inv_cov * 2.0;
    }
    Ok(out)
}

/// A scalar loss on a render together with its image/alpha gradients.
pub trait PixelLoss {
    /// Returns (loss, dL/dimage, dL/dalpha).
    fn evaluate(&self, buffers: &RenderBuffers) -> Result<(f64, Image, Image)>;
}

/// Forward + backward for one loss.
pub fn loss_and_gradient(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
    loss: &dyn PixelLoss,
    paths: GradientPaths,
) -> Result<(f64, GradientBundle, Tape)> {
    let tape = Tape::record(scene, camera, cfg)?;
    let (value, d_img, d_alpha) = loss.evaluate(&tape.buffers)?;
    let bundle = backward(&tape, &d_img, Some(&d_alpha), paths)?;
    Ok((value, bundle, tape))
}

/// Parameter classes covered by [`gradcheck`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Center,
    InvCov,
    Attr,
    Rotation,
    Translation,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Center,
        ParamClass::InvCov,
        ParamClass::Attr,
        ParamClass::Rotation,
        ParamClass::Translation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Center => "center",
            ParamClass::InvCov => "inv_cov",
            ParamClass::Attr => "attr",
            ParamClass::Rotation => "rotation",
            ParamClass::Translation => "translation",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub class: ParamClass,
    /// Kernel index (0 for camera parameters).
    pub kernel: usize,
    /// Coordinate within the class (row-major (i, j) pair index for inv_cov).
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassSummary {
    pub checked: usize,
    pub skipped_boundary: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub per_class: Vec<(ParamClass, ClassSummary)>,
    /// Entries whose relative error exceeded the tolerance.
    pub failures: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_class
            .iter()
            .fold(0.0, |a, (_, s)| a.max(s.max_rel_error))
    }

    pub fn checked(&self) -> usize {
        self.per_class.iter().map(|(_, s)| s.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.per_class.iter().map(|(_, s)| s.skipped_boundary).sum()
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: &GradcheckReport) {
        for (cls, s) in &other.per_class {
            match self.per_class.iter_mut().find(|(c, _)| c == cls) {
                Some((_, mine)) => {
                    mine.checked += s.checked;
                    mine.skipped_boundary += s.skipped_boundary;
                    mine.max_rel_error = mine.max_rel_error.max(s.max_rel_error);
                }
                None => self.per_class.push((*cls, s.clone())),
            }
        }
        self.failures.extend(other.failures.iter().cloned());
    }
}

/// Per-pixel selected kernel sets, used to detect selection changes.
fn selection_signature(buffers: &RenderBuffers) -> Vec<Vec<u32>> {
    let store = &buffers.weights;
    (0..store.pixel_count())
        .map(|p| {
            let mut v: Vec<u32> = store.pixel(p).iter().map(|e| e.kernel).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

const INV_COV_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Compare analytic gradients against central differences for every
/// parameter of the requested classes.
///
/// A parameter whose ±h or ±2h perturbation changes any pixel's selected
/// kernel set sits near a selection discontinuity; it is skipped and
/// counted instead of compared.
pub fn gradcheck(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
    loss: &dyn PixelLoss,
    classes: &[ParamClass],
    check: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let (_, bundle, tape) = loss_and_gradient(scene, camera, cfg, loss, GradientPaths::FULL)?;
    let base_sig = selection_signature(&tape.buffers);
    let h = check.step;
    let mut report = GradcheckReport {
        step: h,
        tolerance: check.tolerance,
        per_class: Vec::new(),
        failures: Vec::new(),
    };

    let eval = |s: &GaussianScene, c: &Camera| -> Result<(f64, Vec<Vec<u32>>)> {
        let buf = render(s, c, cfg)?;
        let (v, _, _) = loss.evaluate(&buf)?;
        Ok((v, selection_signature(&buf)))
    };

    for &class in classes {
        let mut summary = ClassSummary::default();
        let params: Vec<(usize, usize)> = match class {
            ParamClass::Center => (0..scene.len())
                .flat_map(|k| (0..3).map(move |c| (k, c)))
                .collect(),
            ParamClass::InvCov => (0..scene.len())
                .flat_map(|k| (0..6).map(move |c| (k, c)))
                .collect(),
            ParamClass::Attr => (0..scene.len())
                .flat_map(|k| (0..scene.attr_dim()).map(move |c| (k, c)))
                .collect(),
            ParamClass::Rotation | ParamClass::Translation => (0..3).map(|c| (0, c)).collect(),
        };
        for (k, c) in params {
            let analytic = match class {
                ParamClass::Center => bundle.d_center[k][c],
                ParamClass::InvCov => {
                    let (i, j) = INV_COV_PAIRS[c];
                    let g = bundle.d_inv_cov[k].m[i][j];
                    if i == j {
                        g
                    } else {
                        2.0 * g
                    }
                }
                ParamClass::Attr => bundle.d_attr[k * scene.attr_dim() + c],
                ParamClass::Rotation => bundle.rotation_tangent(camera.rotation())[c],
                ParamClass::Translation => bundle.d_translation[c],
            };
            let perturbed = |delta: f64| -> Result<(GaussianScene, Camera)> {
                let mut s = scene.clone();
                let mut cam = camera.clone();
                match class {
                    ParamClass::Center => {
                        let mut m = s.kernel(k).center;
                        m[c] += delta;
                        s.set_center(k, m)?;
                    }
                    ParamClass::InvCov => {
                        let (i, j) = INV_COV_PAIRS[c];
                        let mut a = s.kernel(k).inv_cov;
                        a.m[i][j] += delta;
                        if i != j {
                            a.m[j][i] += delta;
                        }
                        s.set_inv_cov(k, a)?;
                    }
                    ParamClass::Attr => {
                        let mut at = s.kernel(k).attr.clone();
                        at[c] += delta;
                        s.set_attr(k, &at)?;
                    }
                    ParamClass::Rotation => {
                        let mut d = Vec3::ZERO;
                        d[c] = delta;
                        let r = rotation_from_axis_angle(d) * *camera.rotation();
                        cam = camera.with_pose(r, camera.translation())?;
                    }
                    ParamClass::Translation => {
                        let mut t = camera.translation();
                        t[c] += delta;
                        cam = camera.with_pose(*camera.rotation(), t)?;
                    }
                }
                Ok((s, cam))
            };
            let (sp, cp) = perturbed(h)?;
            let (sm, cm) = perturbed(-h)?;
            let (lp, sig_p) = eval(&sp, &cp)?;
            let (lm, sig_m) = eval(&sm, &cm)?;
            let mut near_boundary = sig_p != base_sig || sig_m != base_sig;
            if !near_boundary {
                let (sp2, cp2) = perturbed(2.0 * h)?;
                let (sm2, cm2) = perturbed(-2.0 * h)?;
                near_boundary = eval(&sp2, &cp2)?.1 != base_sig || eval(&sm2, &cm2)?.1 != base_sig;
            }
            if near_boundary {
                summary.skipped_boundary += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(check.abs_floor);
            let rel = (analytic - numeric).abs() / denom;
            summary.checked += 1;
            summary.max_rel_error = summary.max_rel_error.max(rel);
            if rel > check.tolerance || !rel.is_finite() {
                report.failures.push(GradcheckEntry {
                    class,
                    kernel: k,
                    coord: c,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.per_class.push((class, summary));
    }
    Ok(report)
}

/// Mean squared error of the image (and optionally the alpha map) against
/// fixed targets.
#[derive(Clone, Copy, Debug)]
pub struct ImageL2<'a> {
    pub target: &'a Image,
    pub target_alpha: Option<&'a Image>,
    pub image_weight: f64,
    pub alpha_weight: f64,
}

impl PixelLoss for ImageL2<'_> {
    fn evaluate(&self, buffers: &RenderBuffers) -> Result<(f64, Image, Image)> {
        let img = &buffers.image;
        self.target
            .expect_shape(img.height(), img.width(), img.channels())?;
        let n_img = img.data().len().max(1) as f64;
        let mut d_img = Image::zeros(img.height(), img.width(), img.channels(), img.kind());
        let mut loss = 0.0;
        for ((d, &x), &t) in d_img
            .data_mut()
            .iter_mut()
            .zip(img.data())
            .zip(self.target.data())
        {
            let r = x - t;
            loss += self.image_weight * r * r / n_img;
            *d = 2.0 * self.image_weight * r / n_img;
        }
        let alpha = &buffers.alpha;
        let mut d_alpha = Image::zeros(alpha.height(), alpha.width(), 1, alpha.kind());
        if let Some(ta) = &self.target_alpha {
            ta.expect_shape(alpha.height(), alpha.width(), 1)?;
            let n_a = alpha.data().len().max(1) as f64;
            for ((d, &x), &t) in d_alpha
                .data_mut()
                .iter_mut()
                .zip(alpha.data())
                .zip(ta.data())
            {
                let r = x - t;
                loss += self.alpha_weight * r * r / n_a;
                *d = 2.0 * self.alpha_weight * r / n_a;
            }
        } else if self.alpha_weight != 0.0 {
            return Err(invalid("alpha_weight set without a target alpha"));
        }
        Ok((loss, d_img, d_alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ChannelKind, GaussianKernel};

    fn two_kernel_scene() -> GaussianScene {
        GaussianScene::new(
            vec![
                GaussianKernel::isotropic(Vec3::new(0.05, 0.02, 4.0), 0.04, vec![1.0, 0.0, 0.0]),
                GaussianKernel::isotropic(Vec3::new(-0.05, 0.0, 4.3), 0.06, vec![0.0, 0.0, 1.0]),
            ],
            1.0,
        )
        .unwrap()
    }

    fn cam() -> Camera {
        Camera::identity(40.0, 12, 12).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_bundle() {
        let tape = Tape::record(&two_kernel_scene(), &cam(), &SelectionConfig::default()).unwrap();
        let zi = Image::zeros(12, 12, 3, ChannelKind::Color);
        let za = Image::zeros(12, 12, 1, ChannelKind::Alpha);
        let g = backward(&tape, &zi, Some(&za), GradientPaths::FULL).unwrap();
        assert_eq!(g, GradientBundle::zeros(2, 3));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::record(&two_kernel_scene(), &cam(), &SelectionConfig::default()).unwrap();
        let bad = Image::zeros(12, 11, 3, ChannelKind::Color);
        assert!(backward(&tape, &bad, None, GradientPaths::FULL).is_err());
    }

    #[test]
    fn blocking_both_paths_leaves_only_attributes() {
        let tape = Tape::record(&two_kernel_scene(), &cam(), &SelectionConfig::default()).unwrap();
        let mut gi = Image::zeros(12, 12, 3, ChannelKind::Color);
        gi.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i % 7) as f64 * 0.1 - 0.3);
        let full = backward(&tape, &gi, None, GradientPaths::FULL).unwrap();
        let none = backward(&tape, &gi, None, GradientPaths::NONE).unwrap();
        assert!(none.d_center.iter().all(|v| *v == Vec3::ZERO));
        assert!(none.d_inv_cov.iter().all(|m| *m == Mat3::ZERO));
        assert_eq!(none.d_attr, full.d_attr);
        assert!(full.d_center.iter().any(|v| v.max_abs() > 0.0));
    }

    fn target_for(scene: &GaussianScene, camera: &Camera, seed: u64) -> RenderBuffers {
        let other = crate::synth::random_scene(seed, scene.len());
        render(&other, camera, &SelectionConfig::default()).unwrap()
    }

    fn l2(t: &RenderBuffers) -> ImageL2<'_> {
        ImageL2 {
            target: &t.image,
            target_alpha: Some(&t.alpha),
            image_weight: 1.0,
            alpha_weight: 0.5,
        }
    }

    #[test]
    fn matches_central_differences_on_random_scenes() {
        let cfg = SelectionConfig::default();
        for seed in 0..3 {
            let scene = crate::synth::random_scene(seed, 5);
            let camera = crate::synth::random_orbit_camera(seed, 20);
            let target = target_for(&scene, &camera, seed + 100);
            let loss = l2(&target);
            let report = gradcheck(
                &scene,
                &camera,
                &cfg,
                &loss,
                &ParamClass::ALL,
                &GradcheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.failures);
            assert!(report.checked() > 60);
        }
    }

    #[test]
    fn culled_kernel_gets_no_gradient() {
        let mut kernels = two_kernel_scene().kernels().to_vec();
        kernels.push(GaussianKernel::isotropic(
            Vec3::new(0.0, 0.0, -3.0),
            0.05,
            vec![1.0, 1.0, 1.0],
        ));
        let scene = GaussianScene::new(kernels, 1.0).unwrap();
        let target = target_for(&scene, &cam(), 7);
        let loss = l2(&target);
        let (_, g, tape) = loss_and_gradient(
            &scene,
            &cam(),
            &SelectionConfig::default(),
            &loss,
            GradientPaths::FULL,
        )
        .unwrap();
        assert_eq!(tape.buffers.behind_camera, 1);
        assert_eq!(g.d_center[2], Vec3::ZERO);
        assert_eq!(g.d_inv_cov[2], Mat3::ZERO);
        assert!(g.d_attr[6..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attribute_gradient_is_weighted_upstream() {
        let scene = two_kernel_scene();
        let tape = Tape::record(&scene, &cam(), &SelectionConfig::default()).unwrap();
        let mut gi = Image::zeros(12, 12, 3, ChannelKind::Color);
        gi.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i * 31) % 11) as f64 - 5.0);
        let g = backward(&tape, &gi, None, GradientPaths::FULL).unwrap();
        let mut expect = vec![0.0; 6];
        for p in 0..144 {
            for e in tape.buffers.weights.pixel(p) {
                for c in 0..3 {
                    expect[e.kernel as usize * 3 + c] += e.weight * gi.data()[p * 3 + c];
                }
            }
        }
        for (a, b) in g.d_attr.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Two kernels on the optical axis, the rear one fully behind the front
    // one: the rear still receives gradient, and the front only learns about
    // the rear's colour through the transmittance path.
    fn stacked() -> (GaussianScene, Camera) {
        let scene = GaussianScene::new(
            vec![
                GaussianKernel::isotropic(Vec3::new(0.0, 0.0, 4.0), 0.05, vec![0.2, 0.2, 0.2]),
                GaussianKernel::isotropic(Vec3::new(0.0, 0.0, 5.0), 0.05, vec![0.9, 0.9, 0.9]),
            ],
            1.0,
        )
        .unwrap();
        (scene, Camera::identity(30.0, 9, 9).unwrap())
    }

    #[test]
    fn occluded_kernel_receives_gradient() {
        let (scene, camera) = stacked();
        let mut gi = Image::zeros(9, 9, 3, ChannelKind::Color);
        gi.data_mut().iter_mut().for_each(|v| *v = 1.0);
        let tape = Tape::record(&scene, &camera, &SelectionConfig::default()).unwrap();
        let g = backward(&tape, &gi, None, GradientPaths::FULL).unwrap();
        assert!(g.d_center[1].z.abs() > 1e-6);
        assert!(g.d_inv_cov[1].max_abs() > 1e-6);
    }

    #[test]
    fn transmittance_path_carries_occludee_colour() {
        let (scene, camera) = stacked();
        let mut gi = Image::zeros(9, 9, 3, ChannelKind::Color);
        gi.data_mut().iter_mut().for_each(|v| *v = 1.0);
        let tape = Tape::record(&scene, &camera, &SelectionConfig::default()).unwrap();
        let g_rho = backward(&tape, &gi, None, GradientPaths::NO_TRANSMITTANCE).unwrap();
        // Brightening the occludee changes nothing on the density path of the
        // front kernel.
        let bright = scene
            .with_attributes(&[0.2, 0.2, 0.2, 5.0, 5.0, 5.0], 3)
            .unwrap();
        let tape_b = Tape::record(&bright, &camera, &SelectionConfig::default()).unwrap();
        let g_rho_b = backward(&tape_b, &gi, None, GradientPaths::NO_TRANSMITTANCE).unwrap();
        assert_eq!(g_rho.d_inv_cov[0], g_rho_b.d_inv_cov[0]);
        let g_t = backward(&tape, &gi, None, GradientPaths::NO_DENSITY).unwrap();
        let g_t_b = backward(&tape_b, &gi, None, GradientPaths::NO_DENSITY).unwrap();
        assert!((g_t.d_inv_cov[0] - g_t_b.d_inv_cov[0]).max_abs() > 1e-6);
    }

    #[test]
    fn density_only_path_matches_hand_derivation() {
        // With only the density path open, W_k depends on kernel k through
        // e^{q_k}. On the optical axis q = 0 is stationary, so every
        // first derivative vanishes.
        let (scene, camera) = stacked();
        let mut gi = Image::zeros(9, 9, 3, ChannelKind::Color);
        gi.pixel_mut(4, 4).iter_mut().for_each(|v| *v = 1.0);
        let tape = Tape::record(&scene, &camera, &SelectionConfig::default()).unwrap();
        let g = backward(&tape, &gi, None, GradientPaths::NO_TRANSMITTANCE).unwrap();
        for k in 0..2 {
            assert!(g.d_center[k].max_abs() < 1e-12);
            assert!(g.d_inv_cov[k].max_abs() < 1e-12);
        }
        // Off axis by x: q = −½·x²/v, so dW/dx = T·e^q·(−x/v).
        let x = 0.03;
        let shifted = {
            let mut s = scene.clone();
            s.set_center(0, Vec3::new(x, 0.0, 4.0)).unwrap();
            s
        };
        let tape = Tape::record(&shifted, &camera, &SelectionConfig::default()).unwrap();
        let g = backward(&tape, &gi, None, GradientPaths::NO_TRANSMITTANCE).unwrap();
        let e0 = tape
            .buffers
            .weights
            .pixel(4 * 9 + 4)
            .iter()
            .find(|e| e.kernel == 0)
            .unwrap();
        // Upstream colour gradient Σ_c g_c·attr_c = 3·0.2.
        let expect = e0.transmittance * (-0.5 * x * x / 0.05f64).exp() * (-x / 0.05) * 0.6;
        assert!(
            (g.d_center[0].x - expect).abs() < 1e-12 * expect.abs().max(1.0),
            "{} vs {expect}",
            g.d_center[0].x
        );
    }

    #[test]
    fn backward_is_deterministic() {
        let scene = crate::synth::random_scene(11, 40);
        let camera = crate::synth::random_orbit_camera(11, 32);
        let target = target_for(&scene, &camera, 12);
        let loss = l2(&target);
        let (_, a, _) = loss_and_gradient(
            &scene,
            &camera,
            &SelectionConfig::default(),
            &loss,
            GradientPaths::FULL,
        )
        .unwrap();
        let (_, b, _) = loss_and_gradient(
            &scene,
            &camera,
            &SelectionConfig::default(),
            &loss,
            GradientPaths::FULL,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pose_gradient_matches_central_differences() {
        let cfg = SelectionConfig::default();
        for seed in 0..3 {
            let scene = crate::synth::random_scene(seed, 6);
            let camera = crate::synth::random_orbit_camera(seed, 20);
            let target = target_for(&scene, &camera, seed + 50);
            let loss = l2(&target);
            let (_, g, _) =
                loss_and_gradient(&scene, &camera, &cfg, &loss, GradientPaths::FULL).unwrap();
            let eval = |c: &Camera| {
                let buffers = render(&scene, c, &cfg).unwrap();
                loss.evaluate(&buffers).unwrap().0
            };
            let h = 1e-6;
            let tangent = g.rotation_tangent(camera.rotation());
            for axis in 0..3 {
                let mut e = Vec3::ZERO;
                e[axis] = h;
                let turn = |s: f64| {
                    let r = crate::math::rotation_from_axis_angle(e * s) * *camera.rotation();
                    camera.with_pose(r, camera.translation()).unwrap()
                };
                let fd = (eval(&turn(1.0)) - eval(&turn(-1.0))) / (2.0 * h);
                assert!(
                    (fd - tangent[axis]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "seed {seed} rotation axis {axis}: {fd} vs {}",
                    tangent[axis]
                );
                let shift = |s: f64| {
                    camera
                        .with_pose(*camera.rotation(), camera.translation() + e * s)
                        .unwrap()
                };
                let fd = (eval(&shift(1.0)) - eval(&shift(-1.0))) / (2.0 * h);
                assert!(
                    (fd - g.d_translation[axis]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "seed {seed} translation axis {axis}: {fd} vs {}",
                    g.d_translation[axis]
                );
            }
        }
    }
}
