//! Inverse rendering: image losses, mesh regularizers, ADAM and the fitting
//! procedures built from them (shape, rigid-group translation, camera pose).

mod adam;
mod procedures;
mod regularize;

pub use adam::{AdamConfig, AdamState};
pub use procedures::{
    fit_pose, fit_shape, fit_translation, FitReport, FitResult, PoseFitConfig, ShapeFitConfig,
    TranslationFitConfig,
};
pub use regularize::MeshRegularizer;

use alloc::format;
use alloc::vec::Vec;

use crate::blender::render;
use crate::error::{invalid, Error, Result};
use crate::grad::{loss_and_gradient, GradientBundle, GradientPaths, ImageL2};
use crate::math::{log10, rotation_angle, Mat3, Vec3};
use crate::par;
use crate::scene::{validate_rotation, Camera, ChannelKind, GaussianScene, Image};
use crate::tracer::SelectionConfig;

/// Luminance above which an external image pixel counts as foreground.
pub const LUMINANCE_SILHOUETTE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub rgb_weight: f64,
    pub silhouette_weight: f64,
    pub edge_weight: f64,
    pub laplacian_weight: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            rgb_weight: 1.0,
            silhouette_weight: 1.0,
            edge_weight: 0.0,
            laplacian_weight: 0.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.rgb_weight,
            self.silhouette_weight,
            self.edge_weight,
            self.laplacian_weight,
        ];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }

    fn uses_regularizer(&self) -> bool {
        self.edge_weight > 0.0 || self.laplacian_weight > 0.0
    }
}

/// A target observation: image, silhouette and the camera that saw them.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub alpha: Image,
}

impl View {
    pub fn new(camera: Camera, image: Image, alpha: Image) -> Result<Self> {
        let (h, w) = (camera.height(), camera.width());
        if image.height() != h || image.width() != w {
            return Err(invalid(format!(
                "target image is {}x{} but the camera is {h}x{w}",
                image.height(),
                image.width()
            )));
        }
        alpha.expect_shape(h, w, 1)?;
        Ok(Self {
            camera,
            image,
            alpha,
        })
    }

    /// Render `scene` to make a synthetic target.
    pub fn rendered(scene: &GaussianScene, camera: &Camera, cfg: &SelectionConfig) -> Result<Self> {
        let b = render(scene, camera, cfg)?;
        Ok(Self {
            camera: camera.clone(),
            image: b.image,
            alpha: b.alpha,
        })
    }

    /// Target from an external image without alpha: the silhouette is
    /// thresholded luminance.
    pub fn from_image(camera: Camera, image: Image) -> Result<Self> {
        let alpha = silhouette_from_luminance(&image, LUMINANCE_SILHOUETTE_THRESHOLD);
        Self::new(camera, image, alpha)
    }

    pub fn with_camera(&self, camera: Camera) -> Result<Self> {
        Self::new(camera, self.image.clone(), self.alpha.clone())
    }
}

/// Binary silhouette of pixels whose mean channel value exceeds `threshold`.
pub fn silhouette_from_luminance(image: &Image, threshold: f64) -> Image {
    let c = image.channels().max(1);
    let data = image
        .data()
        .chunks(c)
        .map(|px| {
            let lum = px.iter().sum::<f64>() / c as f64;
            if lum > threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Image::from_data(image.height(), image.width(), 1, ChannelKind::Alpha, data)
        .expect("shape follows the input")
}

/// Which quantities receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreeParams {
    pub centers: bool,
    pub attrs: bool,
    pub camera: bool,
}

impl FreeParams {
    fn validate(&self) -> Result<()> {
        if self.centers || self.attrs || self.camera {
            Ok(())
        } else {
            Err(invalid("no free parameters selected"))
        }
    }
}

/// Camera-pose gradient of one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraGradient {
    /// Left-perturbation tangent of the rotation.
    pub rotation: Vec3,
    pub translation: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Image and silhouette terms summed over views.
    pub data_loss: f64,
    pub edge: f64,
    pub laplacian: f64,
    /// Scene gradients summed over views plus regularizers; entries of
    /// non-free quantities are zero.
    pub grad: GradientBundle,
    pub cameras: Vec<CameraGradient>,
}

/// Total loss over `views` and its gradient.
///
/// loss = Σ_views [w_rgb·MSE(image) + w_sil·MSE(alpha)] + w_edge·edge +
/// w_lap·laplacian. The regularizers need `reg` when their weight is
/// positive.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad(
    scene: &GaussianScene,
    views: &[&View],
    spec: &LossSpec,
    free: FreeParams,
    reg: Option<&MeshRegularizer>,
    cfg: &SelectionConfig,
    paths: GradientPaths,
) -> Result<Evaluation> {
    spec.validate()?;
    free.validate()?;
    if views.is_empty() && !spec.uses_regularizer() {
        return Err(invalid("no target views given"));
    }
    let per_view = par::map_blocks(views.len(), |v| {
        let view = views[v];
        let loss = ImageL2 {
            target: &view.image,
            target_alpha: Some(&view.alpha),
            image_weight: spec.rgb_weight,
            alpha_weight: spec.silhouette_weight,
        };
        loss_and_gradient(scene, &view.camera, cfg, &loss, paths)
    });
    let mut grad = GradientBundle::zeros(scene.len(), scene.attr_dim());
    let mut cameras = Vec::with_capacity(views.len());
    let mut data_loss = 0.0;
    for (v, r) in per_view.into_iter().enumerate() {
        let (l, g, _) = r?;
        data_loss += l;
        cameras.push(CameraGradient {
            rotation: g.rotation_tangent(views[v].camera.rotation()),
            translation: g.d_translation,
        });
        grad.add_assign(&g);
    }
    grad.d_rotation = Mat3::ZERO;
    grad.d_translation = Vec3::ZERO;

    let (mut edge, mut laplacian) = (0.0, 0.0);
    if spec.uses_regularizer() {
        let reg = reg.ok_or_else(|| invalid("edge/laplacian weights need a neighbor graph"))?;
        let centers: Vec<Vec3> = scene.kernels().iter().map(|k| k.center).collect();
        if spec.edge_weight > 0.0 {
            let (val, g) = reg.edge(&centers)?;
            edge = val;
            for (a, b) in grad.d_center.iter_mut().zip(&g) {
                *a += *b * spec.edge_weight;
            }
        }
        if spec.laplacian_weight > 0.0 {
            let (val, g) = reg.laplacian(&centers)?;
            laplacian = val;
            for (a, b) in grad.d_center.iter_mut().zip(&g) {
                *a += *b * spec.laplacian_weight;
            }
        }
    }
    if !free.centers {
        grad.d_center.iter_mut().for_each(|v| *v = Vec3::ZERO);
    }
    if !free.attrs {
        grad.d_attr.iter_mut().for_each(|v| *v = 0.0);
    }
    grad.d_inv_cov.iter_mut().for_each(|m| *m = Mat3::ZERO);
    if !free.camera {
        cameras.iter_mut().for_each(|c| {
            c.rotation = Vec3::ZERO;
            c.translation = Vec3::ZERO;
        });
    }
    let loss = data_loss + spec.edge_weight * edge + spec.laplacian_weight * laplacian;
    Ok(Evaluation {
        loss,
        data_loss,
        edge,
        laplacian,
        grad,
        cameras,
    })
}

/// Geodesic angle between two rotations, in [0, π].
pub fn rotation_error(pred: &Mat3, gt: &Mat3) -> Result<f64> {
    validate_rotation(pred).map_err(|e| invalid(format!("predicted rotation: {e}")))?;
    validate_rotation(gt).map_err(|e| invalid(format!("reference rotation: {e}")))?;
    Ok(rotation_angle(&(pred.transpose() * *gt)))
}

/// Intersection over union of `alpha > threshold` masks.
pub fn silhouette_iou(a: &Image, b: &Image, threshold: f64) -> Result<f64> {
    b.expect_shape(a.height(), a.width(), a.channels())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (p, q) = (x > threshold, y > threshold);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Peak signal-to-noise ratio in dB over the pixels where `mask` is set
/// (all pixels when `None`).
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>, peak: f64) -> Result<f64> {
    b.expect_shape(a.height(), a.width(), a.channels())?;
    let c = a.channels();
    let n_pix = a.height() * a.width();
    if let Some(m) = mask {
        if m.len() != n_pix {
            return Err(Error::ShapeMismatch {
                what: "psnr mask",
                expected: format!("{n_pix}"),
                found: format!("{}", m.len()),
            });
        }
    }
    let (mut se, mut n) = (0.0, 0usize);
    for p in 0..n_pix {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for i in p * c..(p + 1) * c {
            let d = a.data()[i] - b.data()[i];
            se += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(invalid("psnr over an empty mask"));
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * log10(peak * peak / mse)
    })
}
