//! Kernels, scenes, cameras, rays and images.
//!
//! Kernels store the inverse covariance directly; every downstream formula
//! consumes Σ⁻¹, so converters produce it without an intermediate Σ.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{Mat3, Vec3};

/// Default absorption coefficient.
pub const DEFAULT_TAU: f64 = 1.0;

const SYMMETRY_TOL: f64 = 1e-6;
const ROTATION_TOL: f64 = 1e-6;

/// One ellipsoidal Gaussian reconstruction kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    pub center: Vec3,
    pub inv_cov: Mat3,
    pub attr: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(center: Vec3, inv_cov: Mat3, attr: Vec<f64>) -> Self {
        Self {
            center,
            inv_cov,
            attr,
        }
    }

    /// Isotropic kernel with covariance `variance · I`.
    pub fn isotropic(center: Vec3, variance: f64, attr: Vec<f64>) -> Self {
        Self::new(center, Mat3::scaled_identity(1.0 / variance), attr)
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !self.center.is_finite() {
            return Err(invalid(format!("kernel {index}: center is not finite")));
        }
        if !self.inv_cov.is_finite() {
            return Err(invalid(format!("kernel {index}: inv_cov is not finite")));
        }
        if self.inv_cov.asymmetry() > SYMMETRY_TOL {
            return Err(invalid(format!("kernel {index}: inv_cov is not symmetric")));
        }
        if !self.inv_cov.is_positive_definite() {
            return Err(invalid(format!(
                "kernel {index}: inv_cov is not positive definite"
            )));
        }
        if self.attr.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("kernel {index}: attribute is not finite")));
        }
        Ok(())
    }
}

/// An ordered set of kernels sharing one attribute dimension, plus the
/// absorption coefficient τ.
///
/// Kernel indices are stable through every stage of rendering; gradients
/// are routed back by index.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    kernels: Vec<GaussianKernel>,
    attr_dim: usize,
    tau: f64,
}

impl GaussianScene {
    pub fn new(kernels: Vec<GaussianKernel>, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be finite and >= 0, got {tau}")));
        }
        let attr_dim = kernels.first().map_or(0, |k| k.attr.len());
        for (i, k) in kernels.iter().enumerate() {
            if k.attr.len() != attr_dim {
                return Err(Error::ShapeMismatch {
                    what: "kernel attribute",
                    expected: format!("{attr_dim}"),
                    found: format!("{} at kernel {i}", k.attr.len()),
                });
            }
            k.validate(i)?;
        }
        Ok(Self {
            kernels,
            attr_dim,
            tau,
        })
    }

    /// Empty scene with a fixed attribute dimension.
    pub fn empty(attr_dim: usize, tau: f64) -> Self {
        Self {
            kernels: Vec::new(),
            attr_dim,
            tau,
        }
    }

    pub fn kernels(&self) -> &[GaussianKernel] {
        &self.kernels
    }

    pub fn kernel(&self, k: usize) -> &GaussianKernel {
        &self.kernels[k]
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be finite and >= 0, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn set_center(&mut self, k: usize, center: Vec3) -> Result<()> {
        if !center.is_finite() {
            return Err(invalid(format!("kernel {k}: center is not finite")));
        }
        self.kernels[k].center = center;
        Ok(())
    }

    pub fn set_inv_cov(&mut self, k: usize, inv_cov: Mat3) -> Result<()> {
        let old = core::mem::replace(&mut self.kernels[k].inv_cov, inv_cov);
        if let Err(e) = self.kernels[k].validate(k) {
            self.kernels[k].inv_cov = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn set_attr(&mut self, k: usize, attr: &[f64]) -> Result<()> {
        if attr.len() != self.attr_dim {
            return Err(Error::ShapeMismatch {
                what: "kernel attribute",
                expected: format!("{}", self.attr_dim),
                found: format!("{}", attr.len()),
            });
        }
        if attr.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("kernel {k}: attribute is not finite")));
        }
        self.kernels[k].attr.copy_from_slice(attr);
        Ok(())
    }

    /// Replace every attribute with rows of a K×D' table (D' may differ from
    /// the current dimension).
    pub fn with_attributes(&self, attrs: &[f64], dim: usize) -> Result<Self> {
        if attrs.len() != dim * self.len() {
            return Err(Error::ShapeMismatch {
                what: "attribute table",
                expected: format!("{}x{}", self.len(), dim),
                found: format!("{} values", attrs.len()),
            });
        }
        let kernels = self
            .kernels
            .iter()
            .enumerate()
            .map(|(k, kern)| {
                GaussianKernel::new(
                    kern.center,
                    kern.inv_cov,
                    attrs[k * dim..(k + 1) * dim].to_vec(),
                )
            })
            .collect();
        GaussianScene::new(kernels, self.tau)
    }

    /// Concatenate scenes (same attribute dimension and τ of `self`).
    pub fn merged(&self, other: &GaussianScene) -> Result<Self> {
        let mut kernels = self.kernels.clone();
        kernels.extend(other.kernels.iter().cloned());
        GaussianScene::new(kernels, self.tau)
    }

    /// Apply a rigid translation to every kernel center.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut s = self.clone();
        for k in s.kernels.iter_mut() {
            k.center += offset;
        }
        s
    }
}

/// Pinhole camera: extrinsics (R, T) and intrinsics (F, O_x, O_y, H, W).
///
/// Camera coordinates: +z looks forward, pixel row `i` runs along +x and
/// column `j` along +y.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    rotation: Mat3,
    translation: Vec3,
    focal: f64,
    ox: f64,
    oy: f64,
    height: usize,
    width: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        focal: f64,
        ox: f64,
        oy: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        validate_rotation(&rotation)?;
        if !translation.is_finite() {
            return Err(invalid("camera translation is not finite"));
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(invalid(format!("focal length must be > 0, got {focal}")));
        }
        if !(ox.is_finite() && oy.is_finite()) {
            return Err(invalid("principal point is not finite"));
        }
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "image size must be at least 1x1, got {height}x{width}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
            focal,
            ox,
            oy,
            height,
            width,
        })
    }

    /// Identity extrinsics with the principal point at the image center.
    pub fn identity(focal: f64, height: usize, width: usize) -> Result<Self> {
        Camera::new(
            Mat3::IDENTITY,
            Vec3::ZERO,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            height,
            width,
        )
    }

    /// Camera at `eye` looking at `target`. Image rows run along `up` and
    /// columns along the right-hand direction so that det(R) = +1.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .normalized()
            .ok_or_else(|| invalid("look_at: eye and target coincide"))?;
        let right = forward
            .cross(up)
            .normalized()
            .ok_or_else(|| invalid("look_at: up is parallel to the view direction"))?;
        let cam_up = right.cross(forward);
        // Rows of R are the camera axes expressed in world coordinates.
        let rotation = Mat3::new([cam_up.to_array(), right.to_array(), forward.to_array()]);
        let translation = -(rotation * eye);
        Camera::new(
            rotation,
            translation,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            height,
            width,
        )
    }

    /// Camera on a sphere of radius `distance` around `target`, at the given
    /// azimuth/elevation in radians (world +y is up).
    pub fn orbit(
        target: Vec3,
        distance: f64,
        azimuth: f64,
        elevation: f64,
        focal: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        use crate::math::{cos, sin};
        let eye = target
            + Vec3::new(
                distance * cos(elevation) * sin(azimuth),
                distance * sin(elevation),
                distance * cos(elevation) * cos(azimuth),
            );
        Camera::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0), focal, height, width)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn ox(&self) -> f64 {
        self.ox
    }

    pub fn oy(&self) -> f64 {
        self.oy
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Same intrinsics, new extrinsics.
    pub fn with_pose(&self, rotation: Mat3, translation: Vec3) -> Result<Self> {
        Camera::new(
            rotation,
            translation,
            self.focal,
            self.ox,
            self.oy,
            self.height,
            self.width,
        )
    }

    /// Same extrinsics and intrinsics, identity pose.
    pub fn at_identity(&self) -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            ..self.clone()
        }
    }

    /// Normalised direction of the ray through pixel (i, j).
    #[inline]
    pub fn ray_direction(&self, i: usize, j: usize) -> Vec3 {
        let d = Vec3::new(
            (i as f64 - self.oy) / self.focal,
            (j as f64 - self.ox) / self.focal,
            1.0,
        );
        d / d.norm()
    }

    /// Projection of a camera-space point to continuous (row, column).
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (
            self.oy + self.focal * p.x / p.z,
            self.ox + self.focal * p.y / p.z,
        )
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

pub(crate) fn validate_rotation(r: &Mat3) -> Result<()> {
    if !r.is_finite() {
        return Err(invalid("rotation is not finite"));
    }
    let rtr = r.transpose() * *r;
    if (rtr - Mat3::IDENTITY).max_abs() > ROTATION_TOL {
        return Err(invalid("rotation is not orthonormal (RᵀR != I)"));
    }
    if (r.determinant() - 1.0).abs() > ROTATION_TOL {
        return Err(invalid("rotation determinant is not +1"));
    }
    Ok(())
}

/// A camera-space viewing ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub dir: Vec3,
    pub pixel: (usize, usize),
}

/// One ray per pixel, row-major.
pub fn generate_rays(camera: &Camera) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(camera.pixel_count());
    for i in 0..camera.height() {
        for j in 0..camera.width() {
            rays.push(Ray {
                dir: camera.ray_direction(i, j),
                pixel: (i, j),
            });
        }
    }
    rays
}

/// Move kernels from object to camera coordinates:
/// M ← R·M + T and Σ⁻¹ ← R·Σ⁻¹·Rᵀ.
pub fn view_transform(scene: &GaussianScene, camera: &Camera) -> GaussianScene {
    transform_kernels(scene, camera.rotation(), camera.translation())
}

pub(crate) fn transform_kernels(scene: &GaussianScene, r: &Mat3, t: Vec3) -> GaussianScene {
    let rt = r.transpose();
    let kernels = scene
        .kernels
        .iter()
        .map(|k| GaussianKernel {
            center: *r * k.center + t,
            inv_cov: (*r * k.inv_cov * rt).symmetrized(),
            attr: k.attr.clone(),
        })
        .collect();
    GaussianScene {
        kernels,
        attr_dim: scene.attr_dim,
        tau: scene.tau,
    }
}

/// Apply a rigid transform (validated rotation) to a scene.
pub fn rigid_transform(scene: &GaussianScene, r: &Mat3, t: Vec3) -> Result<GaussianScene> {
    validate_rotation(r)?;
    Ok(transform_kernels(scene, r, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Color,
    Alpha,
    Normal,
    Feature,
}

/// H×W×C image of reals, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    kind: ChannelKind,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize, kind: ChannelKind) -> Self {
        Self {
            height,
            width,
            channels,
            kind,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(
        height: usize,
        width: usize,
        channels: usize,
        kind: ChannelKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                what: "image data",
                expected: format!("{height}x{width}x{channels}"),
                found: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            kind,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.width + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.width + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Same shape check used by every consumer.
    pub fn expect_shape(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        if self.height != height || self.width != width || self.channels != channels {
            return Err(Error::ShapeMismatch {
                what: "image",
                expected: format!("{height}x{width}x{channels}"),
                found: format!("{}x{}x{}", self.height, self.width, self.channels),
            });
        }
        Ok(())
    }
}
