//! Versioned JSON files for scenes, cameras and sampled attributes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use volsplat_core::{Camera, GaussianKernel, GaussianScene, Mat3, SampledAttributes, Vec3};

use crate::atomic::{read_text, write_atomic};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

fn current_version() -> u32 {
    FORMAT_VERSION
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported format version {v} (expected {FORMAT_VERSION})"),
        ));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct KernelRecord {
    pub center: [f64; 3],
    /// Row-major Σ⁻¹.
    pub inv_cov: [f64; 9],
    pub attr: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct SceneRecord {
    #[serde(default = "current_version")]
    pub version: u32,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Only needed to give an empty scene an attribute dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr_dim: Option<usize>,
    pub kernels: Vec<KernelRecord>,
}

fn default_tau() -> f64 {
    volsplat_core::scene::DEFAULT_TAU
}

impl SceneRecord {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        SceneRecord {
            version: FORMAT_VERSION,
            tau: scene.tau(),
            attr_dim: scene.is_empty().then_some(scene.attr_dim()),
            kernels: scene
                .kernels()
                .iter()
                .map(|k| KernelRecord {
                    center: k.center.to_array(),
                    inv_cov: k.inv_cov.to_row_major(),
                    attr: k.attr.clone(),
                })
                .collect(),
        }
    }

    pub fn into_scene(self) -> volsplat_core::Result<GaussianScene> {
        if self.kernels.is_empty() {
            let s = GaussianScene::empty(self.attr_dim.unwrap_or(0), self.tau);
            return s.with_tau(self.tau);
        }
        let kernels = self
            .kernels
            .into_iter()
            .map(|k| {
                GaussianKernel::new(
                    Vec3::from_array(k.center),
                    Mat3::from_row_major(k.inv_cov),
                    k.attr,
                )
            })
            .collect();
        GaussianScene::new(kernels, self.tau)
    }
}

#[derive(Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(default = "current_version")]
    pub version: u32,
    /// Row-major rotation, world to camera.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "T")]
    pub translation: [f64; 3],
    #[serde(rename = "F")]
    pub focal: f64,
    #[serde(rename = "Ox")]
    pub ox: f64,
    #[serde(rename = "Oy")]
    pub oy: f64,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        CameraRecord {
            version: FORMAT_VERSION,
            rotation: c.rotation().to_row_major(),
            translation: c.translation().to_array(),
            focal: c.focal(),
            ox: c.ox(),
            oy: c.oy(),
            height: c.height(),
            width: c.width(),
        }
    }

    pub fn into_camera(self) -> volsplat_core::Result<Camera> {
        Camera::new(
            Mat3::from_row_major(self.rotation),
            Vec3::from_array(self.translation),
            self.focal,
            self.ox,
            self.oy,
            self.height,
            self.width,
        )
    }
}

#[derive(Serialize, Deserialize)]
pub struct AttributesRecord {
    #[serde(default = "current_version")]
    pub version: u32,
    pub dim: usize,
    pub attrs: Vec<Vec<f64>>,
    pub support: Vec<f64>,
    pub masked: Vec<bool>,
    pub masked_fraction: f64,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records always serialize");
    s.push('\n');
    s
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn parse_scene(path: &Path, text: &str) -> Result<GaussianScene> {
    let rec: SceneRecord = parse_json(path, text)?;
    check_version(path, rec.version)?;
    rec.into_scene()
        .map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    parse_scene(path, &read_text(path)?)
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    write_atomic(path, to_json(&SceneRecord::from_scene(scene)).as_bytes())
}

pub fn parse_camera(path: &Path, text: &str) -> Result<Camera> {
    let rec: CameraRecord = parse_json(path, text)?;
    check_version(path, rec.version)?;
    rec.into_camera()
        .map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    parse_camera(path, &read_text(path)?)
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_atomic(path, to_json(&CameraRecord::from_camera(camera)).as_bytes())
}

pub fn write_attributes(path: &Path, s: &SampledAttributes) -> Result<()> {
    let rec = AttributesRecord {
        version: FORMAT_VERSION,
        dim: s.dim,
        attrs: (0..s.len()).map(|k| s.attr(k).to_vec()).collect(),
        support: s.support.clone(),
        masked: s.masked.clone(),
        masked_fraction: s.masked_fraction(),
    };
    write_atomic(path, to_json(&rec).as_bytes())
}

pub fn read_attributes(path: &Path) -> Result<SampledAttributes> {
    let rec: AttributesRecord = parse_json(path, &read_text(path)?)?;
    check_version(path, rec.version)?;
    let n = rec.attrs.len();
    if rec.support.len() != n
        || rec.masked.len() != n
        || rec.attrs.iter().any(|a| a.len() != rec.dim)
    {
        return Err(Error::parse(path, "attribute table rows are inconsistent"));
    }
    Ok(SampledAttributes {
        attrs: rec.attrs.into_iter().flatten().collect(),
        dim: rec.dim,
        support: rec.support,
        masked: rec.masked,
    })
}
