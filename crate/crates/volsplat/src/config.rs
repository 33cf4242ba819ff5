//! JSON run configuration shared by the subcommands.
//!
//! Every field is optional; command-line flags take precedence over the
//! file, and the file over built-in defaults. Unknown keys are rejected so
//! that a typo does not silently fall back to a default.

use std::path::Path;

use serde::Deserialize;
use volsplat_core::fit::{AdamConfig, LossSpec};
use volsplat_core::{Camera, GradientPaths, SelectionConfig, Vec3};

use crate::atomic::read_text;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub k_prime: Option<usize>,
    pub eta: Option<f64>,
    pub coarse: Option<bool>,
    pub coarse_downsample: Option<usize>,
}

impl SelectionSection {
    pub fn apply(&self, mut cfg: SelectionConfig) -> SelectionConfig {
        if let Some(k) = self.k_prime {
            cfg.k_prime = k;
        }
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(c) = self.coarse {
            cfg.coarse_enabled = c;
        }
        if let Some(d) = self.coarse_downsample {
            cfg.coarse_downsample = d;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub rgb: Option<f64>,
    pub silhouette: Option<f64>,
    pub edge: Option<f64>,
    pub laplacian: Option<f64>,
}

impl WeightsSection {
    pub fn apply(&self, mut spec: LossSpec) -> LossSpec {
        if let Some(v) = self.rgb {
            spec.rgb_weight = v;
        }
        if let Some(v) = self.silhouette {
            spec.silhouette_weight = v;
        }
        if let Some(v) = self.edge {
            spec.edge_weight = v;
        }
        if let Some(v) = self.laplacian {
            spec.laplacian_weight = v;
        }
        spec
    }
}

/// Orbit of synthetic target views around the scene origin.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewRig {
    pub count: usize,
    pub size: usize,
    pub distance: f64,
    /// Focal length in units of the image size.
    pub focal_factor: f64,
    /// Even views sit at `elevation_high`, odd ones at `elevation_low`
    /// (radians).
    pub elevation_high: f64,
    pub elevation_low: f64,
}

impl Default for ViewRig {
    fn default() -> Self {
        Self {
            count: 20,
            size: 64,
            distance: 5.0,
            focal_factor: 1.5,
            elevation_high: 0.35,
            elevation_low: -0.25,
        }
    }
}

impl ViewRig {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.count == 0 || self.size == 0 {
            return Err(Error::Config("views: count and size must be >= 1".into()));
        }
        (0..self.count)
            .map(|i| {
                let az = i as f64 * std::f64::consts::TAU / self.count as f64;
                let el = if i % 2 == 0 {
                    self.elevation_high
                } else {
                    self.elevation_low
                };
                Camera::orbit(
                    Vec3::ZERO,
                    self.distance,
                    az,
                    el,
                    self.focal_factor * self.size as f64,
                    self.size,
                    self.size,
                )
                .map_err(Error::from)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub selection: SelectionSection,
    pub weights: WeightsSection,
    pub tau: Option<f64>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub batch_views: Option<usize>,
    pub fit_attrs: Option<bool>,
    /// "full", "no_transmittance" or "no_density".
    pub gradient_paths: Option<String>,
    pub views: Option<ViewRig>,
    /// Initial offset per rigid group for translation fitting.
    pub init_offsets: Option<Vec<[f64; 3]>>,
    /// Offsets used to render a synthetic translation target.
    pub target_offsets: Option<Vec<[f64; 3]>>,
    /// Number of pose starts spread around the vertical axis.
    pub pose_starts: Option<usize>,
    pub zeta: Option<f64>,
    pub flatten_rate: Option<f64>,
    pub neighbors: Option<usize>,
    pub normalized: Option<bool>,
    pub gradcheck_step: Option<f64>,
    pub gradcheck_tolerance: Option<f64>,
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(p, &read_text(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn paths(&self) -> Result<GradientPaths> {
        parse_paths(self.gradient_paths.as_deref().unwrap_or("full"))
    }

    pub fn adam(&self, base: AdamConfig) -> Result<AdamConfig> {
        let a = match self.lr {
            Some(lr) => base.with_lr(lr),
            None => base,
        };
        a.validate()?;
        Ok(a)
    }
}

pub fn parse_paths(s: &str) -> Result<GradientPaths> {
    match s {
        "full" => Ok(GradientPaths::FULL),
        "no_transmittance" => Ok(GradientPaths::NO_TRANSMITTANCE),
        "no_density" => Ok(GradientPaths::NO_DENSITY),
        other => Err(Error::Config(format!(
            "gradient_paths must be full, no_transmittance or no_density, got '{other}'"
        ))),
    }
}
