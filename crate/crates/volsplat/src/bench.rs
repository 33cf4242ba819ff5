//! Rendering throughput on synthetic cuboid scenes.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use volsplat_core::convert::{mesh_to_gaussians, ConvertConfig, VertexAttributes};
use volsplat_core::synth::cuboid;
use volsplat_core::{render, Camera, GaussianScene, SelectionConfig, Vec3};

use crate::atomic::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::scene_file::{to_json, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub kernels: usize,
    pub height: usize,
    pub width: usize,
    pub coarse: bool,
    pub kernels_per_pixel_mean: f64,
    pub kernels_per_pixel_max: usize,
    pub repeats: usize,
    pub images_per_second: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: u32,
    pub threads: usize,
    pub results: Vec<BenchResult>,
}

impl BenchReport {
    pub fn find(&self, kernels: usize, size: usize, coarse: bool) -> Option<&BenchResult> {
        self.results
            .iter()
            .find(|r| r.kernels == kernels && r.height == size && r.coarse == coarse)
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Approximate kernel counts; the cuboid resolution is rounded to match.
    pub kernels: Vec<usize>,
    /// Square image sizes.
    pub sizes: Vec<usize>,
    pub repeats: usize,
    /// Also time the exhaustive path at the largest kernel count and size.
    pub compare_exhaustive: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kernels: vec![1000, 4000, 16000],
            sizes: vec![128, 256, 512],
            repeats: 3,
            compare_exhaustive: true,
        }
    }
}

/// Cuboid surface scene with close to `target` kernels.
pub fn cuboid_scene(target: usize) -> Result<GaussianScene> {
    // A cuboid grid of resolution n has 6n² + 2 vertices.
    let n = (((target.max(8) - 2) as f64 / 6.0).sqrt().round() as usize).max(1);
    let mesh = cuboid(Vec3::new(1.6, 1.0, 1.2), n);
    let verts = mesh.vertices().to_vec();
    let colors: Vec<f64> = verts
        .iter()
        .flat_map(|v| [0.5 + 0.3 * v.x, 0.5 + 0.4 * v.y, 0.5 + 0.35 * v.z])
        .collect();
    let mesh = mesh.with_colors(VertexAttributes::new(3, colors)?)?;
    Ok(mesh_to_gaussians(&mesh, &ConvertConfig::default())?)
}

pub fn bench_camera(size: usize) -> Result<Camera> {
    Ok(Camera::orbit(
        Vec3::ZERO,
        4.0,
        0.6,
        0.4,
        1.4 * size as f64,
        size,
        size,
    )?)
}

fn time_one(
    scene: &GaussianScene,
    size: usize,
    coarse: bool,
    repeats: usize,
) -> Result<BenchResult> {
    let camera = bench_camera(size)?;
    let cfg = SelectionConfig {
        coarse_enabled: coarse,
        ..SelectionConfig::default()
    };
    let warm = render(scene, &camera, &cfg)?;
    let (mean, max) = warm.weights.kernels_per_pixel();
    let repeats = repeats.max(1);
    let start = Instant::now();
    for _ in 0..repeats {
        std::hint::black_box(render(scene, &camera, &cfg)?);
    }
    let wall = start.elapsed().as_secs_f64().max(1e-9);
    Ok(BenchResult {
        kernels: scene.len(),
        height: size,
        width: size,
        coarse,
        kernels_per_pixel_mean: mean,
        kernels_per_pixel_max: max,
        repeats,
        images_per_second: repeats as f64 / wall,
        wall_seconds: wall,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.kernels.is_empty() || cfg.sizes.is_empty() {
        return Err(Error::Config(
            "bench needs at least one kernel count and size".into(),
        ));
    }
    if let Some(&s) = cfg.sizes.iter().find(|&&s| s == 0) {
        return Err(Error::Config(format!(
            "bench image size must be >= 1, got {s}"
        )));
    }
    let mut results = Vec::new();
    let mut last_scene = None;
    for &k in &cfg.kernels {
        let scene = cuboid_scene(k)?;
        for &s in &cfg.sizes {
            results.push(time_one(&scene, s, true, cfg.repeats)?);
        }
        last_scene = Some(scene);
    }
    if cfg.compare_exhaustive {
        if let (Some(scene), Some(&size)) = (last_scene, cfg.sizes.iter().max()) {
            results.push(time_one(&scene, size, false, cfg.repeats)?);
        }
    }
    Ok(BenchReport {
        version: FORMAT_VERSION,
        threads: rayon::current_num_threads(),
        results,
    })
}

pub fn write_bench_report(path: &Path, report: &BenchReport) -> Result<()> {
    write_atomic(path, to_json(report).as_bytes())
}

pub fn parse_bench_report(path: &Path, text: &str) -> Result<BenchReport> {
    let r: BenchReport =
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    if r.version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported bench report version {}", r.version),
        ));
    }
    Ok(r)
}

pub fn read_bench_report(path: &Path) -> Result<BenchReport> {
    parse_bench_report(path, &read_text(path)?)
}
