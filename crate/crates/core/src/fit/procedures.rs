use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    loss_and_grad, rotation_error, silhouette_iou, AdamConfig, AdamState, FreeParams, LossSpec,
    MeshRegularizer, View,
};
use crate::blender::render;
use crate::error::{invalid, Result};
use crate::grad::GradientPaths;
use crate::math::{
    axis_angle_from_rotation, rotation_from_axis_angle, so3_left_jacobian, Mat3, Vec3,
};
use crate::scene::GaussianScene;
use crate::tracer::SelectionConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum FitResult {
    Scene(GaussianScene),
    /// One offset per rigid group.
    Translations(Vec<Vec3>),
    Pose {
        rotation: Mat3,
        translation: Vec3,
        /// Index of the winning start.
        start: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Optimised loss at every iteration, before that iteration's update.
    pub loss_trace: Vec<f64>,
    /// Full objective (all views) before and after optimisation.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Iteration at which the loss became non-finite; optimisation stopped
    /// there and `result` holds the last finite parameters.
    pub diverged_at: Option<usize>,
    pub metrics: Vec<(String, f64)>,
    pub result: FitResult,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeFitConfig {
    pub iters: usize,
    pub batch_views: usize,
    pub adam: AdamConfig,
    pub spec: LossSpec,
    pub selection: SelectionConfig,
    pub paths: GradientPaths,
    pub fit_attrs: bool,
    pub seed: u64,
}

impl Default for ShapeFitConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch_views: 5,
            adam: AdamConfig::SHAPE,
            spec: LossSpec::default(),
            selection: SelectionConfig::default(),
            paths: GradientPaths::FULL,
            fit_attrs: true,
            seed: 0,
        }
    }
}

fn mean_iou(scene: &GaussianScene, views: &[View], cfg: &SelectionConfig) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let b = render(scene, &v.camera, cfg)?;
        total += silhouette_iou(&b.alpha, &v.alpha, 0.5)?;
    }
    Ok(total / views.len().max(1) as f64)
}

fn pack(scene: &GaussianScene, attrs: bool) -> Vec<f64> {
    let mut p: Vec<f64> = scene
        .kernels()
        .iter()
        .flat_map(|k| k.center.to_array())
        .collect();
    if attrs {
        p.extend(scene.kernels().iter().flat_map(|k| k.attr.iter().copied()));
    }
    p
}

fn unpack(base: &GaussianScene, p: &[f64], attrs: bool) -> Result<GaussianScene> {
    let n = base.len();
    let mut s = base.clone();
    for k in 0..n {
        s.set_center(k, Vec3::new(p[3 * k], p[3 * k + 1], p[3 * k + 2]))?;
    }
    if attrs {
        s = s.with_attributes(&p[3 * n..], base.attr_dim())?;
    }
    Ok(s)
}

/// Fit kernel centers (and optionally attributes) to multi-view targets,
/// drawing `batch_views` random views per iteration.
pub fn fit_shape(
    init: &GaussianScene,
    views: &[View],
    reg: Option<&MeshRegularizer>,
    cfg: &ShapeFitConfig,
) -> Result<FitReport> {
    if views.is_empty() {
        return Err(invalid("shape fitting needs at least one view"));
    }
    if cfg.batch_views == 0 || cfg.batch_views > views.len() {
        return Err(invalid("batch_views must lie in 1..=number of views"));
    }
    let free = FreeParams {
        centers: true,
        attrs: cfg.fit_attrs,
        camera: false,
    };
    let all: Vec<&View> = views.iter().collect();
    let full = |s: &GaussianScene| {
        loss_and_grad(s, &all, &cfg.spec, free, reg, &cfg.selection, cfg.paths).map(|e| e.loss)
    };

    let initial_loss = full(init)?;
    let mut params = pack(init, cfg.fit_attrs);
    let mut adam = AdamState::new(params.len(), cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene = init.clone();
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut diverged_at = None;
    let n = init.len();
    let mut grad = vec![0.0; params.len()];
    for it in 0..cfg.iters {
        let mut idx = sample(&mut rng, views.len(), cfg.batch_views).into_vec();
        idx.sort_unstable();
        let batch: Vec<&View> = idx.iter().map(|&i| &views[i]).collect();
        let e = loss_and_grad(
            &scene,
            &batch,
            &cfg.spec,
            free,
            reg,
            &cfg.selection,
            cfg.paths,
        )?;
        if !e.loss.is_finite() || !e.grad.is_finite() {
            diverged_at = Some(it);
            break;
        }
        trace.push(e.loss);
        for k in 0..n {
            grad[3 * k..3 * k + 3].copy_from_slice(&e.grad.d_center[k].to_array());
        }
        if cfg.fit_attrs {
            grad[3 * n..].copy_from_slice(&e.grad.d_attr);
        }
        adam.update(&mut params, &grad)?;
        scene = unpack(init, &params, cfg.fit_attrs)?;
    }
    let final_loss = full(&scene)?;
    let iou = mean_iou(&scene, views, &cfg.selection)?;
    let iou0 = mean_iou(init, views, &cfg.selection)?;
    let mut metrics = vec![
        (String::from("initial_mean_iou"), iou0),
        (String::from("mean_iou"), iou),
    ];
    if let Some(reg) = reg {
        let centers: Vec<Vec3> = scene.kernels().iter().map(|k| k.center).collect();
        metrics.push((String::from("edge"), reg.edge(&centers)?.0));
        metrics.push((String::from("laplacian"), reg.laplacian(&centers)?.0));
    }
    Ok(FitReport {
        loss_trace: trace,
        initial_loss,
        final_loss,
        diverged_at,
        metrics,
        result: FitResult::Scene(scene),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslationFitConfig {
    pub iters: usize,
    pub adam: AdamConfig,
    pub spec: LossSpec,
    pub selection: SelectionConfig,
    pub paths: GradientPaths,
}

impl Default for TranslationFitConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            adam: AdamConfig::POSE,
            spec: LossSpec::default(),
            selection: SelectionConfig::default(),
            paths: GradientPaths::FULL,
        }
    }
}

fn assemble(parts: &[GaussianScene], offsets: &[Vec3]) -> Result<GaussianScene> {
    let mut it = parts.iter().zip(offsets);
    let (p0, o0) = it.next().ok_or_else(|| invalid("no rigid groups given"))?;
    let mut scene = p0.translated(*o0);
    for (p, o) in it {
        scene = scene.merged(&p.translated(*o))?;
    }
    Ok(scene)
}

/// Fit one free translation per rigid group against a single target view.
pub fn fit_translation(
    parts: &[GaussianScene],
    init: &[Vec3],
    target: &View,
    cfg: &TranslationFitConfig,
) -> Result<FitReport> {
    if parts.len() != init.len() {
        return Err(invalid("one initial offset per rigid group is required"));
    }
    let free = FreeParams {
        centers: true,
        attrs: false,
        camera: false,
    };
    let views = [target];
    let eval = |offsets: &[Vec3]| -> Result<(f64, Vec<Vec3>)> {
        let scene = assemble(parts, offsets)?;
        let e = loss_and_grad(
            &scene,
            &views,
            &cfg.spec,
            free,
            None,
            &cfg.selection,
            cfg.paths,
        )?;
        let mut g = Vec::with_capacity(parts.len());
        let mut start = 0;
        for p in parts {
            let mut s = Vec3::ZERO;
            for d in &e.grad.d_center[start..start + p.len()] {
                s += *d;
            }
            g.push(s);
            start += p.len();
        }
        Ok((e.loss, g))
    };
    let mut params: Vec<f64> = init.iter().flat_map(|v| v.to_array()).collect();
    let mut adam = AdamState::new(params.len(), cfg.adam)?;
    let offsets =
        |p: &[f64]| -> Vec<Vec3> { p.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect() };
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut diverged_at = None;
    let mut initial_loss = f64::NAN;
    for it in 0..cfg.iters {
        let (loss, g) = eval(&offsets(&params))?;
        if it == 0 {
            initial_loss = loss;
        }
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(it);
            break;
        }
        trace.push(loss);
        let flat: Vec<f64> = g.iter().flat_map(|v| v.to_array()).collect();
        adam.update(&mut params, &flat)?;
    }
    let final_offsets = offsets(&params);
    let final_loss = eval(&final_offsets)?.0;
    if cfg.iters == 0 {
        initial_loss = final_loss;
    }
    Ok(FitReport {
        loss_trace: trace,
        initial_loss,
        final_loss,
        diverged_at,
        metrics: Vec::new(),
        result: FitResult::Translations(final_offsets),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseFitConfig {
    pub iters: usize,
    pub adam: AdamConfig,
    pub spec: LossSpec,
    pub selection: SelectionConfig,
    pub paths: GradientPaths,
}

impl Default for PoseFitConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            adam: AdamConfig::POSE,
            spec: LossSpec::default(),
            selection: SelectionConfig::default(),
            paths: GradientPaths::FULL,
        }
    }
}

struct PoseRun {
    trace: Vec<f64>,
    initial: f64,
    last: f64,
    rotation: Mat3,
    translation: Vec3,
    diverged_at: Option<usize>,
}

fn run_pose(
    scene: &GaussianScene,
    target: &View,
    start: (Mat3, Vec3),
    cfg: &PoseFitConfig,
) -> Result<PoseRun> {
    let free = FreeParams {
        centers: false,
        attrs: false,
        camera: true,
    };
    let eval = |omega: Vec3, t: Vec3| -> Result<(f64, Vec3, Vec3)> {
        let cam = target
            .camera
            .with_pose(rotation_from_axis_angle(omega), t)?;
        let view = target.with_camera(cam)?;
        let e = loss_and_grad(
            scene,
            &[&view],
            &cfg.spec,
            free,
            None,
            &cfg.selection,
            cfg.paths,
        )?;
        let c = e.cameras[0];
        // exp(ω + dω) ≈ exp(J·dω)·exp(ω), so dL/dω = Jᵀ·(left tangent).
        let d_omega = so3_left_jacobian(omega).transpose() * c.rotation;
        Ok((e.loss, d_omega, c.translation))
    };
    let omega0 = axis_angle_from_rotation(&start.0);
    let mut params = [
        omega0.x, omega0.y, omega0.z, start.1.x, start.1.y, start.1.z,
    ];
    let mut adam = AdamState::new(6, cfg.adam)?;
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut diverged_at = None;
    let mut initial = f64::NAN;
    let split = |p: &[f64; 6]| (Vec3::new(p[0], p[1], p[2]), Vec3::new(p[3], p[4], p[5]));
    // ADAM keeps moving near an optimum (its step is scale-free), so the
    // best iterate is kept rather than the last.
    let mut best = (f64::INFINITY, params);
    for it in 0..cfg.iters {
        let (w, t) = split(&params);
        let (loss, gw, gt) = eval(w, t)?;
        if it == 0 {
            initial = loss;
        }
        if !loss.is_finite() || !gw.is_finite() || !gt.is_finite() {
            diverged_at = Some(it);
            break;
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, params);
        }
        let g = [gw.x, gw.y, gw.z, gt.x, gt.y, gt.z];
        adam.update(&mut params, &g)?;
    }
    if diverged_at.is_none() {
        let (w, t) = split(&params);
        let last = eval(w, t)?.0;
        if last < best.0 || !best.0.is_finite() {
            best = (last, params);
        }
    }
    if cfg.iters == 0 {
        initial = best.0;
    }
    let (w, t) = split(&best.1);
    Ok(PoseRun {
        trace,
        initial,
        last: best.0,
        rotation: rotation_from_axis_angle(w),
        translation: t,
        diverged_at,
    })
}

/// Fit the camera pose (axis-angle rotation and translation) to a target
/// view from each start. Each run keeps its lowest-loss iterate and the
/// start with the lowest such loss wins.
///
/// With `ground_truth` the report carries the geodesic rotation error and
/// translation error of the winner.
pub fn fit_pose(
    scene: &GaussianScene,
    target: &View,
    starts: &[(Mat3, Vec3)],
    cfg: &PoseFitConfig,
    ground_truth: Option<(Mat3, Vec3)>,
) -> Result<FitReport> {
    if starts.is_empty() {
        return Err(invalid("pose fitting needs at least one start"));
    }
    let mut best: Option<(usize, PoseRun)> = None;
    let mut metrics = Vec::new();
    for (i, &s) in starts.iter().enumerate() {
        let run = run_pose(scene, target, s, cfg)?;
        metrics.push((alloc::format!("start_{i}_final_loss"), run.last));
        let better = match &best {
            None => true,
            Some((_, b)) => run.last < b.last || (b.last.is_nan() && !run.last.is_nan()),
        };
        if better {
            best = Some((i, run));
        }
    }
    let (start, run) = best.expect("at least one start");
    if let Some((r_gt, t_gt)) = ground_truth {
        metrics.push((
            String::from("rotation_error"),
            rotation_error(&run.rotation, &r_gt)?,
        ));
        metrics.push((
            String::from("translation_error"),
            (run.translation - t_gt).norm(),
        ));
    }
    Ok(FitReport {
        loss_trace: run.trace,
        initial_loss: run.initial,
        final_loss: run.last,
        diverged_at: run.diverged_at,
        metrics,
        result: FitResult::Pose {
            rotation: run.rotation,
            translation: run.translation,
            start,
        },
    })
}
