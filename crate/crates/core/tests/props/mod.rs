#![allow(dead_code)]

//! Randomized invariants of the renderer, shared by the property and
//! acceptance tests.

use nalgebra::Matrix3;
use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volsplat_core::convert::{
    mesh_to_gaussians, pointcloud_to_gaussians, ConvertConfig, PointCloud,
};
use volsplat_core::fit::rotation_error;
use volsplat_core::math::rotation_from_axis_angle;
use volsplat_core::synth::{
    cuboid, random_inv_cov, random_orbit_camera, random_rotation, random_scene,
};
use volsplat_core::tracer::BEHIND_CAMERA_EPS;
use volsplat_core::{
    blend, coarse_select, generate_rays, render, trace_kernel, transmittance_at, view_transform,
    Camera, GaussianKernel, Mat3, SelectionConfig, TracedKernel, Vec3,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_traced(r: &mut ChaCha8Rng, n: usize) -> Vec<TracedKernel> {
    (0..n)
        .map(|k| TracedKernel {
            kernel_index: k,
            l: r.gen_range(1.0..10.0),
            q: r.gen_range(-4.0..0.0),
            sigma: r.gen_range(0.05..2.0),
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn to_na(m: &Mat3) -> Matrix3<f64> {
    Matrix3::from_row_slice(&m.to_row_major())
}

fn sorted_eigenvalues(m: &Mat3) -> Vec<f64> {
    let mut e: Vec<f64> = to_na(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

fn random_camera(r: &mut ChaCha8Rng, size: usize) -> Camera {
    let rot = random_rotation(r);
    let t = Vec3::new(
        r.gen_range(-0.5..0.5),
        r.gen_range(-0.5..0.5),
        r.gen_range(3.0..5.0),
    );
    Camera::new(
        rot,
        t,
        r.gen_range(0.8..1.6) * size as f64,
        r.gen_range(0.3..0.7) * size as f64,
        r.gen_range(0.3..0.7) * size as f64,
        size,
        size,
    )
    .unwrap()
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new(config)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    (
        "transmittance_is_monotone_and_bounded",
        transmittance_is_monotone_and_bounded,
    ),
    (
        "transmittance_matches_quadrature",
        transmittance_matches_quadrature,
    ),
    (
        "blend_is_permutation_invariant",
        blend_is_permutation_invariant,
    ),
    ("attributes_enter_linearly", attributes_enter_linearly),
    ("render_is_view_equivariant", render_is_view_equivariant),
    ("view_transforms_compose", view_transforms_compose),
    (
        "view_transform_keeps_eigenvalues",
        view_transform_keeps_eigenvalues,
    ),
    (
        "view_transform_preserves_density",
        view_transform_preserves_density,
    ),
    ("rays_are_unit_and_forward", rays_are_unit_and_forward),
    (
        "traced_peak_matches_grid_search",
        traced_peak_matches_grid_search,
    ),
    (
        "coarse_stage_has_no_false_negatives",
        coarse_stage_has_no_false_negatives,
    ),
    (
        "converted_variance_scales_quadratically",
        converted_variance_scales_quadratically,
    ),
    (
        "rotation_error_is_the_axis_angle",
        rotation_error_is_the_axis_angle,
    ),
];

pub fn transmittance_is_monotone_and_bounded(cases: u32) -> Result<(), String> {
    check(
        cases,
        (any::<u64>(), 1usize..8, 0.0f64..4.0),
        |(seed, n, tau)| {
            let mut r = rng(seed);
            let traced = random_traced(&mut r, n);
            let mut prev = 1.0;
            for s in 0..400 {
                let t = -5.0 + 0.05 * s as f64;
                let tr = transmittance_at(&traced, tau, t);
                prop_assert!(tr > 0.0 && tr <= 1.0);
                prop_assert!(tr <= prev + 1e-15, "T rose from {prev} to {tr} at t={t}");
                prev = tr;
            }
            prop_assert!(transmittance_at(&traced, tau, f64::INFINITY) <= prev + 1e-15);
            Ok(())
        },
    )
}

pub fn transmittance_matches_quadrature(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..6), |(seed, n)| {
        let mut r = rng(seed);
        let traced = random_traced(&mut r, n);
        let tau = r.gen_range(0.1..3.0);
        let t = r.gen_range(0.0..12.0);
        // Simpson's rule on the normalized along-ray density.
        let lo = traced
            .iter()
            .map(|k| k.l - 12.0 * k.sigma)
            .fold(f64::INFINITY, f64::min);
        let rho = |s: f64| -> f64 {
            traced
                .iter()
                .map(|k| {
                    let z = (s - k.l) / k.sigma;
                    k.q.exp() * (-0.5 * z * z).exp()
                        / (k.sigma * (2.0 * std::f64::consts::PI).sqrt())
                })
                .sum()
        };
        let depth = if t <= lo {
            0.0
        } else {
            let m = 20_000;
            let h = (t - lo) / m as f64;
            let mut acc = rho(lo) + rho(t);
            for i in 1..m {
                acc += rho(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let expect = (-tau * depth).exp();
        let got = transmittance_at(&traced, tau, t);
        prop_assert!((got - expect).abs() < 1e-7, "{got} vs {expect}");
        Ok(())
    })
}

pub fn blend_is_permutation_invariant(cases: u32) -> Result<(), String> {
    check(
        cases,
        (any::<u64>(), 1usize..10, 0.0f64..3.0),
        |(seed, n, tau)| {
            let mut r = rng(seed);
            let traced = random_traced(&mut r, n);
            let mut shuffled = traced.clone();
            for i in (1..n).rev() {
                shuffled.swap(i, r.gen_range(0..=i));
            }
            let a = blend(&traced, tau);
            let b = blend(&shuffled, tau);
            prop_assert_eq!(&a.weights, &b.weights);
            prop_assert_eq!(a.alpha, b.alpha);
            for &(_, w) in &a.weights {
                prop_assert!((0.0..=1.0).contains(&w));
            }
            Ok(())
        },
    )
}

pub fn attributes_enter_linearly(cases: u32) -> Result<(), String> {
    check(
        cases,
        (any::<u64>(), -2.0f64..2.0, -2.0f64..2.0),
        |(seed, a, b)| {
            let scene = random_scene(seed, 8);
            let camera = random_orbit_camera(seed, 16);
            let cfg = SelectionConfig::default();
            let mut r = rng(seed ^ 0x5eed);
            let n = scene.len();
            let x: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2 * n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let rx = render(&scene.with_attributes(&x, 2).unwrap(), &camera, &cfg).unwrap();
            let ry = render(&scene.with_attributes(&y, 2).unwrap(), &camera, &cfg).unwrap();
            let rz = render(&scene.with_attributes(&z, 2).unwrap(), &camera, &cfg).unwrap();
            let comb: Vec<f64> = rx
                .image
                .data()
                .iter()
                .zip(ry.image.data())
                .map(|(p, q)| a * p + b * q)
                .collect();
            prop_assert!(max_abs_diff(&comb, rz.image.data()) < 1e-12);
            // Weights do not depend on attributes.
            prop_assert_eq!(rx.alpha.data(), rz.alpha.data());
            Ok(())
        },
    )
}

pub fn render_is_view_equivariant(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let scene = random_scene(seed, 10);
        let mut r = rng(seed);
        let camera = random_camera(&mut r, 16);
        let cfg = SelectionConfig::default();
        let direct = render(&scene, &camera, &cfg).unwrap();
        let moved = render(
            &view_transform(&scene, &camera),
            &camera.at_identity(),
            &cfg,
        )
        .unwrap();
        prop_assert!(max_abs_diff(direct.image.data(), moved.image.data()) < 1e-6);
        prop_assert!(max_abs_diff(direct.alpha.data(), moved.alpha.data()) < 1e-6);
        Ok(())
    })
}

pub fn view_transforms_compose(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let scene = random_scene(seed, 6);
        let mut r = rng(seed);
        let c1 = random_camera(&mut r, 8);
        let c2 = random_camera(&mut r, 8);
        let r12 = *c2.rotation() * *c1.rotation();
        let t12 = *c2.rotation() * c1.translation() + c2.translation();
        let c12 = c1.with_pose(r12, t12).unwrap();
        let twice = view_transform(&view_transform(&scene, &c1), &c2);
        let once = view_transform(&scene, &c12);
        for (p, q) in twice.kernels().iter().zip(once.kernels()) {
            prop_assert!((p.center - q.center).max_abs() < 1e-9);
            prop_assert!(
                (p.inv_cov - q.inv_cov).max_abs() < 1e-9 * p.inv_cov.max_abs(),
                "{:?} vs {:?}",
                p.inv_cov,
                q.inv_cov
            );
        }
        Ok(())
    })
}

pub fn view_transform_keeps_eigenvalues(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let mut r = rng(seed);
        let inv = random_inv_cov(&mut r, 0.05, 2.0);
        let scene = volsplat_core::GaussianScene::new(
            vec![GaussianKernel::new(Vec3::new(0.1, 0.2, 0.3), inv, vec![])],
            1.0,
        )
        .unwrap();
        let camera = random_camera(&mut r, 4);
        let out = view_transform(&scene, &camera);
        let moved = out.kernel(0).inv_cov;
        prop_assert!(moved.is_positive_definite());
        prop_assert!(moved.asymmetry() == 0.0);
        let e0 = sorted_eigenvalues(&inv);
        let e1 = sorted_eigenvalues(&moved);
        for (a, b) in e0.iter().zip(&e1) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{e0:?} vs {e1:?}");
        }
        Ok(())
    })
}

pub fn view_transform_preserves_density(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let scene = random_scene(seed, 4);
        let mut r = rng(seed);
        let camera = random_camera(&mut r, 4);
        let moved = view_transform(&scene, &camera);
        for _ in 0..8 {
            let x = Vec3::new(
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
                r.gen_range(-2.0..2.0),
            );
            let y = camera.to_camera(x);
            for (w, c) in scene.kernels().iter().zip(moved.kernels()) {
                let dw = x - w.center;
                let dc = y - c.center;
                let a = w.inv_cov.bilinear(dw, dw);
                let b = c.inv_cov.bilinear(dc, dc);
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
            }
        }
        Ok(())
    })
}

pub fn rays_are_unit_and_forward(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let mut r = rng(seed);
        let camera = random_camera(&mut r, 12);
        let rays = generate_rays(&camera);
        prop_assert_eq!(rays.len(), 144);
        for ray in rays {
            prop_assert!((ray.dir.norm() - 1.0).abs() < 1e-9);
            prop_assert!(ray.dir.z > 0.0);
        }
        Ok(())
    })
}

pub fn traced_peak_matches_grid_search(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let mut r = rng(seed);
        let inv = random_inv_cov(&mut r, 0.1, 1.0);
        let center = Vec3::new(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(3.0..6.0),
        );
        let dir = Vec3::new(r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3), 1.0)
            .normalized()
            .unwrap();
        let k = GaussianKernel::new(center, inv, vec![]);
        let tk = trace_kernel(dir, 0, &k).unwrap();
        let log_rho = |t: f64| {
            let v = dir * t - center;
            -0.5 * inv.bilinear(v, v)
        };
        let (mut best_t, mut best) = (0.0, f64::NEG_INFINITY);
        let step = 1e-3;
        for i in 0..30_000 {
            let t = -10.0 + i as f64 * step;
            let v = log_rho(t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        prop_assert!(
            (tk.l - best_t).abs() <= step,
            "l={} grid={} q={} best={}",
            tk.l,
            best_t,
            tk.q,
            best
        );
        prop_assert!(tk.q >= best - 1e-12);
        prop_assert!((tk.q - log_rho(tk.l)).abs() < 1e-9);
        // Quadratic in t: one σ from the peak the log density drops by ½.
        prop_assert!((log_rho(tk.l + tk.sigma) - tk.q + 0.5).abs() < 1e-9);
        prop_assert!((log_rho(tk.l - tk.sigma) - tk.q + 0.5).abs() < 1e-9);
        Ok(())
    })
}

pub fn coarse_stage_has_no_false_negatives(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0.001f64..0.2), |(seed, eta)| {
        let scene = random_scene(seed, 25);
        let camera = random_orbit_camera(seed, 24);
        let cfg = SelectionConfig {
            eta,
            coarse_downsample: 1 + (seed % 6) as usize,
            ..SelectionConfig::default()
        };
        let cam_scene = view_transform(&scene, &camera);
        let map = coarse_select(&cam_scene, &camera, &cfg).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                let dir = camera.ray_direction(i, j);
                let cands = map.candidates(i, j);
                for (k, kernel) in cam_scene.kernels().iter().enumerate() {
                    if kernel.center.z <= BEHIND_CAMERA_EPS {
                        continue;
                    }
                    let t = trace_kernel(dir, k, kernel).unwrap();
                    if t.q.exp() > eta {
                        prop_assert!(
                            cands.contains(&(k as u32)),
                            "kernel {k} missing at ({i},{j})"
                        );
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn converted_variance_scales_quadratically(cases: u32) -> Result<(), String> {
    check(
        cases,
        (any::<u64>(), 0.05f64..20.0, 0.1f64..1.0),
        |(seed, s, flat)| {
            let mut r = rng(seed);
            let mesh = cuboid(
                Vec3::new(
                    r.gen_range(0.5..2.0),
                    r.gen_range(0.5..2.0),
                    r.gen_range(0.5..2.0),
                ),
                2,
            );
            let cfg = ConvertConfig {
                zeta: r.gen_range(0.05..0.95),
                flatten_rate: flat,
                neighbors: 3,
            };
            let a = mesh_to_gaussians(&mesh, &cfg).unwrap();
            let b = mesh_to_gaussians(&mesh.scaled(s), &cfg).unwrap();
            for (p, q) in a.kernels().iter().zip(b.kernels()) {
                // Σ⁻¹ scales by 1/s², so σ² scales by s².
                let d = (q.inv_cov * (s * s) - p.inv_cov).max_abs();
                prop_assert!(d <= 1e-9 * p.inv_cov.max_abs(), "{d}");
                prop_assert!((q.center - p.center * s).max_abs() <= 1e-12 * s.max(1.0) * 4.0);
            }
            let pts: Vec<Vec3> = (0..30)
                .map(|_| {
                    Vec3::new(
                        r.gen_range(-1.0..1.0),
                        r.gen_range(-1.0..1.0),
                        r.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let scaled: Vec<Vec3> = pts.iter().map(|&p| p * s).collect();
            let pa = pointcloud_to_gaussians(&PointCloud::new(pts, None).unwrap(), &cfg).unwrap();
            let pb =
                pointcloud_to_gaussians(&PointCloud::new(scaled, None).unwrap(), &cfg).unwrap();
            for (p, q) in pa.kernels().iter().zip(pb.kernels()) {
                let d = (q.inv_cov * (s * s) - p.inv_cov).max_abs();
                prop_assert!(d <= 1e-9 * p.inv_cov.max_abs());
            }
            Ok(())
        },
    )
}

pub fn rotation_error_is_the_axis_angle(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0.0f64..3.1), |(seed, angle)| {
        let mut r = rng(seed);
        let base = random_rotation(&mut r);
        let axis = volsplat_core::synth::random_unit(&mut r);
        let other = base * rotation_from_axis_angle(axis * angle);
        let e = rotation_error(&base, &other).unwrap();
        prop_assert!((e - angle).abs() < 1e-9, "{e} vs {angle}");
        let back = rotation_error(&other, &base).unwrap();
        prop_assert!((e - back).abs() < 1e-12);
        prop_assert!(rotation_error(&base, &base).unwrap() < 1e-7);
        // Left or right composition gives the same angle.
        let left = rotation_from_axis_angle(axis * angle) * base;
        prop_assert!((rotation_error(&base, &left).unwrap() - angle).abs() < 1e-9);
        Ok(())
    })
}
