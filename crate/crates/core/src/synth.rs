//! Procedural scenes and meshes used by tests, demos and benchmarks.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convert::TriangleMesh;
use crate::math::{rotation_from_axis_angle, sqrt, Mat3, Vec3};
use crate::scene::{Camera, GaussianKernel, GaussianScene};

/// Random Σ⁻¹ = Q·diag(1/s²)·Qᵀ with scales s in `[s_min, s_max]`.
pub fn random_inv_cov(rng: &mut impl Rng, s_min: f64, s_max: f64) -> Mat3 {
    let q = random_rotation(rng);
    let s = Vec3::new(
        rng.gen_range(s_min..s_max),
        rng.gen_range(s_min..s_max),
        rng.gen_range(s_min..s_max),
    );
    let d = Mat3::from_diagonal(Vec3::new(
        1.0 / (s.x * s.x),
        1.0 / (s.y * s.y),
        1.0 / (s.z * s.z),
    ));
    (q * d * q.transpose()).symmetrized()
}

/// Uniformly distributed rotation (axis uniform on the sphere, angle with
/// the Haar density is not required here; a random axis-angle suffices).
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let axis = random_unit(rng);
    let angle = rng.gen_range(0.0..core::f64::consts::PI);
    rotation_from_axis_angle(axis * angle)
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            return v / sqrt(n2);
        }
    }
}

/// `n` anisotropic kernels with random RGB attributes in a 1.2-unit cube
/// around the origin.
pub fn random_scene(seed: u64, n: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = (0..n)
        .map(|_| {
            let c = Vec3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            );
            let inv = random_inv_cov(&mut rng, 0.12, 0.35);
            let attr = vec![
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            GaussianKernel::new(c, inv, attr)
        })
        .collect();
    GaussianScene::new(kernels, 1.0).expect("generated kernels are valid")
}

/// A camera 4 units from the origin at a seed-dependent orbit pose.
pub fn random_orbit_camera(seed: u64, size: usize) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let az = rng.gen_range(-3.0..3.0);
    let el = rng.gen_range(-0.8..0.8);
    Camera::orbit(Vec3::ZERO, 4.0, az, el, size as f64 * 1.6, size, size)
        .expect("orbit camera is valid")
}

/// Icosphere with `level` subdivisions (level 3 has 642 vertices).
pub fn icosphere(level: usize, radius: f64) -> TriangleMesh {
    let t = (1.0 + sqrt(5.0)) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized().unwrap())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints = alloc::collections::BTreeMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalized().unwrap());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let vertices = verts.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(vertices, faces, None).expect("icosphere is well formed")
}

/// Axis-aligned box centred at the origin with `size` extents, each face
/// split into an `n`×`n` grid of quads (two triangles each).
pub fn cuboid(size: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut verts: Vec<Vec3> = Vec::new();
    let mut index = alloc::collections::BTreeMap::new();
    let mut faces = Vec::new();
    let half = size * 0.5;
    // Integer lattice keys make shared edge vertices unique.
    let mut vid = |key: [i64; 3], verts: &mut Vec<Vec3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            let p = Vec3::new(
                -half.x + size.x * key[0] as f64 / n as f64,
                -half.y + size.y * key[1] as f64 / n as f64,
                -half.z + size.z * key[2] as f64 / n as f64,
            );
            verts.push(p);
            verts.len() - 1
        })
    };
    let ni = n as i64;
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, ni] {
            for a in 0..ni {
                for b in 0..ni {
                    let corner = |da: i64, db: i64| {
                        let mut k = [0i64; 3];
                        k[axis] = side;
                        k[u] = a + da;
                        k[v] = b + db;
                        k
                    };
                    let p00 = vid(corner(0, 0), &mut verts);
                    let p10 = vid(corner(1, 0), &mut verts);
                    let p11 = vid(corner(1, 1), &mut verts);
                    let p01 = vid(corner(0, 1), &mut verts);
                    // Outward winding.
                    if side == 0 {
                        faces.push([p00, p01, p11]);
                        faces.push([p00, p11, p10]);
                    } else {
                        faces.push([p00, p10, p11]);
                        faces.push([p00, p11, p01]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(verts, faces, None).expect("cuboid is well formed")
}
