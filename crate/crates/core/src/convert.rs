//! Gaussian scenes from triangle meshes and point clouds.
//!
//! Both converters produce one kernel per input point with variance
//! σ = (d/2)² / ln(1/ζ), where d is a local spacing estimate: the mean
//! connected-edge length for meshes, the mean distance to the m nearest
//! neighbours for point clouds. Mesh kernels can be flattened along the
//! vertex normal to approximate surface splats.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::kdtree::KdTree;
use crate::math::{ln, orthogonal_unit, Mat3, Vec3};
use crate::scene::{GaussianKernel, GaussianScene, DEFAULT_TAU};

/// Per-vertex (or per-point) attribute table, `dim` values per row.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexAttributes {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl VertexAttributes {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "attribute table of {} values does not split into rows of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("attribute table contains non-finite values"));
        }
        Ok(Self { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    colors: Option<VertexAttributes>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        colors: Option<VertexAttributes>,
    ) -> Result<Self> {
        if let Some(v) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("vertex {v} is not finite")));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&i) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(invalid(format!(
                    "face {f} references vertex {i} but the mesh has {} vertices",
                    vertices.len()
                )));
            }
        }
        if let Some(c) = &colors {
            if c.rows() != vertices.len() {
                return Err(Error::ShapeMismatch {
                    what: "vertex colors",
                    expected: format!("{} rows", vertices.len()),
                    found: format!("{}", c.rows()),
                });
            }
        }
        Ok(Self {
            vertices,
            faces,
            colors,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&VertexAttributes> {
        self.colors.as_ref()
    }

    pub fn with_colors(mut self, colors: VertexAttributes) -> Result<Self> {
        self.colors = None;
        Self::new(self.vertices, self.faces, Some(colors))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v * s).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }

    /// Unique undirected edges `(a, b)` with `a < b`, excluding zero-length
    /// ones.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                if a != b && (self.vertices[a] - self.vertices[b]).norm_squared() > 0.0 {
                    set.insert((a.min(b), a.max(b)));
                }
            }
        }
        set.into_iter().collect()
    }

    /// Adjacency lists over [`edges`](Self::edges), sorted.
    pub fn neighbor_graph(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Area-weighted vertex normals; `None` where the incident faces cancel
    /// or are all degenerate.
    pub fn vertex_normals(&self) -> Vec<Option<Vec3>> {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for f in &self.faces {
            let (a, b, c) = (
                self.vertices[f[0]],
                self.vertices[f[1]],
                self.vertices[f[2]],
            );
            // Cross product length is twice the area, so this is area-weighted.
            let n = (b - a).cross(c - a);
            for &i in f {
                acc[i] += n;
            }
        }
        acc.into_iter().map(|n| n.normalized()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Option<VertexAttributes>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Option<VertexAttributes>) -> Result<Self> {
        if let Some(p) = points.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("point {p} is not finite")));
        }
        if let Some(c) = &colors {
            if c.rows() != points.len() {
                return Err(Error::ShapeMismatch {
                    what: "point colors",
                    expected: format!("{} rows", points.len()),
                    found: format!("{}", c.rows()),
                });
            }
        }
        Ok(Self { points, colors })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&VertexAttributes> {
        self.colors.as_ref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvertConfig {
    /// Coverage rate ζ ∈ (0, 1); larger values give larger kernels.
    pub zeta: f64,
    /// Variance multiplier along the vertex normal, in (0, 1].
    pub flatten_rate: f64,
    /// Nearest neighbours averaged for point-cloud spacing.
    pub neighbors: usize,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            flatten_rate: 1.0,
            neighbors: 3,
        }
    }
}

impl ConvertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(invalid(format!(
                "zeta must lie strictly inside (0, 1), got {}",
                self.zeta
            )));
        }
        if !(self.flatten_rate > 0.0 && self.flatten_rate <= 1.0) {
            return Err(invalid(format!(
                "flatten_rate must lie in (0, 1], got {}",
                self.flatten_rate
            )));
        }
        if self.neighbors == 0 {
            return Err(invalid("neighbors must be at least 1"));
        }
        Ok(())
    }
}

/// Kernel variance for a local spacing `d` at coverage rate `zeta`.
pub fn spacing_variance(d: f64, zeta: f64) -> f64 {
    let half = d / 2.0;
    half * half / ln(1.0 / zeta)
}

/// Σ⁻¹ for variance `variance` shrunk by `flatten_rate` along `normal`.
pub fn flattened_inv_cov(variance: f64, flatten_rate: f64, normal: Vec3) -> Mat3 {
    if flatten_rate == 1.0 {
        return Mat3::scaled_identity(1.0 / variance);
    }
    let t1 = orthogonal_unit(normal);
    let t2 = normal.cross(t1);
    let frame = Mat3::from_columns(normal, t1, t2);
    let d = Mat3::from_diagonal(Vec3::new(
        1.0 / (variance * flatten_rate),
        1.0 / variance,
        1.0 / variance,
    ));
    (frame * d * frame.transpose()).symmetrized()
}

fn default_attrs(n: usize) -> VertexAttributes {
    VertexAttributes {
        dim: 3,
        data: vec![1.0; 3 * n],
    }
}

/// One kernel per vertex. Vertices without a usable normal stay isotropic.
pub fn mesh_to_gaussians(mesh: &TriangleMesh, cfg: &ConvertConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    let n = mesh.vertices.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (a, b) in mesh.edges() {
        let len = (mesh.vertices[a] - mesh.vertices[b]).norm();
        sum[a] += len;
        sum[b] += len;
        count[a] += 1;
        count[b] += 1;
    }
    if let Some(v) = count.iter().position(|&c| c == 0) {
        return Err(Error::IsolatedVertex(v));
    }
    let normals = mesh.vertex_normals();
    let fallback = default_attrs(n);
    let attrs = mesh.colors.as_ref().unwrap_or(&fallback);
    let kernels = (0..n)
        .map(|v| {
            let variance = spacing_variance(sum[v] / count[v] as f64, cfg.zeta);
            let inv = match normals[v] {
                Some(nrm) => flattened_inv_cov(variance, cfg.flatten_rate, nrm),
                None => Mat3::scaled_identity(1.0 / variance),
            };
            GaussianKernel::new(mesh.vertices[v], inv, attrs.row(v).to_vec())
        })
        .collect();
    GaussianScene::new(kernels, DEFAULT_TAU)
}

/// Mean distance from every point to its `m` nearest other points.
pub fn mean_neighbor_distance(points: &[Vec3], m: usize) -> Result<Vec<f64>> {
    if points.len() <= m {
        return Err(invalid(format!(
            "{} points cannot supply {m} neighbours each",
            points.len()
        )));
    }
    let tree = KdTree::build(points);
    let mut out = Vec::with_capacity(points.len());
    let mut scratch = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        tree.nearest(p, m, Some(i), &mut scratch);
        let total: f64 = scratch.iter().map(|&(d2, _)| crate::math::sqrt(d2)).sum();
        out.push(total / m as f64);
    }
    Ok(out)
}

/// One isotropic kernel per point.
pub fn pointcloud_to_gaussians(cloud: &PointCloud, cfg: &ConvertConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    let d = mean_neighbor_distance(&cloud.points, cfg.neighbors)?;
    let dupes: Vec<usize> = d
        .iter()
        .enumerate()
        .filter(|(_, &x)| x <= 0.0)
        .map(|(i, _)| i)
        .collect();
    if !dupes.is_empty() {
        return Err(Error::DuplicatePoints(dupes));
    }
    let fallback = default_attrs(cloud.points.len());
    let attrs = cloud.colors.as_ref().unwrap_or(&fallback);
    let kernels = cloud
        .points
        .iter()
        .zip(&d)
        .enumerate()
        .map(|(i, (&p, &dk))| {
            GaussianKernel::isotropic(p, spacing_variance(dk, cfg.zeta), attrs.row(i).to_vec())
        })
        .collect();
    GaussianScene::new(kernels, DEFAULT_TAU)
}
