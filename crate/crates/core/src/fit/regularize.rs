//! Mesh-graph regularizers on kernel centers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::Vec3;

/// Edge-length and uniform-Laplacian terms measured against a rest shape.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshRegularizer {
    edges: Vec<(usize, usize)>,
    rest_lengths: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    rest_laplacian: Vec<Vec3>,
}

fn umbrella(centers: &[Vec3], neighbors: &[Vec<usize>], i: usize) -> Vec3 {
    let nb = &neighbors[i];
    if nb.is_empty() {
        return Vec3::ZERO;
    }
    let mut mean = Vec3::ZERO;
    for &j in nb {
        mean += centers[j];
    }
    centers[i] - mean / nb.len() as f64
}

impl MeshRegularizer {
    /// `neighbors[i]` lists the vertices adjacent to `i` (symmetric).
    pub fn new(rest: &[Vec3], neighbors: Vec<Vec<usize>>) -> Result<Self> {
        if neighbors.len() != rest.len() {
            return Err(invalid("neighbor graph and rest shape differ in length"));
        }
        let mut edges = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                if j >= rest.len() {
                    return Err(invalid("neighbor index out of range"));
                }
                if i < j {
                    edges.push((i, j));
                }
            }
        }
        if edges.is_empty() {
            return Err(invalid("neighbor graph has no edges"));
        }
        let rest_lengths = edges
            .iter()
            .map(|&(a, b)| (rest[a] - rest[b]).norm())
            .collect();
        let rest_laplacian = (0..rest.len())
            .map(|i| umbrella(rest, &neighbors, i))
            .collect();
        Ok(Self {
            edges,
            rest_lengths,
            neighbors,
            rest_laplacian,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Mean of (‖e‖ − ‖e₀‖)² over edges, with its gradient.
    pub fn edge(&self, centers: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        self.check(centers)?;
        let n = self.edges.len() as f64;
        let mut grad = vec![Vec3::ZERO; centers.len()];
        let mut value = 0.0;
        for (&(a, b), &rest) in self.edges.iter().zip(&self.rest_lengths) {
            let e = centers[a] - centers[b];
            let len = e.norm();
            let d = len - rest;
            value += d * d / n;
            if len > 0.0 {
                let g = e * (2.0 * d / (n * len));
                grad[a] += g;
                grad[b] -= g;
            }
        }
        Ok((value, grad))
    }

    /// Mean of ‖δᵢ − δᵢ⁰‖² over vertices, δ the uniform umbrella operator.
    pub fn laplacian(&self, centers: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        self.check(centers)?;
        let n = centers.len() as f64;
        let mut grad = vec![Vec3::ZERO; centers.len()];
        let mut value = 0.0;
        for i in 0..centers.len() {
            let nb = &self.neighbors[i];
            if nb.is_empty() {
                continue;
            }
            let r = umbrella(centers, &self.neighbors, i) - self.rest_laplacian[i];
            value += r.norm_squared() / n;
            let g = r * (2.0 / n);
            grad[i] += g;
            let share = g / nb.len() as f64;
            for &j in nb {
                grad[j] -= share;
            }
        }
        Ok((value, grad))
    }

    fn check(&self, centers: &[Vec3]) -> Result<()> {
        if centers.len() != self.neighbors.len() {
            return Err(invalid("center count differs from the regularizer's graph"));
        }
        Ok(())
    }
}
