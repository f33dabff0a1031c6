use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{CoreError, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

/// Triangle mesh. Boundary flags are derived from connectivity on first use.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    boundary: OnceLock<Vec<bool>>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(CoreError::EmptyShape);
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(CoreError::InvalidMesh(format!("non-finite vertex {v:?}")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(CoreError::InvalidMesh(format!("face {fi} index out of range: {f:?}")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(CoreError::InvalidMesh(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        Ok(Self { vertices, faces, boundary: OnceLock::new() })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(CoreError::LengthMismatch { expected: self.vertices.len(), got: vertices.len() });
        }
        Ok(Self { vertices, faces: self.faces.clone(), boundary: self.boundary.clone() })
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            boundary: self.boundary.clone(),
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn boundary_flags(&self) -> &[bool] {
        self.boundary.get_or_init(|| super::detect_boundary(self))
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary_flags().iter().any(|&b| b)
    }

    /// Number of faces incident to each undirected edge, keyed `(min, max)`.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2 + 1);
        for f in &self.faces {
            for e in 0..3 {
                *counts.entry(edge_key(f[e], f[(e + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Sorted, deduplicated vertex neighbourhoods.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    /// Lumped vertex areas: one third of the incident face areas.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let a = self.face_area(fi) / 3.0;
            for &v in f {
                out[v] += a;
            }
        }
        out
    }

    /// Disjoint union of two meshes; indices of `other` are shifted.
    pub fn disjoint_union(&self, other: &TriMesh) -> Self {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        Self { vertices, faces, boundary: OnceLock::new() }
    }
}

#[inline]
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub boundary_flags: Vec<bool>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, boundary_flags: Vec<bool>) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::EmptyShape);
        }
        if boundary_flags.len() != points.len() {
            return Err(CoreError::LengthMismatch { expected: points.len(), got: boundary_flags.len() });
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CoreError::InvalidMesh("non-finite point".into()));
        }
        Ok(Self { points, boundary_flags })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Mesh(TriMesh),
    Cloud(PointCloud),
}

/// Indicator of a vertex subset of a template with `len()` vertices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionMask {
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(CoreError::InvalidArgument("region mask is empty".into()));
        }
        Ok(Self { bits })
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(CoreError::InvalidArgument(format!("index {i} out of range {n}")));
            }
            bits[i] = true;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self { bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect() }
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Sum of `weights` over the selected vertices.
    pub fn weighted(&self, weights: &[f64]) -> f64 {
        self.bits.iter().zip(weights).filter(|(b, _)| **b).map(|(_, w)| w).sum()
    }

    /// Image under a vertex permutation: vertex `perm[i]` is selected iff `i` is.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut bits = vec![false; self.bits.len()];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                bits[perm[i]] = true;
            }
        }
        Self { bits }
    }

    /// Run lengths of alternating values, starting with a run of `false`
    /// (possibly of length zero).
    pub fn to_rle(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = false;
        let mut len = 0;
        for &b in &self.bits {
            if b == cur {
                len += 1;
            } else {
                runs.push(len);
                cur = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(runs: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(runs.iter().sum());
        let mut cur = false;
        for &r in runs {
            bits.extend(std::iter::repeat_n(cur, r));
            cur = !cur;
        }
        Self::new(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_roundtrip() {
        for bits in [vec![true, true, false, true], vec![false, false, true], vec![true]] {
            let m = RegionMask::new(bits).unwrap();
            assert_eq!(RegionMask::from_rle(&m.to_rle()).unwrap(), m);
        }
        assert_eq!(RegionMask::new(vec![true, false]).unwrap().to_rle(), vec![0, 1, 1]);
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
        assert!(matches!(TriMesh::new(vec![], vec![]), Err(CoreError::EmptyShape)));
    }
}
