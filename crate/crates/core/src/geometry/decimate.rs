//! Quadric-error edge collapse.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{CoreError, Result};
use crate::geometry::mesh::{add, cross, dot, edge_key, norm, scale, sub, TriMesh, Vec3};

/// Weight of the plane constraints that pin open boundaries in place.
const BOUNDARY_WEIGHT: f64 = 1e3;
/// Minimum cosine between a face normal before and after a collapse.
const MIN_NORMAL_COS: f64 = 0.2;

/// Symmetric 4x4 quadric stored as its upper triangle.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3, d: f64, w: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = w * p[i] * p[j];
                k += 1;
            }
        }
        Self(q)
    }

    fn add(&self, o: &Self) -> Self {
        let mut q = self.0;
        q.iter_mut().zip(o.0).for_each(|(a, b)| *a += b);
        Self(q)
    }

    fn eval(&self, x: Vec3) -> f64 {
        let q = &self.0;
        let p = [x[0], x[1], x[2], 1.0];
        let mut s = 0.0;
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                let f = if i == j { 1.0 } else { 2.0 };
                s += f * q[k] * p[i] * p[j];
                k += 1;
            }
        }
        s
    }

    /// Minimizer of the quadric, if the 3x3 system is well conditioned.
    fn optimum(&self) -> Option<Vec3> {
        let q = &self.0;
        let a = nalgebra::Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let b = nalgebra::Vector3::new(-q[3], -q[6], -q[8]);
        let scale = a.abs().max();
        if scale <= 0.0 || a.determinant().abs() < 1e-10 * scale.powi(3) {
            return None;
        }
        a.lu().solve(&b).map(|x| [x[0], x[1], x[2]])
    }
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    edge: (usize, usize),
    stamps: (u64, u64),
    target: Vec3,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.edge.cmp(&self.edge))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    incident: Vec<Vec<usize>>,
    alive: Vec<bool>,
    stamp: Vec<u64>,
    quadric: Vec<Quadric>,
}

fn face_normal(p: &[Vec3], f: [usize; 3]) -> Vec3 {
    cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]))
}

impl State {
    fn neighbours(&self, v: usize) -> HashSet<usize> {
        let mut out = HashSet::new();
        for &f in &self.incident[v] {
            for &w in &self.faces[f] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    fn shared_faces(&self, u: usize, v: usize) -> Vec<usize> {
        self.incident[u].iter().copied().filter(|&f| self.faces[f].contains(&v)).collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbours(v).into_iter().any(|w| self.shared_faces(v, w).len() == 1)
    }

    fn candidate(&self, u: usize, v: usize) -> Candidate {
        let q = self.quadric[u].add(&self.quadric[v]);
        let mid = scale(add(self.pos[u], self.pos[v]), 0.5);
        let mut options = vec![self.pos[u], self.pos[v], mid];
        if let Some(x) = q.optimum() {
            options.insert(0, x);
        }
        let (cost, target) = options
            .into_iter()
            .map(|x| (q.eval(x).max(0.0), x))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty options");
        let edge = edge_key(u, v);
        Candidate { cost, edge, stamps: (self.stamp[edge.0], self.stamp[edge.1]), target }
    }

    /// Collapse keeps the surface a manifold and does not flip any face.
    fn collapse_ok(&self, u: usize, v: usize, x: Vec3) -> bool {
        let shared = self.shared_faces(u, v);
        if shared.is_empty() {
            return false;
        }
        let common: HashSet<usize> = self.neighbours(u).intersection(&self.neighbours(v)).copied().collect();
        let opposite: HashSet<usize> =
            shared.iter().flat_map(|&f| self.faces[f]).filter(|&w| w != u && w != v).collect();
        if common != opposite {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(u) && self.is_boundary_vertex(v) {
            return false;
        }
        for &w in [u, v].iter() {
            for &f in &self.incident[w] {
                if shared.contains(&f) {
                    continue;
                }
                let before = face_normal(&self.pos, self.faces[f]);
                let mut moved = self.faces[f];
                let mut p = [self.pos[moved[0]], self.pos[moved[1]], self.pos[moved[2]]];
                for (k, m) in moved.iter_mut().enumerate() {
                    if *m == u || *m == v {
                        p[k] = x;
                    }
                }
                let after = cross(sub(p[1], p[0]), sub(p[2], p[0]));
                let (nb, na) = (norm(before), norm(after));
                if na <= 1e-14 * nb.max(1e-300) || dot(before, after) < MIN_NORMAL_COS * nb * na {
                    return false;
                }
            }
        }
        true
    }

    /// Merges `v` into `u`, placing `u` at `x`.
    fn collapse(&mut self, u: usize, v: usize, x: Vec3) {
        for f in self.shared_faces(u, v) {
            self.face_alive[f] = false;
            for w in self.faces[f] {
                self.incident[w].retain(|&g| g != f);
            }
        }
        let moved = std::mem::take(&mut self.incident[v]);
        for f in moved {
            for w in self.faces[f].iter_mut() {
                if *w == v {
                    *w = u;
                }
            }
            self.incident[u].push(f);
        }
        self.pos[u] = x;
        self.quadric[u] = self.quadric[u].add(&self.quadric[v]);
        self.alive[v] = false;
        self.stamp[u] += 1;
        self.stamp[v] += 1;
        for w in self.neighbours(u) {
            self.stamp[w] += 1;
        }
    }
}

/// Collapses edges in order of quadric error until at most
/// `(1 - drop_fraction) * V` vertices remain. Collapses that would flip a face
/// or break the manifold are rejected; if no valid collapse is left the best
/// effort mesh is returned with a warning.
pub fn decimate(mesh: &TriMesh, drop_fraction: f64) -> Result<TriMesh> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(CoreError::InvalidArgument(format!("drop fraction {drop_fraction}")));
    }
    let n = mesh.num_vertices();
    let remove = (drop_fraction * n as f64 - 1e-6).ceil().max(0.0) as usize;
    if remove == 0 {
        return Ok(mesh.clone());
    }
    if n <= 10 {
        return Err(CoreError::InvalidArgument("decimation needs more than 10 vertices".into()));
    }
    let target = n - remove;

    let mut st = State {
        pos: mesh.vertices().to_vec(),
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.num_faces()],
        incident: vec![Vec::new(); n],
        alive: vec![true; n],
        stamp: vec![0; n],
        quadric: vec![Quadric::default(); n],
    };
    for (fi, f) in mesh.faces().iter().enumerate() {
        for &v in f {
            st.incident[v].push(fi);
        }
        let nrm = face_normal(&st.pos, *f);
        let len = norm(nrm);
        if len <= 0.0 {
            continue;
        }
        let unit = scale(nrm, 1.0 / len);
        let q = Quadric::plane(unit, -dot(unit, st.pos[f[0]]), 0.5 * len);
        for &v in f {
            st.quadric[v] = st.quadric[v].add(&q);
        }
    }
    let counts = mesh.edge_face_counts();
    for f in mesh.faces() {
        let nrm = face_normal(&st.pos, *f);
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            if counts[&edge_key(a, b)] != 1 {
                continue;
            }
            let dir = sub(st.pos[b], st.pos[a]);
            let side = cross(dir, nrm);
            let len = norm(side);
            if len <= 0.0 {
                continue;
            }
            let unit = scale(side, 1.0 / len);
            let q = Quadric::plane(unit, -dot(unit, st.pos[a]), BOUNDARY_WEIGHT * dot(dir, dir));
            st.quadric[a] = st.quadric[a].add(&q);
            st.quadric[b] = st.quadric[b].add(&q);
        }
    }

    let mut heap = BinaryHeap::new();
    let mut keys: Vec<_> = counts.keys().copied().collect();
    keys.sort_unstable();
    for (a, b) in keys {
        heap.push(st.candidate(a, b));
    }
    let mut alive = n;
    while alive > target {
        let Some(c) = heap.pop() else {
            log::warn!("decimation stopped at {alive} vertices (target {target}): no valid collapse left");
            break;
        };
        let (u, v) = c.edge;
        if !st.alive[u] || !st.alive[v] || (st.stamp[u], st.stamp[v]) != c.stamps {
            continue;
        }
        if !st.collapse_ok(u, v, c.target) {
            continue;
        }
        st.collapse(u, v, c.target);
        alive -= 1;
        let mut nb: Vec<usize> = st.neighbours(u).into_iter().collect();
        nb.sort_unstable();
        for w in nb {
            heap.push(st.candidate(u, w));
        }
    }

    let mut index = vec![usize::MAX; n];
    let mut vertices = Vec::with_capacity(alive);
    for i in 0..n {
        if st.alive[i] && !st.incident[i].is_empty() {
            index[i] = vertices.len();
            vertices.push(st.pos[i]);
        }
    }
    let faces = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &a)| a)
        .map(|(f, _)| [index[f[0]], index[f[1]], index[f[2]]])
        .collect();
    TriMesh::new(vertices, faces)
}
