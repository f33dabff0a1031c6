pub mod decimate;
pub mod family;
pub mod io;
pub mod mesh;
pub mod sampling;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

pub use decimate::decimate;
pub use family::{load_family_dir, save_family_dir, synth_family, ShapeFamily};
pub use io::{load_shape, write_off, write_ply, ShapeFormat};
pub use mesh::{PointCloud, RegionMask, Shape, TriMesh, Vec3};
pub use sampling::{pointcloud_boundary, sample_pointcloud};

use crate::error::{CoreError, Result};
use mesh::{edge_key, norm, sub};

pub fn surface_area(mesh: &TriMesh) -> f64 {
    (0..mesh.num_faces()).map(|f| mesh.face_area(f)).sum()
}

/// Uniformly scaled copy (about the origin) with the requested area.
pub fn normalize_area(mesh: &TriMesh, target_area: f64) -> Result<TriMesh> {
    let area = surface_area(mesh);
    if area <= 0.0 || !area.is_finite() {
        return Err(CoreError::DegenerateShape(format!("surface area {area}")));
    }
    if target_area <= 0.0 {
        return Err(CoreError::InvalidArgument(format!("target area {target_area}")));
    }
    if area == target_area {
        return Ok(mesh.clone());
    }
    let s = (target_area / area).sqrt();
    Ok(mesh.map_vertices(|v| mesh::scale(v, s)))
}

/// Vertices incident to an edge with exactly one incident face.
pub fn detect_boundary(mesh: &TriMesh) -> Vec<bool> {
    let mut flags = vec![false; mesh.num_vertices()];
    let mut nonmanifold = 0;
    for ((a, b), n) in mesh.edge_face_counts() {
        if n == 1 {
            flags[a] = true;
            flags[b] = true;
        } else if n > 2 {
            nonmanifold += 1;
        }
    }
    if nonmanifold > 0 {
        log::warn!("{nonmanifold} non-manifold edges (more than two incident faces)");
    }
    flags
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra distances over the edge graph, weighted by edge length.
/// Exploration stops beyond `cutoff`; unreached vertices are infinite.
pub fn edge_distances(mesh: &TriMesh, seeds: &[usize], cutoff: f64) -> Vec<f64> {
    let adj = mesh.adjacency();
    let v = mesh.vertices();
    let mut dist = vec![f64::INFINITY; v.len()];
    let mut heap = BinaryHeap::new();
    for &s in seeds {
        dist[s] = 0.0;
        heap.push(HeapItem { dist: 0.0, vertex: s });
    }
    while let Some(HeapItem { dist: d, vertex: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &w in &adj[u] {
            let nd = d + norm(sub(v[u], v[w]));
            if nd < dist[w] && nd <= cutoff {
                dist[w] = nd;
                heap.push(HeapItem { dist: nd, vertex: w });
            }
        }
    }
    dist
}

/// Vertices within graph-geodesic `radius` of `seed` on `mesh`.
pub fn geodesic_ball(mesh: &TriMesh, seed: usize, radius: f64) -> Result<RegionMask> {
    if seed >= mesh.num_vertices() {
        return Err(CoreError::InvalidArgument(format!("seed {seed} out of range")));
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(CoreError::InvalidArgument(format!("radius {radius}")));
    }
    let dist = edge_distances(mesh, &[seed], radius);
    RegionMask::new(dist.iter().map(|&d| d <= radius).collect())
}

/// Geodesic ball measured on the family template.
pub fn geodesic_patch(family: &ShapeFamily, seed: usize, radius: f64) -> Result<RegionMask> {
    geodesic_ball(&family.template, seed, radius)
}

/// Faces with all three vertices selected, reindexed compactly. The returned
/// map sends each submesh vertex to its source index.
pub fn submesh(mesh: &TriMesh, mask: &RegionMask) -> Result<(TriMesh, Vec<usize>)> {
    if mask.len() != mesh.num_vertices() {
        return Err(CoreError::LengthMismatch { expected: mesh.num_vertices(), got: mask.len() });
    }
    let kept: Vec<[usize; 3]> =
        mesh.faces().iter().filter(|f| f.iter().all(|&i| mask.contains(i))).copied().collect();
    if kept.is_empty() {
        return Err(CoreError::EmptySubmesh);
    }
    let mut used = vec![false; mesh.num_vertices()];
    for f in &kept {
        for &i in f {
            used[i] = true;
        }
    }
    let mut new_index = vec![usize::MAX; mesh.num_vertices()];
    let mut map = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            new_index[i] = map.len();
            map.push(i);
        }
    }
    let vertices = map.iter().map(|&i| mesh.vertices()[i]).collect();
    let faces = kept.iter().map(|f| [new_index[f[0]], new_index[f[1]], new_index[f[2]]]).collect();
    Ok((TriMesh::new(vertices, faces)?, map))
}

/// Connected components of the subgraph induced by `mask`.
pub fn mask_components(adjacency: &[Vec<usize>], mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut comps = 0;
    for s in 0..mask.len() {
        if !mask[s] || seen[s] {
            continue;
        }
        comps += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &w in &adjacency[u] {
                if mask[w] && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    comps
}

/// Edges with exactly one incident face, sorted.
pub fn boundary_edges(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> =
        mesh.edge_face_counts().into_iter().filter(|&(_, n)| n == 1).map(|(e, _)| e).collect();
    edges.sort_unstable();
    edges
}

/// Regular `n x n` vertex grid over the unit square in the z=0 plane.
pub fn square_grid(n: usize) -> TriMesh {
    let h = 1.0 / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            let (b, c, d) = (a + 1, a + n + 1, a + n);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces).expect("grid is valid")
}

/// Unit disk in the z=0 plane: a centre vertex plus `rings` concentric rings
/// of `6 r` vertices, stitched by angle.
pub fn unit_disk(rings: usize) -> TriMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![[0.0, 0.0, 0.0]];
    let mut ring_start = vec![0];
    for r in 1..=rings {
        ring_start.push(vertices.len());
        let count = 6 * r;
        let rad = r as f64 / rings as f64;
        for i in 0..count {
            let a = 2.0 * PI * i as f64 / count as f64;
            vertices.push([rad * a.cos(), rad * a.sin(), 0.0]);
        }
    }
    let mut faces = Vec::new();
    for r in 1..=rings {
        let (inner_n, outer_n) = (if r == 1 { 1 } else { 6 * (r - 1) }, 6 * r);
        let inner = |i: usize| ring_start[r - 1] + i % inner_n;
        let outer = |j: usize| ring_start[r] + j % outer_n;
        let inner_steps = if r == 1 { 0 } else { inner_n };
        let (mut i, mut j) = (0, 0);
        while i < inner_steps || j < outer_n {
            let next_inner = (i + 1) as f64 / inner_n as f64;
            let next_outer = (j + 1) as f64 / outer_n as f64;
            if j < outer_n && (i >= inner_steps || next_outer <= next_inner) {
                faces.push([inner(i), outer(j), outer(j + 1)]);
                j += 1;
            } else {
                faces.push([inner(i), outer(j), inner(i + 1)]);
                i += 1;
            }
        }
    }
    TriMesh::new(vertices, faces).expect("disk is valid")
}

/// Icosahedron refined `level` times with vertices projected to the unit sphere.
pub fn icosphere(level: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
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
    let unit = |p: Vec3| mesh::scale(p, 1.0 / norm(p));
    v.iter_mut().for_each(|p| *p = unit(*p));
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                v.push(unit(mesh::scale(mesh::add(v[a], v[b]), 0.5)));
                v.len() - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut v);
            let bc = midpoint(f[1], f[2], &mut v);
            let ca = midpoint(f[2], f[0], &mut v);
            next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(v, faces).expect("icosphere is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn square_area_and_scaling() {
        let m = unit_square();
        assert!((surface_area(&m) - 1.0).abs() < 1e-15);
        let m2 = m.map_vertices(|v| mesh::scale(v, 2.0));
        assert!((surface_area(&m2) - 4.0).abs() < 1e-15);
        let mut v = m.vertices().to_vec();
        v.push([0.5, 0.0, 0.0]);
        let mut f = m.faces().to_vec();
        f.push([0, 1, 4]);
        let degenerate = TriMesh::new(v, f).unwrap();
        assert_eq!(surface_area(&degenerate), surface_area(&m));
    }

    #[test]
    fn normalize_area_cases() {
        let big = unit_square().map_vertices(|v| mesh::scale(v, 2.0));
        let n = normalize_area(&big, 1.0).unwrap();
        for (a, b) in n.vertices().iter().zip(big.vertices()) {
            for c in 0..3 {
                assert!((a[c] - b[c] / 2.0).abs() < 1e-15);
            }
        }
        let u = unit_square();
        assert_eq!(normalize_area(&u, 1.0).unwrap().vertices(), u.vertices());
        let flat = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(normalize_area(&flat, 1.0), Err(CoreError::DegenerateShape(_))));
    }

    #[test]
    fn boundary_of_simple_shapes() {
        assert!(detect_boundary(&icosphere(1)).iter().all(|&b| !b));
        let tri = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(detect_boundary(&tri).iter().all(|&b| b));
        for n in [2, 3, 7, 12] {
            let count = detect_boundary(&square_grid(n)).iter().filter(|&&b| b).count();
            assert_eq!(count, 4 * (n - 1));
        }
    }

    #[test]
    fn submesh_cases() {
        let m = square_grid(4);
        let (full, map) = submesh(&m, &RegionMask::full(16)).unwrap();
        assert_eq!(full, m);
        assert_eq!(map, (0..16).collect::<Vec<_>>());
        let f = m.faces()[3];
        let (one, map) = submesh(&m, &RegionMask::from_indices(16, &f).unwrap()).unwrap();
        assert_eq!(one.num_faces(), 1);
        assert_eq!(map.len(), 3);
        let two = RegionMask::from_indices(16, &f[..2]).unwrap();
        assert!(matches!(submesh(&m, &two), Err(CoreError::EmptySubmesh)));
    }

    #[test]
    fn disk_is_a_disk() {
        let d = unit_disk(8);
        assert_eq!(d.num_vertices(), 1 + 3 * 8 * 9);
        assert_eq!(d.num_faces(), 6 * 64);
        let area = surface_area(&d);
        assert!(area < std::f64::consts::PI && area > 0.97 * std::f64::consts::PI);
        assert_eq!(detect_boundary(&d).iter().filter(|&&b| b).count(), 48);
    }

    #[test]
    fn tiny_and_huge_balls() {
        let m = square_grid(5);
        assert_eq!(geodesic_ball(&m, 7, 1e-9).unwrap().indices(), vec![7]);
        assert!(geodesic_ball(&m, 7, 10.0).unwrap().is_full());
    }
}
