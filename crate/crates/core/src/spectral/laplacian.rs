use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::geometry::mesh::{cross, dot, norm, sub, PointCloud, TriMesh, Vec3};
use crate::geometry::sampling::{knn, tangent_frame};
use crate::spectral::sparse::CsrMatrix;

/// Largest admitted cotangent magnitude.
pub const COT_CLAMP: f64 = 1e6;

/// Stiffness `L` and lumped mass `M` of `L u = lambda M u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPair {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
    /// Source shape index of every row.
    pub kept_vertices: Vec<usize>,
}

impl LaplacianPair {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// `M^{-1/2} L M^{-1/2}`.
    pub fn standard_form(&self) -> CsrMatrix {
        let d: Vec<f64> = self.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        self.stiffness.scale_symmetric(&d)
    }
}

/// Cotangent stiffness and barycentric lumped mass.
pub fn cotan_laplacian(mesh: &TriMesh) -> Result<LaplacianPair> {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut triplets = Vec::with_capacity(mesh.num_faces() * 12);
    let mut mass = vec![0.0; n];
    let mut clamped = 0;
    for f in mesh.faces() {
        let p = [v[f[0]], v[f[1]], v[f[2]]];
        let area2 = norm(cross(sub(p[1], p[0]), sub(p[2], p[0])));
        for k in 0..3 {
            mass[f[k]] += area2 / 6.0;
            let (i, j) = (f[(k + 1) % 3], f[(k + 2) % 3]);
            let e1 = sub(p[(k + 1) % 3], p[k]);
            let e2 = sub(p[(k + 2) % 3], p[k]);
            let mut cot = dot(e1, e2) / area2;
            if !cot.is_finite() || cot.abs() > COT_CLAMP {
                clamped += 1;
                cot = if cot.is_nan() { 0.0 } else { cot.clamp(-COT_CLAMP, COT_CLAMP) };
            }
            let w = 0.5 * cot;
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            triplets.push((i, i, w));
            triplets.push((j, j, w));
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} cotangents of degenerate triangles clamped to {COT_CLAMP:e}");
    }
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(CoreError::DegenerateShape(format!("vertex {i} has zero lumped area")));
    }
    Ok(LaplacianPair {
        stiffness: CsrMatrix::from_triplets(n, triplets),
        mass,
        kept_vertices: (0..n).collect(),
    })
}

pub const DEFAULT_KNN: usize = 8;

/// Convex polygon whose edge `i` runs from `pts[i]` to `pts[i + 1]` and was
/// cut by neighbour `src[i]` (`None` for the initial box).
struct Cell {
    pts: Vec<[f64; 2]>,
    src: Vec<Option<usize>>,
}

impl Cell {
    fn square(h: f64) -> Self {
        Self { pts: vec![[-h, -h], [h, -h], [h, h], [-h, h]], src: vec![None; 4] }
    }

    /// Keeps the half plane `x . a <= b`.
    fn clip(&mut self, a: [f64; 2], b: f64, label: Option<usize>) {
        let side = |p: [f64; 2]| p[0] * a[0] + p[1] * a[1] - b;
        let n = self.pts.len();
        let (mut pts, mut src) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        for i in 0..n {
            let (p, q) = (self.pts[i], self.pts[(i + 1) % n]);
            let (sp, sq) = (side(p), side(q));
            if sp <= 0.0 {
                pts.push(p);
                src.push(self.src[i]);
            }
            if (sp <= 0.0) != (sq <= 0.0) {
                let t = sp / (sp - sq);
                pts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                src.push(if sp <= 0.0 { label } else { self.src[i] });
            }
        }
        self.pts = pts;
        self.src = src;
    }

    fn area(&self) -> f64 {
        let n = self.pts.len();
        0.5 * (0..n)
            .map(|i| {
                let (p, q) = (self.pts[i], self.pts[(i + 1) % n]);
                p[0] * q[1] - p[1] * q[0]
            })
            .sum::<f64>()
    }

    fn edge_len(&self, i: usize) -> f64 {
        let (p, q) = (self.pts[i], self.pts[(i + 1) % self.pts.len()]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }
}

/// Tangent-plane Voronoi cell of point `i` inside a box of half-width `half`,
/// the projected distance to every neighbour, and, for a cell still bounded
/// by the box, the unit direction of the widest angular gap between
/// neighbours when it exceeds `pi / 2`.
fn voronoi_cell(points: &[Vec3], i: usize, nb: &[(usize, f64)], half: f64) -> (Cell, Vec<(usize, f64)>, Option<[f64; 2]>) {
    let (e1, e2) = tangent_frame(points, nb);
    let mut cell = Cell::square(half);
    let mut proj = Vec::with_capacity(nb.len());
    let mut angles = Vec::with_capacity(nb.len());
    for &(j, _) in nb {
        let d = sub(points[j], points[i]);
        let q = [dot(d, e1), dot(d, e2)];
        let len2 = q[0] * q[0] + q[1] * q[1];
        if len2 > 1e-24 * half * half {
            cell.clip(q, 0.5 * len2, Some(j));
            proj.push((j, len2.sqrt()));
            angles.push(q[1].atan2(q[0]));
        }
    }
    angles.sort_by(f64::total_cmp);
    let (Some(&first), Some(&last)) = (angles.first(), angles.last()) else {
        return (cell, proj, None);
    };
    let (mut gap, mut mid) = (first + 2.0 * PI - last, last + 0.5 * (first + 2.0 * PI - last));
    for w in angles.windows(2) {
        if w[1] - w[0] > gap {
            (gap, mid) = (w[1] - w[0], 0.5 * (w[0] + w[1]));
        }
    }
    let unbounded = cell.src.iter().any(Option::is_none);
    let open = (unbounded && gap > PI / 2.0).then(|| [mid.cos(), mid.sin()]);
    (cell, proj, open)
}

/// Point-cloud Laplacian from local tangent-plane Voronoi cells.
///
/// Exact duplicate points are merged first. The `2 k_nn` nearest neighbours
/// of each point are projected to its PCA tangent plane and the Voronoi cell
/// of the point is cut out of that neighbourhood. The weight to a neighbour
/// is half the shared cell edge length over the projected distance, the
/// cotangent weight of the local Delaunay triangulation, summed over both
/// endpoints' cells. The mass is the cell area. Cells left unbounded by the
/// neighbourhood whose neighbours leave an angular gap wider than `pi / 2`
/// belong to boundary points; they are cut across the gap at half the median
/// interior cell spacing.
pub fn pc_laplacian(pc: &PointCloud, k_nn: usize) -> Result<LaplacianPair> {
    if k_nn < 4 {
        return Err(CoreError::InvalidArgument(format!("k_nn must be at least 4, got {k_nn}")));
    }
    let mut order: Vec<usize> = (0..pc.len()).collect();
    let key = |i: usize| pc.points[i].map(f64::to_bits);
    order.sort_by_key(|&i| (key(i), i));
    order.dedup_by_key(|i| key(*i));
    order.sort_unstable();
    let kept = order;
    let points: Vec<_> = kept.iter().map(|&i| pc.points[i]).collect();
    let n = points.len();
    if n <= k_nn {
        return Err(CoreError::InvalidArgument(format!("{n} distinct points, need more than {k_nn}")));
    }
    let candidates = (2 * k_nn).min(n - 1);
    let nbrs = knn(&points, candidates);

    let mut cells = Vec::with_capacity(n);
    for (i, nb) in nbrs.iter().enumerate() {
        let radius = nb[candidates - 1].1.sqrt();
        if radius <= 0.0 {
            return Err(CoreError::DegenerateShape(format!("point {i} has coincident neighbours")));
        }
        cells.push(voronoi_cell(&points, i, nb, radius));
    }
    let mut interior: Vec<f64> = cells.iter().filter(|c| c.2.is_none()).map(|c| c.0.area()).collect();
    if !interior.is_empty() {
        interior.sort_by(f64::total_cmp);
        let spacing = interior[interior.len() / 2].sqrt();
        for (cell, _, open) in cells.iter_mut() {
            if let Some(g) = open {
                cell.clip(*g, 0.5 * spacing, None);
            }
        }
    }

    let mut mass = vec![0.0; n];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k_nn);
    for (i, (cell, proj, _)) in cells.iter().enumerate() {
        mass[i] = cell.area();
        for e in 0..cell.pts.len() {
            if let Some(j) = cell.src[e] {
                let dist = proj.iter().find(|p| p.0 == j).map_or(f64::INFINITY, |p| p.1);
                edges.push((i.min(j), i.max(j), 0.5 * cell.edge_len(e) / dist));
            }
        }
    }
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(CoreError::DegenerateShape(format!("point {i} has an empty cell")));
    }
    let mut triplets = Vec::with_capacity(edges.len() * 4);
    for (a, b, w) in edges {
        triplets.extend([(a, b, -w), (b, a, -w), (a, a, w), (b, b, w)]);
    }
    let stiffness = CsrMatrix::from_triplets(n, triplets);
    let comps = stiffness.components();
    if comps > 1 {
        log::warn!("neighbourhood graph has {comps} connected components; each is solved as its own block");
    }
    Ok(LaplacianPair { stiffness, mass, kept_vertices: kept })
}

/// Removes the rows and columns of boundary vertices. `boundary` is indexed
/// by source shape vertex.
pub fn dirichlet_reduce(lp: &LaplacianPair, boundary: &[bool]) -> Result<LaplacianPair> {
    let keep: Vec<usize> = (0..lp.dim())
        .filter(|&r| !boundary.get(lp.kept_vertices[r]).copied().unwrap_or(false))
        .collect();
    if keep.is_empty() {
        return Err(CoreError::AllBoundary);
    }
    if keep.len() == lp.dim() {
        return Ok(lp.clone());
    }
    Ok(LaplacianPair {
        stiffness: lp.stiffness.principal_submatrix(&keep),
        mass: keep.iter().map(|&r| lp.mass[r]).collect(),
        kept_vertices: keep.iter().map(|&r| lp.kept_vertices[r]).collect(),
    })
}
