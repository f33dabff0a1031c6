use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::geometry::boundary_edges;
use crate::geometry::mesh::{add, cross, dot, norm, scale, sub, PointCloud, TriMesh, Vec3};

/// Squared distance from `p` to the segment `ab`.
pub fn segment_dist2(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = sub(p, add(a, scale(ab, t)));
    dot(d, d)
}

/// `n` area-weighted uniform samples. A sample is flagged as boundary when it
/// lies within one mean spacing `sqrt(area / n)` of a boundary edge.
pub fn sample_pointcloud(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 32 {
        return Err(CoreError::InvalidArgument(format!("need at least 32 samples, got {n}")));
    }
    let mut cumulative = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for f in 0..mesh.num_faces() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(CoreError::DegenerateShape("zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = mesh.vertices();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.faces()[fi];
        let s = rng.random::<f64>().sqrt();
        let t = rng.random::<f64>();
        let p = add(add(scale(v[a], 1.0 - s), scale(v[b], s * (1.0 - t))), scale(v[c], s * t));
        points.push(p);
    }
    let spacing2 = total / n as f64;
    let edges = boundary_edges(mesh);
    let flags = points
        .iter()
        .map(|&p| edges.iter().any(|&(a, b)| segment_dist2(p, v[a], v[b]) < spacing2))
        .collect();
    PointCloud::new(points, flags)
}

/// `k` nearest neighbours of every point as `(index, squared distance)`,
/// nearest first, ties by index. Brute force.
pub fn knn(points: &[Vec3], k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend((0..n).filter(|&j| j != i).map(|j| {
            let d = sub(points[i], points[j]);
            (j, dot(d, d))
        }));
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < buf.len() {
            buf.select_nth_unstable_by(k, cmp);
            buf.truncate(k);
        }
        buf.sort_by(cmp);
        out.push(buf.clone());
    }
    out
}

/// Orthonormal tangent basis from the PCA of a neighbourhood.
pub(crate) fn tangent_frame(points: &[Vec3], nb: &[(usize, f64)]) -> (Vec3, Vec3) {
    let mut mean = [0.0; 3];
    for &(j, _) in nb {
        mean = add(mean, points[j]);
    }
    mean = scale(mean, 1.0 / nb.len() as f64);
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for &(j, _) in nb {
        let d = sub(points[j], mean);
        let d = nalgebra::Vector3::new(d[0], d[1], d[2]);
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let nrm = eig.eigenvectors.column(eig.eigenvalues.imin());
    let normal = [nrm[0], nrm[1], nrm[2]];
    let helper = if normal[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let c = cross(normal, helper);
    let e1 = scale(c, 1.0 / norm(c));
    (e1, cross(normal, e1))
}

/// Boundary heuristic for point clouds: a point is on the boundary when the
/// directions to its `k` nearest neighbours, projected to the local tangent
/// plane, leave an angular gap wider than `pi / 2`.
pub fn pointcloud_boundary(points: &[Vec3], k: usize) -> Vec<bool> {
    let nbrs = knn(points, k);
    nbrs.iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.len() < 3 {
                return true;
            }
            let (e1, e2) = tangent_frame(points, nb);
            let mut angles: Vec<f64> = nb
                .iter()
                .map(|&(j, _)| {
                    let d = sub(points[j], points[i]);
                    dot(d, e2).atan2(dot(d, e1))
                })
                .collect();
            angles.sort_by(f64::total_cmp);
            let mut gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
            for w in angles.windows(2) {
                gap = gap.max(w[1] - w[0]);
            }
            gap > PI / 2.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, square_grid};

    #[test]
    fn square_samples_are_centred() {
        let pc = sample_pointcloud(&square_grid(6), 1000, 4).unwrap();
        let n = pc.len() as f64;
        let mx = pc.points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pc.points.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!((mx - 0.5).abs() < 0.05 && (my - 0.5).abs() < 0.05);
        assert!(pc.points.iter().all(|p| p[2] == 0.0));
        assert!(pc.boundary_flags.iter().any(|&b| b));
    }

    #[test]
    fn deterministic_and_closed_has_no_boundary() {
        let m = icosphere(2);
        let a = sample_pointcloud(&m, 200, 1).unwrap();
        assert_eq!(a, sample_pointcloud(&m, 200, 1).unwrap());
        assert!(a.boundary_flags.iter().all(|&b| !b));
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let pc = sample_pointcloud(&icosphere(1), 64, 2).unwrap();
        let nb = knn(&pc.points, 5);
        for (i, row) in nb.iter().enumerate() {
            let mut all: Vec<(usize, f64)> = (0..pc.len())
                .filter(|&j| j != i)
                .map(|j| (j, dot(sub(pc.points[i], pc.points[j]), sub(pc.points[i], pc.points[j]))))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(row, &all[..5].to_vec());
        }
    }

    #[test]
    fn angular_gap_finds_square_edges() {
        let m = square_grid(15);
        let flags = pointcloud_boundary(m.vertices(), 12);
        let truth = crate::geometry::detect_boundary(&m);
        assert_eq!(flags, truth);
    }
}
