//! Template-registered shape families: identities x poses sharing one
//! connectivity, with a bilateral symmetry map on the template.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::geometry::io::{load_mesh_file, write_off};
use crate::geometry::mesh::{dot, norm, scale, sub, TriMesh, Vec3};
use crate::geometry::{normalize_area, surface_area};

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFamily {
    pub template: TriMesh,
    pub identities: usize,
    pub poses: usize,
    /// Per-vertex positions, indexed `identity * poses + pose`.
    pub embeddings: Vec<Vec<Vec3>>,
    pub symmetry_map: Vec<usize>,
    pub left_labels: Vec<bool>,
}

impl ShapeFamily {
    pub fn num_vertices(&self) -> usize {
        self.template.num_vertices()
    }

    pub fn embedding(&self, identity: usize, pose: usize) -> &[Vec3] {
        &self.embeddings[identity * self.poses + pose]
    }

    pub fn shape(&self, identity: usize, pose: usize) -> Result<TriMesh> {
        if identity >= self.identities || pose >= self.poses {
            return Err(CoreError::InvalidArgument(format!("no shape ({identity}, {pose})")));
        }
        self.template.with_vertices(self.embedding(identity, pose).to_vec())
    }

    pub fn is_involution(&self) -> bool {
        let s = &self.symmetry_map;
        s.len() == self.num_vertices() && (0..s.len()).all(|i| s[i] < s.len() && s[s[i]] == i)
    }

    /// Checks the invariants: involution, faces map to faces, left labels
    /// are the template's `x < 0` side and mirror onto `x > 0`.
    pub fn validate(&self) -> Result<()> {
        if !self.is_involution() {
            return Err(CoreError::InvalidMesh("symmetry map is not an involution".into()));
        }
        if self.embeddings.len() != self.identities * self.poses
            || self.embeddings.iter().any(|e| e.len() != self.num_vertices())
        {
            return Err(CoreError::InvalidMesh("embedding count or size mismatch".into()));
        }
        let v = self.template.vertices();
        if self.left_labels.len() != v.len() || (0..v.len()).any(|i| self.left_labels[i] != (v[i][0] < 0.0)) {
            return Err(CoreError::InvalidMesh("left labels disagree with template x < 0".into()));
        }
        Ok(())
    }

    /// SHA-256 over connectivity, all embeddings and the symmetry data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.identities as u64).to_le_bytes());
        h.update((self.poses as u64).to_le_bytes());
        for f in self.template.faces() {
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        for p in self.template.vertices().iter().chain(self.embeddings.iter().flatten()) {
            for c in p {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        for &s in &self.symmetry_map {
            h.update((s as u64).to_le_bytes());
        }
        h.update(self.left_labels.iter().map(|&b| b as u8).collect::<Vec<_>>());
        hex::encode(h.finalize())
    }
}

/// Radial protrusion on the base ellipsoid.
#[derive(Debug, Clone, Copy)]
struct Bump {
    center: Vec3,
    height: f64,
    width: f64,
}

impl Bump {
    fn influence(&self, u: Vec3) -> f64 {
        (-(1.0 - dot(u, self.center)) / (self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone)]
struct BodyParams {
    axes: Vec3,
    /// Head, then left/right arm, then left/right leg.
    bumps: [Bump; 5],
}

fn unit(v: Vec3) -> Vec3 {
    scale(v, 1.0 / norm(v))
}

fn neutral_body() -> BodyParams {
    let bump = |c: Vec3, height, width| Bump { center: unit(c), height, width };
    BodyParams {
        axes: [0.55, 0.35, 0.9],
        bumps: [
            bump([0.0, 0.0, 1.0], 0.55, 0.3),
            bump([-1.0, 0.0, 0.25], 0.9, 0.22),
            bump([1.0, 0.0, 0.25], 0.9, 0.22),
            bump([-0.45, 0.0, -1.0], 0.9, 0.25),
            bump([0.45, 0.0, -1.0], 0.9, 0.25),
        ],
    }
}

/// Symmetric random warp of the neutral body.
fn identity_body(rng: &mut ChaCha8Rng) -> BodyParams {
    let mut b = neutral_body();
    let mut lognormal = |s: f64| (s * rng.random_range(-1.0f64..1.0) * 1.7).exp();
    for a in b.axes.iter_mut() {
        *a *= lognormal(0.15);
    }
    b.bumps[0].height *= lognormal(0.2);
    b.bumps[0].width *= lognormal(0.1);
    for pair in [1, 3] {
        let h = lognormal(0.2);
        let w = lognormal(0.1);
        for k in [pair, pair + 1] {
            b.bumps[k].height *= h;
            b.bumps[k].width *= w;
        }
    }
    b
}

fn body_point(u: Vec3, body: &BodyParams) -> Vec3 {
    let r = 1.0 + body.bumps.iter().map(|b| b.height * b.influence(u)).sum::<f64>();
    [body.axes[0] * u[0] * r, body.axes[1] * u[1] * r, body.axes[2] * u[2] * r]
}

struct Sphere {
    dirs: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    mirror: Vec<usize>,
}

/// UV sphere whose mirror `phi -> pi - phi` (that is `x -> -x`) is an exact
/// vertex permutation that also maps faces to faces.
fn uv_sphere(target_vertices: usize) -> Sphere {
    let rings = (((target_vertices.max(30) as f64) / 2.0).sqrt().round() as usize).max(3);
    let segs = (((2 * rings) as f64 / 4.0).round() as usize).max(2) * 4;
    let idx = |j: usize, i: usize| 1 + j * segs + (i % segs);
    let south = 1 + rings * segs;
    let mut dirs = vec![[0.0, 0.0, 1.0]];
    for j in 0..rings {
        let theta = PI * (j + 1) as f64 / (rings + 1) as f64;
        for i in 0..segs {
            let phi = 2.0 * PI * i as f64 / segs as f64;
            let x = if 4 * i == segs || 4 * i == 3 * segs { 0.0 } else { theta.sin() * phi.cos() };
            dirs.push([x, theta.sin() * phi.sin(), theta.cos()]);
        }
    }
    dirs.push([0.0, 0.0, -1.0]);
    let mut mirror = vec![0; dirs.len()];
    mirror[south] = south;
    for j in 0..rings {
        for i in 0..segs {
            mirror[idx(j, i)] = idx(j, (segs / 2 + segs - i) % segs);
        }
    }
    for i in 0..dirs.len() {
        let m = mirror[i];
        if m > i {
            dirs[m] = [-dirs[i][0], dirs[i][1], dirs[i][2]];
        }
    }
    let mut faces = Vec::new();
    for i in 0..segs {
        faces.push([0, idx(0, i), idx(0, i + 1)]);
        faces.push([south, idx(rings - 1, i + 1), idx(rings - 1, i)]);
    }
    for j in 0..rings - 1 {
        for i in 0..segs {
            let (a, b, c, d) = (idx(j, i), idx(j, i + 1), idx(j + 1, i + 1), idx(j + 1, i));
            let phi_mid = 2.0 * PI * (i as f64 + 0.5) / segs as f64;
            if phi_mid.cos() > 0.0 {
                faces.push([a, c, b]);
                faces.push([a, d, c]);
            } else {
                faces.push([a, d, b]);
                faces.push([b, d, c]);
            }
        }
    }
    Sphere { dirs, faces, mirror }
}

fn symmetrize(points: &mut [Vec3], mirror: &[usize]) {
    for i in 0..points.len() {
        let m = mirror[i];
        if m == i {
            points[i][0] = 0.0;
        } else if m > i {
            points[m] = [-points[i][0], points[i][1], points[i][2]];
        }
    }
}

fn rotate_about(p: Vec3, pivot: Vec3, axis: usize, angle: f64) -> Vec3 {
    let d = sub(p, pivot);
    let (s, c) = angle.sin_cos();
    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut r = d;
    r[a] = c * d[a] - s * d[b];
    r[b] = s * d[a] + c * d[b];
    [pivot[0] + r[0], pivot[1] + r[1], pivot[2] + r[2]]
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Rotates each limb about its root, blending smoothly into the torso.
fn apply_pose(points: &[Vec3], dirs: &[Vec3], body: &BodyParams, angles: &[f64; 4]) -> Vec<Vec3> {
    let mut out = points.to_vec();
    for (k, &angle) in angles.iter().enumerate() {
        if angle == 0.0 {
            continue;
        }
        let bump = body.bumps[k + 1];
        let c = bump.center;
        let pivot = [body.axes[0] * c[0], body.axes[1] * c[1], body.axes[2] * c[2]];
        // Arms swing in the frontal plane, legs in the sagittal plane.
        let axis = if k < 2 { 1 } else { 0 };
        for (i, u) in dirs.iter().enumerate() {
            let w = smoothstep((bump.influence(*u) - 0.1) / 0.5);
            if w > 0.0 {
                out[i] = rotate_about(out[i], pivot, axis, w * angle);
            }
        }
    }
    out
}

/// Desk-scale stand-in for a registered human dataset: a bilaterally
/// symmetric body (ellipsoid torso with radial head and limb protrusions).
/// Identities are symmetric shape warps; poses rotate the limbs.
pub fn synth_family(seed: u64, identities: usize, poses: usize, target_vertices: usize) -> Result<ShapeFamily> {
    if identities == 0 || poses == 0 {
        return Err(CoreError::InvalidArgument("family needs at least one identity and pose".into()));
    }
    let sphere = uv_sphere(target_vertices);
    let realize = |body: &BodyParams| {
        let mut p: Vec<Vec3> = sphere.dirs.iter().map(|&u| body_point(u, body)).collect();
        symmetrize(&mut p, &sphere.mirror);
        p
    };
    let neutral = TriMesh::new(realize(&neutral_body()), sphere.faces.clone())?;
    let template = normalize_area(&neutral, 1.0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut embeddings = Vec::with_capacity(identities * poses);
    for _ in 0..identities {
        let body = identity_body(&mut rng);
        let rest = realize(&body);
        for p in 0..poses {
            let angles: [f64; 4] = if p == 0 {
                [0.0; 4]
            } else {
                std::array::from_fn(|_| rng.random_range(-0.45..0.45))
            };
            let posed = apply_pose(&rest, &sphere.dirs, &body, &angles);
            let mesh = template.with_vertices(posed)?;
            embeddings.push(normalize_area(&mesh, 1.0)?.vertices().to_vec());
        }
    }
    let left_labels = template.vertices().iter().map(|v| v[0] < 0.0).collect();
    let family = ShapeFamily { template, identities, poses, embeddings, symmetry_map: sphere.mirror, left_labels };
    family.validate()?;
    Ok(family)
}

/// Relative area change of each pose against the rest pose, before the
/// per-shape normalization. Used to audit quasi-isometry.
pub fn pose_area_changes(seed: u64, identities: usize, poses: usize, target_vertices: usize) -> Result<Vec<f64>> {
    let sphere = uv_sphere(target_vertices);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..identities {
        let body = identity_body(&mut rng);
        let mut rest: Vec<Vec3> = sphere.dirs.iter().map(|&u| body_point(u, &body)).collect();
        symmetrize(&mut rest, &sphere.mirror);
        let rest_mesh = TriMesh::new(rest.clone(), sphere.faces.clone())?;
        let a0 = surface_area(&rest_mesh);
        for p in 0..poses {
            let angles: [f64; 4] = if p == 0 {
                [0.0; 4]
            } else {
                std::array::from_fn(|_| rng.random_range(-0.45..0.45))
            };
            let posed = rest_mesh.with_vertices(apply_pose(&rest, &sphere.dirs, &body, &angles))?;
            out.push((surface_area(&posed) - a0).abs() / a0);
        }
    }
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    Ok(Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()))
}

/// Reads a directory of `id<I>_pose<P>.off` files sharing connectivity, plus
/// optional `template.off`, `symmetry.txt` (one 0-based index per line) and
/// `left.txt` (0/1 per line). Without `symmetry.txt` the identity map is used;
/// without `template.off` the template is `id0_pose0`. Every shape is
/// normalized to unit area.
pub fn load_family_dir(dir: impl AsRef<Path>) -> Result<ShapeFamily> {
    let dir = dir.as_ref();
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".off") else { continue };
        let Some((id, pose)) = stem.strip_prefix("id").and_then(|s| s.split_once("_pose")) else { continue };
        if let (Ok(i), Ok(p)) = (id.parse::<usize>(), pose.parse::<usize>()) {
            found.push((i, p));
        }
    }
    let identities = found.iter().map(|f| f.0 + 1).max().ok_or(CoreError::EmptyShape)?;
    let poses = found.iter().map(|f| f.1 + 1).max().unwrap_or(0);
    let mut embeddings = Vec::with_capacity(identities * poses);
    let mut template: Option<TriMesh> = None;
    for i in 0..identities {
        for p in 0..poses {
            let path = dir.join(format!("id{i}_pose{p}.off"));
            if !path.exists() {
                return Err(CoreError::InvalidArgument(format!("missing {}", path.display())));
            }
            let mesh = normalize_area(&load_mesh_file(&path)?, 1.0)?;
            if let Some(t) = &template {
                if t.faces() != mesh.faces() {
                    return Err(CoreError::InvalidMesh(format!("{} has different connectivity", path.display())));
                }
            } else {
                template = Some(mesh.clone());
            }
            embeddings.push(mesh.vertices().to_vec());
        }
    }
    let mut template = template.expect("at least one shape");
    let explicit = dir.join("template.off");
    if explicit.exists() {
        let t = normalize_area(&load_mesh_file(&explicit)?, 1.0)?;
        if t.faces() != template.faces() {
            return Err(CoreError::InvalidMesh("template.off has different connectivity".into()));
        }
        template = t;
    }
    let n = template.num_vertices();
    let symmetry_map = match read_lines(&dir.join("symmetry.txt"))? {
        Some(lines) => lines
            .iter()
            .enumerate()
            .map(|(i, l)| l.parse::<usize>().map_err(|_| CoreError::Parse { line: i + 1, msg: format!("bad index `{l}`") }))
            .collect::<Result<Vec<_>>>()?,
        None => (0..n).collect(),
    };
    let left_labels = match read_lines(&dir.join("left.txt"))? {
        Some(lines) => lines.iter().map(|l| l == "1").collect(),
        None => template.vertices().iter().map(|v| v[0] < 0.0).collect(),
    };
    let family = ShapeFamily { template, identities, poses, embeddings, symmetry_map, left_labels };
    if !family.is_involution() {
        return Err(CoreError::InvalidMesh("symmetry map is not an involution".into()));
    }
    Ok(family)
}

/// Writes the layout read by [`load_family_dir`].
pub fn save_family_dir(family: &ShapeFamily, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("template.off"), write_off(&family.template))?;
    for i in 0..family.identities {
        for p in 0..family.poses {
            std::fs::write(dir.join(format!("id{i}_pose{p}.off")), write_off(&family.shape(i, p)?))?;
        }
    }
    let lines = |v: Vec<String>| v.join("\n") + "\n";
    std::fs::write(dir.join("symmetry.txt"), lines(family.symmetry_map.iter().map(|i| i.to_string()).collect()))?;
    std::fs::write(
        dir.join("left.txt"),
        lines(family.left_labels.iter().map(|&b| if b { "1" } else { "0" }.to_string()).collect()),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::detect_boundary;
    use std::collections::HashSet;

    #[test]
    fn template_symmetry_is_exact() {
        let f = synth_family(3, 1, 1, 400).unwrap();
        assert!(f.is_involution());
        let v = f.template.vertices();
        for (i, &m) in f.symmetry_map.iter().enumerate() {
            assert_eq!(v[m], [-v[i][0], v[i][1], v[i][2]]);
        }
        let faces: HashSet<[usize; 3]> = f
            .template
            .faces()
            .iter()
            .map(|f| {
                let mut s = *f;
                s.sort_unstable();
                s
            })
            .collect();
        for face in f.template.faces() {
            let mut m = face.map(|i| f.symmetry_map[i]);
            m.sort_unstable();
            assert!(faces.contains(&m));
        }
        assert!(detect_boundary(&f.template).iter().all(|&b| !b));
    }

    #[test]
    fn left_labels_mirror_to_complement_minus_midline() {
        let f = synth_family(1, 1, 1, 300).unwrap();
        let v = f.template.vertices();
        for i in 0..v.len() {
            let mirrored = f.left_labels[f.symmetry_map[i]];
            let right = v[i][0] > 0.0;
            assert_eq!(mirrored, right);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_family(9, 2, 3, 200).unwrap();
        let b = synth_family(9, 2, 3, 200).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), synth_family(10, 2, 3, 200).unwrap().fingerprint());
    }

    #[test]
    fn poses_are_quasi_isometric() {
        let changes = pose_area_changes(5, 4, 6, 600).unwrap();
        let worst = changes.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 0.02, "pose area change {worst}");
    }

    #[test]
    fn vertex_count_near_target() {
        for target in [200, 600, 1000] {
            let f = synth_family(0, 1, 1, target).unwrap();
            let n = f.num_vertices() as f64;
            assert!((n / target as f64 - 1.0).abs() < 0.25, "{n} vs {target}");
        }
    }
}
