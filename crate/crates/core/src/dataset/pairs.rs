use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::geometry::{edge_distances, mask_components, surface_area, RegionMask, ShapeFamily, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// The union is the whole surface.
    FullCover,
    /// The union is a strict subset of the surface.
    PartialUnion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// Geodesic patch radii in units of `sqrt(template area)`.
    pub radius_range: (f64, f64),
    /// Overlap as a fraction of the smaller part's area.
    pub min_overlap_frac: f64,
    pub scenario: Scenario,
    /// Minimum template vertex count of each part.
    pub min_part_vertices: usize,
    pub max_tries: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            radius_range: (0.25, 0.45),
            min_overlap_frac: 0.05,
            scenario: Scenario::PartialUnion,
            min_part_vertices: 80,
            max_tries: 200,
        }
    }
}

/// Template quantities reused across draws.
struct TemplateInfo<'a> {
    mesh: &'a TriMesh,
    adjacency: Vec<Vec<usize>>,
    areas: Vec<f64>,
    unit: f64,
}

impl<'a> TemplateInfo<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        Self { mesh, adjacency: mesh.adjacency(), areas: mesh.vertex_areas(), unit: surface_area(mesh).sqrt() }
    }

    fn threshold(&self, dist: &[f64], keep: impl Fn(f64) -> bool) -> Option<RegionMask> {
        RegionMask::new(dist.iter().map(|&d| keep(d)).collect()).ok()
    }

    fn connected(&self, m: &RegionMask) -> bool {
        mask_components(&self.adjacency, m.bits()) == 1
    }

    fn area(&self, m: &RegionMask) -> f64 {
        m.weighted(&self.areas)
    }

    fn overlap(&self, a: &RegionMask, b: &RegionMask) -> f64 {
        a.bits().iter().zip(b.bits()).zip(&self.areas).filter(|((x, y), _)| **x && **y).map(|(_, w)| w).sum()
    }
}

fn draw_full_cover(t: &TemplateInfo, cfg: &PairConfig, rng: &mut ChaCha8Rng) -> Option<(RegionMask, RegionMask)> {
    let n = t.mesh.num_vertices();
    let (lo, hi) = cfg.radius_range;
    if rng.random_bool(0.5) {
        // A ball and the complement of a slightly smaller ball.
        let r = rng.random_range(lo..=hi) * t.unit;
        let w = rng.random_range(0.15..0.35) * r;
        let d = edge_distances(t.mesh, &[rng.random_range(0..n)], f64::INFINITY);
        Some((t.threshold(&d, |x| x <= r)?, t.threshold(&d, |x| x >= r - w)?))
    } else {
        // Two sides of a shifted geodesic bisector with a shared band.
        let (s1, s2) = (rng.random_range(0..n), rng.random_range(0..n));
        if s1 == s2 {
            return None;
        }
        let d1 = edge_distances(t.mesh, &[s1], f64::INFINITY);
        let d2 = edge_distances(t.mesh, &[s2], f64::INFINITY);
        let span = d1[s2];
        let shift = rng.random_range(-0.3..0.3) * span;
        let w = rng.random_range(0.05..0.15) * span;
        let f: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a - b).collect();
        Some((t.threshold(&f, |x| x <= shift + w)?, t.threshold(&f, |x| x >= shift - w)?))
    }
}

fn draw_partial(t: &TemplateInfo, cfg: &PairConfig, rng: &mut ChaCha8Rng) -> Option<(RegionMask, RegionMask)> {
    let n = t.mesh.num_vertices();
    let (lo, hi) = cfg.radius_range;
    let ra = rng.random_range(lo..=hi) * t.unit;
    let rb = rng.random_range(lo..=hi) * t.unit;
    let da = edge_distances(t.mesh, &[rng.random_range(0..n)], f64::INFINITY);
    let near: Vec<usize> = (0..n).filter(|&i| da[i] <= ra + 0.5 * rb && da[i] >= 0.3 * ra).collect();
    if near.is_empty() {
        return None;
    }
    let db = edge_distances(t.mesh, &[near[rng.random_range(0..near.len())]], f64::INFINITY);
    Some((t.threshold(&da, |x| x <= ra)?, t.threshold(&db, |x| x <= rb)?))
}

fn acceptable(t: &TemplateInfo, cfg: &PairConfig, a: &RegionMask, b: &RegionMask) -> bool {
    let parts_ok = [a, b].iter().all(|m| !m.is_full() && m.count() >= cfg.min_part_vertices && t.connected(m));
    if !parts_ok || a.is_subset(b) || b.is_subset(a) {
        return false;
    }
    let u = a.union(b);
    let scenario_ok = match cfg.scenario {
        Scenario::FullCover => u.is_full(),
        Scenario::PartialUnion => !u.is_full(),
    };
    scenario_ok && t.connected(&u) && t.overlap(a, b) >= cfg.min_overlap_frac * t.area(a).min(t.area(b))
}

/// Random overlapping pairs of template regions, distinct as unordered
/// pairs. Deterministic in `seed`.
pub fn make_pairs(
    family: &ShapeFamily,
    count: usize,
    cfg: &PairConfig,
    seed: u64,
) -> Result<Vec<(RegionMask, RegionMask)>> {
    if !(cfg.min_overlap_frac > 0.0 && cfg.min_overlap_frac < 1.0) {
        return Err(invalid(format!("min_overlap_frac must lie in (0, 1), got {}", cfg.min_overlap_frac)));
    }
    let (lo, hi) = cfg.radius_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(invalid(format!("radius range ({lo}, {hi})")));
    }
    let t = TemplateInfo::new(&family.template);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = cfg.max_tries.max(1) * count.max(1);
    let mut tries = 0;
    while out.len() < count {
        if tries == budget {
            return Err(CoreError::SamplingExhausted(tries));
        }
        tries += 1;
        let drawn = match cfg.scenario {
            Scenario::FullCover => draw_full_cover(&t, cfg, &mut rng),
            Scenario::PartialUnion => draw_partial(&t, cfg, &mut rng),
        };
        let Some((a, b)) = drawn else { continue };
        if !acceptable(&t, cfg, &a, &b) {
            continue;
        }
        let key = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if seen.insert(key) {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Relative band within which union areas count as tied.
pub const AREA_TIE: f64 = 0.005;

/// Picks among `{a, sym a} x {b, sym b}` the variant with the smallest union
/// area; near ties go to the union with most left-side vertices, then to the
/// lexicographically lowest `(a, b)`. When `a` and `b` cover the template,
/// only covering variants compete, so the scenario is preserved.
pub fn canonicalize_union(
    a: &RegionMask,
    b: &RegionMask,
    family: &ShapeFamily,
) -> (RegionMask, RegionMask, RegionMask) {
    let areas = family.template.vertex_areas();
    let sym = &family.symmetry_map;
    let left = &family.left_labels;
    let (sa, sb) = (a.permuted(sym), b.permuted(sym));
    let variants: Vec<(RegionMask, RegionMask)> =
        vec![(a.clone(), b.clone()), (sa.clone(), b.clone()), (a.clone(), sb.clone()), (sa, sb)];
    let covering = a.union(b).is_full();
    let scored: Vec<(f64, usize, RegionMask, RegionMask, RegionMask)> = variants
        .into_iter()
        .filter(|(x, y)| !covering || x.union(y).is_full())
        .map(|(x, y)| {
            let u = x.union(&y);
            let l = u.bits().iter().zip(left).filter(|(p, q)| **p && **q).count();
            (u.weighted(&areas), l, x, y, u)
        })
        .collect();
    let min_area = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    scored
        .into_iter()
        .filter(|s| s.0 <= min_area * (1.0 + AREA_TIE))
        .min_by(|p, q| q.1.cmp(&p.1).then_with(|| (&p.2, &p.3).cmp(&(&q.2, &q.3))))
        .map(|(_, _, x, y, u)| (x, y, u))
        .expect("four variants")
}

/// Largest relative area change an augmentation may cause.
pub const MAX_AUGMENT_AREA_CHANGE: f64 = 0.10;

fn grow(mask: &[bool], adjacency: &[Vec<usize>]) -> Vec<bool> {
    let mut out = mask.to_vec();
    for (i, nb) in adjacency.iter().enumerate() {
        if !mask[i] && nb.iter().any(|&j| mask[j]) {
            out[i] = true;
        }
    }
    out
}

fn shrink(mask: &[bool], adjacency: &[Vec<usize>]) -> Vec<bool> {
    let mut out = mask.to_vec();
    for (i, nb) in adjacency.iter().enumerate() {
        if mask[i] && nb.iter().any(|&j| !mask[j]) {
            out[i] = false;
        }
    }
    out
}

/// Dilates (`rings > 0`) or erodes (`rings < 0`) by whole vertex rings. The
/// step count is reduced toward zero until the result is non-empty,
/// connected when the input was, and within the allowed area change.
pub fn augment_rings(mask: &RegionMask, family: &ShapeFamily, rings: i32) -> RegionMask {
    let adjacency = family.template.adjacency();
    let areas = family.template.vertex_areas();
    let base = mask.weighted(&areas);
    let was_connected = mask_components(&adjacency, mask.bits()) == 1;
    let mut r = rings;
    while r != 0 {
        let mut bits = mask.bits().to_vec();
        for _ in 0..r.unsigned_abs() {
            bits = if r > 0 { grow(&bits, &adjacency) } else { shrink(&bits, &adjacency) };
        }
        if let Ok(m) = RegionMask::new(bits) {
            let change = (m.weighted(&areas) - base).abs() / base;
            let connected = !was_connected || mask_components(&adjacency, m.bits()) == 1;
            if change <= MAX_AUGMENT_AREA_CHANGE && connected {
                return m;
            }
        }
        r -= r.signum();
    }
    mask.clone()
}

/// Random ring augmentation with `rings` uniform in `-2..=2`.
pub fn augment_mask(mask: &RegionMask, family: &ShapeFamily, rng: &mut impl Rng) -> RegionMask {
    augment_rings(mask, family, rng.random_range(-2..=2))
}
