//! Supervised spectral-union samples built from a shape family.

pub mod manifest;
pub mod pairs;
pub mod sample;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, save_manifest, DatasetManifest, FamilyRef};
pub use pairs::{
    augment_mask, augment_rings, canonicalize_union, make_pairs, PairConfig, Scenario, AREA_TIE, MAX_AUGMENT_AREA_CHANGE,
};
pub use sample::{
    parallel_map, realize_sample, realize_with, region_spectrum, remeshed_inputs, CanonicalPair, PartialPairSample,
    SampleMeta,
};
pub use split::{assign_splits, split_settings, Split, SplitPolicy, SplitSettings};

use crate::error::{invalid, Result};
use crate::geometry::{normalize_area, RegionMask, ShapeFamily};
use crate::spectral::{natural_spectrum, BoundaryCondition, Spectrum, DEFAULT_K};

/// Default surface area of every family member when spectra are computed.
pub const DEFAULT_TARGET_AREA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Number of distinct template region pairs; each is realized on every
    /// identity and pose.
    pub pairs: usize,
    pub pair: PairConfig,
    pub k: usize,
    pub target_area: f64,
    pub policy: SplitPolicy,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pairs: 15,
            pair: PairConfig::default(),
            k: DEFAULT_K,
            target_area: DEFAULT_TARGET_AREA,
            policy: SplitPolicy::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

/// The family with every embedding scaled to `target_area`. The template,
/// which only defines regions, is left as is.
pub fn scaled_family(family: &ShapeFamily, target_area: f64) -> Result<ShapeFamily> {
    if !(target_area > 0.0 && target_area.is_finite()) {
        return Err(invalid(format!("target area {target_area}")));
    }
    let mut out = family.clone();
    for e in out.embeddings.iter_mut() {
        let m = family.template.with_vertices(std::mem::take(e))?;
        *e = normalize_area(&m, target_area)?.vertices().to_vec();
    }
    Ok(out)
}

/// Canonicalizes raw pairs, drops pairs that coincide after
/// canonicalization and numbers the distinct part regions.
pub fn canonical_pairs(family: &ShapeFamily, raw: &[(RegionMask, RegionMask)]) -> Vec<CanonicalPair> {
    let mut registry: BTreeMap<RegionMask, usize> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (a, b) in raw {
        let (m1, m2, union) = canonicalize_union(a, b, family);
        let key = if m1 <= m2 { (m1.clone(), m2.clone()) } else { (m2.clone(), m1.clone()) };
        if !seen.insert(key) {
            continue;
        }
        let mut id = |m: &RegionMask| {
            let next = registry.len();
            *registry.entry(m.clone()).or_insert(next)
        };
        let partiality = [id(&m1), id(&m2)];
        out.push(CanonicalPair { mask1: m1, mask2: m2, union, pair_id: out.len(), partiality });
    }
    out
}

/// Pairs, canonicalization, realization on every family member, and splits.
pub fn build_dataset(family: &ShapeFamily, family_seed: Option<u64>, cfg: &DatasetConfig) -> Result<DatasetManifest> {
    let raw = make_pairs(family, cfg.pairs, &cfg.pair, cfg.seed)?;
    let pairs = canonical_pairs(family, &raw);
    let scaled = scaled_family(family, cfg.target_area)?;
    let shapes = family.identities * family.poses;
    let full: Vec<Option<Spectrum>> = if pairs.iter().any(|p| p.union.is_full()) {
        parallel_map(shapes, cfg.jobs, |s| {
            natural_spectrum(&scaled.shape(s / family.poses, s % family.poses)?, cfg.k).map(Some)
        })?
    } else {
        vec![None; shapes]
    };
    let samples = parallel_map(pairs.len() * shapes, cfg.jobs, |t| {
        let (p, s) = (t / shapes, t % shapes);
        realize_with(&scaled, s / family.poses, s % family.poses, &pairs[p], cfg.k, full[s].as_ref())
    })?;
    let splits = assign_splits(&samples, &cfg.policy, cfg.seed)?;
    Ok(DatasetManifest {
        family: FamilyRef { seed: family_seed, fingerprint: family.fingerprint() },
        k: cfg.k,
        target_area: cfg.target_area,
        policy: cfg.policy,
        settings: split_settings(&samples, &splits),
        samples,
        splits,
    })
}

/// Relative slack for the domain-monotonicity audit.
pub const MONOTONICITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub total: usize,
    pub train: usize,
    pub test_a: usize,
    pub test_b: usize,
    /// Test B samples whose union region occurs in train.
    pub test_b_leaks: usize,
    /// Test A samples whose union region is absent from train.
    pub test_a_unseen_unions: usize,
    /// Samples whose union mask misses part of a part mask.
    pub superset_violations: usize,
    /// Dirichlet unions with an eigenvalue above the smaller part's.
    pub monotonicity_violations: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.test_b_leaks == 0
            && self.test_a_unseen_unions == 0
            && self.superset_violations == 0
            && self.monotonicity_violations == 0
    }
}

pub fn audit(m: &DatasetManifest) -> AuditReport {
    let train_unions: BTreeSet<&RegionMask> =
        m.samples.iter().zip(&m.splits).filter(|(_, s)| **s == Split::Train).map(|(x, _)| &x.union_mask).collect();
    let count = |split| m.splits.iter().filter(|s| **s == split).count();
    let mut r = AuditReport {
        total: m.samples.len(),
        train: count(Split::Train),
        test_a: count(Split::TestA),
        test_b: count(Split::TestB),
        test_b_leaks: 0,
        test_a_unseen_unions: 0,
        superset_violations: 0,
        monotonicity_violations: 0,
    };
    for (s, split) in m.samples.iter().zip(&m.splits) {
        let seen = train_unions.contains(&s.union_mask);
        match split {
            Split::TestB if seen => r.test_b_leaks += 1,
            Split::TestA if !seen => r.test_a_unseen_unions += 1,
            _ => {}
        }
        if !s.mask1.is_subset(&s.union_mask) || !s.mask2.is_subset(&s.union_mask) {
            r.superset_violations += 1;
        }
        if s.union_spec.bc() == BoundaryCondition::Dirichlet {
            let bad = (0..s.union_spec.k()).any(|i| {
                let bound = s.spec1.values()[i].min(s.spec2.values()[i]);
                s.union_spec.values()[i] > bound * (1.0 + MONOTONICITY_SLACK)
            });
            r.monotonicity_violations += bad as usize;
        }
    }
    r
}
