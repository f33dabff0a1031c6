use serde::{Deserialize, Serialize};

use crate::dataset::pairs::Scenario;
use crate::error::Result;
use crate::geometry::{decimate, submesh, RegionMask, ShapeFamily, TriMesh};
use crate::spectral::{natural_spectrum, Spectrum};

/// A canonicalized pair of template regions with its registry ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPair {
    pub mask1: RegionMask,
    pub mask2: RegionMask,
    pub union: RegionMask,
    pub pair_id: usize,
    /// Ids of the two part regions in the dataset's region registry.
    pub partiality: [usize; 2],
}

impl CanonicalPair {
    pub fn scenario(&self) -> Scenario {
        if self.union.is_full() { Scenario::FullCover } else { Scenario::PartialUnion }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub identity: usize,
    pub pose: usize,
    pub pair_id: usize,
    pub partiality: [usize; 2],
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialPairSample {
    pub spec1: Spectrum,
    pub spec2: Spectrum,
    pub union_spec: Spectrum,
    pub mask1: RegionMask,
    pub mask2: RegionMask,
    pub union_mask: RegionMask,
    pub meta: SampleMeta,
}

/// Spectrum of the region `mask` of one family member: Dirichlet when the
/// region has a boundary, closed otherwise.
pub fn region_spectrum(shape: &TriMesh, mask: &RegionMask, k: usize) -> Result<Spectrum> {
    natural_spectrum(&submesh(shape, mask)?.0, k)
}

/// Like [`region_spectrum`], on the region's submesh decimated by
/// `drop_fraction` of its vertices.
pub fn remeshed_region_spectrum(shape: &TriMesh, mask: &RegionMask, k: usize, drop_fraction: f64) -> Result<Spectrum> {
    natural_spectrum(&decimate(&submesh(shape, mask)?.0, drop_fraction)?, k)
}

/// Ground-truth spectra of both parts and their union on one family member.
pub fn realize_sample(
    family: &ShapeFamily,
    identity: usize,
    pose: usize,
    pair: &CanonicalPair,
    k: usize,
) -> Result<PartialPairSample> {
    realize_with(family, identity, pose, pair, k, None)
}

/// [`realize_sample`] with an optional precomputed full-shape spectrum used
/// when the union covers the template.
pub fn realize_with(
    family: &ShapeFamily,
    identity: usize,
    pose: usize,
    pair: &CanonicalPair,
    k: usize,
    full: Option<&Spectrum>,
) -> Result<PartialPairSample> {
    let shape = family.shape(identity, pose)?;
    let union_spec = match full {
        Some(s) if pair.union.is_full() && s.k() == k => s.clone(),
        _ => region_spectrum(&shape, &pair.union, k)?,
    };
    Ok(PartialPairSample {
        spec1: region_spectrum(&shape, &pair.mask1, k)?,
        spec2: region_spectrum(&shape, &pair.mask2, k)?,
        union_spec,
        mask1: pair.mask1.clone(),
        mask2: pair.mask2.clone(),
        union_mask: pair.union.clone(),
        meta: SampleMeta {
            identity,
            pose,
            pair_id: pair.pair_id,
            partiality: pair.partiality,
            scenario: pair.scenario(),
        },
    })
}

/// Part spectra recomputed from decimated part meshes; the union target is
/// unchanged.
pub fn remeshed_inputs(
    family: &ShapeFamily,
    sample: &PartialPairSample,
    drop_fraction: f64,
) -> Result<(Spectrum, Spectrum)> {
    let shape = family.shape(sample.meta.identity, sample.meta.pose)?;
    let k = sample.spec1.k();
    Ok((
        remeshed_region_spectrum(&shape, &sample.mask1, k, drop_fraction)?,
        remeshed_region_spectrum(&shape, &sample.mask2, k, drop_fraction)?,
    ))
}

/// Runs `f` over `0..n` on up to `jobs` threads, keeping results in index
/// order. The first error in index order is returned.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut chunks: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j..n).step_by(jobs).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut all: Vec<(usize, Result<T>)> = chunks.drain(..).flatten().collect();
    all.sort_by_key(|(i, _)| *i);
    all.into_iter().map(|(_, r)| r).collect()
}
