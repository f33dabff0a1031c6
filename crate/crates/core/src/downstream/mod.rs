//! Consumers of computed or predicted spectra: region localization on the
//! template, spectral retrieval, and spectrum interpolation.

pub mod region;
pub mod retrieval;

use std::path::Path;

pub use region::{
    eval_region, layer_widths, region_forward, region_metrics, sym_loss, train_region, RegionEpoch, RegionExample,
    RegionMetrics, RegionModel, RegionTrainConfig, REFERENCE_VERTICES, REFERENCE_WIDTHS,
};
pub use retrieval::{eval_retrieval, index_build, query_topk, HitRate, IndexEntry, Ranked, RetrievalIndex};

use crate::error::{CoreError, Result};
use crate::geometry::io::write_scalar_off;
use crate::geometry::TriMesh;
use crate::spectral::Spectrum;

/// `(1 - t) a + t b`, elementwise.
pub fn interpolate_spectra(a: &Spectrum, b: &Spectrum, t: f64) -> Result<Spectrum> {
    if a.k() != b.k() {
        return Err(CoreError::LengthMismatch { expected: a.k(), got: b.k() });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(crate::error::invalid(format!("interpolation parameter {t} outside [0, 1]")));
    }
    let values = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    Spectrum::new(values, a.bc())
}

/// Writes per-vertex probabilities as a JSON array and, when `mesh` is
/// given, as an OFF file with the scalars in a comment block.
pub fn export_mask(values: &[f64], json: impl AsRef<Path>, off: Option<(&TriMesh, &Path)>) -> Result<()> {
    std::fs::write(json, serde_json::to_string(values)?)?;
    if let Some((mesh, path)) = off {
        std::fs::write(path, write_scalar_off(mesh, values)?)?;
    }
    Ok(())
}
