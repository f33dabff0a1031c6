//! Line-oriented manifest: a JSON header followed by one JSON record per
//! sample. The header carries a SHA-256 of the record lines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::pairs::Scenario;
use crate::dataset::sample::{PartialPairSample, SampleMeta};
use crate::dataset::split::{Split, SplitPolicy, SplitSettings};
use crate::error::{CoreError, Result};
use crate::geometry::RegionMask;
use crate::spectral::Spectrum;

pub const MAGIC: &str = "SPUN-DS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyRef {
    /// Generator seed of a synthetic family.
    pub seed: Option<u64>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub family: FamilyRef,
    pub k: usize,
    /// Surface area every family member is scaled to before solving.
    pub target_area: f64,
    pub policy: SplitPolicy,
    pub settings: BTreeMap<Split, SplitSettings>,
    pub samples: Vec<PartialPairSample>,
    pub splits: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    family: FamilyRef,
    k: usize,
    target_area: f64,
    policy: SplitPolicy,
    settings: BTreeMap<Split, SplitSettings>,
    count: usize,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    split: Split,
    identity: usize,
    pose: usize,
    pair_id: usize,
    partiality: [usize; 2],
    scenario: Scenario,
    mask1: Vec<usize>,
    mask2: Vec<usize>,
    union_mask: Vec<usize>,
    spec1: Spectrum,
    spec2: Spectrum,
    union_spec: Spectrum,
}

impl DatasetManifest {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_samples(&self, split: Split) -> Vec<&PartialPairSample> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == split).map(|(x, _)| x).collect()
    }

    fn record_lines(&self) -> Vec<String> {
        self.samples
            .iter()
            .zip(&self.splits)
            .map(|(s, &split)| {
                let r = Record {
                    split,
                    identity: s.meta.identity,
                    pose: s.meta.pose,
                    pair_id: s.meta.pair_id,
                    partiality: s.meta.partiality,
                    scenario: s.meta.scenario,
                    mask1: s.mask1.to_rle(),
                    mask2: s.mask2.to_rle(),
                    union_mask: s.union_mask.to_rle(),
                    spec1: s.spec1.clone(),
                    spec2: s.spec2.clone(),
                    union_spec: s.union_spec.clone(),
                };
                serde_json::to_string(&r).expect("record serializes")
            })
            .collect()
    }

    /// SHA-256 of the record lines, hex encoded.
    pub fn hash(&self) -> String {
        hash_lines(&self.record_lines())
    }

    pub fn to_text(&self) -> String {
        let lines = self.record_lines();
        let header = Header {
            magic: MAGIC.into(),
            version: VERSION,
            family: self.family.clone(),
            k: self.k,
            target_area: self.target_area,
            policy: self.policy,
            settings: self.settings.clone(),
            count: lines.len(),
            hash: hash_lines(&lines),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or(CoreError::Manifest { line: 1, msg: "empty manifest".into() })?;
        let probe: serde_json::Value =
            serde_json::from_str(first).map_err(|e| CoreError::Manifest { line: 1, msg: e.to_string() })?;
        let magic = probe.get("magic").and_then(|m| m.as_str()).unwrap_or("");
        let version = probe.get("version").and_then(|v| v.as_u64());
        if magic != MAGIC || version != Some(VERSION as u64) {
            return Err(CoreError::VersionMismatch(format!(
                "expected {MAGIC} v{VERSION}, found {magic} v{}",
                version.map_or("?".into(), |v| v.to_string())
            )));
        }
        let header: Header =
            serde_json::from_value(probe).map_err(|e| CoreError::Manifest { line: 1, msg: e.to_string() })?;
        let body: Vec<&str> = lines.collect();
        let mut samples = Vec::with_capacity(body.len());
        let mut splits = Vec::with_capacity(body.len());
        for (i, l) in body.iter().enumerate() {
            let line = i + 2;
            let bad = |msg: String| CoreError::Manifest { line, msg };
            let r: Record = serde_json::from_str(l).map_err(|e| bad(e.to_string()))?;
            let mask = |runs: &[usize]| RegionMask::from_rle(runs).map_err(|e| bad(e.to_string()));
            samples.push(PartialPairSample {
                mask1: mask(&r.mask1)?,
                mask2: mask(&r.mask2)?,
                union_mask: mask(&r.union_mask)?,
                spec1: r.spec1,
                spec2: r.spec2,
                union_spec: r.union_spec,
                meta: SampleMeta {
                    identity: r.identity,
                    pose: r.pose,
                    pair_id: r.pair_id,
                    partiality: r.partiality,
                    scenario: r.scenario,
                },
            });
            splits.push(r.split);
        }
        if samples.len() != header.count {
            return Err(CoreError::Manifest {
                line: body.len() + 1,
                msg: format!("header announces {} records, found {}", header.count, samples.len()),
            });
        }
        let computed = hash_lines(&body.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        if computed != header.hash {
            return Err(CoreError::HashMismatch { stored: header.hash, computed });
        }
        Ok(Self {
            family: header.family,
            k: header.k,
            target_area: header.target_area,
            policy: header.policy,
            settings: header.settings,
            samples,
            splits,
        })
    }
}

fn hash_lines(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_text())?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    DatasetManifest::from_text(&std::fs::read_to_string(path)?)
}
