use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    /// Watertight shape; the zero eigenvalue is dropped.
    Closed,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(Self::Dirichlet),
            "closed" => Ok(Self::Closed),
            other => Err(CoreError::InvalidArgument(format!("unknown boundary condition `{other}`"))),
        }
    }
}

/// Truncated, non-decreasing, non-negative eigenvalue sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumJson", into = "SpectrumJson")]
pub struct Spectrum {
    values: Vec<f64>,
    bc: BoundaryCondition,
}

#[derive(Serialize, Deserialize)]
struct SpectrumJson {
    k: usize,
    bc: BoundaryCondition,
    values: Vec<f64>,
}

impl TryFrom<SpectrumJson> for Spectrum {
    type Error = CoreError;

    fn try_from(j: SpectrumJson) -> Result<Self> {
        if j.k != j.values.len() {
            return Err(CoreError::LengthMismatch { expected: j.k, got: j.values.len() });
        }
        Spectrum::new(j.values, j.bc)
    }
}

impl From<Spectrum> for SpectrumJson {
    fn from(s: Spectrum) -> Self {
        Self { k: s.values.len(), bc: s.bc, values: s.values }
    }
}

impl Spectrum {
    pub fn new(values: Vec<f64>, bc: BoundaryCondition) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidArgument(format!("eigenvalue {i} is {v}")));
            }
            if i > 0 && v < values[i - 1] {
                return Err(CoreError::InvalidArgument(format!("eigenvalues decrease at index {i}")));
            }
        }
        Ok(Self { values, bc })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spectrum serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// First differences of a spectrum; `offsets[0]` is the first eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSeq {
    pub offsets: Vec<f64>,
}

/// Offset such that `prev + offset` rounds to exactly `cur`: the plain
/// difference when that works, else the smallest one found by bisection over
/// bit patterns (`prev + o` is monotone in `o`).
fn exact_step(prev: f64, cur: f64) -> f64 {
    let o = cur - prev;
    if prev + o == cur {
        return o;
    }
    let (mut lo, mut hi) = (0u64, (o.abs() + 4.0 * (cur.next_up() - cur)).to_bits());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if prev + f64::from_bits(mid) >= cur {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let step = f64::from_bits(lo);
    if prev + step == cur { step } else { o }
}

/// First differences taken against the running decoded sum, so a value that
/// no offset can reach exactly does not shift the ones after it.
pub fn offset_encode(s: &Spectrum) -> OffsetSeq {
    let mut offsets = Vec::with_capacity(s.k());
    let mut acc = 0.0;
    for (i, &v) in s.values().iter().enumerate() {
        let o = if i == 0 { v } else { exact_step(acc, v).max(0.0) };
        acc = if i == 0 { o } else { acc + o };
        offsets.push(o);
    }
    OffsetSeq { offsets }
}

/// Cumulative sum of the offsets.
pub fn offset_decode(o: &OffsetSeq, bc: BoundaryCondition) -> Result<Spectrum> {
    let mut values = Vec::with_capacity(o.offsets.len());
    let mut acc = 0.0;
    for (i, &x) in o.offsets.iter().enumerate() {
        if x < 0.0 || x.is_nan() {
            return Err(CoreError::NegativeOffset { index: i, value: x });
        }
        acc = if i == 0 { x } else { acc + x };
        values.push(acc);
    }
    Spectrum::new(values, bc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Computed,
    Predicted,
}

/// ShapeDNA signature: the raw truncated spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

pub fn shape_dna(s: &Spectrum) -> Signature {
    Signature { values: s.values().to_vec(), provenance: Provenance::Computed }
}

pub fn predicted_signature(s: &Spectrum) -> Signature {
    Signature { values: s.values().to_vec(), provenance: Provenance::Predicted }
}

pub fn signature_distance(a: &Signature, b: &Signature) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(CoreError::LengthMismatch { expected: a.values.len(), got: b.values.len() });
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}
