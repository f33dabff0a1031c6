use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::sample::PartialPairSample;
use crate::error::{invalid, CoreError, Result};
use crate::geometry::RegionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    /// Unseen pose or partiality; the union region occurs in train.
    #[serde(rename = "testA")]
    TestA,
    /// Unseen union region.
    #[serde(rename = "testB")]
    TestB,
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "testA" | "testa" | "a" => Ok(Self::TestA),
            "testB" | "testb" | "b" => Ok(Self::TestB),
            other => Err(invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    pub test_a: f64,
    pub test_b: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self { test_a: 0.10, test_b: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSettings {
    /// Every identity in the split also occurs in train.
    pub known_identity: bool,
    /// Every sample's two part regions and union occur together in train.
    pub known_partiality: bool,
    pub remeshed: bool,
}

/// Split assignment: Test B takes whole union-region classes, as close to
/// `test_b n` samples as class sizes allow; Test A takes single samples whose
/// union region keeps at least one train sample. Together they hold out
/// `round((test_a + test_b) n)` samples.
pub fn assign_splits(samples: &[PartialPairSample], policy: &SplitPolicy, seed: u64) -> Result<Vec<Split>> {
    let (a, b) = (policy.test_a, policy.test_b);
    if !(a >= 0.0 && b >= 0.0 && a + b < 1.0) {
        return Err(invalid(format!("split fractions {a} + {b} must be non-negative and below 1")));
    }
    let n = samples.len();
    let total = ((a + b) * n as f64).round() as usize;
    let target_b = ((b * n as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut classes: BTreeMap<&RegionMask, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        classes.entry(&s.union_mask).or_default().push(i);
    }
    let mut class_list: Vec<Vec<usize>> = classes.into_values().collect();
    class_list.shuffle(&mut rng);

    let mut splits = vec![Split::Train; n];
    let mut taken_b = 0;
    let mut b_classes = 0;
    if target_b > 0 {
        for members in &class_list {
            let next = taken_b + members.len();
            let closer = next.abs_diff(target_b) < taken_b.abs_diff(target_b) || taken_b == 0;
            if closer && next <= total && b_classes + 1 < class_list.len() {
                taken_b = next;
                b_classes += 1;
                for &i in members {
                    splits[i] = Split::TestB;
                }
            }
        }
        if taken_b == 0 {
            return Err(CoreError::InfeasibleSplit(format!(
                "no union class fits in a holdout budget of {total} samples"
            )));
        }
    }
    let kept_classes = class_list.len() - b_classes;

    let need_a = total - taken_b;
    if need_a > 0 {
        let mut train_left: BTreeMap<&RegionMask, usize> = BTreeMap::new();
        let mut candidates = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if splits[i] == Split::Train {
                *train_left.entry(&s.union_mask).or_default() += 1;
                candidates.push(i);
            }
        }
        candidates.shuffle(&mut rng);
        let mut taken_a = 0;
        for i in candidates {
            if taken_a == need_a {
                break;
            }
            let left = train_left.get_mut(&samples[i].union_mask).expect("counted");
            if *left > 1 {
                *left -= 1;
                splits[i] = Split::TestA;
                taken_a += 1;
            }
        }
        if taken_a < need_a {
            return Err(CoreError::InfeasibleSplit(format!(
                "only {taken_a} of {need_a} Test A samples keep their union in train ({kept_classes} classes)"
            )));
        }
    }
    Ok(splits)
}

/// Known-identity and known-partiality flags of each held-out split.
pub fn split_settings(samples: &[PartialPairSample], splits: &[Split]) -> BTreeMap<Split, SplitSettings> {
    let mut train_ids = BTreeSet::new();
    let mut train_partialities = BTreeSet::new();
    for (s, sp) in samples.iter().zip(splits) {
        if *sp == Split::Train {
            train_ids.insert(s.meta.identity);
            train_partialities.insert(partiality_key(s));
        }
    }
    [Split::TestA, Split::TestB]
        .into_iter()
        .map(|split| {
            let members: Vec<_> = samples.iter().zip(splits).filter(|(_, sp)| **sp == split).map(|(s, _)| s).collect();
            let settings = SplitSettings {
                known_identity: members.iter().all(|s| train_ids.contains(&s.meta.identity)),
                known_partiality: members.iter().all(|s| train_partialities.contains(&partiality_key(s))),
                remeshed: false,
            };
            (split, settings)
        })
        .collect()
}

fn partiality_key(s: &PartialPairSample) -> ([usize; 2], &RegionMask) {
    let [p, q] = s.meta.partiality;
    ([p.min(q), p.max(q)], &s.union_mask)
}
