//! Run configuration: a JSON file with global settings, default paths and a
//! flat `overrides` object of `"stage.field"` keys. Flags beat the file, the
//! file beats built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::invalid;

pub const STAGES: [&str; 4] = ["family", "dataset", "union", "region"];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub family: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub union_ckpt: Option<PathBuf>,
    pub region_ckpt: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub jobs: Option<usize>,
    pub paths: Paths,
    /// Dotted keys such as `"union.epochs"` or `"dataset.pair.scenario"`.
    pub overrides: BTreeMap<String, Value>,
}

/// Generator settings for a synthetic family, also stored next to a written
/// family so it can be regenerated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub identities: usize,
    pub poses: usize,
    pub vertices: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, identities: 4, poses: 5, vertices: 500 }
    }
}

/// Values given on the command line for every subcommand.
#[derive(Debug, Clone, Copy, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub jobs: usize,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for key in cfg.overrides.keys() {
            let stage = key.split('.').next().unwrap_or_default();
            if !STAGES.contains(&stage) || !key.contains('.') {
                return Err(invalid(format!("override `{key}`: expected <stage>.<field> with stage in {STAGES:?}")));
            }
        }
        Ok(cfg)
    }

    /// Stage settings: defaults, then the file's global seed and k, then
    /// its overrides, then the command-line globals.
    pub fn stage<T: Serialize + DeserializeOwned + Default>(&self, name: &str, globals: &Globals) -> anyhow::Result<T> {
        let mut value = serde_json::to_value(T::default())?;
        set_globals(&mut value, self.seed, self.k, None);
        let prefix = format!("{name}.");
        for (key, v) in &self.overrides {
            if let Some(path) = key.strip_prefix(&prefix) {
                set_path(&mut value, path, v.clone()).map_err(|e| invalid(format!("override `{key}`: {e}")))?;
            }
        }
        set_globals(&mut value, globals.seed, globals.k, Some(globals.jobs));
        serde_json::from_value(value).map_err(|e| invalid(format!("{name} settings: {e}")))
    }

    pub fn path(&self, flag: Option<PathBuf>, pick: fn(&Paths) -> &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
        flag.or_else(|| pick(&self.paths).clone())
            .ok_or_else(|| invalid(format!("missing {what}: pass the flag or set it under `paths` in the config")))
    }
}

fn set_globals(value: &mut Value, seed: Option<u64>, k: Option<usize>, jobs: Option<usize>) {
    let Some(obj) = value.as_object_mut() else { return };
    if let Some(seed) = seed {
        if obj.contains_key("seed") {
            obj.insert("seed".into(), seed.into());
        }
    }
    if let Some(jobs) = jobs {
        if obj.contains_key("jobs") {
            obj.insert("jobs".into(), jobs.into());
        }
    }
    if let Some(k) = k {
        if obj.contains_key("k") {
            obj.insert("k".into(), k.into());
        }
        if let Some(arch) = obj.get_mut("arch").and_then(Value::as_object_mut) {
            arch.insert("k".into(), k.into());
        }
    }
}

/// Replaces the field at a dotted path; every segment must already exist.
fn set_path(value: &mut Value, path: &str, new: Value) -> Result<(), String> {
    let mut cur = value;
    let mut segments = path.split('.').peekable();
    while let Some(seg) = segments.next() {
        let obj = cur.as_object_mut().ok_or_else(|| format!("`{seg}` is not inside an object"))?;
        let slot = obj.get_mut(seg).ok_or_else(|| format!("unknown field `{seg}`"))?;
        if segments.peek().is_none() {
            *slot = new;
            return Ok(());
        }
        cur = slot;
    }
    Err("empty key".into())
}
