use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::invalid;

pub const VERSION: &str = match option_env!("SPUN_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

/// Output sink and provenance of one command invocation.
pub struct Run {
    command: String,
    out: Option<PathBuf>,
    started: String,
    effective: Map<String, Value>,
}

impl Run {
    pub fn new(command: &str, out: Option<PathBuf>) -> Self {
        Self { command: command.to_string(), out, started: now(), effective: Map::new() }
    }

    /// Records a resolved setting for the provenance hash.
    pub fn record(&mut self, key: &str, value: impl serde::Serialize) {
        self.effective.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        let dir = self.out.as_deref().ok_or_else(|| invalid(format!("`{}` writes artifacts and needs --out", self.command)))?;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn artifact(&self, name: &str) -> anyhow::Result<PathBuf> {
        Ok(self.out_dir()?.join(name))
    }

    pub fn has_out(&self) -> bool {
        self.out.is_some()
    }

    /// Writes `result.json` and `run.json` under --out, or the result to
    /// stdout when there is no output directory.
    pub fn finish(&self, result: &Value) -> anyhow::Result<()> {
        match &self.out {
            None => println!("{}", serde_json::to_string(result)?),
            Some(_) => {
                let dir = self.out_dir()?;
                std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(result)?)?;
                let config = Value::Object(self.effective.clone());
                let hash = hex::encode(Sha256::digest(serde_json::to_string(&config)?.as_bytes()));
                let record = json!({
                    "command": self.command,
                    "args": std::env::args().skip(1).collect::<Vec<_>>(),
                    "version": VERSION,
                    "config_hash": hash,
                    "config": config,
                    "started": self.started,
                    "finished": now(),
                });
                std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
                eprintln!("wrote {}", dir.display());
            }
        }
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
