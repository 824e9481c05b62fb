//! Layered run configuration: built-in defaults, then `WASSREG_SEED`, then a
//! JSON config file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use wassreg_core::kernel::BandwidthRule;
use wassreg_core::maps::MapFamily;
use wassreg_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "WASSREG_SEED";

/// Settings of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub family: MapFamily,
    pub rule: BandwidthRule,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { family: MapFamily::Displacement, rule: BandwidthRule::default(), train: TrainConfig::default() }
    }
}

/// Seed from the environment, if set.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

/// Recursive merge; objects merge key by key, everything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// One flag override: a dotted key path and its value.
pub struct Override {
    pub path: &'static str,
    pub value: Value,
}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Overrides(Vec<Override>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, path: &'static str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push(Override { path, value: serde_json::to_value(v).expect("flag values serialize") });
        }
        self
    }

    fn into_value(self) -> Value {
        let mut root = Value::Object(Map::new());
        for o in self.0 {
            let mut nested = o.value;
            for key in o.path.rsplit('.') {
                let mut m = Map::new();
                m.insert(key.to_string(), nested);
                nested = Value::Object(m);
            }
            merge(&mut root, nested);
        }
        root
    }
}

/// Builds `T` from its defaults, the seed layer, an optional config file and
/// the flag overrides, in increasing precedence. Unknown keys are rejected by
/// the target type.
pub fn layered<T: Serialize + DeserializeOwned + Default>(
    config: Option<&Path>,
    seed_paths: &[&'static str],
    flags: Overrides,
) -> CliResult<T> {
    let mut value = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(seed) = env_seed()? {
        let mut env = Overrides::default();
        for &p in seed_paths {
            env.set(p, Some(seed));
        }
        merge(&mut value, env.into_value());
    }
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))?;
        if !file.is_object() {
            return Err(CliError::parse(path, "config must be a JSON object"));
        }
        merge(&mut value, file);
    }
    merge(&mut value, flags.into_value());
    serde_json::from_value(value).map_err(|e| match config {
        Some(p) => CliError::Validation(format!("invalid configuration ({}): {e}", p.display())),
        None => CliError::Validation(format!("invalid configuration: {e}")),
    })
}
