use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Factor lists keyed by dotted config path, e.g. `trainable_encoder` or
/// `encoder.backend_id`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub factors: BTreeMap<String, Vec<Value>>,
}

impl GridSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("grid factors: {e}")))
    }
}

/// One expanded point: the factor values chosen and the resulting config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub assignment: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
}

/// Sets `path` (dot-separated) inside `root`, creating missing objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("grid path {path:?} has an empty segment")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("grid path {path:?}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

/// Cartesian product of the factors over `template`, factor keys varying
/// slowest-first in sorted order. Run ids get a `-gNNN` suffix.
pub fn expand_grid(template: &ExperimentConfig, spec: &GridSpec) -> Result<Vec<GridPoint>> {
    if let Some((k, _)) = spec.factors.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Config(format!("grid factor {k} has no values")));
    }
    if spec.factors.contains_key("run_id") {
        return Err(Error::Config("run_id cannot be a grid factor".into()));
    }
    let base = serde_json::to_value(template).expect("config serializes");
    let keys: Vec<&String> = spec.factors.keys().collect();
    let total: usize = spec.factors.values().map(Vec::len).product();
    let mut points = Vec::with_capacity(total);
    for n in 0..total {
        let mut rem = n;
        let mut assignment = BTreeMap::new();
        for key in keys.iter().rev() {
            let values = &spec.factors[*key];
            assignment.insert((*key).clone(), values[rem % values.len()].clone());
            rem /= values.len();
        }
        let mut v = base.clone();
        for (k, val) in &assignment {
            set_path(&mut v, k, val.clone())?;
        }
        set_path(&mut v, "run_id", Value::String(format!("{}-g{n:03}", template.run_id)))?;
        let mut config: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(format!("grid point {n} ({assignment:?}): {e}")))?;
        config.base_dir = template.base_dir.clone();
        points.push(GridPoint {
            assignment,
            config: config.resolved(),
        });
    }
    Ok(points)
}
