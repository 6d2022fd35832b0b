//! Config files, `--set key=value` overrides and the resolved-config dump.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Usage;

/// Reads a TOML or JSON file (by extension; JSON otherwise) into a tree.
pub fn read_tree(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tree = if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Value = toml::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v)?
    } else {
        serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?
    };
    Ok(tree)
}

/// Overlays `top` onto `base`. With `strict`, keys absent from `base` are
/// an error; otherwise they are dropped.
fn merge(base: &mut Value, top: Value, strict: bool, at: &str) -> Result<()> {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() => merge(slot, v, strict, &here)?,
                    Some(slot) => *slot = v,
                    None if strict => return Err(Usage(format!("unknown config key '{here}'")).into()),
                    None => {}
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Sets a dotted path that must already exist in `tree`.
pub fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = tree;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| Usage(format!("unknown config key '{path}'")))?;
    }
    *node = value;
    Ok(())
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_set(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Usage(format!("--set expects key=value, got '{s}'")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Layers defaults, an optional base file (lenient), an optional user file
/// (strict), `--set` overrides and flag overrides, in that order.
pub struct Resolver {
    tree: Value,
}

impl Resolver {
    pub fn new<T: Serialize + Default>() -> Result<Self> {
        Self::from(&T::default())
    }

    /// Starts from `defaults` instead of the type's `Default`.
    pub fn from<T: Serialize>(defaults: &T) -> Result<Self> {
        Ok(Resolver {
            tree: serde_json::to_value(defaults)?,
        })
    }

    /// Files may be plain configs or `config.json` documents from earlier
    /// runs.
    pub fn base_file(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(p) = path {
            merge(&mut self.tree, unwrap_resolved(read_tree(p)?), false, "")?;
        }
        Ok(self)
    }

    pub fn file(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(p) = path {
            merge(&mut self.tree, unwrap_resolved(read_tree(p)?), true, "")?;
        }
        Ok(self)
    }

    pub fn sets(mut self, sets: &[String]) -> Result<Self> {
        for s in sets {
            let (k, v) = parse_set(s)?;
            set_path(&mut self.tree, &k, v)?;
        }
        Ok(self)
    }

    /// Applies `value` at `path` when present.
    pub fn flag<V: Serialize>(mut self, path: &str, value: Option<V>) -> Result<Self> {
        if let Some(v) = value {
            set_path(&mut self.tree, path, serde_json::to_value(v)?)?;
        }
        Ok(self)
    }

    pub fn finish<T: DeserializeOwned>(self) -> Result<T> {
        serde_json::from_value(self.tree).map_err(|e| Usage(format!("invalid configuration: {e}")).into())
    }
}

/// Writes the effective configuration as `config.json` in `out`.
pub fn write_resolved<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut doc = Map::new();
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("config".into(), serde_json::to_value(config)?);
    let path = out.join("config.json");
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// The `config.json` written beside a checkpoint, if any.
pub fn sibling_config(checkpoint: &Path) -> Option<std::path::PathBuf> {
    let p = checkpoint.parent()?.join("config.json");
    p.is_file().then_some(p)
}

/// Unwraps the `config` section when `tree` is a resolved-config document.
pub fn unwrap_resolved(tree: Value) -> Value {
    match tree {
        Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
            m.remove("config").unwrap_or(Value::Null)
        }
        other => other,
    }
}
