//! Run configuration: defaults, overlaid by a sectioned `key = value` file,
//! overlaid by command-line `section.key=value` settings. Each leaf key
//! remembers where its value came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::IngestOptions;
use crate::error::{NiaqueError, Result};
use crate::evaluate::EvalOptions;
use crate::gradcheck::GradcheckOptions;
use crate::model::NiaqueConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        })
    }
}

/// Ingestion settings exposed in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub max_rows: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = IngestOptions::default();
        DataSection {
            max_rows: d.max_rows,
            train_fraction: d.train_fraction,
            val_fraction: d.val_fraction,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sections {
    pub model: NiaqueConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub eval: EvalOptions,
    pub gradcheck: GradcheckOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sections: Sections,
    provenance: BTreeMap<String, Provenance>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sections = Sections::default();
        let mut provenance = BTreeMap::new();
        let table = Table::try_from(&sections).expect("defaults serialise");
        for key in leaf_keys(&table, "") {
            provenance.insert(key, Provenance::Default);
        }
        RunConfig { sections, provenance }
    }
}

fn leaf_keys(t: &Table, prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => out.extend(leaf_keys(inner, &key)),
            _ => out.push(key),
        }
    }
    out
}

fn lookup_mut<'a>(t: &'a mut Table, key: &str) -> Option<&'a mut Value> {
    let mut parts = key.split('.');
    let first = parts.next()?;
    let mut cur = t.get_mut(first)?;
    for p in parts {
        cur = cur.as_table_mut()?.get_mut(p)?;
    }
    Some(cur)
}

/// Parses a flag value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Integers are accepted where floats are expected.
fn coerce(new: Value, old: &Value) -> Value {
    match (&new, old) {
        (Value::Integer(i), Value::Float(_)) => Value::Float(*i as f64),
        _ => new,
    }
}

impl RunConfig {
    fn table(&self) -> Table {
        Table::try_from(&self.sections).expect("config serialises")
    }

    fn rebuild(&mut self, table: Table) -> Result<()> {
        self.sections = table
            .try_into()
            .map_err(|e: toml::de::Error| NiaqueError::Config(e.message().to_string()))?;
        Ok(())
    }

    fn assign(&mut self, table: &mut Table, key: &str, value: Value, how: Provenance) -> Result<()> {
        let slot = lookup_mut(table, key).ok_or_else(|| NiaqueError::Config(format!("unknown key `{key}`")))?;
        if matches!(slot, Value::Table(_)) {
            return Err(NiaqueError::Config(format!("`{key}` is a section, not a key")));
        }
        *slot = coerce(value, slot);
        self.provenance.insert(key.to_string(), how);
        Ok(())
    }

    /// Overlays the contents of a config file.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let parsed: Table = text
            .parse()
            .map_err(|e: toml::de::Error| NiaqueError::Config(e.message().to_string()))?;
        let mut table = self.table();
        for key in leaf_keys(&parsed, "") {
            let mut v = &Value::Table(parsed.clone());
            for p in key.split('.') {
                v = &v.as_table().expect("leaf path")[p];
            }
            self.assign(&mut table, &key, v.clone(), Provenance::File)?;
        }
        self.rebuild(table)
    }

    pub fn merge_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NiaqueError::io(path, e))?;
        self.merge_text(&text)
    }

    /// Sets `section.key` from a command-line string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut table = self.table();
        self.assign(&mut table, key, parse_value(raw), Provenance::Flag)?;
        self.rebuild(table)
    }

    /// Applies `section.key=value` overrides.
    pub fn apply_overrides<'a>(&mut self, items: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| NiaqueError::Config(format!("override `{item}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.provenance.get(key).copied()
    }

    /// `key = value  # provenance` for every leaf key, sorted by key.
    pub fn echo(&self) -> Vec<String> {
        let table = self.table();
        let mut out = Vec::new();
        for key in leaf_keys(&table, "") {
            let mut v = &Value::Table(table.clone());
            for p in key.split('.') {
                v = &v.as_table().expect("leaf path")[p];
            }
            let how = self.provenance(&key).unwrap_or(Provenance::Default);
            out.push(format!("{key} = {v}  # {how}"));
        }
        out.sort();
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.sections.model.validate()?;
        self.sections.train.validate()
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            max_rows: self.sections.data.max_rows,
            seed: self.sections.train.seed,
            train_fraction: self.sections.data.train_fraction,
            val_fraction: self.sections.data.val_fraction,
        }
    }
}
