//! Human-readable dataset manifest (TOML). Keys are documented in
//! `docs/formats.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Paired,
    Unpaired,
    Test,
}

/// Parameter ranges the generator drew from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub count: usize,
    pub size: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub atmosphere_lo: f64,
    pub atmosphere_hi: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            count: 64,
            size: 32,
            beta_lo: 0.6,
            beta_hi: 1.8,
            atmosphere_lo: 0.7,
            atmosphere_hi: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: usize,
    pub clean: String,
    pub hazy: String,
    pub beta: f64,
    pub atmosphere: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    pub params: SynthParams,
    #[serde(default)]
    pub items: Vec<ItemRecord>,
}

pub const SCHEMA: &str = "hazebridge-dataset-v1";

impl DatasetManifest {
    pub fn new(seed: u64, params: SynthParams) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            seed,
            params,
            items: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Format {
                what: "dataset manifest",
                reason: format!("unknown schema `{}`", self.schema),
            });
        }
        let mut ids: Vec<usize> = self.items.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.items.len() {
            return Err(Error::Format {
                what: "dataset manifest",
                reason: "duplicate item ids".into(),
            });
        }
        for item in &self.items {
            if !(item.beta > 0.0) || !(0.0..=1.0).contains(&item.atmosphere) {
                return Err(Error::Format {
                    what: "dataset manifest",
                    reason: format!("item {} has out-of-range haze parameters", item.id),
                });
            }
        }
        Ok(())
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for item in &self.items {
            match item.split {
                Split::Paired => c.0 += 1,
                Split::Unpaired => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format {
            what: "dataset manifest",
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_manifest(&text)
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = toml::from_str(text).map_err(|e| Error::Format {
        what: "dataset manifest",
        reason: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}
