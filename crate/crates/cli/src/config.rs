//! Pipeline configuration: a sectioned TOML file, `--set section.key=value`
//! overrides and a stable hash of the effective settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nebias::experiment::{ExperimentConfig, SweepConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::InputError;

/// Input files default to the artifacts a previous `synth` run left in
/// `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            inventory: None,
            out_dir: "out".into(),
        }
    }
}

impl Paths {
    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn train(&self) -> PathBuf {
        self.train.clone().unwrap_or_else(|| self.out("train.txt"))
    }

    pub fn test(&self) -> PathBuf {
        self.test.clone().unwrap_or_else(|| self.out("test.txt"))
    }

    pub fn inventory(&self) -> PathBuf {
        self.inventory
            .clone()
            .unwrap_or_else(|| self.out("inventory.tsv"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core and 1 runs sequentially.
    pub jobs: usize,
    pub paths: Paths,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub sweep: SweepConfig,
}

fn defaults_table() -> toml::Table {
    toml::Table::try_from(PipelineConfig::default()).expect("default config serializes")
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, defaults: &toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!(InputError(format!("override `{assignment}` is not of the form key=value")));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one item");
    let mut known = defaults;
    let mut cur = table;
    for s in sections {
        known = known
            .get(*s)
            .and_then(toml::Value::as_table)
            .ok_or_else(|| InputError(format!("unknown config section `{s}` in `{key}`")))?;
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| InputError(format!("`{s}` is not a section")))?;
    }
    if !known.contains_key(*last) {
        bail!(InputError(format!("unknown config key `{key}`")));
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Loads `path` (if any), applies overrides in order and validates the
/// result. Unknown keys in the file or in overrides are rejected.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| InputError(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| InputError(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let defaults = defaults_table();
    check_known(&table, &defaults, "")?;
    for o in overrides {
        apply_override(&mut table, &defaults, o)?;
    }
    let config: PipelineConfig = table
        .try_into()
        .map_err(|e| InputError(format!("invalid config: {e}")))?;
    config
        .experiment
        .validate()
        .map_err(|e| InputError(format!("invalid config: {e}")))?;
    Ok(config)
}

fn check_known(table: &toml::Table, defaults: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let Some(d) = defaults.get(k) else {
            bail!(InputError(format!("unknown config key `{path}`")));
        };
        if let (Some(t), Some(dt)) = (v.as_table(), d.as_table()) {
            check_known(t, dt, &path)?;
        }
    }
    Ok(())
}

impl PipelineConfig {
    /// First 16 hex digits of the SHA-256 of the serialized settings that
    /// can change results; file locations and the worker count are left out.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.jobs = 0;
        let text = toml::to_string(&c).context("serializing config")?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let c = load(
            None,
            &[
                "exemplar.exemplars_per_ur_ne=3".into(),
                "seed=9".into(),
                "rescore.neural_interp_lambda=0.25".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.experiment.exemplar.exemplars_per_ur_ne, 3);
        assert_eq!(c.seed, 9);
        assert_eq!(c.experiment.rescore.neural_interp_lambda, 0.25);
        assert!(load(None, &["exemplar.bogus=1".into()]).is_err());
        assert!(load(None, &["nosection.x=1".into()]).is_err());
        assert!(load(None, &["seed".into()]).is_err());
    }

    #[test]
    fn hash_tracks_settings() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.jobs = 4;
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn default_config_round_trips() {
        let mut c = PipelineConfig::default();
        c.paths.train = Some("t.txt".into());
        let text = c.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
