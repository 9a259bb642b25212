//! Layered run configuration: built-in defaults, then the optional TOML
//! file, then `--set key=value` overrides, then dedicated flags. The fully
//! resolved configuration is written next to every run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hazebridge::data::SynthParams;
use hazebridge::model::{BranchMask, ModelConfig, PredictorMode};
use hazebridge::train::{PseudoLabelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub sample: SampleSection,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
            sample: SampleSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub t_steps: usize,
    pub s: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { t_steps: 50, s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub groups: usize,
    pub time_embed_factor: usize,
    pub central: bool,
    pub angular: bool,
    pub horizontal: bool,
    pub vertical: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(PredictorMode::Single);
        Self {
            latent_channels: desk.latent_channels,
            base_channels: desk.base_channels,
            levels: desk.levels,
            groups: desk.groups,
            time_embed_factor: desk.time_embed_factor,
            central: true,
            angular: true,
            horizontal: true,
            vertical: true,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, mode: PredictorMode) -> ModelConfig {
        ModelConfig {
            latent_channels: self.latent_channels,
            base_channels: self.base_channels,
            levels: self.levels,
            groups: self.groups,
            time_embed_factor: self.time_embed_factor,
            mode,
            branches: BranchMask {
                central: self.central,
                angular: self.angular,
                horizontal: self.horizontal,
                vertical: self.vertical,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub dataset: PathBuf,
    pub split_ratio: [u32; 2],
    pub cache_pseudo_labels: bool,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub pseudo_labels: PseudoLabelConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            batch_size: d.batch_size,
            stage1_iters: d.stage1_iters,
            stage2_iters: d.stage2_iters,
            dataset: d.dataset,
            split_ratio: d.split_ratio,
            cache_pseudo_labels: d.cache_pseudo_labels,
            checkpoint_every: d.checkpoint_every,
            log_every: d.log_every,
            pseudo_labels: d.pseudo_labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub size: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub atmosphere_lo: f64,
    pub atmosphere_hi: f64,
    pub test_count: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            count: p.count,
            size: p.size,
            beta_lo: p.beta_lo,
            beta_hi: p.beta_hi,
            atmosphere_lo: p.atmosphere_lo,
            atmosphere_hi: p.atmosphere_hi,
            test_count: 16,
        }
    }
}

impl SynthSection {
    pub fn to_params(&self) -> SynthParams {
        SynthParams {
            count: self.count,
            size: self.size,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
            atmosphere_lo: self.atmosphere_lo,
            atmosphere_hi: self.atmosphere_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub sampler: String,
    /// Use merged per-block kernels during inference.
    pub merged: bool,
    /// Override the variance scale at sampling time (ablation knob);
    /// defaults to the checkpoint's value.
    pub s: Option<f64>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            steps: 10,
            sampler: "posterior".into(),
            merged: true,
            s: None,
        }
    }
}

impl RootConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            t_steps: self.schedule.t_steps,
            s: self.schedule.s,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            stage1_iters: self.train.stage1_iters,
            stage2_iters: self.train.stage2_iters,
            seed: self.seed,
            pseudo_labels: self.train.pseudo_labels.clone(),
            dataset: self.train.dataset.clone(),
            split_ratio: self.train.split_ratio,
            cache_pseudo_labels: self.train.cache_pseudo_labels,
            checkpoint_every: self.train.checkpoint_every,
            log_every: self.train.log_every,
        }
    }
}

/// Apply one `key=value` override onto a TOML document. The key is a dotted
/// path; the value is parsed as a TOML literal and falls back to a string.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not key=value"))?;
    // Parse the value as a TOML literal (number, bool, array, quoted
    // string); bare words fall back to strings.
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override `{spec}` has an empty path segment");
        }
        let table = node
            .as_table_mut()
            .with_context(|| format!("`{key}`: `{part}` is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

/// Resolve the configuration with precedence:
/// override flags > `--set` pairs > config file > built-in defaults.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed_flag: Option<u64>,
) -> Result<RootConfig> {
    let mut doc: toml::Value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            text.parse()
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Value::Table(Default::default()),
    };
    for spec in sets {
        apply_override(&mut doc, spec)?;
    }
    let mut config: RootConfig = doc
        .try_into()
        .context("configuration does not match the documented keys")?;
    if let Some(seed) = seed_flag {
        config.seed = seed;
    }
    Ok(config)
}

/// Write the resolved snapshot alongside a run's outputs.
pub fn write_snapshot(config: &RootConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let text = toml::to_string_pretty(config)?;
    std::fs::write(out_dir.join("resolved_config.toml"), text)
        .with_context(|| format!("writing snapshot in {}", out_dir.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every leaf key: (dotted path, file value, override value, getter).
    fn key_table() -> Vec<(&'static str, &'static str, &'static str, fn(&RootConfig) -> String)> {
        vec![
            ("seed", "7", "9", |c| c.seed.to_string()),
            ("schedule.t_steps", "20", "30", |c| c.schedule.t_steps.to_string()),
            ("schedule.s", "0.5", "2.0", |c| c.schedule.s.to_string()),
            ("model.latent_channels", "1", "3", |c| c.model.latent_channels.to_string()),
            ("model.base_channels", "8", "24", |c| c.model.base_channels.to_string()),
            ("model.levels", "3", "4", |c| c.model.levels.to_string()),
            ("model.groups", "4", "8", |c| c.model.groups.to_string()),
            ("model.time_embed_factor", "2", "4", |c| c.model.time_embed_factor.to_string()),
            ("model.central", "false", "true", |c| c.model.central.to_string()),
            ("model.angular", "false", "true", |c| c.model.angular.to_string()),
            ("model.horizontal", "false", "true", |c| c.model.horizontal.to_string()),
            ("model.vertical", "false", "true", |c| c.model.vertical.to_string()),
            ("train.lr", "0.001", "0.002", |c| c.train.lr.to_string()),
            ("train.batch_size", "2", "4", |c| c.train.batch_size.to_string()),
            ("train.stage1_iters", "10", "20", |c| c.train.stage1_iters.to_string()),
            ("train.stage2_iters", "10", "20", |c| c.train.stage2_iters.to_string()),
            ("train.dataset", "\"a\"", "\"b\"", |c| {
                c.train.dataset.display().to_string()
            }),
            ("train.cache_pseudo_labels", "true", "false", |c| {
                c.train.cache_pseudo_labels.to_string()
            }),
            ("train.checkpoint_every", "5", "7", |c| c.train.checkpoint_every.to_string()),
            ("train.log_every", "5", "7", |c| c.train.log_every.to_string()),
            ("synth.count", "8", "16", |c| c.synth.count.to_string()),
            ("synth.size", "16", "32", |c| c.synth.size.to_string()),
            ("synth.beta_lo", "0.4", "0.5", |c| c.synth.beta_lo.to_string()),
            ("synth.beta_hi", "2.0", "2.5", |c| c.synth.beta_hi.to_string()),
            ("synth.atmosphere_lo", "0.6", "0.65", |c| c.synth.atmosphere_lo.to_string()),
            ("synth.atmosphere_hi", "0.9", "0.95", |c| c.synth.atmosphere_hi.to_string()),
            ("synth.test_count", "4", "8", |c| c.synth.test_count.to_string()),
            ("sample.steps", "5", "25", |c| c.sample.steps.to_string()),
            ("sample.sampler", "\"remarginalize\"", "\"paper-literal\"", |c| {
                c.sample.sampler.clone()
            }),
            ("sample.merged", "false", "true", |c| c.sample.merged.to_string()),
        ]
    }

    fn strip(v: &str) -> String {
        v.trim_matches('"').to_string()
    }

    fn same(got: &str, want: &str) -> bool {
        match (got.parse::<f64>(), want.parse::<f64>()) {
            (Ok(a), Ok(b)) => a == b,
            _ => got == want,
        }
    }

    #[test]
    fn precedence_per_key() {
        let dir = tempfile::tempdir().unwrap();
        for (key, file_val, set_val, get) in key_table() {
            // default when absent everywhere
            let defaults = resolve(None, &[], None).unwrap();
            let default_str = get(&defaults);

            // file value beats built-in default
            let path = dir.path().join("cfg.toml");
            let (section, leaf) = match key.rsplit_once('.') {
                Some((s, l)) => (Some(s), l),
                None => (None, key),
            };
            let text = match section {
                Some(s) => format!("[{s}]\n{leaf} = {file_val}\n"),
                None => format!("{leaf} = {file_val}\n"),
            };
            std::fs::write(&path, text).unwrap();
            let from_file = resolve(Some(&path), &[], None).unwrap();
            assert!(
                same(&get(&from_file), &strip(file_val)),
                "file layer for {key}: {} vs {}",
                get(&from_file),
                strip(file_val)
            );
            assert_ne!(get(&from_file), default_str, "test must change {key}");

            // --set beats the file
            let with_set =
                resolve(Some(&path), &[format!("{key}={}", strip(set_val))], None).unwrap();
            assert!(
                same(&get(&with_set), &strip(set_val)),
                "set layer for {key}: {} vs {}",
                get(&with_set),
                strip(set_val)
            );
        }
    }

    #[test]
    fn seed_flag_beats_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "seed = 5\n").unwrap();
        let cfg = resolve(Some(&path), &["seed=6".into()], Some(7)).unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        assert!(resolve(None, &["no_equals".into()], None).is_err());
        assert!(resolve(None, &["schedule.t_steps=notanumber".into()], None).is_err());
        assert!(resolve(None, &["unknown_key=1".into()], None).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = resolve(None, &["train.lr=0.0003".into()], Some(11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(&cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
        let back: RootConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
