//! Layered run configuration: preset defaults, a sectioned TOML file, then
//! command-line flag overrides — later layers win. Unknown keys are rejected
//! and cross-field consistency is checked before any compute starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tripletgen::balance::BalanceMode;
use tripletgen::data::ToyWorldConfig;
use tripletgen::diffusion::{DenoiserConfig, DenoiserVariant, OptimizerKind, ScheduleKind};
use tripletgen::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// "toy" or "annotations".
    pub source: String,
    pub annotation_path: String,
    pub frames_dir: String,
    /// Frames generated by `make-toy`.
    pub n_frames: usize,
    pub toy: ToyWorldConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "toy".into(),
            annotation_path: String::new(),
            frames_dir: String::new(),
            n_frames: 4800,
            toy: ToyWorldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    /// "builtin-learned", "builtin-hash", or "external-table".
    pub encoder: String,
    pub d: usize,
    pub l_max: usize,
    pub table_path: String,
    pub hash_seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            encoder: "builtin-learned".into(),
            d: 64,
            l_max: 8,
            table_path: String::new(),
            hash_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceConfig {
    pub mode: BalanceMode,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig { mode: BalanceMode::InstrumentBalanced }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub schedule: ScheduleKind,
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub base_size: usize,
    pub sr_scale: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub attention_levels: Vec<usize>,
    pub time_dim: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub sr_steps: u64,
    pub seed: u64,
    /// Classifier-free guidance scale at sampling; 0 disables.
    pub guidance: f64,
    /// Null-text dropout probability during training; 0 disables.
    pub null_dropout: f64,
    pub ema: bool,
    pub ema_decay: f64,
    pub checkpoint_every: u64,
    pub sample_grid_every: u64,
    /// Super-resolution stage without the text pathway (ablation variant).
    pub sr_unconditioned: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            schedule: ScheduleKind::Linear,
            t: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
            base_size: 16,
            sr_scale: 2,
            base_channels: 16,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            attention_levels: vec![1],
            time_dim: 64,
            optimizer: OptimizerKind::Adam,
            lr: 2e-3,
            batch_size: 4,
            steps: 20_000,
            sr_steps: 1500,
            seed: 0,
            guidance: 0.0,
            null_dropout: 0.0,
            ema: false,
            ema_decay: 0.999,
            checkpoint_every: 2000,
            sample_grid_every: 0,
            sr_unconditioned: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// "toy" or "table".
    pub extractor: String,
    pub n_real: usize,
    pub n_generated: usize,
    pub samples_per_triplet: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            extractor: "toy".into(),
            n_real: 256,
            n_generated: 256,
            samples_per_triplet: 3,
            seed: 0,
        }
    }
}

/// The full resolved configuration of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub text: TextConfig,
    pub balance: BalanceConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Desk-scale preset: trains and evaluates on one machine.
    pub fn desk() -> Self {
        RunConfig::default()
    }

    /// Paper-scale preset: 64→256 cascade, T=1000, batch 16, 300K iterations.
    /// Documented as requiring the real dataset and multi-GPU scale; the
    /// pipeline runs but is not sized for a desktop.
    pub fn paper() -> Self {
        RunConfig {
            data: DataConfig { source: "annotations".into(), ..DataConfig::default() },
            text: TextConfig { d: 512, l_max: 8, ..TextConfig::default() },
            diffusion: DiffusionConfig {
                schedule: ScheduleKind::Linear,
                t: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                base_size: 64,
                sr_scale: 4,
                base_channels: 64,
                channel_mults: vec![1, 2, 4, 4],
                blocks_per_level: 2,
                attention_levels: vec![1, 2, 3],
                time_dim: 256,
                optimizer: OptimizerKind::Adafactor,
                lr: 1e-4,
                batch_size: 16,
                steps: 300_000,
                sr_steps: 300_000,
                checkpoint_every: 10_000,
                ..DiffusionConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Load `path` over the preset: file keys override preset values, unknown
    /// keys are rejected.
    pub fn load_over(preset: RunConfig, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file_table: toml::Table = text.parse().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("invalid TOML: {e}"),
        })?;
        let base_text = toml::to_string(&preset).expect("config serializes");
        let mut base_table: toml::Table = base_text.parse().expect("round trip");
        for (k, v) in file_table {
            match base_table.get_mut(&k) {
                Some(slot) => merge_toml(slot, v),
                None => {
                    base_table.insert(k, v);
                }
            }
        }
        let merged = toml::to_string(&base_table).expect("merged serializes");
        toml::from_str(&merged).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn sr_size(&self) -> usize {
        self.diffusion.base_size * self.diffusion.sr_scale
    }

    /// Cross-field consistency; run before any compute.
    pub fn validate(&self) -> Result<()> {
        let d = &self.diffusion;
        if !matches!(self.data.source.as_str(), "toy" | "annotations") {
            return Err(Error::Config(format!(
                "data.source {:?} must be \"toy\" or \"annotations\"",
                self.data.source
            )));
        }
        if !matches!(
            self.text.encoder.as_str(),
            "builtin-learned" | "builtin-hash" | "external-table"
        ) {
            return Err(Error::Config(format!(
                "text.encoder {:?} unknown",
                self.text.encoder
            )));
        }
        if self.text.encoder == "external-table" && self.text.table_path.is_empty() {
            return Err(Error::Config("external-table encoder needs text.table_path".into()));
        }
        if d.sr_scale < 2 {
            return Err(Error::Config(format!("sr_scale {} must be >= 2", d.sr_scale)));
        }
        if self.data.source == "toy" {
            self.data.toy.validate()?;
            if self.data.toy.image_size != self.sr_size() {
                return Err(Error::Config(format!(
                    "toy.image_size {} must equal base_size x sr_scale = {}",
                    self.data.toy.image_size,
                    self.sr_size()
                )));
            }
        }
        // both stages must build
        self.denoiser_config(Stage::Base, 1)?.validate()?;
        self.denoiser_config(Stage::Sr, 1)?.validate()?;
        tripletgen::diffusion::make_schedule(d.schedule, d.t, d.beta_start, d.beta_end)?;
        if d.batch_size == 0 || d.steps == 0 {
            return Err(Error::Config("batch_size and steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.null_dropout) {
            return Err(Error::Config("null_dropout outside [0,1]".into()));
        }
        if self.eval.extractor != "toy" && self.eval.extractor != "table" {
            return Err(Error::Config(format!(
                "eval.extractor {:?} unknown",
                self.eval.extractor
            )));
        }
        Ok(())
    }

    pub fn denoiser_config(&self, stage: Stage, vocab_size: usize) -> Result<DenoiserConfig> {
        let d = &self.diffusion;
        let (variant, image_size, text_conditioned) = match stage {
            Stage::Base => (DenoiserVariant::Base, d.base_size, true),
            Stage::Sr => (
                DenoiserVariant::SuperResolution { scale: d.sr_scale },
                self.sr_size(),
                !d.sr_unconditioned,
            ),
        };
        Ok(DenoiserConfig {
            variant,
            image_size,
            base_channels: d.base_channels,
            channel_mults: d.channel_mults.clone(),
            blocks_per_level: d.blocks_per_level,
            attention_levels: d.attention_levels.clone(),
            text_dim: self.text.d,
            time_dim: d.time_dim,
            l_max: self.text.l_max,
            vocab_size,
            text_conditioned,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Base,
    Sr,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Stage::Base),
            "sr" => Ok(Stage::Sr),
            other => Err(Error::Config(format!("stage {other:?} must be base or sr"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Base => "base",
            Stage::Sr => "sr",
        })
    }
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_validates() {
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn paper_preset_validates() {
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn file_overrides_preset_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[diffusion]\nsteps = 7\n").unwrap();
        let cfg = RunConfig::load_over(RunConfig::desk(), &p).unwrap();
        assert_eq!(cfg.diffusion.steps, 7);
        assert_eq!(cfg.diffusion.base_size, 16);

        std::fs::write(&p, "[diffusion]\nnot_a_key = 1\n").unwrap();
        assert!(RunConfig::load_over(RunConfig::desk(), &p).is_err());
    }

    #[test]
    fn cross_field_inconsistency_caught() {
        let mut cfg = RunConfig::desk();
        cfg.data.toy.image_size = 48;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.diffusion.base_size = 12; // not divisible by 2^(levels-1)... still is; break harder
        cfg.diffusion.channel_mults = vec![1, 2, 4];
        assert!(cfg.validate().is_err());
    }
}
