//! Flat TOML run configuration with `key=value` overrides.

use std::path::{Path, PathBuf};

use cmscore::alignment::AlignConfig;
use cmscore::synthdata::{AugmentToggles, DatasetConfig};
use cmscore::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Model,
    Random,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory written by `gen-data`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint read by the evaluation commands.
    pub checkpoint: Option<PathBuf>,

    pub train_pieces: usize,
    pub val_pieces: usize,
    pub test_pieces: usize,
    pub notes_per_piece: usize,
    pub pitch_range: usize,
    pub augment: String,

    pub kappa: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: u32,
    pub halvings: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub min_delta: f64,
    pub symmetric: bool,
    pub max_epochs: Option<u64>,

    pub eval_mode: EvalMode,
    pub votes_per_query: usize,
    /// Test recording to identify; every recording when unset.
    pub recording: Option<usize>,
    /// Test piece to align; every test piece when unset.
    pub piece: Option<u32>,
    pub hop_image: usize,
    pub hop_audio: usize,
    pub reference_width: f64,
    pub matrix_dump: bool,

    /// Augmentation rows of the ablation grid.
    pub ablate_rows: Vec<String>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        let t = TrainConfig::default();
        let a = AlignConfig::default();
        Self {
            seed: 0,
            dataset: None,
            checkpoint: None,
            train_pieces: d.train_pieces,
            val_pieces: d.val_pieces,
            test_pieces: d.test_pieces,
            notes_per_piece: d.notes_per_piece,
            pitch_range: d.pitch_range,
            augment: "full".into(),
            kappa: t.kappa,
            margin: t.margin,
            batch_size: t.batch_size,
            lr: t.lr,
            patience: t.patience,
            halvings: t.halvings,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            min_delta: t.min_delta,
            symmetric: t.symmetric,
            max_epochs: t.max_epochs,
            eval_mode: EvalMode::Model,
            votes_per_query: 25,
            recording: None,
            piece: None,
            hop_image: a.hop_image,
            hop_audio: a.hop_audio,
            reference_width: a.reference_width,
            matrix_dump: false,
            ablate_rows: vec!["none".into(), "full".into()],
            ablate_seeds: vec![0, 1, 2],
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// rejects unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(CliError::Usage(format!("config must be flat, `{k}` is a table")));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.augment_toggles()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn augment_toggles(&self) -> Result<AugmentToggles, CliError> {
        AugmentToggles::parse(&self.augment).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        Ok(DatasetConfig {
            train_pieces: self.train_pieces,
            val_pieces: self.val_pieces,
            test_pieces: self.test_pieces,
            notes_per_piece: self.notes_per_piece,
            pitch_range: self.pitch_range,
            augment: self.augment_toggles()?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            margin: self.margin,
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
            halvings: self.halvings,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            min_delta: self.min_delta,
            symmetric: self.symmetric,
            kappa: self.kappa,
            max_epochs: self.max_epochs,
            seed: self.seed,
            augment: self.augment_toggles()?,
        })
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            hop_image: self.hop_image,
            hop_audio: self.hop_audio,
            reference_width: self.reference_width,
        }
    }
}
