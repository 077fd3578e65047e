//! TOML run configuration.
//!
//! One file configures the whole pipeline; every field has a default, so an
//! empty (or absent) file is valid. Command-line flags override file values.
//! A single `seed` drives parameter initialization, the corpus split,
//! training randomness and generation.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! layer_sizes = [64, 128, 256]
//! dropout = 0.3
//! aux_supervision = true
//!
//! [training]
//! epochs = 50
//! batch_songs = 32
//! window_notes = 64
//! valid_fraction = 0.1
//! learning_rate = 0.001
//! clip_norm = 1.0
//! augment = true
//!
//! [generation]
//! length = 64
//! top_m = 3
//! ppq = 192
//! bpm = 120.0
//! velocity = 80
//!
//! [alphabet]
//! durations = ["1/4", "1/2", "1"]
//! pitch_lowest = 21
//! pitch_count = 88
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{format_quarters, parse_quarters, Alphabets, DurationAlphabet, PitchAlphabet};
use crate::error::{Error, Result};
use crate::generate::GenConfig;
use crate::model::optim::AdamConfig;
use crate::model::{AlphabetDims, ModelConfig};
use crate::trainer::TrainConfig;

/// Everything a run needs, as read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for initialization, splitting, training and sampling.
    pub seed: u64,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub generation: GenerationSection,
    pub alphabet: AlphabetSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden units of the three recurrent layers.
    pub layer_sizes: [usize; 3],
    pub dropout: f64,
    pub aux_supervision: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let reference = ModelConfig::default();
        ModelSection {
            layer_sizes: reference.layer_sizes,
            dropout: reference.dropout_rate,
            aux_supervision: reference.aux_supervision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_songs: usize,
    pub window_notes: usize,
    pub valid_fraction: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub augment: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let reference = TrainConfig::default();
        TrainingSection {
            epochs: reference.epochs,
            batch_songs: reference.batch_songs,
            window_notes: reference.window_notes,
            valid_fraction: reference.valid_fraction,
            learning_rate: reference.optimizer.learning_rate,
            clip_norm: reference.clip_norm,
            augment: reference.augment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub length: usize,
    pub top_m: usize,
    pub ppq: u16,
    pub bpm: f64,
    pub velocity: u8,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let reference = GenConfig::default();
        GenerationSection {
            length: reference.length,
            top_m: reference.top_m,
            ppq: reference.ppq,
            bpm: reference.bpm,
            velocity: reference.velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphabetSection {
    /// Note durations as exact fractions of a quarter note (`"3/8"`, `"2"`).
    pub durations: Vec<String>,
    /// Lowest MIDI key of the pitch vocabulary.
    pub pitch_lowest: u8,
    /// Number of consecutive keys.
    pub pitch_count: usize,
}

impl Default for AlphabetSection {
    fn default() -> Self {
        let reference = Alphabets::standard();
        AlphabetSection {
            durations: reference
                .durations()
                .values()
                .iter()
                .map(|&v| format_quarters(v))
                .collect(),
            pitch_lowest: reference.pitches().lowest(),
            pitch_count: reference.pitches().len(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })
    }

    /// Build the vocabularies described by the `[alphabet]` section.
    pub fn alphabets(&self) -> Result<Alphabets> {
        let durations = self
            .alphabet
            .durations
            .iter()
            .map(|s| parse_quarters(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Alphabets::from_parts(
            DurationAlphabet::new(durations)?,
            PitchAlphabet::new(self.alphabet.pitch_lowest, self.alphabet.pitch_count)?,
        ))
    }

    /// Assemble and validate the model configuration.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let alphabets = self.alphabets()?;
        let config = ModelConfig {
            layer_sizes: self.model.layer_sizes,
            dropout_rate: self.model.dropout,
            alphabets: AlphabetDims {
                timings: alphabets.timings().len(),
                durations: alphabets.durations().len(),
                pitches: alphabets.pitches().len(),
            },
            seed: self.seed,
            aux_supervision: self.model.aux_supervision,
        };
        config.validate()?;
        Ok(config)
    }

    /// Assemble and validate the training configuration.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.training.epochs,
            batch_songs: self.training.batch_songs,
            window_notes: self.training.window_notes,
            valid_fraction: self.training.valid_fraction,
            optimizer: AdamConfig {
                learning_rate: self.training.learning_rate,
                ..AdamConfig::default()
            },
            clip_norm: self.training.clip_norm,
            augment: self.training.augment,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Assemble and validate the generation configuration.
    pub fn gen_config(&self) -> Result<GenConfig> {
        let config = GenConfig {
            length: self.generation.length,
            top_m: self.generation.top_m,
            seed: self.seed,
            ppq: self.generation.ppq,
            bpm: self.generation.bpm,
            velocity: self.generation.velocity,
        };
        config.validate()?;
        Ok(config)
    }
}
