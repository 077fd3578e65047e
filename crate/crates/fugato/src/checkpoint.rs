//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header, then the tensor
//! payload — every parameter, first-moment and second-moment value as a
//! little-endian `f64` in the fixed parameter-slice order. The header
//! carries everything needed to rebuild the tensors' shapes and to resume
//! training: model and trainer configuration, the alphabets, the first-note
//! distribution, validation metrics, the epoch counter and the optimizer
//! step. Serialization is struct-based (no maps), so the same checkpoint
//! always produces the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{format_quarters, parse_quarters, Alphabets, DurationAlphabet, PitchAlphabet};
use crate::error::{Error, Result};
use crate::generate::FirstNoteTable;
use crate::model::optim::AdamState;
use crate::model::{ModelConfig, ModelParams};
use crate::trainer::{AccuracyReport, TrainConfig};

const MAGIC: &[u8; 8] = b"FGTCKPT\0";
const VERSION: u32 = 1;

/// A complete training snapshot: everything needed to generate from the
/// model or to continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub alphabets: Alphabets,
    pub first_notes: FirstNoteTable,
    /// Validation metrics at save time.
    pub metrics: AccuracyReport,
    /// Completed epochs.
    pub epoch: usize,
}

/// JSON header; field order is the serialization order.
#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    alphabets: AlphabetSpec,
    first_notes: FirstNoteTable,
    metrics: AccuracyReport,
    epoch: usize,
    adam_step: u64,
    /// Total `f64` values in the payload (parameters + both moments).
    value_count: usize,
}

/// Portable description of the alphabets: durations as exact fractions of
/// a quarter note, pitches as a range of MIDI keys.
#[derive(Serialize, Deserialize)]
struct AlphabetSpec {
    durations: Vec<String>,
    pitch_lowest: u8,
    pitch_count: usize,
}

impl AlphabetSpec {
    fn from_alphabets(alphabets: &Alphabets) -> Self {
        AlphabetSpec {
            durations: alphabets
                .durations()
                .values()
                .iter()
                .map(|&v| format_quarters(v))
                .collect(),
            pitch_lowest: alphabets.pitches().lowest(),
            pitch_count: alphabets.pitches().len(),
        }
    }

    fn to_alphabets(&self) -> Result<Alphabets> {
        let durations = self
            .durations
            .iter()
            .map(|s| parse_quarters(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Alphabets::from_parts(
            DurationAlphabet::new(durations)?,
            PitchAlphabet::new(self.pitch_lowest, self.pitch_count)?,
        ))
    }
}

fn append_values(buffer: &mut Vec<u8>, params: &ModelParams) {
    for slice in params.slices() {
        for &value in slice {
            buffer.extend_from_slice(&value.to_le_bytes());
        }
    }
}

fn read_values(payload: &[u8], cursor: &mut usize, params: &mut ModelParams) {
    for slice in params.slices_mut() {
        for value in slice {
            let bytes: [u8; 8] = payload[*cursor..*cursor + 8].try_into().unwrap();
            *value = f64::from_le_bytes(bytes);
            *cursor += 8;
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = Header {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            alphabets: AlphabetSpec::from_alphabets(&self.alphabets),
            first_notes: self.first_notes.clone(),
            metrics: self.metrics,
            epoch: self.epoch,
            adam_step: self.adam.step,
            value_count: 3 * self.params.param_count(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;
        let header_len = u32::try_from(header_json.len())
            .map_err(|_| Error::Checkpoint("header too large".into()))?;

        let mut bytes =
            Vec::with_capacity(16 + header_json.len() + header.value_count * 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&header_len.to_le_bytes());
        bytes.extend_from_slice(&header_json);
        append_values(&mut bytes, &self.params);
        append_values(&mut bytes, &self.adam.first_moment);
        append_values(&mut bytes, &self.adam.second_moment);
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 16 {
            return Err(fail("file too short for a checkpoint".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fail(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fail("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| fail(format!("malformed header: {e}")))?;

        header.model_config.validate()?;
        header.train_config.validate()?;
        let alphabets = header.alphabets.to_alphabets()?;
        let dims = header.model_config.dims();
        if dims.alphabets.timings != alphabets.timings().len()
            || dims.alphabets.durations != alphabets.durations().len()
            || dims.alphabets.pitches != alphabets.pitches().len()
        {
            return Err(fail("model dimensions disagree with the stored alphabets".into()));
        }
        header.first_notes.validate(&dims.alphabets)?;

        let mut params = ModelParams::zeros(dims);
        let expected_values = 3 * params.param_count();
        if header.value_count != expected_values {
            return Err(fail(format!(
                "header declares {} values but the model shape needs {}",
                header.value_count, expected_values
            )));
        }
        let payload = &bytes[payload_start..];
        if payload.len() != expected_values * 8 {
            return Err(fail(format!(
                "tensor payload is {} bytes, expected {}",
                payload.len(),
                expected_values * 8
            )));
        }
        let mut adam = AdamState::new(dims);
        adam.step = header.adam_step;
        let mut cursor = 0;
        read_values(payload, &mut cursor, &mut params);
        read_values(payload, &mut cursor, &mut adam.first_moment);
        read_values(payload, &mut cursor, &mut adam.second_moment);
        if !params.is_finite() || !adam.first_moment.is_finite() || !adam.second_moment.is_finite()
        {
            return Err(fail("non-finite values in tensor payload".into()));
        }

        Ok(Checkpoint {
            params,
            adam,
            model_config: header.model_config,
            train_config: header.train_config,
            alphabets,
            first_notes: header.first_notes,
            metrics: header.metrics,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn validate(&self) -> Result<()> {
        if self.params.dims != self.model_config.dims() {
            return Err(Error::Checkpoint(
                "parameters disagree with the model configuration".into(),
            ));
        }
        if self.adam.first_moment.dims != self.params.dims
            || self.adam.second_moment.dims != self.params.dims
        {
            return Err(Error::Checkpoint(
                "optimizer moments disagree with the parameter shapes".into(),
            ));
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::optim::{adam_step, AdamConfig};
    use crate::model::AlphabetDims;
    use crate::score::{NoteEvent, Score};

    fn sample_checkpoint() -> Checkpoint {
        let model_config = ModelConfig {
            layer_sizes: [3, 4, 5],
            dropout_rate: 0.25,
            alphabets: AlphabetDims::standard(),
            seed: 9,
            aux_supervision: true,
        };
        let params = ModelParams::init(&model_config).unwrap();
        let mut adam = AdamState::new(params.dims);
        // Make the moments non-trivial so the round trip covers them.
        let mut trained = params.clone();
        let mut pseudo_grad = params.zeros_like();
        for slice in pseudo_grad.slices_mut() {
            for (i, v) in slice.iter_mut().enumerate() {
                *v = (i as f64 * 0.37).sin() * 0.1;
            }
        }
        adam_step(&mut trained, &pseudo_grad, &mut adam, &AdamConfig::default()).unwrap();
        let scores = vec![Score::new("s", 192, vec![NoteEvent::new(0, 3, 40); 2])];
        Checkpoint {
            params: trained,
            adam,
            model_config,
            train_config: TrainConfig::default(),
            alphabets: Alphabets::standard(),
            first_notes: FirstNoteTable::from_scores(&scores).unwrap(),
            metrics: AccuracyReport {
                timing: 0.5,
                duration: 0.25,
                pitch: 0.75,
                nll: 1.5,
                transitions: 42,
            },
            epoch: 7,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let original = sample_checkpoint();
        let bytes = original.to_bytes().unwrap();
        let restored = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(original, restored);
    }

    #[test]
    fn file_round_trip_and_deterministic_bytes() {
        let checkpoint = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        checkpoint.save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap();
        assert_eq!(checkpoint, restored);
        assert_eq!(checkpoint.to_bytes().unwrap(), restored.to_bytes().unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let bytes = sample_checkpoint().to_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xFF;
        assert!(matches!(
            Checkpoint::from_bytes(&bad_magic),
            Err(Error::Checkpoint(msg)) if msg.contains("magic")
        ));

        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bad_version),
            Err(Error::Checkpoint(msg)) if msg.contains("version")
        ));

        assert!(Checkpoint::from_bytes(&bytes[..8]).is_err());
    }

    #[test]
    fn rejects_truncated_and_oversized_payloads() {
        let bytes = sample_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0u8; 8]);
        assert!(Checkpoint::from_bytes(&padded).is_err());
    }

    #[test]
    fn rejects_header_payload_shape_mismatch() {
        // Grow a layer in the header without touching the payload: the
        // declared value count no longer matches the shape.
        let bytes = sample_checkpoint().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[16..]).into_owned();
        let patched = text.replacen("[3,4,5]", "[3,4,6]", 1);
        assert_ne!(text, patched, "expected the layer sizes in the header");
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut rebuilt = bytes[..16].to_vec();
        rebuilt.extend_from_slice(&patched.as_bytes()[..header_len]);
        rebuilt.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(
            Checkpoint::from_bytes(&rebuilt),
            Err(Error::Checkpoint(msg)) if msg.contains("values")
        ));
    }

    #[test]
    fn rejects_non_finite_tensors() {
        let bytes = sample_checkpoint().to_bytes().unwrap();
        let mut bad = bytes.clone();
        let end = bad.len();
        bad[end - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Checkpoint(msg)) if msg.contains("finite")
        ));
    }

    #[test]
    fn rejects_garbage_header_json() {
        let checkpoint = sample_checkpoint();
        let bytes = checkpoint.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[20] = b'!';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
