//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped
//! by the pipeline stage that raises them so callers (notably the CLI) can
//! distinguish usage problems from malformed data.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the codec, normalizer, model, trainer and generator.
#[derive(Debug, Error)]
pub enum Error {
    /// Structurally malformed MIDI input; `offset` is the byte position in
    /// the input buffer where parsing failed.
    #[error("malformed MIDI at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    /// Well-formed MIDI that uses a feature outside the supported subset
    /// (format 2 files, SMPTE divisions, ...).
    #[error("unsupported MIDI feature: {0}")]
    UnsupportedMidi(String),

    /// A MIDI event value that cannot be written to a file (pitch > 127,
    /// channel > 15, tempo outside 24 bits, ...).
    #[error("invalid MIDI event: {0}")]
    InvalidEvent(String),

    /// A value does not fit the 28-bit variable-length quantity range.
    #[error("value {0} exceeds the 28-bit variable-length-quantity range")]
    VlqOutOfRange(u64),

    /// Invalid alphabet definition (empty, unsorted, non-positive values...).
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    /// An operation that needs at least one note received an empty score.
    #[error("empty score: {0}")]
    EmptyScore(String),

    /// Malformed normalized-score text.
    #[error("score text, line {line}: {message}")]
    ScoreFormat { line: usize, message: String },

    /// A score index is outside its alphabet.
    #[error("note {note}: {message}")]
    IndexOutOfRange { note: usize, message: String },

    /// Invalid configuration value (bad hyperparameter, bad CLI argument).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A transposition shift that would push a pitch outside the alphabet.
    #[error("pitch shift {shift} outside the legal range [{min}, {max}]")]
    ShiftOutOfBounds { shift: i32, min: i32, max: i32 },

    /// Not enough scores to build the requested corpus split.
    #[error("corpus too small: need at least {need} scores, found {found}")]
    CorpusTooSmall { need: usize, found: usize },

    /// A corpus directory yielded no usable scores.
    #[error("no usable scores found under {}", .0.display())]
    EmptyCorpus(PathBuf),

    /// Numeric failure (non-finite loss or parameters).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// I/O failure with the path that caused it.
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by how the tool was invoked (flag values,
    /// hyperparameters) rather than by the data it was pointed at.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::InvalidAlphabet(_) | Error::ShiftOutOfBounds { .. }
        )
    }
}
