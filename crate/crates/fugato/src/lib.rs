//! Note-sequence modelling toolkit.
//!
//! The pipeline has four stages:
//!
//! 1. **Codec** ([`midi`]): read and write Standard MIDI Files.
//! 2. **Normalizer** ([`alphabet`], [`score`], [`normalize`]): turn MIDI
//!    into sequences of (timing, duration, pitch) indices over discrete
//!    vocabularies, and back.
//! 3. **Model & trainer** ([`model`], [`trainer`], [`checkpoint`]): a
//!    three-layer recurrent network over those triples, trained with
//!    truncated backpropagation through time.
//! 4. **Generator** ([`generate`]): sample new scores from a trained model
//!    and export them as MIDI.
//!
//! The [`cli`] module implements the `fugato` command-line tool on top.

pub mod alphabet;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod generate;
pub mod midi;
pub mod model;
pub mod normalize;
pub mod score;
pub mod trainer;

pub use error::{Error, Result};
