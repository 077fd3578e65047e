//! Sampling new scores from a trained model.
//!
//! Generation seeds the recurrent state with a first note drawn from the
//! training corpus' first-note distribution, then repeats the three-substep
//! transition: sample a timing from the network, feed it back, sample a
//! duration, feed it back, sample a pitch. Each draw is restricted to the
//! `m` most probable symbols (renormalized), which trades a little entropy
//! for locally coherent output. The finished score is put in canonical
//! order so exporting to MIDI and re-normalizing reproduces it exactly.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::midi::{serialize_midi, MidiFile};
use crate::model::{forward_substep, softmax, AlphabetDims, ModelState, SubstepInput};
use crate::normalize::{canonicalize, denormalize};
use crate::score::{NoteEvent, Score};

/// Empirical distribution of opening notes, collected from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstNoteTable {
    entries: Vec<FirstNoteEntry>,
    total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct FirstNoteEntry {
    timing: usize,
    duration: usize,
    pitch: usize,
    count: u64,
}

impl FirstNoteTable {
    /// Count the first note of every score. Scores without notes are
    /// skipped with a warning; an empty result is an error.
    pub fn from_scores(scores: &[Score]) -> Result<Self> {
        let mut counts: std::collections::BTreeMap<(usize, usize, usize), u64> =
            std::collections::BTreeMap::new();
        for score in scores {
            match score.notes.first() {
                Some(note) => {
                    *counts.entry((note.timing, note.duration, note.pitch)).or_insert(0) += 1;
                }
                None => log::warn!("score `{}` is empty; not counted as an opening", score.name),
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyScore(
                "no opening notes: every score in the set is empty".into(),
            ));
        }
        let entries: Vec<FirstNoteEntry> = counts
            .into_iter()
            .map(|((timing, duration, pitch), count)| FirstNoteEntry {
                timing,
                duration,
                pitch,
                count,
            })
            .collect();
        let total = entries.iter().map(|e| e.count).sum();
        Ok(FirstNoteTable { entries, total })
    }

    /// Openings and their probabilities, in deterministic index order.
    pub fn probabilities(&self) -> Vec<(NoteEvent, f64)> {
        self.entries
            .iter()
            .map(|e| {
                (
                    NoteEvent::new(e.timing, e.duration, e.pitch),
                    e.count as f64 / self.total as f64,
                )
            })
            .collect()
    }

    /// Draw an opening note proportionally to its corpus frequency.
    pub fn sample(&self, rng: &mut impl Rng) -> NoteEvent {
        let mut remaining = rng.random_range(0..self.total);
        for entry in &self.entries {
            if remaining < entry.count {
                return NoteEvent::new(entry.timing, entry.duration, entry.pitch);
            }
            remaining -= entry.count;
        }
        // Unreachable: counts sum to `total`.
        let last = self.entries.last().expect("table is never empty");
        NoteEvent::new(last.timing, last.duration, last.pitch)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Check every entry against the vocabulary sizes.
    pub fn validate(&self, dims: &AlphabetDims) -> Result<()> {
        if self.entries.is_empty() || self.total == 0 {
            return Err(Error::Checkpoint("empty first-note table".into()));
        }
        if self.total != self.entries.iter().map(|e| e.count).sum::<u64>() {
            return Err(Error::Checkpoint("first-note counts do not sum to the total".into()));
        }
        for entry in &self.entries {
            if entry.timing >= dims.timings
                || entry.duration >= dims.durations
                || entry.pitch >= dims.pitches
            {
                return Err(Error::Checkpoint(format!(
                    "first-note entry ({}, {}, {}) outside vocabularies {}/{}/{}",
                    entry.timing,
                    entry.duration,
                    entry.pitch,
                    dims.timings,
                    dims.durations,
                    dims.pitches
                )));
            }
            if entry.count == 0 {
                return Err(Error::Checkpoint("first-note entry with zero count".into()));
            }
        }
        Ok(())
    }
}

/// Restricted sampling: keep the `m` most probable indices (ties broken
/// toward the lower index), renormalize, and draw.
///
/// Returns the drawn index and the allowed set in probability order.
/// `m = 1` is exactly argmax; `m >= len` is unrestricted sampling.
pub fn sample_top_m(
    probs: &Array1<f64>,
    m: usize,
    rng: &mut impl Rng,
) -> Result<(usize, Vec<usize>)> {
    if m == 0 {
        return Err(Error::InvalidConfig("top-m needs m >= 1".into()));
    }
    if probs.is_empty() {
        return Err(Error::Numeric("cannot sample from an empty distribution".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Numeric("distribution has negative or non-finite entries".into()));
    }

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        probs[b].partial_cmp(&probs[a]).expect("finiteness checked").then(a.cmp(&b))
    });
    order.truncate(m);
    let allowed = order;

    let mass: f64 = allowed.iter().map(|&i| probs[i]).sum();
    if mass <= 0.0 {
        return Err(Error::Numeric("top-m candidates have zero probability mass".into()));
    }
    let mut remaining = rng.random::<f64>() * mass;
    for &index in &allowed {
        remaining -= probs[index];
        if remaining <= 0.0 {
            return Ok((index, allowed));
        }
    }
    // Rounding fallthrough: return the least probable candidate.
    let last = *allowed.last().expect("m >= 1");
    Ok((last, allowed))
}

/// Sampling settings and MIDI export parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Notes per generated score.
    pub length: usize,
    /// Size of the restricted candidate set at every draw.
    pub top_m: usize,
    pub seed: u64,
    /// Pulses per quarter for export; 192 renders the default duration
    /// alphabet exactly.
    pub ppq: u16,
    pub bpm: f64,
    pub velocity: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { length: 64, top_m: 3, seed: 0, ppq: 192, bpm: 120.0, velocity: 80 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidConfig("generation length must be positive".into()));
        }
        if self.top_m == 0 {
            return Err(Error::InvalidConfig("top-m must be at least 1".into()));
        }
        if self.ppq == 0 {
            return Err(Error::InvalidConfig("ppq must be positive".into()));
        }
        if !self.bpm.is_finite() || self.bpm <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bpm must be positive and finite, got {}",
                self.bpm
            )));
        }
        if self.velocity == 0 || self.velocity > 127 {
            return Err(Error::InvalidConfig(format!(
                "velocity {} outside 1..=127",
                self.velocity
            )));
        }
        Ok(())
    }
}

/// The candidate sets that were available at one sampled transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// The note as sampled (before canonical reordering).
    pub note: NoteEvent,
    pub allowed_timings: Vec<usize>,
    pub allowed_durations: Vec<usize>,
    pub allowed_pitches: Vec<usize>,
}

/// Record of one generation run, aligned with the sampled note sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub first: NoteEvent,
    pub steps: Vec<TraceStep>,
}

/// Generate a score and the per-step sampling trace.
///
/// The returned score is in canonical order (simultaneous notes sorted by
/// pitch), which can permute the sampled notes; the trace keeps the raw
/// sampled order.
pub fn generate_traced(
    checkpoint: &Checkpoint,
    config: &GenConfig,
) -> Result<(Score, GenerationTrace)> {
    config.validate()?;
    let params = &checkpoint.params;
    checkpoint.first_notes.validate(&params.dims.alphabets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = checkpoint.first_notes.sample(&mut rng);
    let mut notes = Vec::with_capacity(config.length);
    notes.push(first);
    let mut steps = Vec::with_capacity(config.length.saturating_sub(1));
    let mut state = ModelState::zeros(&params.dims);

    for _ in 1..config.length {
        let prev = *notes.last().expect("sequence starts non-empty");
        let (s1, l1) = forward_substep(params, &state, &SubstepInput::note(&prev), None);
        let (timing, allowed_timings) =
            sample_top_m(&softmax(&l1.timing), config.top_m, &mut rng)?;
        let (s2, l2) = forward_substep(params, &s1, &SubstepInput::timing_only(timing), None);
        let (duration, allowed_durations) =
            sample_top_m(&softmax(&l2.duration), config.top_m, &mut rng)?;
        let (s3, l3) =
            forward_substep(params, &s2, &SubstepInput::timing_duration(timing, duration), None);
        let (pitch, allowed_pitches) =
            sample_top_m(&softmax(&l3.pitch), config.top_m, &mut rng)?;
        state = s3;
        let note = NoteEvent::new(timing, duration, pitch);
        notes.push(note);
        steps.push(TraceStep { note, allowed_timings, allowed_durations, allowed_pitches });
    }

    let raw = Score::new(format!("sample-{}", config.seed), config.ppq, notes);
    let score = canonicalize(&raw, &checkpoint.alphabets)?;
    Ok((score, GenerationTrace { first, steps }))
}

/// Generate a score without keeping the trace.
pub fn generate(checkpoint: &Checkpoint, config: &GenConfig) -> Result<Score> {
    Ok(generate_traced(checkpoint, config)?.0)
}

/// Render a generated score to Standard MIDI File bytes.
pub fn export_midi(score: &Score, checkpoint: &Checkpoint, config: &GenConfig) -> Result<Vec<u8>> {
    let file: MidiFile =
        denormalize(score, &checkpoint.alphabets, config.ppq, config.bpm, config.velocity)?;
    serialize_midi(&file)
}
