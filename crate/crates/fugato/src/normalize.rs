//! MIDI ⇄ normalized-score conversion.
//!
//! Extraction walks all tracks on a shared tick timeline, pairs note-ons
//! with note-offs first-in-first-out per (channel, pitch), and yields exact
//! rational onsets/durations in quarter-note units. Normalization quantizes
//! those onto the alphabets; denormalization renders index triples back to a
//! single-track MIDI file.
//!
//! The canonical note order — onset ascending, then pitch, then duration —
//! is what extraction produces. [`canonicalize`] reorders an arbitrary score
//! (e.g. a sampled one) into that form so that exporting it to MIDI and
//! normalizing the result reproduces the score exactly.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alphabet::{Alphabets, PitchAlphabet, Quarters};
use crate::error::{Error, Result};
use crate::midi::{MidiEvent, MidiEventKind, MidiFile, MidiFormat, VLQ_MAX};
use crate::score::{NoteEvent, Score};

/// A note with exact timing, before quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawNote {
    /// Onset in quarter notes from the start of the file.
    pub onset: Quarters,
    /// Length in quarter notes; always positive.
    pub duration: Quarters,
    /// MIDI key number.
    pub pitch: u8,
}

/// Extraction output: notes in canonical order plus any data repairs that
/// were applied.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub notes: Vec<RawNote>,
    pub warnings: Vec<String>,
}

/// Pull raw notes out of a MIDI file.
///
/// All tracks are merged onto one absolute-tick timeline. Note-ons and
/// note-offs are paired FIFO per (channel, pitch): the oldest sounding note
/// of a key is the one a release closes. Repairs are reported as warnings
/// rather than errors: unmatched releases are ignored, notes still sounding
/// at the end of the file are closed at the final event time, and
/// zero-duration notes are dropped.
pub fn extract_notes(file: &MidiFile) -> Result<Extraction> {
    if file.header.ppq == 0 {
        return Err(Error::InvalidEvent("ppq must be positive".into()));
    }

    struct TimedKey {
        tick: u64,
        on: bool,
        channel: u8,
        pitch: u8,
        velocity: u8,
    }

    let mut events: Vec<TimedKey> = Vec::new();
    let mut final_tick: u64 = 0;
    for track in &file.tracks {
        let mut tick: u64 = 0;
        for event in track {
            tick += u64::from(event.delta_ticks);
            final_tick = final_tick.max(tick);
            match event.kind {
                MidiEventKind::NoteOn { channel, pitch, velocity } => {
                    events.push(TimedKey { tick, on: true, channel, pitch, velocity });
                }
                MidiEventKind::NoteOff { channel, pitch, velocity } => {
                    events.push(TimedKey { tick, on: false, channel, pitch, velocity });
                }
                _ => {}
            }
        }
    }
    // Stable: events at the same tick keep (track, position) order, which is
    // the order the file states them in.
    events.sort_by_key(|e| e.tick);

    let mut sounding: BTreeMap<(u8, u8), VecDeque<u64>> = BTreeMap::new();
    let mut notes: Vec<RawNote> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let ppq = i64::from(file.header.ppq);
    let to_quarters = |tick: u64| -> Result<Quarters> {
        let tick = i64::try_from(tick)
            .map_err(|_| Error::InvalidEvent(format!("tick position {tick} overflows")))?;
        Ok(Quarters::new(tick, ppq))
    };
    let close = |onset_tick: u64,
                     off_tick: u64,
                     pitch: u8,
                     notes: &mut Vec<RawNote>,
                     warnings: &mut Vec<String>|
     -> Result<()> {
        if off_tick == onset_tick {
            warnings.push(format!("zero-duration note (pitch {pitch}, tick {onset_tick}) dropped"));
            return Ok(());
        }
        notes.push(RawNote {
            onset: to_quarters(onset_tick)?,
            duration: to_quarters(off_tick)? - to_quarters(onset_tick)?,
            pitch,
        });
        Ok(())
    };

    for event in &events {
        let key = (event.channel, event.pitch);
        if event.on {
            debug_assert!(event.velocity > 0, "parser normalizes velocity-0 note-ons");
            sounding.entry(key).or_default().push_back(event.tick);
        } else {
            match sounding.get_mut(&key).and_then(VecDeque::pop_front) {
                Some(onset_tick) => {
                    close(onset_tick, event.tick, event.pitch, &mut notes, &mut warnings)?
                }
                None => warnings.push(format!(
                    "unmatched note-off (channel {}, pitch {}, tick {}) ignored",
                    event.channel, event.pitch, event.tick
                )),
            }
        }
    }
    for ((_, pitch), queue) in sounding {
        for onset_tick in queue {
            warnings.push(format!(
                "note (pitch {pitch}, tick {onset_tick}) never released; closed at final event"
            ));
            close(onset_tick, final_tick, pitch, &mut notes, &mut warnings)?;
        }
    }

    notes.sort_by(|a, b| {
        (a.onset, a.pitch, a.duration).cmp(&(b.onset, b.pitch, b.duration))
    });
    Ok(Extraction { notes, warnings })
}

/// Normalization output: the quantized score plus repair warnings and the
/// quantization error that was introduced.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub score: Score,
    pub warnings: Vec<String>,
    /// Sum over all quantized gaps/durations of |original - snapped| in
    /// quarter notes.
    pub distortion_sum: f64,
    /// Number of quantized values behind `distortion_sum`.
    pub distortion_count: usize,
}

impl Normalized {
    /// Mean absolute quantization error in quarter notes.
    pub fn mean_distortion(&self) -> f64 {
        if self.distortion_count == 0 {
            0.0
        } else {
            self.distortion_sum / self.distortion_count as f64
        }
    }
}

/// Convert a MIDI file to a normalized score (see [`normalize_detailed`]).
pub fn normalize(file: &MidiFile, alphabets: &Alphabets, name: &str) -> Result<Score> {
    Ok(normalize_detailed(file, alphabets, name)?.score)
}

/// Convert a MIDI file to a normalized score, reporting repairs and
/// quantization distortion.
///
/// Notes come out in canonical order. The first note's timing index is
/// always 0 (there is no previous onset to measure from); subsequent timing
/// indices quantize the exact onset gap, and duration indices quantize the
/// exact length. Pitches outside the alphabet clamp to the nearest bound
/// with a warning.
pub fn normalize_detailed(
    file: &MidiFile,
    alphabets: &Alphabets,
    name: &str,
) -> Result<Normalized> {
    let extraction = extract_notes(file)?;
    if extraction.notes.is_empty() {
        return Err(Error::EmptyScore(format!("`{name}` contains no playable notes")));
    }

    let mut warnings = extraction.warnings;
    let mut notes = Vec::with_capacity(extraction.notes.len());
    let mut distortion_sum = 0.0;
    let mut distortion_count = 0usize;
    let mut quantize = |values_error: Quarters| {
        distortion_sum += ratio_abs_f64(values_error);
        distortion_count += 1;
    };

    let mut prev_onset: Option<Quarters> = None;
    for raw in &extraction.notes {
        let timing = match prev_onset {
            None => 0,
            Some(prev) => {
                let gap = raw.onset - prev;
                let idx = alphabets.timings().quantize(gap);
                quantize(gap - alphabets.timings().value(idx));
                idx
            }
        };
        prev_onset = Some(raw.onset);

        let duration = alphabets.durations().quantize(raw.duration);
        quantize(raw.duration - alphabets.durations().value(duration));

        let (pitch, clamped) = alphabets.pitches().index_clamped(raw.pitch);
        if clamped {
            warnings.push(format!(
                "pitch {} outside {}..={} clamped",
                raw.pitch,
                alphabets.pitches().lowest(),
                alphabets.pitches().highest()
            ));
        }

        notes.push(NoteEvent::new(timing, duration, pitch));
    }

    Ok(Normalized {
        score: Score::new(name, file.header.ppq, notes),
        warnings,
        distortion_sum,
        distortion_count,
    })
}

/// Render a score back to a single-track MIDI file.
///
/// The track opens with a tempo event, then note-ons/note-offs on channel 0
/// at the given velocity. Ticks are the exact rational positions rounded to
/// the nearest integer (halves round up); a duration that rounds to zero
/// ticks is stretched to one tick so the note survives re-extraction. At
/// equal ticks, releases are written before onsets.
pub fn denormalize(
    score: &Score,
    alphabets: &Alphabets,
    ppq: u16,
    bpm: f64,
    velocity: u8,
) -> Result<MidiFile> {
    if score.is_empty() {
        return Err(Error::EmptyScore("cannot render an empty score".into()));
    }
    score.validate(alphabets)?;
    if ppq == 0 {
        return Err(Error::InvalidConfig("ppq must be positive".into()));
    }
    if !(1..=127).contains(&velocity) {
        return Err(Error::InvalidConfig(format!("velocity {velocity} outside 1..=127")));
    }
    if !bpm.is_finite() || bpm <= 0.0 {
        return Err(Error::InvalidConfig(format!("bpm must be positive and finite, got {bpm}")));
    }
    let micros_per_quarter = (60_000_000.0 / bpm).round();
    if !(1.0..=16_777_215.0).contains(&micros_per_quarter) {
        return Err(Error::InvalidConfig(format!("bpm {bpm} not representable as a MIDI tempo")));
    }

    // (tick, 0=release 1=onset, key): release-before-onset at equal ticks.
    let mut boundaries: Vec<(u64, u8, u8)> = Vec::with_capacity(score.len() * 2);
    let mut onset = Quarters::from_integer(0);
    for note in &score.notes {
        onset += alphabets.timings().value(note.timing);
        let on_tick = round_to_tick(onset, ppq);
        let duration_ticks = round_to_tick(alphabets.durations().value(note.duration), ppq).max(1);
        let off_tick = on_tick + duration_ticks;
        if off_tick > u64::from(VLQ_MAX) {
            return Err(Error::VlqOutOfRange(off_tick));
        }
        let key = alphabets.pitches().key(note.pitch);
        boundaries.push((on_tick, 1, key));
        boundaries.push((off_tick, 0, key));
    }
    boundaries.sort_unstable();

    let mut track = vec![MidiEvent::tempo(0, micros_per_quarter as u32)];
    let mut cursor = 0u64;
    for (tick, class, key) in boundaries {
        let delta = (tick - cursor) as u32;
        cursor = tick;
        track.push(if class == 1 {
            MidiEvent::note_on(delta, 0, key, velocity)
        } else {
            MidiEvent::note_off(delta, 0, key, 0)
        });
    }
    track.push(MidiEvent::end_of_track(0));

    MidiFile::new(MidiFormat::SingleTrack, ppq, vec![track])
}

/// Round an exact quarter-note position to a tick count (halves away from
/// zero; inputs are non-negative so this is round-half-up).
fn round_to_tick(position: Quarters, ppq: u16) -> u64 {
    let scaled = position * Quarters::from_integer(i64::from(ppq));
    scaled.round().to_integer().max(0) as u64
}

/// Reorder an arbitrary score into extraction's canonical form.
///
/// The score is played out on an exact timeline (alphabet values, no tick
/// rounding), re-paired FIFO per pitch, sorted by (onset, pitch, duration),
/// and re-encoded. Canonical scores are fixed points; for scores whose
/// same-pitch notes overlap, FIFO re-pairing can reassign durations exactly
/// as MIDI extraction would.
pub fn canonicalize(score: &Score, alphabets: &Alphabets) -> Result<Score> {
    if score.is_empty() {
        return Err(Error::EmptyScore("cannot canonicalize an empty score".into()));
    }
    score.validate(alphabets)?;

    // (time, 0=release 1=onset, pitch index, emission order)
    let mut boundaries: Vec<(Quarters, u8, usize, usize)> = Vec::with_capacity(score.len() * 2);
    let mut onset = Quarters::from_integer(0);
    for (seq, note) in score.notes.iter().enumerate() {
        onset += alphabets.timings().value(note.timing);
        let off = onset + alphabets.durations().value(note.duration);
        boundaries.push((onset, 1, note.pitch, seq));
        boundaries.push((off, 0, note.pitch, seq));
    }
    boundaries.sort_unstable();

    let mut sounding: BTreeMap<usize, VecDeque<Quarters>> = BTreeMap::new();
    let mut played: Vec<(Quarters, usize, Quarters)> = Vec::with_capacity(score.len());
    for (time, class, pitch, _) in boundaries {
        if class == 1 {
            sounding.entry(pitch).or_default().push_back(time);
        } else {
            let onset = sounding
                .get_mut(&pitch)
                .and_then(VecDeque::pop_front)
                .expect("every release follows its onset on an exact timeline");
            played.push((onset, pitch, time - onset));
        }
    }
    played.sort_unstable();

    let mut notes = Vec::with_capacity(played.len());
    let mut prev_onset: Option<Quarters> = None;
    for (onset, pitch, duration) in played {
        let timing = match prev_onset {
            None => 0,
            Some(prev) => alphabets.timings().quantize(onset - prev),
        };
        prev_onset = Some(onset);
        notes.push(NoteEvent::new(timing, alphabets.durations().quantize(duration), pitch));
    }
    Ok(Score::new(score.name.clone(), score.source_ppq, notes))
}

/// Legal transposition range for a score: the shifts (in semitones) that
/// keep every pitch inside the alphabet. Always contains 0.
pub fn transposition_bounds(score: &Score, pitches: &PitchAlphabet) -> Result<(i32, i32)> {
    if score.is_empty() {
        return Err(Error::EmptyScore("cannot bound transposition of an empty score".into()));
    }
    let min = score.notes.iter().map(|n| n.pitch).min().unwrap();
    let max = score.notes.iter().map(|n| n.pitch).max().unwrap();
    Ok((-(min as i32), (pitches.len() as i32 - 1) - max as i32))
}

/// Shift every pitch by `semitones`, failing if any note would leave the
/// alphabet. Timing and duration are untouched.
pub fn transpose(score: &Score, semitones: i32, pitches: &PitchAlphabet) -> Result<Score> {
    let (min_shift, max_shift) = transposition_bounds(score, pitches)?;
    if semitones < min_shift || semitones > max_shift {
        return Err(Error::ShiftOutOfBounds { shift: semitones, min: min_shift, max: max_shift });
    }
    let notes = score
        .notes
        .iter()
        .map(|n| NoteEvent::new(n.timing, n.duration, (n.pitch as i32 + semitones) as usize))
        .collect();
    Ok(Score::new(score.name.clone(), score.source_ppq, notes))
}

fn ratio_abs_f64(value: Quarters) -> f64 {
    (*value.numer() as f64 / *value.denom() as f64).abs()
}

/// Deterministic random score in canonical form: chords come out
/// pitch-ascending and a pitch never overlaps itself, so the score survives
/// a MIDI round trip unchanged. Useful for synthetic corpora in tests,
/// benchmarks and demos.
pub fn synthetic_score(seed: u64, len: usize, alphabets: &Alphabets) -> Score {
    let n_timings = alphabets.timings().len();
    let n_durations = alphabets.durations().len();
    let n_pitches = alphabets.pitches().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut busy_until: HashMap<usize, Quarters> = HashMap::new();
    let mut onset = Quarters::from_integer(0);
    let mut chord_floor: usize = 0; // next chord pitch must exceed this
    let mut notes = Vec::with_capacity(len);
    for i in 0..len {
        // Draw a timing step that leaves at least one legal pitch; the
        // largest step always frees every pitch, so this terminates.
        let mut timing = if i == 0 || rng.random_bool(0.3) {
            0
        } else {
            rng.random_range(1..n_timings)
        };
        if i == 0 {
            timing = 0;
        }
        let mut attempts = 0;
        let (timing, next_onset, free) = loop {
            let next_onset = onset + alphabets.timings().value(timing);
            let floor = if timing == 0 { chord_floor } else { 0 };
            let free: Vec<usize> = (floor..n_pitches)
                .filter(|p| busy_until.get(p).is_none_or(|&until| until <= next_onset))
                .collect();
            if !free.is_empty() {
                break (timing, next_onset, free);
            }
            attempts += 1;
            timing = if attempts > 4 { n_timings - 1 } else { rng.random_range(1..n_timings) };
        };
        onset = next_onset;
        let pitch = free[rng.random_range(0..free.len())];
        let duration = rng.random_range(0..n_durations);
        busy_until.insert(pitch, onset + alphabets.durations().value(duration));
        chord_floor = pitch + 1;
        notes.push(NoteEvent::new(timing, duration, pitch));
    }
    Score::new(format!("random-{seed}"), 192, notes)
}
