//! Discrete alphabets for note timing, duration and pitch.
//!
//! Scores are encoded as index triples over three finite vocabularies:
//!
//! * a **duration** alphabet of note lengths in quarter-note units,
//! * a **timing** alphabet for inter-onset gaps: the same values plus `0`
//!   (simultaneous onsets), always at index 0,
//! * a **pitch** alphabet of consecutive MIDI keys (default: the 88 piano
//!   keys, MIDI 21..=108).
//!
//! Values are exact rationals so quantization and round trips avoid float
//! drift. Each alphabet exposes a short fingerprint used by serialized
//! artifacts to detect mismatched vocabularies.

use num_rational::Ratio;
use num_traits::Signed;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Exact time value in quarter-note units.
pub type Quarters = Ratio<i64>;

/// Convenience constructor for a quarter-note rational.
pub fn quarters(numer: i64, denom: i64) -> Quarters {
    Ratio::new(numer, denom)
}

/// Parse a rational like `"3/8"` or `"2"` (quarter-note units).
pub fn parse_quarters(text: &str) -> Result<Quarters> {
    let bad = || Error::InvalidAlphabet(format!("cannot parse rational value `{text}`"));
    let mut parts = text.splitn(2, '/');
    let numer: i64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let denom: i64 = match parts.next() {
        Some(d) => d.trim().parse().map_err(|_| bad())?,
        None => 1,
    };
    if denom == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(numer, denom))
}

/// Render a rational as `"n"` or `"n/d"`.
pub fn format_quarters(value: Quarters) -> String {
    if value.is_integer() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Index of the nearest value in a sorted ascending list; ties pick the
/// smaller value.
fn nearest_index(values: &[Quarters], target: Quarters) -> usize {
    debug_assert!(!values.is_empty());
    let mut best = 0;
    let mut best_dist = (values[0] - target).abs();
    for (i, &v) in values.iter().enumerate().skip(1) {
        let dist = (v - target).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

fn check_sorted_positive(values: &[Quarters]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidAlphabet("alphabet must not be empty".into()));
    }
    for (i, &v) in values.iter().enumerate() {
        if v <= Quarters::from_integer(0) {
            return Err(Error::InvalidAlphabet(format!(
                "value {} at index {i} must be positive",
                format_quarters(v)
            )));
        }
        if i > 0 && values[i - 1] >= v {
            return Err(Error::InvalidAlphabet(format!(
                "values must be strictly increasing (index {i})"
            )));
        }
    }
    Ok(())
}

/// Short hex fingerprint of a canonical description string.
fn fingerprint_of(desc: &str) -> String {
    let digest = Sha256::digest(desc.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

// ----------------------------------------------------------------------
// Durations
// ----------------------------------------------------------------------

/// Sorted vocabulary of note durations in quarter-note units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationAlphabet {
    values: Vec<Quarters>,
}

impl DurationAlphabet {
    /// The default 21-entry vocabulary. It spans 1/16 of a quarter up to 24
    /// quarters and includes triplet (thirds) and dotted (×1.5) lengths.
    pub fn standard() -> Self {
        let v = |n, d| quarters(n, d);
        DurationAlphabet {
            values: vec![
                v(1, 16),
                v(1, 8),
                v(1, 6),
                v(1, 4),
                v(1, 3),
                v(3, 8),
                v(1, 2),
                v(2, 3),
                v(3, 4),
                v(1, 1),
                v(4, 3),
                v(3, 2),
                v(2, 1),
                v(8, 3),
                v(3, 1),
                v(4, 1),
                v(6, 1),
                v(8, 1),
                v(12, 1),
                v(16, 1),
                v(24, 1),
            ],
        }
    }

    /// Build a custom vocabulary. Values must be strictly increasing and
    /// positive.
    pub fn new(values: Vec<Quarters>) -> Result<Self> {
        check_sorted_positive(&values)?;
        Ok(DurationAlphabet { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[Quarters] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Quarters {
        self.values[index]
    }

    pub fn value_f64(&self, index: usize) -> f64 {
        ratio_to_f64(self.values[index])
    }

    /// Index of the nearest duration; ties pick the smaller value.
    pub fn quantize(&self, quarter_units: Quarters) -> usize {
        nearest_index(&self.values, quarter_units)
    }

    /// Stable identifier for this vocabulary.
    pub fn fingerprint(&self) -> String {
        let body: Vec<String> = self.values.iter().map(|&v| format_quarters(v)).collect();
        fingerprint_of(&format!("durations:{}", body.join(",")))
    }
}

// ----------------------------------------------------------------------
// Timings
// ----------------------------------------------------------------------

/// Vocabulary of inter-onset gaps: `0` followed by every duration value.
///
/// Index 0 is always the zero gap (a note sounding together with the
/// previous one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimingAlphabet {
    values: Vec<Quarters>,
}

impl TimingAlphabet {
    /// Derive the timing vocabulary from a duration vocabulary.
    pub fn from_durations(durations: &DurationAlphabet) -> Self {
        let mut values = Vec::with_capacity(durations.len() + 1);
        values.push(Quarters::from_integer(0));
        values.extend_from_slice(durations.values());
        TimingAlphabet { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[Quarters] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Quarters {
        self.values[index]
    }

    pub fn value_f64(&self, index: usize) -> f64 {
        ratio_to_f64(self.values[index])
    }

    /// Index of the nearest gap value; ties pick the smaller value.
    pub fn quantize(&self, quarter_units: Quarters) -> usize {
        nearest_index(&self.values, quarter_units)
    }
}

// ----------------------------------------------------------------------
// Pitches
// ----------------------------------------------------------------------

/// A contiguous range of MIDI keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PitchAlphabet {
    lowest: u8,
    count: usize,
}

impl PitchAlphabet {
    /// The 88 piano keys: MIDI 21 (A0) through 108 (C8).
    pub fn standard() -> Self {
        PitchAlphabet { lowest: 21, count: 88 }
    }

    /// A custom contiguous key range.
    pub fn new(lowest: u8, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidAlphabet("pitch alphabet must not be empty".into()));
        }
        let highest = u32::from(lowest) + count as u32 - 1;
        if highest > 127 {
            return Err(Error::InvalidAlphabet(format!(
                "pitch range {lowest}..={highest} leaves the MIDI range"
            )));
        }
        Ok(PitchAlphabet { lowest, count })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lowest(&self) -> u8 {
        self.lowest
    }

    pub fn highest(&self) -> u8 {
        self.lowest + (self.count - 1) as u8
    }

    /// MIDI key for an index.
    pub fn key(&self, index: usize) -> u8 {
        debug_assert!(index < self.count);
        self.lowest + index as u8
    }

    /// Index for a MIDI key, clamping keys outside the range to the nearest
    /// bound. The flag reports whether clamping happened.
    pub fn index_clamped(&self, key: u8) -> (usize, bool) {
        if key < self.lowest {
            (0, true)
        } else if key > self.highest() {
            (self.count - 1, true)
        } else {
            (usize::from(key - self.lowest), false)
        }
    }

    /// Stable identifier for this vocabulary.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(&format!("pitches:{}+{}", self.lowest, self.count))
    }
}

// ----------------------------------------------------------------------
// Bundle
// ----------------------------------------------------------------------

/// The three vocabularies used by one model / corpus.
///
/// The timing alphabet is always derived from the duration alphabet, which
/// keeps the "timing = {0} plus durations" relationship true by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabets {
    durations: DurationAlphabet,
    timings: TimingAlphabet,
    pitches: PitchAlphabet,
}

impl Alphabets {
    /// Default vocabularies: 21 durations, 22 timings, 88 pitches.
    pub fn standard() -> Self {
        Alphabets::from_parts(DurationAlphabet::standard(), PitchAlphabet::standard())
    }

    pub fn from_parts(durations: DurationAlphabet, pitches: PitchAlphabet) -> Self {
        let timings = TimingAlphabet::from_durations(&durations);
        Alphabets { durations, timings, pitches }
    }

    pub fn durations(&self) -> &DurationAlphabet {
        &self.durations
    }

    pub fn timings(&self) -> &TimingAlphabet {
        &self.timings
    }

    pub fn pitches(&self) -> &PitchAlphabet {
        &self.pitches
    }
}

fn ratio_to_f64(value: Quarters) -> f64 {
    *value.numer() as f64 / *value.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_sizes_match_design() {
        let a = Alphabets::standard();
        assert_eq!(a.durations().len(), 21);
        assert_eq!(a.timings().len(), 22);
        assert_eq!(a.pitches().len(), 88);
        assert_eq!(a.timings().value(0), Quarters::from_integer(0));
        // Timing = {0} followed by the duration values, in order.
        assert_eq!(&a.timings().values()[1..], a.durations().values());
        // The vocabulary spans 1/16 quarter to 24 quarters and contains the
        // quarter note itself.
        assert_eq!(a.durations().value(0), quarters(1, 16));
        assert_eq!(a.durations().value(20), quarters(24, 1));
        assert!(a.durations().values().contains(&Quarters::from_integer(1)));
    }

    #[test]
    fn standard_pitch_range_is_piano() {
        let p = PitchAlphabet::standard();
        assert_eq!(p.lowest(), 21);
        assert_eq!(p.highest(), 108);
        assert_eq!(p.key(0), 21);
        assert_eq!(p.key(87), 108);
        assert_eq!(p.index_clamped(60), (39, false)); // middle C = index 39
    }

    #[test]
    fn quantize_picks_nearest_value() {
        let d = DurationAlphabet::standard();
        // Oracle: 0.26 quarters sits between 1/4 (0.25) and 1/3 (0.333...);
        // distance 0.01 vs 0.0733..., so 1/4 wins (index 3).
        assert_eq!(d.quantize(quarters(26, 100)), 3);
        // Exact members map to themselves.
        for (i, &v) in d.values().iter().enumerate() {
            assert_eq!(d.quantize(v), i);
        }
    }

    #[test]
    fn quantize_breaks_ties_toward_smaller_value() {
        let d = DurationAlphabet::new(vec![quarters(1, 4), quarters(3, 4)]).unwrap();
        // Midpoint 1/2 is equidistant; the smaller value (index 0) wins.
        assert_eq!(d.quantize(quarters(1, 2)), 0);

        let t = TimingAlphabet::from_durations(&DurationAlphabet::standard());
        // Midpoint between 0 and 1/16 is 1/32; tie resolves to 0 (index 0).
        assert_eq!(t.quantize(quarters(1, 32)), 0);
    }

    #[test]
    fn quantize_is_idempotent_on_standard_vocabulary() {
        let d = DurationAlphabet::standard();
        for i in 0..d.len() {
            let snapped = d.value(d.quantize(d.value(i)));
            assert_eq!(snapped, d.value(i));
        }
    }

    #[test]
    fn rejects_bad_custom_alphabets() {
        assert!(DurationAlphabet::new(vec![]).is_err());
        assert!(DurationAlphabet::new(vec![quarters(0, 1)]).is_err());
        assert!(DurationAlphabet::new(vec![quarters(-1, 4)]).is_err());
        assert!(DurationAlphabet::new(vec![quarters(1, 2), quarters(1, 2)]).is_err());
        assert!(DurationAlphabet::new(vec![quarters(1, 2), quarters(1, 4)]).is_err());
        assert!(PitchAlphabet::new(21, 0).is_err());
        assert!(PitchAlphabet::new(100, 88).is_err());
        assert!(PitchAlphabet::new(21, 88).is_ok());
    }

    #[test]
    fn pitch_clamping_hits_bounds() {
        let p = PitchAlphabet::standard();
        assert_eq!(p.index_clamped(0), (0, true));
        assert_eq!(p.index_clamped(20), (0, true));
        assert_eq!(p.index_clamped(21), (0, false));
        assert_eq!(p.index_clamped(108), (87, false));
        assert_eq!(p.index_clamped(109), (87, true));
        assert_eq!(p.index_clamped(127), (87, true));
    }

    #[test]
    fn fingerprints_distinguish_vocabularies() {
        let standard = DurationAlphabet::standard();
        let shorter =
            DurationAlphabet::new(standard.values()[..20].to_vec()).unwrap();
        assert_ne!(standard.fingerprint(), shorter.fingerprint());
        assert_eq!(standard.fingerprint(), DurationAlphabet::standard().fingerprint());
        assert_ne!(
            PitchAlphabet::standard().fingerprint(),
            PitchAlphabet::new(20, 88).unwrap().fingerprint()
        );
    }

    #[test]
    fn parses_and_formats_rationals() {
        assert_eq!(parse_quarters("3/8").unwrap(), quarters(3, 8));
        assert_eq!(parse_quarters("2").unwrap(), quarters(2, 1));
        assert_eq!(parse_quarters(" 8 / 3 ").unwrap(), quarters(8, 3));
        assert!(parse_quarters("1/0").is_err());
        assert!(parse_quarters("x").is_err());
        assert_eq!(format_quarters(quarters(3, 8)), "3/8");
        assert_eq!(format_quarters(quarters(4, 2)), "2");
    }

    proptest! {
        /// Quantization returns the true nearest neighbour (checked against
        /// a brute-force float oracle away from ties).
        #[test]
        fn quantize_matches_float_oracle(numer in 0i64..5000, denom in 1i64..100) {
            let d = DurationAlphabet::standard();
            let target = quarters(numer, denom);
            let idx = d.quantize(target);
            let tf = numer as f64 / denom as f64;
            let chosen = d.value_f64(idx);
            for other in d.values() {
                let of = *other.numer() as f64 / *other.denom() as f64;
                // Allow equality for ties; never strictly farther.
                prop_assert!((chosen - tf).abs() <= (of - tf).abs() + 1e-12);
            }
        }
    }
}
