//! Normalized score representation and its line-oriented text format.
//!
//! A [`Score`] is a sequence of [`NoteEvent`] index triples over a fixed set
//! of [`Alphabets`]. The text format caches normalized corpora on disk:
//!
//! ```text
//! score v1 durations=<fp> pitches=<fp> ppq=<ppq> name=<name>
//! <timing> <duration> <pitch>
//! ...
//! ```
//!
//! The header embeds alphabet fingerprints so a cached file is rejected when
//! read back under different vocabularies.

use crate::alphabet::Alphabets;
use crate::error::{Error, Result};

/// One note as indices into the timing, duration and pitch alphabets.
///
/// `timing` is the gap between this note's onset and the previous note's
/// onset (index into the timing alphabet; 0 means simultaneous). `duration`
/// indexes the duration alphabet and `pitch` the pitch alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub timing: usize,
    pub duration: usize,
    pub pitch: usize,
}

impl NoteEvent {
    pub fn new(timing: usize, duration: usize, pitch: usize) -> Self {
        NoteEvent { timing, duration, pitch }
    }
}

/// A normalized piece: ordered notes plus provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Score {
    /// Human-readable origin (file stem or generator tag).
    pub name: String,
    /// Tick resolution of the source file (kept for round trips).
    pub source_ppq: u16,
    /// Notes ordered by onset; simultaneous notes ordered by ascending
    /// pitch. The first note always has `timing == 0`.
    pub notes: Vec<NoteEvent>,
}

impl Score {
    pub fn new(name: impl Into<String>, source_ppq: u16, notes: Vec<NoteEvent>) -> Self {
        Score { name: name.into(), source_ppq, notes }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Check every index against the alphabets.
    pub fn validate(&self, alphabets: &Alphabets) -> Result<()> {
        let (nt, nd, np) =
            (alphabets.timings().len(), alphabets.durations().len(), alphabets.pitches().len());
        for (i, note) in self.notes.iter().enumerate() {
            if note.timing >= nt {
                return Err(Error::IndexOutOfRange {
                    note: i,
                    message: format!("timing index {} >= {nt}", note.timing),
                });
            }
            if note.duration >= nd {
                return Err(Error::IndexOutOfRange {
                    note: i,
                    message: format!("duration index {} >= {nd}", note.duration),
                });
            }
            if note.pitch >= np {
                return Err(Error::IndexOutOfRange {
                    note: i,
                    message: format!("pitch index {} >= {np}", note.pitch),
                });
            }
        }
        Ok(())
    }
}

/// Render a score in the text format.
pub fn write_score_text(score: &Score, alphabets: &Alphabets) -> String {
    let name: String =
        score.name.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
    let mut out = format!(
        "score v1 durations={} pitches={} ppq={} name={}\n",
        alphabets.durations().fingerprint(),
        alphabets.pitches().fingerprint(),
        score.source_ppq,
        name,
    );
    for note in &score.notes {
        out.push_str(&format!("{} {} {}\n", note.timing, note.duration, note.pitch));
    }
    out
}

/// Parse the text format, validating fingerprints and index ranges.
pub fn parse_score_text(text: &str, alphabets: &Alphabets) -> Result<Score> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::ScoreFormat { line: 1, message: "empty input".into() })?;
    let (score_meta, name) = parse_header(header)?;

    if score_meta.durations_fp != alphabets.durations().fingerprint() {
        return Err(Error::ScoreFormat {
            line: 1,
            message: format!(
                "duration alphabet fingerprint {} does not match current vocabulary {}",
                score_meta.durations_fp,
                alphabets.durations().fingerprint()
            ),
        });
    }
    if score_meta.pitches_fp != alphabets.pitches().fingerprint() {
        return Err(Error::ScoreFormat {
            line: 1,
            message: format!(
                "pitch alphabet fingerprint {} does not match current vocabulary {}",
                score_meta.pitches_fp,
                alphabets.pitches().fingerprint()
            ),
        });
    }

    let mut notes = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::ScoreFormat {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::ScoreFormat {
                line: line_no,
                message: format!("bad {what} index `{s}`"),
            })
        };
        notes.push(NoteEvent::new(
            parse(fields[0], "timing")?,
            parse(fields[1], "duration")?,
            parse(fields[2], "pitch")?,
        ));
    }

    let score = Score::new(name, score_meta.ppq, notes);
    score.validate(alphabets).map_err(|e| match e {
        Error::IndexOutOfRange { note, message } => Error::ScoreFormat {
            line: note + 2, // one header line, then 1-based note lines
            message,
        },
        other => other,
    })?;
    Ok(score)
}

struct HeaderMeta {
    durations_fp: String,
    pitches_fp: String,
    ppq: u16,
}

fn parse_header(header: &str) -> Result<(HeaderMeta, String)> {
    let err = |message: String| Error::ScoreFormat { line: 1, message };
    let (front, name) = header
        .split_once(" name=")
        .ok_or_else(|| err("header missing `name=` field".into()))?;
    let tokens: Vec<&str> = front.split_whitespace().collect();
    if tokens.len() != 5 || tokens[0] != "score" {
        return Err(err(format!("malformed header `{front}`")));
    }
    if tokens[1] != "v1" {
        return Err(err(format!("unsupported text format version `{}`", tokens[1])));
    }
    let field = |token: &str, key: &str| -> Result<String> {
        token
            .strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| err(format!("expected `{key}=...`, found `{token}`")))
    };
    let durations_fp = field(tokens[2], "durations")?;
    let pitches_fp = field(tokens[3], "pitches")?;
    let ppq: u16 = field(tokens[4], "ppq")?
        .parse()
        .map_err(|_| err("bad ppq value".into()))?;
    if ppq == 0 {
        return Err(err("ppq must be positive".into()));
    }
    Ok((HeaderMeta { durations_fp, pitches_fp, ppq }, name.to_string()))
}
