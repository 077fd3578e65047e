//! Standard MIDI File codec.
//!
//! Reads and writes the subset of SMF needed for note modelling: format 0/1
//! files with PPQ time division, note-on/note-off, and tempo meta events.
//! Everything else is preserved byte-for-byte as [`MidiEventKind::Other`] so
//! that `parse` followed by `serialize` reproduces the event stream exactly.
//!
//! Unsupported inputs are rejected with typed errors rather than guessed at:
//! format 2 files, SMPTE divisions, and truncated chunks all fail cleanly.

use crate::error::{Error, Result};

/// Largest value a variable-length quantity can encode (2^28 - 1).
pub const VLQ_MAX: u32 = (1 << 28) - 1;

/// File layout: a single track, or several tracks played in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MidiFormat {
    /// SMF format 0: one track containing all events.
    SingleTrack,
    /// SMF format 1: multiple simultaneous tracks.
    MultiTrack,
}

impl MidiFormat {
    fn code(self) -> u16 {
        match self {
            MidiFormat::SingleTrack => 0,
            MidiFormat::MultiTrack => 1,
        }
    }
}

/// Header-chunk fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidiHeader {
    pub format: MidiFormat,
    /// Number of track chunks in the file.
    pub track_count: u16,
    /// Pulses (ticks) per quarter note; always > 0.
    pub ppq: u16,
}

/// Decoded event payload.
///
/// Only the events the pipeline interprets get structured variants; anything
/// else keeps its raw bytes (status byte onward, delta time excluded) so the
/// file can be re-serialized without loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MidiEventKind {
    /// Key pressed. `velocity` is always >= 1: a note-on with velocity 0 is
    /// decoded as (and must be encoded as) a [`MidiEventKind::NoteOff`].
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    /// Key released.
    NoteOff { channel: u8, pitch: u8, velocity: u8 },
    /// Tempo meta event: microseconds per quarter note (24-bit).
    Tempo { micros_per_quarter: u32 },
    /// End-of-track meta event.
    EndOfTrack,
    /// Any other event, stored byte-exact (status byte onward).
    Other { raw: Vec<u8> },
}

/// One track event: delta time in ticks plus payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiEvent {
    pub delta_ticks: u32,
    pub kind: MidiEventKind,
}

impl MidiEvent {
    pub fn note_on(delta_ticks: u32, channel: u8, pitch: u8, velocity: u8) -> Self {
        MidiEvent { delta_ticks, kind: MidiEventKind::NoteOn { channel, pitch, velocity } }
    }

    pub fn note_off(delta_ticks: u32, channel: u8, pitch: u8, velocity: u8) -> Self {
        MidiEvent { delta_ticks, kind: MidiEventKind::NoteOff { channel, pitch, velocity } }
    }

    pub fn tempo(delta_ticks: u32, micros_per_quarter: u32) -> Self {
        MidiEvent { delta_ticks, kind: MidiEventKind::Tempo { micros_per_quarter } }
    }

    pub fn end_of_track(delta_ticks: u32) -> Self {
        MidiEvent { delta_ticks, kind: MidiEventKind::EndOfTrack }
    }
}

/// A parsed MIDI file: header plus one event list per track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    pub header: MidiHeader,
    pub tracks: Vec<Vec<MidiEvent>>,
}

impl MidiFile {
    /// Build a file, deriving `track_count` from `tracks`.
    pub fn new(format: MidiFormat, ppq: u16, tracks: Vec<Vec<MidiEvent>>) -> Result<Self> {
        if ppq == 0 {
            return Err(Error::InvalidEvent("ppq must be positive".into()));
        }
        if tracks.len() > u16::MAX as usize {
            return Err(Error::InvalidEvent(format!("too many tracks: {}", tracks.len())));
        }
        if format == MidiFormat::SingleTrack && tracks.len() != 1 {
            return Err(Error::InvalidEvent(format!(
                "format 0 requires exactly one track, got {}",
                tracks.len()
            )));
        }
        Ok(MidiFile {
            header: MidiHeader { format, track_count: tracks.len() as u16, ppq },
            tracks,
        })
    }
}

/// Duration of one tick in milliseconds at the given tempo and resolution.
///
/// A quarter note lasts `60000 / bpm` milliseconds and spans `ppq` ticks.
pub fn tick_duration_ms(bpm: f64, ppq: u16) -> Result<f64> {
    if !bpm.is_finite() || bpm <= 0.0 {
        return Err(Error::InvalidConfig(format!("bpm must be positive and finite, got {bpm}")));
    }
    if ppq == 0 {
        return Err(Error::InvalidConfig("ppq must be positive".into()));
    }
    Ok(60_000.0 / (bpm * f64::from(ppq)))
}

/// Decode one variable-length quantity starting at `offset`.
///
/// Returns the value and the offset one past its final byte. At most four
/// bytes are consumed; a fourth byte with its continuation bit set means the
/// value would exceed [`VLQ_MAX`] and is rejected.
pub fn read_vlq(bytes: &[u8], offset: usize) -> Result<(u32, usize)> {
    let mut value: u32 = 0;
    let mut pos = offset;
    for i in 0..4 {
        let byte = *bytes.get(pos).ok_or_else(|| Error::MidiParse {
            offset: pos,
            message: "truncated variable-length quantity".into(),
        })?;
        pos += 1;
        value = (value << 7) | u32::from(byte & 0x7F);
        if byte & 0x80 == 0 {
            return Ok((value, pos));
        }
        if i == 3 {
            break;
        }
    }
    Err(Error::MidiParse {
        offset,
        message: "variable-length quantity longer than 4 bytes".into(),
    })
}

/// Encode a value as a variable-length quantity (1-4 bytes, big-endian
/// 7-bit groups, continuation bit on every byte but the last).
pub fn write_vlq(value: u32) -> Result<Vec<u8>> {
    if value > VLQ_MAX {
        return Err(Error::VlqOutOfRange(u64::from(value)));
    }
    let mut out = Vec::with_capacity(4);
    write_vlq_into(&mut out, value);
    Ok(out)
}

/// Append an already range-checked VLQ to `buf`.
fn write_vlq_into(buf: &mut Vec<u8>, value: u32) {
    debug_assert!(value <= VLQ_MAX);
    let mut shift = 21;
    let mut started = false;
    while shift > 0 {
        let group = ((value >> shift) & 0x7F) as u8;
        if started || group != 0 {
            buf.push(group | 0x80);
            started = true;
        }
        shift -= 7;
    }
    buf.push((value & 0x7F) as u8);
}

/// Bounds-checked big-endian reader that tracks its byte offset for error
/// reporting.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::MidiParse { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(self.err(format!("expected {n} more bytes"))),
        }
    }

    fn u16_be(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parse a Standard MIDI File.
///
/// Supports format 0 and 1 with a PPQ division. Running status is honoured.
/// Note-ons with velocity 0 become note-offs. Unknown chunks between tracks
/// are skipped; unknown events are kept raw.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile> {
    let mut r = Reader::new(bytes);

    let tag = r.take(4)?;
    if tag != b"MThd" {
        return Err(Error::MidiParse { offset: 0, message: "missing MThd header chunk".into() });
    }
    let header_len = r.u32_be()?;
    if header_len < 6 {
        return Err(r.err(format!("header chunk length {header_len} < 6")));
    }
    let format_code = r.u16_be()?;
    let track_count = r.u16_be()?;
    let division = r.u16_be()?;
    // Tolerate (and skip) header chunks longer than the standard 6 bytes.
    r.take(header_len as usize - 6)?;

    let format = match format_code {
        0 => MidiFormat::SingleTrack,
        1 => MidiFormat::MultiTrack,
        2 => return Err(Error::UnsupportedMidi("format 2 (sequential tracks)".into())),
        other => return Err(Error::MidiParse {
            offset: 8,
            message: format!("unknown format code {other}"),
        }),
    };
    if division & 0x8000 != 0 {
        return Err(Error::UnsupportedMidi("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(Error::MidiParse { offset: 12, message: "ppq division is zero".into() });
    }
    if format == MidiFormat::SingleTrack && track_count != 1 {
        return Err(Error::MidiParse {
            offset: 10,
            message: format!("format 0 declares {track_count} tracks"),
        });
    }

    let mut tracks = Vec::with_capacity(track_count as usize);
    while tracks.len() < track_count as usize {
        if r.remaining() == 0 {
            return Err(r.err(format!(
                "file ends after {} of {track_count} declared tracks",
                tracks.len()
            )));
        }
        let tag = r.take(4)?;
        let len = r.u32_be()? as usize;
        let chunk_start = r.pos;
        let data = r.take(len)?;
        if tag == b"MTrk" {
            tracks.push(parse_track(data, chunk_start)?);
        }
        // Non-MTrk chunks are legal ("alien chunks") and skipped.
    }

    Ok(MidiFile { header: MidiHeader { format, track_count, ppq: division }, tracks })
}

/// Parse the events of one MTrk chunk. `base` is the chunk's offset in the
/// whole file, used to report absolute error positions.
fn parse_track(data: &[u8], base: usize) -> Result<Vec<MidiEvent>> {
    let abs = |pos: usize| base + pos;
    let mut events = Vec::new();
    let mut pos = 0usize;
    let mut running_status: Option<u8> = None;

    while pos < data.len() {
        let (delta_ticks, next) = read_vlq(data, pos).map_err(|e| rebase(e, base))?;
        pos = next;

        let first = *data.get(pos).ok_or_else(|| Error::MidiParse {
            offset: abs(pos),
            message: "track ends before event status".into(),
        })?;
        let status = if first & 0x80 != 0 {
            pos += 1;
            first
        } else {
            running_status.ok_or_else(|| Error::MidiParse {
                offset: abs(pos),
                message: format!("data byte 0x{first:02X} with no running status"),
            })?
        };

        let data_byte = |pos: &mut usize| -> Result<u8> {
            let b = *data.get(*pos).ok_or_else(|| Error::MidiParse {
                offset: abs(*pos),
                message: "event truncated".into(),
            })?;
            if b & 0x80 != 0 {
                return Err(Error::MidiParse {
                    offset: abs(*pos),
                    message: format!("expected data byte, found status 0x{b:02X}"),
                });
            }
            *pos += 1;
            Ok(b)
        };

        let kind = match status {
            0x80..=0x8F => {
                running_status = Some(status);
                let pitch = data_byte(&mut pos)?;
                let velocity = data_byte(&mut pos)?;
                MidiEventKind::NoteOff { channel: status & 0x0F, pitch, velocity }
            }
            0x90..=0x9F => {
                running_status = Some(status);
                let pitch = data_byte(&mut pos)?;
                let velocity = data_byte(&mut pos)?;
                if velocity == 0 {
                    // Velocity-0 note-on is the standard running-status idiom
                    // for a release; normalize it at the boundary.
                    MidiEventKind::NoteOff { channel: status & 0x0F, pitch, velocity: 0 }
                } else {
                    MidiEventKind::NoteOn { channel: status & 0x0F, pitch, velocity }
                }
            }
            0xA0..=0xBF | 0xE0..=0xEF => {
                running_status = Some(status);
                let d1 = data_byte(&mut pos)?;
                let d2 = data_byte(&mut pos)?;
                MidiEventKind::Other { raw: vec![status, d1, d2] }
            }
            0xC0..=0xDF => {
                running_status = Some(status);
                let d1 = data_byte(&mut pos)?;
                MidiEventKind::Other { raw: vec![status, d1] }
            }
            0xFF => {
                running_status = None;
                let meta_start = pos;
                let meta_type = *data.get(pos).ok_or_else(|| Error::MidiParse {
                    offset: abs(pos),
                    message: "meta event truncated".into(),
                })?;
                pos += 1;
                let (len, next) = read_vlq(data, pos).map_err(|e| rebase(e, base))?;
                let len_end = next;
                let payload_end =
                    len_end.checked_add(len as usize).filter(|&e| e <= data.len()).ok_or_else(
                        || Error::MidiParse {
                            offset: abs(len_end),
                            message: "meta event payload truncated".into(),
                        },
                    )?;
                let payload = &data[len_end..payload_end];
                pos = payload_end;
                match meta_type {
                    0x51 if len == 3 => MidiEventKind::Tempo {
                        micros_per_quarter: u32::from(payload[0]) << 16
                            | u32::from(payload[1]) << 8
                            | u32::from(payload[2]),
                    },
                    0x2F if len == 0 => MidiEventKind::EndOfTrack,
                    _ => {
                        // Keep the whole meta event (length field included)
                        // byte-exact.
                        let mut raw = vec![0xFF];
                        raw.extend_from_slice(&data[meta_start..payload_end]);
                        MidiEventKind::Other { raw }
                    }
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let sysex_start = pos;
                let (len, next) = read_vlq(data, pos).map_err(|e| rebase(e, base))?;
                let payload_end =
                    next.checked_add(len as usize).filter(|&e| e <= data.len()).ok_or_else(
                        || Error::MidiParse {
                            offset: abs(next),
                            message: "sysex payload truncated".into(),
                        },
                    )?;
                pos = payload_end;
                let mut raw = vec![status];
                raw.extend_from_slice(&data[sysex_start..payload_end]);
                MidiEventKind::Other { raw }
            }
            other => {
                return Err(Error::MidiParse {
                    offset: abs(pos.saturating_sub(1)),
                    message: format!("unexpected status byte 0x{other:02X}"),
                });
            }
        };

        events.push(MidiEvent { delta_ticks, kind });
    }

    Ok(events)
}

/// Shift a parse error's offset by the chunk base.
fn rebase(e: Error, base: usize) -> Error {
    match e {
        Error::MidiParse { offset, message } => Error::MidiParse { offset: offset + base, message },
        other => other,
    }
}

/// Serialize a [`MidiFile`] to Standard MIDI File bytes.
///
/// Events are written with explicit status bytes (no running status), so the
/// output is valid for any reader. Round trip holds: parsing the output
/// yields a structure equal to the input.
pub fn serialize_midi(file: &MidiFile) -> Result<Vec<u8>> {
    if file.header.ppq == 0 {
        return Err(Error::InvalidEvent("ppq must be positive".into()));
    }
    if file.header.ppq & 0x8000 != 0 {
        return Err(Error::InvalidEvent(format!("ppq {} does not fit 15 bits", file.header.ppq)));
    }
    if file.tracks.len() != file.header.track_count as usize {
        return Err(Error::InvalidEvent(format!(
            "header declares {} tracks but {} are present",
            file.header.track_count,
            file.tracks.len()
        )));
    }
    if file.header.format == MidiFormat::SingleTrack && file.tracks.len() != 1 {
        return Err(Error::InvalidEvent(format!(
            "format 0 requires exactly one track, got {}",
            file.tracks.len()
        )));
    }

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&file.header.format.code().to_be_bytes());
    out.extend_from_slice(&file.header.track_count.to_be_bytes());
    out.extend_from_slice(&file.header.ppq.to_be_bytes());

    for track in &file.tracks {
        out.extend_from_slice(b"MTrk");
        let len_pos = out.len();
        out.extend_from_slice(&[0, 0, 0, 0]);
        for event in track {
            write_event(&mut out, event)?;
        }
        let track_len = out.len() - len_pos - 4;
        let track_len = u32::try_from(track_len)
            .map_err(|_| Error::InvalidEvent("track longer than 4 GiB".into()))?;
        out[len_pos..len_pos + 4].copy_from_slice(&track_len.to_be_bytes());
    }

    Ok(out)
}

fn check_channel_message(channel: u8, pitch: u8, velocity: u8) -> Result<()> {
    if channel > 15 {
        return Err(Error::InvalidEvent(format!("channel {channel} > 15")));
    }
    if pitch > 127 {
        return Err(Error::InvalidEvent(format!("pitch {pitch} > 127")));
    }
    if velocity > 127 {
        return Err(Error::InvalidEvent(format!("velocity {velocity} > 127")));
    }
    Ok(())
}

fn write_event(out: &mut Vec<u8>, event: &MidiEvent) -> Result<()> {
    if event.delta_ticks > VLQ_MAX {
        return Err(Error::VlqOutOfRange(u64::from(event.delta_ticks)));
    }
    write_vlq_into(out, event.delta_ticks);
    match &event.kind {
        MidiEventKind::NoteOn { channel, pitch, velocity } => {
            check_channel_message(*channel, *pitch, *velocity)?;
            if *velocity == 0 {
                // Would decode as a note-off; the structure must say what it
                // means.
                return Err(Error::InvalidEvent(
                    "note-on velocity 0 must be represented as a note-off".into(),
                ));
            }
            out.extend_from_slice(&[0x90 | channel, *pitch, *velocity]);
        }
        MidiEventKind::NoteOff { channel, pitch, velocity } => {
            check_channel_message(*channel, *pitch, *velocity)?;
            out.extend_from_slice(&[0x80 | channel, *pitch, *velocity]);
        }
        MidiEventKind::Tempo { micros_per_quarter } => {
            if *micros_per_quarter == 0 || *micros_per_quarter > 0xFF_FFFF {
                return Err(Error::InvalidEvent(format!(
                    "tempo {micros_per_quarter} outside 1..=0xFFFFFF"
                )));
            }
            out.extend_from_slice(&[
                0xFF,
                0x51,
                0x03,
                (micros_per_quarter >> 16) as u8,
                (micros_per_quarter >> 8) as u8,
                *micros_per_quarter as u8,
            ]);
        }
        MidiEventKind::EndOfTrack => out.extend_from_slice(&[0xFF, 0x2F, 0x00]),
        MidiEventKind::Other { raw } => {
            match raw.first() {
                Some(b) if *b & 0x80 != 0 => {}
                _ => {
                    return Err(Error::InvalidEvent(
                        "raw event must start with a status byte".into(),
                    ))
                }
            }
            out.extend_from_slice(raw);
        }
    }
    Ok(())
}
