//! C ABI for the fugato note-sequence model.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`FugatoStatus`]; `FUGATO_STATUS_OK`
//!   is zero. On failure a thread-local message is recorded and can be read
//!   with [`fugato_last_error`] until the next failure on the same thread.
//! * [`FugatoModel`] is an opaque handle obtained from
//!   [`fugato_model_load`] or [`fugato_model_from_bytes`] and released with
//!   [`fugato_model_free`]. A handle is immutable and safe to share across
//!   threads for concurrent generation.
//! * Buffers and strings returned through out-parameters are owned by this
//!   library; release them with [`fugato_buffer_free`] and
//!   [`fugato_string_free`]. All `free` functions accept null.
//!
//! The matching header is generated into `include/fugato.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fugato::alphabet::Alphabets;
use fugato::checkpoint::Checkpoint;
use fugato::generate::{export_midi, generate_traced, GenConfig};
use fugato::midi::parse_midi;
use fugato::normalize::normalize;
use fugato::score::write_score_text;
use fugato::Error;

/// Result of a fugato call. Zero means success; any other value is an
/// error whose message is available from `fugato_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FugatoStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value was rejected (bad sampling parameters, …).
    InvalidArgument = 2,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 3,
    /// A file could not be read or written.
    Io = 4,
    /// Input bytes were malformed (not a checkpoint, not a MIDI file, …).
    BadData = 5,
    /// The library panicked; this is a bug in fugato.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).expect("NUL bytes were just removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn fail(status: FugatoStatus, message: impl Into<String>) -> FugatoStatus {
    set_last_error(message);
    status
}

fn fail_with(error: &Error) -> FugatoStatus {
    let status = if error.is_usage() {
        FugatoStatus::InvalidArgument
    } else if matches!(error, Error::Io { .. }) {
        FugatoStatus::Io
    } else {
        FugatoStatus::BadData
    };
    fail(status, error.to_string())
}

/// Run an FFI body, converting panics into `FUGATO_STATUS_PANIC` instead of
/// unwinding across the C boundary.
fn guarded(body: impl FnOnce() -> FugatoStatus) -> FugatoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(FugatoStatus::Panic, "internal panic in fugato"),
    }
}

macro_rules! require_non_null {
    ($ptr:expr) => {
        if $ptr.is_null() {
            return fail(
                FugatoStatus::NullArgument,
                concat!("argument `", stringify!($ptr), "` is null"),
            );
        }
    };
}

/// Opaque handle to a loaded model checkpoint.
pub struct FugatoModel {
    checkpoint: Checkpoint,
}

/// Library version as a static NUL-terminated string. Never null; do not
/// free.
#[no_mangle]
pub extern "C" fn fugato_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread, as a
/// NUL-terminated string. Valid until the next failing call on this
/// thread; do not free. Returns an empty string if nothing failed yet.
#[no_mangle]
pub extern "C" fn fugato_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a model checkpoint from a file written by `fugato train` (or the
/// core library). On success stores a new handle in `*out`.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fugato_model_load(
    path: *const c_char,
    out: *mut *mut FugatoModel,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(path);
        require_non_null!(out);
        let path = match CStr::from_ptr(path).to_str() {
            Ok(text) => Path::new(text),
            Err(_) => return fail(FugatoStatus::InvalidUtf8, "checkpoint path is not UTF-8"),
        };
        match Checkpoint::load(path) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(FugatoModel { checkpoint }));
                FugatoStatus::Ok
            }
            Err(error) => fail_with(&error),
        }
    })
}

/// Load a model checkpoint from an in-memory buffer. On success stores a
/// new handle in `*out`.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` to writable memory
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fugato_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut FugatoModel,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(data);
        require_non_null!(out);
        let bytes = slice::from_raw_parts(data, len);
        match Checkpoint::from_bytes(bytes) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(FugatoModel { checkpoint }));
                FugatoStatus::Ok
            }
            Err(error) => fail_with(&error),
        }
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be a handle from a fugato load function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fugato_model_free(model: *mut FugatoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of completed training epochs recorded in the checkpoint.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fugato_model_epoch(
    model: *const FugatoModel,
    out: *mut u64,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(model);
        require_non_null!(out);
        *out = (*model).checkpoint.epoch as u64;
        FugatoStatus::Ok
    })
}

/// Sample a score of `length` notes with constrained top-`top_m` sampling
/// seeded by `seed`, and return it as Standard MIDI File bytes. On success
/// `*out_data`/`*out_len` describe a buffer owned by the library; release
/// it with `fugato_buffer_free`.
///
/// # Safety
/// `model` must be a live handle; `out_data` and `out_len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fugato_generate_midi(
    model: *const FugatoModel,
    seed: u64,
    length: usize,
    top_m: usize,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(model);
        require_non_null!(out_data);
        require_non_null!(out_len);
        let checkpoint = &(*model).checkpoint;
        let config = GenConfig { seed, length, top_m, ..GenConfig::default() };
        let bytes = match generate_traced(checkpoint, &config)
            .and_then(|(score, _)| export_midi(&score, checkpoint, &config))
        {
            Ok(bytes) => bytes,
            Err(error) => return fail_with(&error),
        };
        let boxed = bytes.into_boxed_slice();
        *out_len = boxed.len();
        *out_data = Box::into_raw(boxed) as *mut u8;
        FugatoStatus::Ok
    })
}

/// Release a buffer returned by this library. `len` must be the length the
/// library reported. Null is ignored.
///
/// # Safety
/// `(data, len)` must come from a fugato call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fugato_buffer_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

/// Parse MIDI bytes and normalize them onto the default alphabets (22
/// timings, 21 durations, 88 pitches). On success stores a NUL-terminated
/// note-list text (one `timing duration pitch` index triple per line) in
/// `*out_text`; release it with `fugato_string_free`.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out_text` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fugato_normalize_midi(
    data: *const u8,
    len: usize,
    out_text: *mut *mut c_char,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(data);
        require_non_null!(out_text);
        let bytes = slice::from_raw_parts(data, len);
        let alphabets = Alphabets::standard();
        let score = match parse_midi(bytes).and_then(|file| normalize(&file, &alphabets, "buffer"))
        {
            Ok(score) => score,
            Err(error) => return fail_with(&error),
        };
        let text = write_score_text(&score, &alphabets);
        let text = CString::new(text).expect("score text never contains NUL");
        *out_text = text.into_raw();
        FugatoStatus::Ok
    })
}

/// Read a MIDI file and normalize it like `fugato_normalize_midi`.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out_text` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fugato_normalize_file(
    path: *const c_char,
    out_text: *mut *mut c_char,
) -> FugatoStatus {
    guarded(|| {
        require_non_null!(path);
        require_non_null!(out_text);
        let path = match CStr::from_ptr(path).to_str() {
            Ok(text) => Path::new(text),
            Err(_) => return fail(FugatoStatus::InvalidUtf8, "MIDI path is not UTF-8"),
        };
        let bytes = match std::fs::read(path) {
            Ok(bytes) => bytes,
            Err(error) => return fail(FugatoStatus::Io, format!("{}: {error}", path.display())),
        };
        fugato_normalize_midi(bytes.as_ptr(), bytes.len(), out_text)
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `text` must come from a fugato call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fugato_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use std::ffi::CString;

    use fugato::midi::serialize_midi;
    use fugato::model::{AlphabetDims, ModelConfig};
    use fugato::normalize::{denormalize, synthetic_score};
    use fugato::score::parse_score_text;
    use fugato::trainer::{TrainConfig, Trainer};

    fn tiny_checkpoint() -> Checkpoint {
        let alphabets = Alphabets::standard();
        let songs: Vec<_> = (0..2).map(|seed| synthetic_score(seed, 12, &alphabets)).collect();
        let model_config = ModelConfig {
            layer_sizes: [8, 8, 8],
            dropout_rate: 0.0,
            alphabets: AlphabetDims::standard(),
            seed: 1,
            aux_supervision: true,
        };
        let trainer = Trainer::new(
            vec![songs[0].clone()],
            vec![songs[1].clone()],
            model_config,
            TrainConfig::default(),
            alphabets,
        )
        .unwrap();
        trainer.checkpoint().unwrap()
    }

    fn load_model(checkpoint: &Checkpoint) -> *mut FugatoModel {
        let bytes = checkpoint.to_bytes().unwrap();
        let mut handle: *mut FugatoModel = ptr::null_mut();
        let status = unsafe { fugato_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut handle) };
        assert_eq!(status, FugatoStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    fn last_error_text() -> String {
        unsafe { CStr::from_ptr(fugato_last_error()).to_string_lossy().into_owned() }
    }

    #[test]
    fn version_is_a_static_string() {
        let version = unsafe { CStr::from_ptr(fugato_version()) };
        assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn model_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let checkpoint = tiny_checkpoint();
        checkpoint.save(&path).unwrap();

        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut FugatoModel = ptr::null_mut();
        let status = unsafe { fugato_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, FugatoStatus::Ok);
        let mut epoch = u64::MAX;
        assert_eq!(unsafe { fugato_model_epoch(handle, &mut epoch) }, FugatoStatus::Ok);
        assert_eq!(epoch, 0);
        unsafe { fugato_model_free(handle) };
    }

    #[test]
    fn missing_file_reports_io_error() {
        let c_path = CString::new("/no/such/model.ckpt").unwrap();
        let mut handle: *mut FugatoModel = ptr::null_mut();
        let status = unsafe { fugato_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, FugatoStatus::Io);
        assert!(handle.is_null());
        assert!(last_error_text().contains("model.ckpt"));
    }

    #[test]
    fn junk_bytes_report_bad_data() {
        let mut handle: *mut FugatoModel = ptr::null_mut();
        let status =
            unsafe { fugato_model_from_bytes(b"junk".as_ptr(), 4, &mut handle) };
        assert_eq!(status, FugatoStatus::BadData);
        assert!(!last_error_text().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let checkpoint = tiny_checkpoint();
        let handle = load_model(&checkpoint);
        let mut len = 0usize;
        let mut data: *mut u8 = ptr::null_mut();
        unsafe {
            assert_eq!(
                fugato_model_load(ptr::null(), &mut (ptr::null_mut())),
                FugatoStatus::NullArgument
            );
            assert_eq!(fugato_model_from_bytes(ptr::null(), 0, &mut (ptr::null_mut())),
                FugatoStatus::NullArgument);
            assert_eq!(
                fugato_generate_midi(ptr::null(), 0, 8, 2, &mut data, &mut len),
                FugatoStatus::NullArgument
            );
            assert_eq!(
                fugato_generate_midi(handle, 0, 8, 2, ptr::null_mut(), &mut len),
                FugatoStatus::NullArgument
            );
            assert_eq!(
                fugato_normalize_midi(ptr::null(), 0, &mut (ptr::null_mut())),
                FugatoStatus::NullArgument
            );
            assert!(last_error_text().contains("null"));
            fugato_model_free(handle);
        }
    }

    #[test]
    fn free_functions_accept_null() {
        unsafe {
            fugato_model_free(ptr::null_mut());
            fugato_buffer_free(ptr::null_mut(), 0);
            fugato_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn generated_buffer_is_valid_midi() {
        let checkpoint = tiny_checkpoint();
        let handle = load_model(&checkpoint);
        let mut data: *mut u8 = ptr::null_mut();
        let mut len = 0usize;
        let status = unsafe { fugato_generate_midi(handle, 5, 8, 2, &mut data, &mut len) };
        assert_eq!(status, FugatoStatus::Ok);
        let bytes = unsafe { slice::from_raw_parts(data, len) };
        let file = parse_midi(bytes).unwrap();
        let alphabets = Alphabets::standard();
        let score = normalize(&file, &alphabets, "generated").unwrap();
        assert_eq!(score.len(), 8);
        unsafe {
            fugato_buffer_free(data, len);
            fugato_model_free(handle);
        }
    }

    #[test]
    fn bad_sampling_parameters_are_invalid_arguments() {
        let checkpoint = tiny_checkpoint();
        let handle = load_model(&checkpoint);
        let mut data: *mut u8 = ptr::null_mut();
        let mut len = 0usize;
        let status = unsafe { fugato_generate_midi(handle, 5, 8, 0, &mut data, &mut len) };
        assert_eq!(status, FugatoStatus::InvalidArgument);
        assert!(data.is_null());
        unsafe { fugato_model_free(handle) };
    }

    #[test]
    fn normalize_midi_round_trips_through_text() {
        let alphabets = Alphabets::standard();
        let score = synthetic_score(9, 10, &alphabets);
        let file = denormalize(&score, &alphabets, 192, 120.0, 80).unwrap();
        let bytes = serialize_midi(&file).unwrap();

        let mut text: *mut c_char = ptr::null_mut();
        let status = unsafe { fugato_normalize_midi(bytes.as_ptr(), bytes.len(), &mut text) };
        assert_eq!(status, FugatoStatus::Ok);
        let parsed = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
        unsafe { fugato_string_free(text) };

        let back = parse_score_text(&parsed, &alphabets).unwrap();
        assert_eq!(back.notes, score.notes);
    }

    #[test]
    fn normalize_file_matches_buffer_variant() {
        let alphabets = Alphabets::standard();
        let score = synthetic_score(3, 6, &alphabets);
        let file = denormalize(&score, &alphabets, 192, 120.0, 80).unwrap();
        let bytes = serialize_midi(&file).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("song.mid");
        std::fs::write(&path, &bytes).unwrap();

        let mut from_file: *mut c_char = ptr::null_mut();
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(
            unsafe { fugato_normalize_file(c_path.as_ptr(), &mut from_file) },
            FugatoStatus::Ok
        );
        let mut from_bytes: *mut c_char = ptr::null_mut();
        assert_eq!(
            unsafe { fugato_normalize_midi(bytes.as_ptr(), bytes.len(), &mut from_bytes) },
            FugatoStatus::Ok
        );
        unsafe {
            assert_eq!(CStr::from_ptr(from_file), CStr::from_ptr(from_bytes));
            fugato_string_free(from_file);
            fugato_string_free(from_bytes);
        }
    }

    #[test]
    fn corrupt_midi_reports_bad_data() {
        let mut text: *mut c_char = ptr::null_mut();
        let status = unsafe { fugato_normalize_midi(b"MThd nope".as_ptr(), 9, &mut text) };
        assert_eq!(status, FugatoStatus::BadData);
        assert!(text.is_null());
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("fugato.h"),
        )
        .expect("build script should generate include/fugato.h");
        for symbol in [
            "FUGATO_STATUS_OK",
            "fugato_version",
            "fugato_last_error",
            "fugato_model_load",
            "fugato_model_from_bytes",
            "fugato_model_free",
            "fugato_generate_midi",
            "fugato_buffer_free",
            "fugato_normalize_midi",
            "fugato_normalize_file",
            "fugato_string_free",
        ] {
            assert!(header.contains(symbol), "header is missing `{symbol}`");
        }
    }
}
