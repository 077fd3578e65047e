//! Command implementations behind the `fugato` binary.
//!
//! Each `cmd_*` function does the filesystem work and returns a summary for
//! the binary to print; errors bubble up as [`crate::Error`] so the binary
//! can map them to exit codes (usage errors exit 1, data errors exit 2).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::alphabet::Alphabets;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::generate::{export_midi, generate_traced, GenConfig};
use crate::midi::parse_midi;
use crate::normalize::normalize_detailed;
use crate::score::{parse_score_text, write_score_text, Score};
use crate::trainer::{evaluate, split_corpus, AccuracyReport, EpochLog, Trainer};

/// File extensions treated as raw MIDI.
const MIDI_EXTENSIONS: &[&str] = &["mid", "midi"];
/// Extension of normalized score text files.
pub const NOTES_EXTENSION: &str = "notes";

/// Collect regular files under `root` (recursively) whose extension matches
/// `extensions` (case-insensitive). A `root` that is itself a file is taken
/// as a one-element corpus. The result is sorted by path.
fn collect_files(root: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let matches = |path: &Path| {
        path.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)))
    };
    if root.is_file() {
        return if matches(root) {
            Ok(vec![root.to_path_buf()])
        } else {
            Err(Error::EmptyCorpus(root.to_path_buf()))
        };
    }
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            match e.into_io_error() {
                Some(io) => Error::io(path, io),
                None => Error::EmptyCorpus(path),
            }
        })?;
        if entry.file_type().is_file() && matches(entry.path()) {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "score".into())
}

/// A corpus read from disk: normalized scores plus the files that had to be
/// skipped and why.
pub struct CorpusLoad {
    pub scores: Vec<Score>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Load every `.mid`/`.midi`/`.notes` file under `root` as a normalized
/// score. Unreadable files are skipped and reported; a corpus with no
/// usable file at all is an error.
pub fn load_corpus(root: &Path, alphabets: &Alphabets) -> Result<CorpusLoad> {
    let mut extensions: Vec<&str> = MIDI_EXTENSIONS.to_vec();
    extensions.push(NOTES_EXTENSION);
    let files = collect_files(root, &extensions)?;
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let result = read_score(&path, alphabets);
        match result {
            Ok(score) => scores.push(score),
            Err(error) => {
                log::warn!("skipping {}: {error}", path.display());
                skipped.push((path, error.to_string()));
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    Ok(CorpusLoad { scores, skipped })
}

fn read_score(path: &Path, alphabets: &Alphabets) -> Result<Score> {
    let is_notes = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(NOTES_EXTENSION));
    if is_notes {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_score_text(&text, alphabets)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file = parse_midi(&bytes)?;
        crate::normalize::normalize(&file, alphabets, &stem_of(path))
    }
}

// ----------------------------------------------------------------------
// normalize
// ----------------------------------------------------------------------

/// Per-file outcome of `cmd_normalize`.
#[derive(Debug, Clone)]
pub struct NormalizedFile {
    pub input: PathBuf,
    pub output: PathBuf,
    pub notes: usize,
    /// Mean |original - quantized| per quantized value, in quarter notes.
    pub mean_distortion: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct NormalizeSummary {
    pub files: Vec<NormalizedFile>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Normalize every MIDI file under `input` into a `.notes` file in
/// `out_dir`. Unreadable or unusable files are reported in the summary,
/// not fatal; converting nothing at all is an error.
pub fn cmd_normalize(input: &Path, out_dir: &Path, config: &RunConfig) -> Result<NormalizeSummary> {
    let alphabets = config.alphabets()?;
    let files = collect_files(input, MIDI_EXTENSIONS)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut summary = NormalizeSummary::default();
    let mut used_names: BTreeSet<String> = BTreeSet::new();
    for path in files {
        let converted = fs::read(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|bytes| parse_midi(&bytes))
            .and_then(|file| normalize_detailed(&file, &alphabets, &stem_of(&path)));
        let normalized = match converted {
            Ok(normalized) => normalized,
            Err(error) => {
                log::warn!("skipping {}: {error}", path.display());
                summary.failures.push((path, error.to_string()));
                continue;
            }
        };

        // Distinct inputs may share a stem; never overwrite silently.
        let mut name = stem_of(&path);
        let mut counter = 1;
        while !used_names.insert(name.clone()) {
            counter += 1;
            name = format!("{}-{counter}", stem_of(&path));
        }
        let output = out_dir.join(format!("{name}.{NOTES_EXTENSION}"));
        let text = write_score_text(&normalized.score, &alphabets);
        fs::write(&output, text).map_err(|e| Error::io(&output, e))?;
        summary.files.push(NormalizedFile {
            input: path,
            output,
            notes: normalized.score.len(),
            mean_distortion: normalized.mean_distortion(),
            warnings: normalized.warnings.clone(),
        });
    }
    if summary.files.is_empty() {
        return Err(Error::EmptyCorpus(input.to_path_buf()));
    }
    Ok(summary)
}

// ----------------------------------------------------------------------
// train
// ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub history: Vec<EpochLog>,
    /// Metrics of the checkpoint that was written (best mean accuracy).
    pub best: AccuracyReport,
    pub best_epoch: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Train on the corpus under `corpus` and write the best checkpoint to
/// `out` plus a CSV epoch log next to it (or to `log_path` if given).
pub fn cmd_train(
    corpus: &Path,
    out: &Path,
    log_path: Option<&Path>,
    config: &RunConfig,
) -> Result<TrainOutcome> {
    let alphabets = config.alphabets()?;
    let model_config = config.model_config()?;
    let train_config = config.train_config()?;

    let loaded = load_corpus(corpus, &alphabets)?;
    let (train_set, valid_set) =
        split_corpus(&loaded.scores, train_config.valid_fraction, train_config.seed)?;
    log::info!(
        "corpus: {} scores ({} train, {} validation), {} skipped",
        loaded.scores.len(),
        train_set.len(),
        valid_set.len(),
        loaded.skipped.len()
    );

    let epochs = train_config.epochs;
    let mut trainer = Trainer::new(train_set, valid_set, model_config, train_config, alphabets)?;
    let best = trainer.fit(epochs)?;

    best.save(out)?;
    let log_file = match log_path {
        Some(p) => p.to_path_buf(),
        None => out.with_extension("log.csv"),
    };
    let mut csv = String::from(EpochLog::csv_header());
    csv.push('\n');
    for entry in trainer.history() {
        csv.push_str(&entry.to_csv_row());
        csv.push('\n');
    }
    fs::write(&log_file, csv).map_err(|e| Error::io(&log_file, e))?;

    Ok(TrainOutcome {
        checkpoint_path: out.to_path_buf(),
        log_path: log_file,
        history: trainer.history().to_vec(),
        best: best.metrics,
        best_epoch: best.epoch,
        skipped: loaded.skipped,
    })
}

// ----------------------------------------------------------------------
// generate
// ----------------------------------------------------------------------

/// Manifest written next to generated files; records everything needed to
/// regenerate them exactly.
#[derive(Debug, Clone, Serialize)]
pub struct GenerateManifest {
    pub model: String,
    pub top_m: usize,
    pub length: usize,
    pub ppq: u16,
    pub bpm: f64,
    pub velocity: u8,
    pub base_seed: u64,
    pub scores: Vec<GeneratedEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedEntry {
    pub file: String,
    pub seed: u64,
    pub notes: usize,
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

/// Sample `count` scores from the checkpoint at `model` and write them as
/// `.mid` files plus a `manifest.json` into `out_dir`. Score `i` uses seed
/// `base_seed + i`, so any file can be regenerated from the manifest alone.
pub fn cmd_generate(
    model: &Path,
    out_dir: &Path,
    count: usize,
    config: &RunConfig,
) -> Result<GenerateOutcome> {
    if count == 0 {
        return Err(Error::InvalidConfig("cannot generate zero scores".into()));
    }
    let gen_config = config.gen_config()?;
    let checkpoint = Checkpoint::load(model)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut manifest = GenerateManifest {
        model: model.display().to_string(),
        top_m: gen_config.top_m,
        length: gen_config.length,
        ppq: gen_config.ppq,
        bpm: gen_config.bpm,
        velocity: gen_config.velocity,
        base_seed: gen_config.seed,
        scores: Vec::with_capacity(count),
    };
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        let seed = gen_config.seed.wrapping_add(i as u64);
        let one = GenConfig { seed, ..gen_config.clone() };
        let (score, _) = generate_traced(&checkpoint, &one)?;
        let bytes = export_midi(&score, &checkpoint, &one)?;
        let file_name = format!("sample-{seed}.mid");
        let path = out_dir.join(&file_name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        manifest.scores.push(GeneratedEntry { file: file_name, seed, notes: score.len() });
        files.push(path);
    }

    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization failed: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(GenerateOutcome { files, manifest_path })
}

// ----------------------------------------------------------------------
// evaluate
// ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: AccuracyReport,
    pub scores: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Teacher-forced accuracy of the checkpoint at `model` over the corpus
/// under `corpus`, using the checkpoint's own alphabets.
pub fn cmd_evaluate(model: &Path, corpus: &Path) -> Result<EvaluateOutcome> {
    let checkpoint = Checkpoint::load(model)?;
    let loaded = load_corpus(corpus, &checkpoint.alphabets)?;
    let report = evaluate(&checkpoint.params, &loaded.scores)?;
    Ok(EvaluateOutcome { report, scores: loaded.scores.len(), skipped: loaded.skipped })
}

/// CSV rendering of an accuracy report (header + one row).
pub fn report_csv(report: &AccuracyReport) -> String {
    format!(
        "acc_dt,acc_t,acc_p,nll,transitions\n{:.6},{:.6},{:.6},{:.6},{}\n",
        report.timing, report.duration, report.pitch, report.nll, report.transitions
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::FirstNoteTable;
    use crate::model::optim::AdamState;
    use crate::model::{AlphabetDims, ModelConfig, ModelParams};
    use crate::normalize::{denormalize, tests::random_canonical_score};
    use crate::trainer::TrainConfig;
    use std::path::Path;

    fn write_corpus(dir: &Path, n: usize, notes: usize) {
        for seed in 0..n as u64 {
            let score = random_canonical_score(seed, notes);
            let file = denormalize(&score, &Alphabets::standard(), 192, 120.0, 80).unwrap();
            let bytes = crate::midi::serialize_midi(&file).unwrap();
            fs::write(dir.join(format!("song-{seed}.mid")), bytes).unwrap();
        }
    }

    fn tiny_run_config(seed: u64) -> RunConfig {
        let mut config = RunConfig { seed, ..RunConfig::default() };
        config.model.layer_sizes = [6, 6, 6];
        config.model.dropout = 0.0;
        config.training.epochs = 2;
        config.training.batch_songs = 4;
        config.training.window_notes = 8;
        config.training.valid_fraction = 0.25;
        config.training.augment = false;
        config.generation.length = 10;
        config
    }

    #[test]
    fn normalize_converts_a_directory_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("midi");
        fs::create_dir(&input).unwrap();
        write_corpus(&input, 2, 8);
        // A corrupt file is reported but not fatal.
        fs::write(input.join("broken.mid"), b"not midi").unwrap();
        // Non-MIDI files are not picked up at all.
        fs::write(input.join("readme.txt"), b"hello").unwrap();

        let out = dir.path().join("notes");
        let config = RunConfig::default();
        let summary = cmd_normalize(&input, &out, &config).unwrap();
        assert_eq!(summary.files.len(), 2);
        assert_eq!(summary.failures.len(), 1);
        assert!(summary.failures[0].0.ends_with("broken.mid"));
        for file in &summary.files {
            assert!(file.output.exists());
            assert_eq!(file.notes, 8);
            assert_eq!(file.mean_distortion, 0.0);
        }

        // Idempotent: a second run rewrites byte-identical outputs.
        let before: Vec<Vec<u8>> =
            summary.files.iter().map(|f| fs::read(&f.output).unwrap()).collect();
        let again = cmd_normalize(&input, &out, &config).unwrap();
        let after: Vec<Vec<u8>> =
            again.files.iter().map(|f| fs::read(&f.output).unwrap()).collect();
        assert_eq!(before, after);

        // Normalized text loads back as a corpus.
        let loaded = load_corpus(&out, &Alphabets::standard()).unwrap();
        assert_eq!(loaded.scores.len(), 2);
        assert!(loaded.skipped.is_empty());
    }

    #[test]
    fn normalize_errors_on_empty_or_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty");
        fs::create_dir(&empty).unwrap();
        let out = dir.path().join("out");
        let config = RunConfig::default();
        assert!(matches!(
            cmd_normalize(&empty, &out, &config),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(cmd_normalize(&dir.path().join("missing"), &out, &config).is_err());

        // All files corrupt: error, not an empty success.
        let broken = dir.path().join("broken");
        fs::create_dir(&broken).unwrap();
        fs::write(broken.join("a.mid"), b"junk").unwrap();
        assert!(matches!(
            cmd_normalize(&broken, &out, &config),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn stem_collisions_get_distinct_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("midi");
        fs::create_dir_all(input.join("a")).unwrap();
        fs::create_dir_all(input.join("b")).unwrap();
        for sub in ["a", "b"] {
            let score = random_canonical_score(0, 6);
            let file = denormalize(&score, &Alphabets::standard(), 192, 120.0, 80).unwrap();
            let bytes = crate::midi::serialize_midi(&file).unwrap();
            fs::write(input.join(sub).join("tune.mid"), bytes).unwrap();
        }
        let out = dir.path().join("notes");
        let summary = cmd_normalize(&input, &out, &RunConfig::default()).unwrap();
        assert_eq!(summary.files.len(), 2);
        let outputs: BTreeSet<&Path> =
            summary.files.iter().map(|f| f.output.as_path()).collect();
        assert_eq!(outputs.len(), 2, "colliding stems must not overwrite each other");
    }

    #[test]
    fn train_writes_checkpoint_and_log_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        fs::create_dir(&corpus).unwrap();
        write_corpus(&corpus, 5, 8);
        let config = tiny_run_config(3);

        let out_a = dir.path().join("a.ckpt");
        let outcome_a = cmd_train(&corpus, &out_a, None, &config).unwrap();
        assert_eq!(outcome_a.history.len(), 2);
        assert!(out_a.exists());
        assert_eq!(outcome_a.log_path, dir.path().join("a.log.csv"));
        let log_text = fs::read_to_string(&outcome_a.log_path).unwrap();
        assert!(log_text.starts_with("epoch,train_nll,acc_dt,acc_t,acc_p\n"));
        assert_eq!(log_text.lines().count(), 3);

        // Same seed, augmentation off: byte-identical checkpoints.
        let out_b = dir.path().join("b.ckpt");
        cmd_train(&corpus, &out_b, None, &config).unwrap();
        assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());

        // The written checkpoint is the best epoch's snapshot.
        let checkpoint = Checkpoint::load(&out_a).unwrap();
        assert_eq!(checkpoint.metrics, outcome_a.best);
        let best_mean = outcome_a.best.mean_accuracy();
        assert!(outcome_a
            .history
            .iter()
            .all(|l| l.accuracy.mean_accuracy() <= best_mean + 1e-15));
    }

    #[test]
    fn train_errors_on_missing_or_tiny_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_run_config(0);
        let out = dir.path().join("model.ckpt");
        assert!(cmd_train(&dir.path().join("missing"), &out, None, &config).is_err());

        let corpus = dir.path().join("one");
        fs::create_dir(&corpus).unwrap();
        write_corpus(&corpus, 1, 8);
        assert!(matches!(
            cmd_train(&corpus, &out, None, &config),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    fn write_tiny_checkpoint(path: &Path) {
        let model_config = ModelConfig {
            layer_sizes: [6, 6, 6],
            dropout_rate: 0.0,
            alphabets: AlphabetDims::standard(),
            seed: 1,
            aux_supervision: true,
        };
        let params = ModelParams::init(&model_config).unwrap();
        let scores: Vec<Score> = (0..2).map(|s| random_canonical_score(s, 6)).collect();
        let checkpoint = Checkpoint {
            adam: AdamState::new(params.dims),
            params,
            model_config,
            train_config: TrainConfig::default(),
            alphabets: Alphabets::standard(),
            first_notes: FirstNoteTable::from_scores(&scores).unwrap(),
            metrics: AccuracyReport::default(),
            epoch: 0,
        };
        checkpoint.save(path).unwrap();
    }

    #[test]
    fn generate_writes_files_and_a_regenerating_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("model.ckpt");
        write_tiny_checkpoint(&model);
        let out = dir.path().join("samples");
        let config = tiny_run_config(40);

        let outcome = cmd_generate(&model, &out, 3, &config).unwrap();
        assert_eq!(outcome.files.len(), 3);
        for file in &outcome.files {
            assert!(file.exists());
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&outcome.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["top_m"], 3);
        assert_eq!(manifest["base_seed"], 40);
        let entries = manifest["scores"].as_array().unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[1]["seed"], 41);

        // Exact regeneration from a manifest entry: same seed, same bytes.
        let again = dir.path().join("again");
        let config_41 = RunConfig { seed: 41, ..config.clone() };
        let regenerated = cmd_generate(&model, &again, 1, &config_41).unwrap();
        assert_eq!(
            fs::read(&outcome.files[1]).unwrap(),
            fs::read(&regenerated.files[0]).unwrap()
        );
    }

    #[test]
    fn generate_rejects_zero_count_and_bad_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("model.ckpt");
        write_tiny_checkpoint(&model);
        let out = dir.path().join("samples");
        let config = tiny_run_config(0);
        assert!(matches!(
            cmd_generate(&model, &out, 0, &config),
            Err(Error::InvalidConfig(_))
        ));

        let junk = dir.path().join("junk.ckpt");
        fs::write(&junk, b"garbage").unwrap();
        assert!(matches!(
            cmd_generate(&junk, &out, 1, &config),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn evaluate_matches_the_library_and_prints_csv() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("model.ckpt");
        write_tiny_checkpoint(&model);
        let corpus = dir.path().join("corpus");
        fs::create_dir(&corpus).unwrap();
        write_corpus(&corpus, 3, 8);

        let outcome = cmd_evaluate(&model, &corpus).unwrap();
        assert_eq!(outcome.scores, 3);
        let checkpoint = Checkpoint::load(&model).unwrap();
        let loaded = load_corpus(&corpus, &checkpoint.alphabets).unwrap();
        let direct = evaluate(&checkpoint.params, &loaded.scores).unwrap();
        assert_eq!(outcome.report, direct);
        for value in [outcome.report.timing, outcome.report.duration, outcome.report.pitch] {
            assert!((0.0..=1.0).contains(&value));
        }

        let csv = report_csv(&outcome.report);
        assert!(csv.starts_with("acc_dt,acc_t,acc_p,nll,transitions\n"));
        assert_eq!(csv.lines().count(), 2);

        let empty = dir.path().join("empty");
        fs::create_dir(&empty).unwrap();
        assert!(cmd_evaluate(&model, &empty).is_err());
    }
}
