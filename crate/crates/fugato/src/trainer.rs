//! Training loop: corpus split, epoch regimen, teacher-forced evaluation.
//!
//! One epoch shuffles the training songs, draws an optional transposition
//! for each, and walks batches of songs in lockstep windows: every round
//! advances each unfinished song in the batch by one truncated-BPTT window,
//! averages their gradients, clips, and applies one Adam update. Recurrent
//! state is carried across a song's windows and reset only at song starts.
//!
//! All randomness is derived from the run seed: song order, transpositions
//! and per-song dropout streams are reproducible, and batch members are
//! processed in deterministic order even when computed in parallel.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabets;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::generate::FirstNoteTable;
use crate::model::optim::{adam_step, clip_gradients, AdamConfig, AdamState};
use crate::model::{
    backprop_window, draw_masks, note_step, plan_transitions, ModelConfig, ModelParams,
    ModelState, SubstepMasks,
};
use crate::normalize::{transpose, transposition_bounds};
use crate::score::{NoteEvent, Score};

/// Hyperparameters of the training regimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs to run in one `fit` call.
    pub epochs: usize,
    /// Songs per batch; one Adam step per lockstep window round.
    pub batch_songs: usize,
    /// Note transitions per truncated-BPTT window (3 substeps each).
    pub window_notes: usize,
    /// Fraction of the corpus held out for validation.
    pub valid_fraction: f64,
    pub optimizer: AdamConfig,
    /// Global gradient norm ceiling applied before each update.
    pub clip_norm: f64,
    /// Transpose each song by a random in-range shift every epoch.
    pub augment: bool,
    /// Seed for shuffling, transposition and dropout streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_songs: 32,
            window_notes: 64,
            valid_fraction: 0.10,
            optimizer: AdamConfig::default(),
            clip_norm: 1.0,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_songs == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.window_notes == 0 {
            return Err(Error::InvalidConfig("window must cover at least one transition".into()));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {} outside (0, 1)",
                self.valid_fraction
            )));
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "clip norm {} must be positive",
                self.clip_norm
            )));
        }
        self.optimizer.validate()
    }
}

/// Independent random stream for a given purpose, derived from the run
/// seed. Keeping streams separate makes epochs resumable: epoch `e` always
/// sees the same randomness no matter how the trainer reached it.
fn salted_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const SPLIT_SALT: u64 = u64::MAX;

fn epoch_salt(epoch: usize) -> u64 {
    epoch as u64 + 1
}

/// Split a corpus into training and validation sets.
///
/// The shuffle is deterministic in `seed`. The validation set gets
/// `round(valid_fraction * n)` scores, at least 1 and at most n-1.
pub fn split_corpus(
    scores: &[Score],
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<Score>, Vec<Score>)> {
    if scores.len() < 2 {
        return Err(Error::CorpusTooSmall { need: 2, found: scores.len() });
    }
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {valid_fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut salted_rng(seed, SPLIT_SALT));
    let n_valid = ((valid_fraction * scores.len() as f64).round() as usize)
        .clamp(1, scores.len() - 1);
    let valid = order[..n_valid].iter().map(|&i| scores[i].clone()).collect();
    let train = order[n_valid..].iter().map(|&i| scores[i].clone()).collect();
    Ok((train, valid))
}

/// Pooled teacher-forced accuracy and negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Fraction of transitions whose timing argmax hit the target.
    pub timing: f64,
    pub duration: f64,
    pub pitch: f64,
    /// Mean negative log-probability over the three final readouts.
    pub nll: f64,
    /// Transitions pooled across all evaluated songs.
    pub transitions: usize,
}

impl AccuracyReport {
    /// Mean of the three per-feature accuracies; the checkpoint-selection
    /// criterion.
    pub fn mean_accuracy(&self) -> f64 {
        (self.timing + self.duration + self.pitch) / 3.0
    }
}

/// Index of the maximum; ties resolve to the lower index.
fn argmax(values: &ndarray::Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced evaluation without dropout.
///
/// Every transition of every score is scored against the final readout of
/// each feature; accuracies pool over all transitions. Songs with fewer
/// than two notes are skipped with a warning.
pub fn evaluate(params: &ModelParams, scores: &[Score]) -> Result<AccuracyReport> {
    let per_song: Vec<(usize, [usize; 3], f64)> = scores
        .par_iter()
        .map(|score| {
            if score.len() < 2 {
                return (0, [0, 0, 0], 0.0);
            }
            let mut state = ModelState::zeros(&params.dims);
            let mut hits = [0usize; 3];
            let mut nll_sum = 0.0;
            for pair in score.notes.windows(2) {
                let (note, next) = (&pair[0], &pair[1]);
                let (new_state, probs) = note_step(params, &state, note, next);
                state = new_state;
                for (h, (dist, target)) in [
                    (&probs.timing, next.timing),
                    (&probs.duration, next.duration),
                    (&probs.pitch, next.pitch),
                ]
                .into_iter()
                .enumerate()
                {
                    if argmax(dist) == target {
                        hits[h] += 1;
                    }
                    nll_sum -= dist[target].max(1e-12).ln();
                }
            }
            (score.len() - 1, hits, nll_sum)
        })
        .collect();

    for (score, (transitions, _, _)) in scores.iter().zip(&per_song) {
        if *transitions == 0 {
            log::warn!("score `{}` has fewer than 2 notes; skipped in evaluation", score.name);
        }
    }

    let transitions: usize = per_song.iter().map(|(t, _, _)| t).sum();
    if transitions == 0 {
        return Err(Error::EmptyScore("evaluation set has no note transitions".into()));
    }
    let mut hits = [0usize; 3];
    let mut nll_sum = 0.0;
    for (_, h, n) in &per_song {
        for i in 0..3 {
            hits[i] += h[i];
        }
        nll_sum += n;
    }
    Ok(AccuracyReport {
        timing: hits[0] as f64 / transitions as f64,
        duration: hits[1] as f64 / transitions as f64,
        pitch: hits[2] as f64 / transitions as f64,
        nll: nll_sum / (3 * transitions) as f64,
        transitions,
    })
}

/// One epoch over the training set; returns the mean NLL per supervised
/// readout across the epoch.
///
/// `epoch_rng` drives the song shuffle, per-song transposition draws and
/// per-song dropout seeds, in that order, so an epoch is a pure function of
/// (parameters, optimizer state, corpus, configs, rng state).
pub fn train_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    train_set: &[Score],
    train_config: &TrainConfig,
    model_config: &ModelConfig,
    epoch_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    train_config.validate()?;
    model_config.validate()?;
    if train_set.is_empty() {
        return Err(Error::CorpusTooSmall { need: 1, found: 0 });
    }

    struct SongPlan {
        notes: Vec<NoteEvent>,
        dropout_seed: u64,
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(epoch_rng);

    let alphabets_dims = model_config.alphabets;
    let pitch_vocab = crate::alphabet::PitchAlphabet::new(0, alphabets_dims.pitches)
        .expect("pitch count validated");
    let mut plans: Vec<SongPlan> = Vec::with_capacity(order.len());
    for &i in &order {
        let score = &train_set[i];
        if score.len() < 2 {
            log::warn!("score `{}` has fewer than 2 notes; skipped in training", score.name);
            continue;
        }
        let notes = if train_config.augment {
            // Bounds are computed over pitch indices, so any alphabet with
            // the right size works for the shift draw.
            let (lo, hi) = transposition_bounds(score, &pitch_vocab)?;
            let shift = epoch_rng.random_range(lo..=hi);
            transpose(score, shift, &pitch_vocab)?.notes
        } else {
            score.notes.clone()
        };
        let dropout_seed = epoch_rng.random::<u64>();
        plans.push(SongPlan { notes, dropout_seed });
    }
    if plans.is_empty() {
        return Err(Error::EmptyScore("no trainable songs (all have fewer than 2 notes)".into()));
    }

    struct SongRun {
        state: ModelState,
        rng: ChaCha8Rng,
        cursor: usize,
        transitions: usize,
    }

    let mut loss_sum = 0.0;
    let mut term_count = 0usize;

    for batch in plans.chunks(train_config.batch_songs) {
        let mut runs: Vec<SongRun> = batch
            .iter()
            .map(|plan| SongRun {
                state: ModelState::zeros(&params.dims),
                rng: ChaCha8Rng::seed_from_u64(plan.dropout_seed),
                cursor: 0,
                transitions: plan.notes.len() - 1,
            })
            .collect();

        loop {
            // Lockstep round: one window per unfinished song, in parallel.
            let frozen: &ModelParams = params;
            let results: Vec<Option<(ModelParams, f64, usize)>> = runs
                .par_iter_mut()
                .zip(batch.par_iter())
                .map(|(run, plan)| {
                    if run.cursor >= run.transitions {
                        return Ok(None);
                    }
                    let end = (run.cursor + train_config.window_notes).min(run.transitions);
                    let notes = &plan.notes[run.cursor..=end];
                    let specs = plan_transitions(notes, model_config.aux_supervision);
                    let masks: Option<Vec<SubstepMasks>> = if model_config.dropout_rate > 0.0 {
                        Some(
                            specs
                                .iter()
                                .map(|_| {
                                    draw_masks(
                                        &frozen.dims,
                                        model_config.dropout_rate,
                                        &mut run.rng,
                                    )
                                })
                                .collect(),
                        )
                    } else {
                        None
                    };
                    let outcome =
                        backprop_window(frozen, &run.state, &specs, masks.as_deref())?;
                    run.state = outcome.state_out;
                    run.cursor = end;
                    let terms: usize =
                        outcome.feature_nll.iter().map(|b| b.count).sum();
                    Ok(Some((outcome.grads, outcome.loss * terms as f64, terms)))
                })
                .collect::<Result<_>>()?;

            let active: Vec<&(ModelParams, f64, usize)> =
                results.iter().flatten().collect();
            if active.is_empty() {
                break;
            }
            // Deterministic order: `results` preserves batch order.
            let mut grad_mean = params.zeros_like();
            let weight = 1.0 / active.len() as f64;
            for (grads, window_loss_sum, terms) in &active {
                grad_mean.add_scaled(grads, weight);
                loss_sum += window_loss_sum;
                term_count += terms;
            }
            clip_gradients(&mut grad_mean, train_config.clip_norm)?;
            adam_step(params, &grad_mean, adam, &train_config.optimizer)?;
        }
    }

    if !params.is_finite() {
        return Err(Error::Numeric("parameters diverged (non-finite values)".into()));
    }
    Ok(loss_sum / term_count.max(1) as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean NLL per supervised readout over the epoch's windows.
    pub train_nll: f64,
    /// Validation metrics after the epoch.
    pub accuracy: AccuracyReport,
}

impl EpochLog {
    pub fn csv_header() -> &'static str {
        "epoch,train_nll,acc_dt,acc_t,acc_p"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.train_nll,
            self.accuracy.timing,
            self.accuracy.duration,
            self.accuracy.pitch
        )
    }
}

/// Stateful training driver: owns the parameters, optimizer, corpus split
/// and the best-so-far checkpoint.
pub struct Trainer {
    params: ModelParams,
    adam: AdamState,
    /// Completed epochs.
    epoch: usize,
    model_config: ModelConfig,
    train_config: TrainConfig,
    alphabets: Alphabets,
    train_set: Vec<Score>,
    valid_set: Vec<Score>,
    first_notes: FirstNoteTable,
    best: Option<Checkpoint>,
    best_accuracy: f64,
    history: Vec<EpochLog>,
}

impl Trainer {
    /// Fresh trainer with freshly initialized parameters.
    pub fn new(
        train_set: Vec<Score>,
        valid_set: Vec<Score>,
        model_config: ModelConfig,
        train_config: TrainConfig,
        alphabets: Alphabets,
    ) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        check_alphabet_match(&model_config, &alphabets)?;
        if train_set.is_empty() || valid_set.is_empty() {
            return Err(Error::CorpusTooSmall {
                need: 2,
                found: train_set.len() + valid_set.len(),
            });
        }
        for score in train_set.iter().chain(&valid_set) {
            score.validate(&alphabets)?;
        }
        let params = ModelParams::init(&model_config)?;
        let adam = AdamState::new(params.dims);
        let first_notes = FirstNoteTable::from_scores(&train_set)?;
        Ok(Trainer {
            params,
            adam,
            epoch: 0,
            model_config,
            train_config,
            alphabets,
            train_set,
            valid_set,
            first_notes,
            best: None,
            best_accuracy: f64::NEG_INFINITY,
            history: Vec::new(),
        })
    }

    /// Continue training from a checkpoint. The corpus is supplied anew;
    /// parameters, optimizer state, epoch counter, configs and the
    /// first-note distribution come from the checkpoint, so epoch `e`
    /// replays exactly as it would have in an uninterrupted run.
    pub fn from_checkpoint(
        checkpoint: Checkpoint,
        train_set: Vec<Score>,
        valid_set: Vec<Score>,
    ) -> Result<Self> {
        checkpoint.model_config.validate()?;
        checkpoint.train_config.validate()?;
        check_alphabet_match(&checkpoint.model_config, &checkpoint.alphabets)?;
        if train_set.is_empty() || valid_set.is_empty() {
            return Err(Error::CorpusTooSmall {
                need: 2,
                found: train_set.len() + valid_set.len(),
            });
        }
        for score in train_set.iter().chain(&valid_set) {
            score.validate(&checkpoint.alphabets)?;
        }
        Ok(Trainer {
            params: checkpoint.params,
            adam: checkpoint.adam,
            epoch: checkpoint.epoch,
            model_config: checkpoint.model_config,
            train_config: checkpoint.train_config,
            alphabets: checkpoint.alphabets,
            train_set,
            valid_set,
            first_notes: checkpoint.first_notes,
            best: None,
            best_accuracy: f64::NEG_INFINITY,
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochLog] {
        &self.history
    }

    /// Snapshot the current state (not the best) for resuming.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let metrics = evaluate(&self.params, &self.valid_set)?;
        Ok(self.snapshot(metrics))
    }

    fn snapshot(&self, metrics: AccuracyReport) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            alphabets: self.alphabets.clone(),
            first_notes: self.first_notes.clone(),
            metrics,
            epoch: self.epoch,
        }
    }

    /// Train for one epoch and evaluate on the validation set.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let mut rng = salted_rng(self.train_config.seed, epoch_salt(self.epoch));
        let train_nll = train_epoch(
            &mut self.params,
            &mut self.adam,
            &self.train_set,
            &self.train_config,
            &self.model_config,
            &mut rng,
        )?;
        self.epoch += 1;
        let metrics = evaluate(&self.params, &self.valid_set)?;
        if metrics.mean_accuracy() > self.best_accuracy {
            self.best_accuracy = metrics.mean_accuracy();
            self.best = Some(self.snapshot(metrics));
        }
        let log = EpochLog { epoch: self.epoch, train_nll, accuracy: metrics };
        self.history.push(log);
        Ok(log)
    }

    /// Run `epochs` epochs and return the checkpoint with the best mean
    /// validation accuracy seen during this call (or the current state if
    /// no epoch ran).
    pub fn fit(&mut self, epochs: usize) -> Result<Checkpoint> {
        for _ in 0..epochs {
            let log = self.run_epoch()?;
            log::info!(
                "epoch {}: train nll {:.4}, validation accuracy {:.3}/{:.3}/{:.3}",
                log.epoch,
                log.train_nll,
                log.accuracy.timing,
                log.accuracy.duration,
                log.accuracy.pitch
            );
        }
        match &self.best {
            Some(best) => Ok(best.clone()),
            None => self.checkpoint(),
        }
    }
}

fn check_alphabet_match(config: &ModelConfig, alphabets: &Alphabets) -> Result<()> {
    let dims = config.alphabets;
    if dims.timings != alphabets.timings().len()
        || dims.durations != alphabets.durations().len()
        || dims.pitches != alphabets.pitches().len()
    {
        return Err(Error::InvalidConfig(format!(
            "model expects vocabularies {}/{}/{} but alphabets have {}/{}/{}",
            dims.timings,
            dims.durations,
            dims.pitches,
            alphabets.timings().len(),
            alphabets.durations().len(),
            alphabets.pitches().len()
        )));
    }
    Ok(())
}

/// Convenience one-call training: split the corpus, train, return the best
/// checkpoint and the epoch log.
pub fn fit(
    corpus: &[Score],
    model_config: ModelConfig,
    train_config: TrainConfig,
    alphabets: Alphabets,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let (train_set, valid_set) =
        split_corpus(corpus, train_config.valid_fraction, train_config.seed)?;
    let epochs = train_config.epochs;
    let mut trainer = Trainer::new(train_set, valid_set, model_config, train_config, alphabets)?;
    let best = trainer.fit(epochs)?;
    Ok((best, trainer.history().to_vec()))
}
