//! Three-layer recurrent network over note triples.
//!
//! Each note transition is processed in three substeps. Substep 1 feeds the
//! full one-hot triple of the current note and reads the next note's timing
//! distribution; substep 2 feeds the just-decided timing alone and reads the
//! duration distribution; substep 3 feeds timing + duration and reads the
//! pitch distribution. The raw input vector is concatenated into every
//! layer's input and into the readout features (skip connections), so the
//! heads see both the top hidden state and the current symbols directly.
//!
//! Hidden layers are LSTM cells with the gate layout `[input, forget, cell,
//! output]` stacked row-wise in each weight matrix. Dropout acts on the
//! connections between layers (and into the heads) with inverted scaling,
//! never on the recurrent path.

mod backward;
mod forward;
pub mod optim;

pub use backward::{backprop_window, window_loss, FeatureNll, WindowOutcome};
pub use forward::{
    draw_masks, forward_substep, log_softmax, note_step, softmax, HeadLogits, NoteStepProbs,
    SubstepMasks,
};

use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::NoteEvent;

/// Sizes of the three symbol vocabularies, fixing the one-hot layout:
/// timing first, then duration, then pitch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphabetDims {
    pub timings: usize,
    pub durations: usize,
    pub pitches: usize,
}

impl AlphabetDims {
    /// The default vocabularies: 22 timings, 21 durations, 88 pitches.
    pub fn standard() -> Self {
        AlphabetDims { timings: 22, durations: 21, pitches: 88 }
    }

    /// Width of the concatenated one-hot input vector.
    pub fn input_dim(&self) -> usize {
        self.timings + self.durations + self.pitches
    }

    pub fn size_of(&self, feature: Feature) -> usize {
        match feature {
            Feature::Timing => self.timings,
            Feature::Duration => self.durations,
            Feature::Pitch => self.pitches,
        }
    }
}

/// Hyperparameters that shape the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden units per LSTM layer (exactly three layers).
    pub layer_sizes: [usize; 3],
    /// Probability of dropping a between-layer connection during training.
    pub dropout_rate: f64,
    pub alphabets: AlphabetDims,
    /// Seed for parameter initialization.
    pub seed: u64,
    /// When true (the default), every substep supervises all features that
    /// are already predictable: substep 1 reads timing, duration and pitch;
    /// substep 2 duration and pitch; substep 3 pitch. When false, only the
    /// final readout of each feature is supervised.
    pub aux_supervision: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_sizes: [64, 128, 256],
            dropout_rate: 0.3,
            alphabets: AlphabetDims::standard(),
            seed: 0,
            aux_supervision: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.alphabets.timings == 0 || self.alphabets.durations == 0
            || self.alphabets.pitches == 0
        {
            return Err(Error::InvalidConfig("alphabet sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { layer_sizes: self.layer_sizes, alphabets: self.alphabets }
    }
}

/// Structural dimensions carried alongside the parameters so that forward
/// passes need no external configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub layer_sizes: [usize; 3],
    pub alphabets: AlphabetDims,
}

impl ModelDims {
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Input width of layer `l`: the raw input, plus the hidden state of
    /// the layer below for upper layers (skip connection).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        let d = self.alphabets.input_dim();
        if l == 0 {
            d
        } else {
            self.layer_sizes[l - 1] + d
        }
    }

    /// Width of the readout feature: top hidden state plus the raw input.
    pub fn feature_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1] + self.alphabets.input_dim()
    }
}

/// One LSTM layer. Matrices stack the four gates row-wise in the order
/// input, forget, cell, output; each block has `layer_size` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// (4*h, layer_input_dim): applied to the layer input.
    pub w_in: Array2<f64>,
    /// (4*h, h): applied to the previous hidden state.
    pub w_rec: Array2<f64>,
    /// (4*h): gate biases.
    pub bias: Array1<f64>,
}

/// Linear readout for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// (vocabulary, feature_dim).
    pub weight: Array2<f64>,
    /// (vocabulary).
    pub bias: Array1<f64>,
}

/// All trainable parameters. Also used as the container for gradients and
/// optimizer moments, which share its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layers: Vec<LstmLayer>,
    /// Readouts in [`Feature`] order: timing, duration, pitch.
    pub heads: [Head; 3],
}

impl ModelParams {
    /// Random initialization: every matrix uniform in ±1/sqrt(fan-in),
    /// biases zero except the forget-gate block, which starts at 1 so early
    /// training does not erase the cell state.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform_matrix = |rows: usize, cols: usize| -> Array2<f64> {
            let bound = 1.0 / (cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bounds");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };

        let mut layers = Vec::with_capacity(dims.n_layers());
        for l in 0..dims.n_layers() {
            let h = dims.layer_sizes[l];
            let w_in = uniform_matrix(4 * h, dims.layer_input_dim(l));
            let w_rec = uniform_matrix(4 * h, h);
            let mut bias = Array1::zeros(4 * h);
            bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
            layers.push(LstmLayer { w_in, w_rec, bias });
        }

        let heads = [Feature::Timing, Feature::Duration, Feature::Pitch].map(|feature| {
            let rows = dims.alphabets.size_of(feature);
            Head {
                weight: uniform_matrix(rows, dims.feature_dim()),
                bias: Array1::zeros(rows),
            }
        });

        Ok(ModelParams { dims, layers, heads })
    }

    /// All-zero parameters with the given shape.
    pub fn zeros(dims: ModelDims) -> Self {
        let layers = (0..dims.n_layers())
            .map(|l| {
                let h = dims.layer_sizes[l];
                LstmLayer {
                    w_in: Array2::zeros((4 * h, dims.layer_input_dim(l))),
                    w_rec: Array2::zeros((4 * h, h)),
                    bias: Array1::zeros(4 * h),
                }
            })
            .collect();
        let heads = [Feature::Timing, Feature::Duration, Feature::Pitch].map(|feature| Head {
            weight: Array2::zeros((dims.alphabets.size_of(feature), dims.feature_dim())),
            bias: Array1::zeros(dims.alphabets.size_of(feature)),
        });
        ModelParams { dims, layers, heads }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims)
    }

    /// Flat views over every tensor, in a fixed order shared by
    /// [`ModelParams::slices_mut`]. The basis for clipping, optimization
    /// and serialization.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 6);
        for layer in &self.layers {
            out.push(layer.w_in.as_slice().expect("standard layout"));
            out.push(layer.w_rec.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        for head in &self.heads {
            out.push(head.weight.as_slice().expect("standard layout"));
            out.push(head.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 6);
        for layer in &mut self.layers {
            out.push(layer.w_in.as_slice_mut().expect("standard layout"));
            out.push(layer.w_rec.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        for head in &mut self.heads {
            out.push(head.weight.as_slice_mut().expect("standard layout"));
            out.push(head.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Add `other` scaled by `factor` (used to average batch gradients).
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        let mut mine = self.slices_mut();
        let theirs = other.slices();
        for (dst, src) in mine.iter_mut().zip(theirs) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += factor * s;
            }
        }
    }
}

/// Recurrent state: hidden and cell vectors per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layers: Vec<LayerState>,
}

/// One layer's recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl ModelState {
    /// The all-zero state used at the start of every song.
    pub fn zeros(dims: &ModelDims) -> Self {
        ModelState {
            layers: dims
                .layer_sizes
                .iter()
                .map(|&h| LayerState { h: Array1::zeros(h), c: Array1::zeros(h) })
                .collect(),
        }
    }
}

/// The three predicted features, in readout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    Timing,
    Duration,
    Pitch,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Timing, Feature::Duration, Feature::Pitch];

    /// Position in head arrays and reports.
    pub fn index(self) -> usize {
        match self {
            Feature::Timing => 0,
            Feature::Duration => 1,
            Feature::Pitch => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Timing => "timing",
            Feature::Duration => "duration",
            Feature::Pitch => "pitch",
        }
    }
}

/// Partial one-hot input for one substep: any subset of the three features
/// may be active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubstepInput {
    pub timing: Option<usize>,
    pub duration: Option<usize>,
    pub pitch: Option<usize>,
}

impl SubstepInput {
    /// Substep 1: the full triple of the current note.
    pub fn note(note: &NoteEvent) -> Self {
        SubstepInput {
            timing: Some(note.timing),
            duration: Some(note.duration),
            pitch: Some(note.pitch),
        }
    }

    /// Substep 2: only the next note's timing is known.
    pub fn timing_only(timing: usize) -> Self {
        SubstepInput { timing: Some(timing), duration: None, pitch: None }
    }

    /// Substep 3: the next note's timing and duration are known.
    pub fn timing_duration(timing: usize, duration: usize) -> Self {
        SubstepInput { timing: Some(timing), duration: Some(duration), pitch: None }
    }

    /// Nothing known (useful for probing the unconditioned network).
    pub fn empty() -> Self {
        SubstepInput { timing: None, duration: None, pitch: None }
    }

    /// Concatenated one-hot encoding: timing block, duration block, pitch
    /// block.
    pub fn to_vector(&self, alphabets: &AlphabetDims) -> Array1<f64> {
        let mut v = Array1::zeros(alphabets.input_dim());
        if let Some(i) = self.timing {
            debug_assert!(i < alphabets.timings);
            v[i] = 1.0;
        }
        if let Some(i) = self.duration {
            debug_assert!(i < alphabets.durations);
            v[alphabets.timings + i] = 1.0;
        }
        if let Some(i) = self.pitch {
            debug_assert!(i < alphabets.pitches);
            v[alphabets.timings + alphabets.durations + i] = 1.0;
        }
        v
    }
}

/// One supervised readout: after the substep runs, the named head must
/// assign high probability to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Readout {
    pub feature: Feature,
    pub target: usize,
}

/// One substep of a training window: its input and the readouts whose
/// negative log-probabilities enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstepSpec {
    pub input: SubstepInput,
    pub readouts: Vec<Readout>,
}

/// Expand note transitions into substep specs.
///
/// For notes `[n0, n1, ..., nk]` this yields three substeps per transition.
/// With `aux_supervision` every head that could already know its answer is
/// supervised at every substep (timing once, duration twice, pitch three
/// times per transition); without it, each feature is supervised only at
/// its final readout.
pub fn plan_transitions(notes: &[NoteEvent], aux_supervision: bool) -> Vec<SubstepSpec> {
    let mut specs = Vec::with_capacity(notes.len().saturating_sub(1) * 3);
    for pair in notes.windows(2) {
        let (note, next) = (&pair[0], &pair[1]);
        let timing = Readout { feature: Feature::Timing, target: next.timing };
        let duration = Readout { feature: Feature::Duration, target: next.duration };
        let pitch = Readout { feature: Feature::Pitch, target: next.pitch };
        specs.push(SubstepSpec {
            input: SubstepInput::note(note),
            readouts: if aux_supervision {
                vec![timing, duration, pitch]
            } else {
                vec![timing]
            },
        });
        specs.push(SubstepSpec {
            input: SubstepInput::timing_only(next.timing),
            readouts: if aux_supervision { vec![duration, pitch] } else { vec![duration] },
        });
        specs.push(SubstepSpec {
            input: SubstepInput::timing_duration(next.timing, next.duration),
            readouts: vec![pitch],
        });
    }
    specs
}
