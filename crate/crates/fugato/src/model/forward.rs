//! Forward computation: one substep through the stack, plus the
//! teacher-forced three-substep note transition used for evaluation.

use ndarray::{concatenate, s, Array1, Axis};
use rand::Rng;

use super::{ModelDims, ModelParams, ModelState, SubstepInput};
use crate::score::NoteEvent;

/// Dropout masks for one substep: one mask per layer, applied to that
/// layer's outgoing (feed-forward) connections. Entries are either 0 or
/// 1/(1-rate) (inverted dropout), so inference needs no rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstepMasks {
    pub hidden: Vec<Array1<f64>>,
}

/// Draw one substep's masks. A rate of 0 yields all-ones masks.
pub fn draw_masks(dims: &ModelDims, rate: f64, rng: &mut impl Rng) -> SubstepMasks {
    debug_assert!((0.0..1.0).contains(&rate));
    let hidden = dims
        .layer_sizes
        .iter()
        .map(|&h| {
            if rate == 0.0 {
                Array1::ones(h)
            } else {
                let keep = 1.0 / (1.0 - rate);
                Array1::from_shape_fn(h, |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            }
        })
        .collect();
    SubstepMasks { hidden }
}

/// Raw head outputs (pre-softmax), one vector per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub timing: Array1<f64>,
    pub duration: Array1<f64>,
    pub pitch: Array1<f64>,
}

impl HeadLogits {
    pub fn get(&self, head: usize) -> &Array1<f64> {
        match head {
            0 => &self.timing,
            1 => &self.duration,
            2 => &self.pitch,
            _ => panic!("head index {head} out of range"),
        }
    }
}

/// Everything computed during one substep, retained for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Layer input (masked lower hidden state ++ raw input for l > 0).
    pub a: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub h: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SubstepCache {
    pub layers: Vec<LayerCache>,
    /// Readout feature: masked top hidden state ++ raw input.
    pub feat: Array1<f64>,
    pub logits: HeadLogits,
    pub masks: Option<SubstepMasks>,
}

impl SubstepCache {
    pub fn state_out(&self) -> ModelState {
        ModelState {
            layers: self
                .layers
                .iter()
                .map(|lc| super::LayerState { h: lc.h.clone(), c: lc.c.clone() })
                .collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run one substep, keeping intermediate values.
pub(crate) fn substep_forward(
    params: &ModelParams,
    state: &ModelState,
    input: &SubstepInput,
    masks: Option<&SubstepMasks>,
) -> SubstepCache {
    let dims = &params.dims;
    let x = input.to_vector(&dims.alphabets);
    let mut layers = Vec::with_capacity(dims.n_layers());
    let mut below: Option<Array1<f64>> = None; // masked hidden of layer below

    for (l, layer) in params.layers.iter().enumerate() {
        let a = match &below {
            None => x.clone(),
            Some(masked) => concatenate![Axis(0), masked.view(), x.view()],
        };
        let h = dims.layer_sizes[l];
        let z = layer.w_in.dot(&a) + layer.w_rec.dot(&state.layers[l].h) + &layer.bias;
        let i = z.slice(s![0..h]).mapv(sigmoid);
        let f = z.slice(s![h..2 * h]).mapv(sigmoid);
        let g = z.slice(s![2 * h..3 * h]).mapv(f64::tanh);
        let o = z.slice(s![3 * h..4 * h]).mapv(sigmoid);
        let c = &f * &state.layers[l].c + &i * &g;
        let hidden = &o * &c.mapv(f64::tanh);
        below = Some(match masks {
            Some(m) => &hidden * &m.hidden[l],
            None => hidden.clone(),
        });
        layers.push(LayerCache { a, i, f, g, o, c, h: hidden });
    }

    let feat = concatenate![Axis(0), below.expect("at least one layer").view(), x.view()];
    let logits = HeadLogits {
        timing: params.heads[0].weight.dot(&feat) + &params.heads[0].bias,
        duration: params.heads[1].weight.dot(&feat) + &params.heads[1].bias,
        pitch: params.heads[2].weight.dot(&feat) + &params.heads[2].bias,
    };

    SubstepCache { layers, feat, logits, masks: masks.cloned() }
}

/// Advance the network by one substep.
///
/// `masks` enables dropout (training); pass `None` for inference. Returns
/// the new recurrent state and the raw head outputs.
pub fn forward_substep(
    params: &ModelParams,
    state: &ModelState,
    input: &SubstepInput,
    masks: Option<&SubstepMasks>,
) -> (ModelState, HeadLogits) {
    let cache = substep_forward(params, state, input, masks);
    (cache.state_out(), cache.logits)
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    logits.mapv(|v| v - log_sum)
}

/// Probability vectors at the three readout points of a note transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteStepProbs {
    /// P(next timing), read after substep 1.
    pub timing: Array1<f64>,
    /// P(next duration | timing), read after substep 2.
    pub duration: Array1<f64>,
    /// P(next pitch | timing, duration), read after substep 3.
    pub pitch: Array1<f64>,
}

/// Run one full teacher-forced transition `note -> next` without dropout.
///
/// Substep 1 feeds `note` and reads the timing distribution; substep 2
/// feeds `next.timing` and reads the duration distribution; substep 3 feeds
/// `next.timing` + `next.duration` and reads the pitch distribution.
pub fn note_step(
    params: &ModelParams,
    state: &ModelState,
    note: &NoteEvent,
    next: &NoteEvent,
) -> (ModelState, NoteStepProbs) {
    let (s1, l1) = forward_substep(params, state, &SubstepInput::note(note), None);
    let (s2, l2) = forward_substep(params, &s1, &SubstepInput::timing_only(next.timing), None);
    let (s3, l3) = forward_substep(
        params,
        &s2,
        &SubstepInput::timing_duration(next.timing, next.duration),
        None,
    );
    (
        s3,
        NoteStepProbs {
            timing: softmax(&l1.timing),
            duration: softmax(&l2.duration),
            pitch: softmax(&l3.pitch),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlphabetDims, ModelConfig, ModelParams, ModelState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            layer_sizes: [4, 5, 6],
            dropout_rate: 0.0,
            alphabets: AlphabetDims { timings: 7, durations: 3, pitches: 9 },
            seed: 11,
            aux_supervision: true,
        }
    }

    #[test]
    fn zero_state_empty_input_reads_head_biases() {
        // With a zero state and no active inputs, the cell gate is tanh(0)=0
        // and the previous cell is 0, so every hidden state stays 0 and the
        // logits collapse to the head biases (zero at initialization).
        let params = ModelParams::init(&tiny_config()).unwrap();
        let state = ModelState::zeros(&params.dims);
        let (next, logits) = forward_substep(&params, &state, &SubstepInput::empty(), None);
        assert!(logits.timing.iter().all(|&v| v == 0.0));
        assert!(logits.duration.iter().all(|&v| v == 0.0));
        assert!(logits.pitch.iter().all(|&v| v == 0.0));
        // The hidden states stayed at zero; the cell states did not (the
        // input gate is sigmoid(0) = 0.5 but the cell candidate is 0).
        for layer in &next.layers {
            assert!(layer.h.iter().all(|&v| v == 0.0));
            assert!(layer.c.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_params_give_uniform_distributions() {
        let config = tiny_config();
        let params = ModelParams::zeros(config.dims());
        let state = ModelState::zeros(&params.dims);
        let (_, probs) =
            note_step(&params, &state, &NoteEvent::new(0, 1, 2), &NoteEvent::new(3, 2, 7));
        for (vec, n) in [(&probs.timing, 7), (&probs.duration, 3), (&probs.pitch, 9)] {
            assert_eq!(vec.len(), n);
            for &p in vec {
                assert!((p - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ModelParams::init(&tiny_config()).unwrap();
        let state = ModelState::zeros(&params.dims);
        let input = SubstepInput { timing: Some(1), duration: Some(2), pitch: Some(3) };
        let (s1, l1) = forward_substep(&params, &state, &input, None);
        let (s2, l2) = forward_substep(&params, &state, &input, None);
        assert_eq!(s1, s2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn state_evolves_and_feeds_back() {
        let params = ModelParams::init(&tiny_config()).unwrap();
        let zero = ModelState::zeros(&params.dims);
        let input = SubstepInput { timing: Some(1), duration: Some(2), pitch: Some(3) };
        let (s1, l1) = forward_substep(&params, &zero, &input, None);
        assert_ne!(s1, zero);
        // Same input from a different state must give different logits:
        // the recurrent connection is live.
        let (_, l2) = forward_substep(&params, &s1, &input, None);
        assert_ne!(l1, l2);
    }

    #[test]
    fn all_ones_masks_match_inference() {
        let params = ModelParams::init(&tiny_config()).unwrap();
        let state = ModelState::zeros(&params.dims);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let masks = draw_masks(&params.dims, 0.0, &mut rng);
        assert!(masks.hidden.iter().all(|m| m.iter().all(|&v| v == 1.0)));
        let input = SubstepInput { timing: Some(5), duration: Some(0), pitch: Some(8) };
        let (s_masked, l_masked) = forward_substep(&params, &state, &input, Some(&masks));
        let (s_plain, l_plain) = forward_substep(&params, &state, &input, None);
        assert_eq!(s_masked, s_plain);
        assert_eq!(l_masked, l_plain);
    }

    #[test]
    fn dropout_masks_have_inverted_scale() {
        let dims = tiny_config().dims();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rate = 0.3;
        let mut zeros = 0usize;
        let mut total = 0usize;
        for _ in 0..2000 {
            let masks = draw_masks(&dims, rate, &mut rng);
            for m in &masks.hidden {
                for &v in m {
                    total += 1;
                    if v == 0.0 {
                        zeros += 1;
                    } else {
                        assert!((v - 1.0 / 0.7).abs() < 1e-12);
                    }
                }
            }
        }
        let observed = zeros as f64 / total as f64;
        assert!((observed - rate).abs() < 0.01, "drop rate {observed}");
    }

    #[test]
    fn dropout_only_affects_feedforward_paths() {
        // Zeroing a layer's output mask must not change that layer's own
        // recurrent state (h and c are computed pre-mask).
        let params = ModelParams::init(&tiny_config()).unwrap();
        let state = ModelState::zeros(&params.dims);
        let input = SubstepInput { timing: Some(1), duration: Some(1), pitch: Some(1) };
        let all_dropped = SubstepMasks {
            hidden: params.dims.layer_sizes.iter().map(|&h| Array1::zeros(h)).collect(),
        };
        let (s_dropped, logits) = forward_substep(&params, &state, &input, Some(&all_dropped));
        let (s_plain, _) = forward_substep(&params, &state, &input, None);
        // Layer 0 sees the same input either way -> identical state.
        assert_eq!(s_dropped.layers[0], s_plain.layers[0]);
        // With every feed-forward connection dropped, the heads see only
        // the raw input (plus bias): the hidden contribution is gone but
        // the skip connection still carries signal.
        let x = input.to_vector(&params.dims.alphabets);
        let expected = params.heads[0]
            .weight
            .slice(s![.., params.dims.layer_sizes[2]..])
            .dot(&x)
            + &params.heads[0].bias;
        for (a, b) in logits.timing.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let logits = Array1::from(vec![1000.0, 999.0, 998.0]);
        let p = softmax(&logits);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v.is_finite() && v > 0.0));
        let lp = log_softmax(&logits);
        for (a, b) in p.iter().zip(lp.iter()) {
            assert!((a.ln() - b).abs() < 1e-9);
        }
        // Uniform case.
        let u = softmax(&Array1::zeros(4));
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn note_step_reads_heads_at_the_right_substeps() {
        // The timing distribution must depend on the current note only, not
        // on the teacher-forced inputs of later substeps.
        let params = ModelParams::init(&tiny_config()).unwrap();
        let state = ModelState::zeros(&params.dims);
        let note = NoteEvent::new(0, 1, 2);
        let (_, a) = note_step(&params, &state, &note, &NoteEvent::new(3, 2, 7));
        let (_, b) = note_step(&params, &state, &note, &NoteEvent::new(4, 0, 1));
        assert_eq!(a.timing, b.timing);
        assert_ne!(a.duration, b.duration);
        assert_ne!(a.pitch, b.pitch);
    }
}
