//! Loss and backpropagation through a window of substeps.
//!
//! A window is a list of [`SubstepSpec`]s executed from an entry state. The
//! loss is the mean negative log-probability over every supervised readout
//! in the window. Backpropagation runs through the whole window and stops
//! at its entry state (truncated backpropagation through time): gradients
//! do not flow into earlier windows even though activations do.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::forward::{log_softmax, softmax, substep_forward, SubstepCache, SubstepMasks};
use super::{ModelParams, ModelState, SubstepSpec};
use crate::error::{Error, Result};

/// Probabilities below this are clamped when the loss value is computed, so
/// a saturated head cannot produce an infinite loss. Gradients use the
/// exact softmax; the clamp guards only the reported number.
const PROB_FLOOR: f64 = 1e-12;

/// Sum and count of negative log-probabilities for one feature.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FeatureNll {
    pub sum: f64,
    pub count: usize,
}

impl FeatureNll {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Result of a window-level forward/backward pass.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    /// Mean negative log-probability over all supervised readouts.
    pub loss: f64,
    /// Per-feature breakdown of the same readouts, in [`Feature`] order.
    pub feature_nll: [FeatureNll; 3],
    /// Parameter gradients of `loss`.
    pub grads: ModelParams,
    /// Recurrent state after the last substep, to be carried into the next
    /// window.
    pub state_out: ModelState,
}

fn check_window(
    params: &ModelParams,
    specs: &[SubstepSpec],
    masks: Option<&[SubstepMasks]>,
) -> Result<()> {
    if let Some(masks) = masks {
        if masks.len() != specs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} dropout masks for {} substeps",
                masks.len(),
                specs.len()
            )));
        }
    }
    for spec in specs {
        for readout in &spec.readouts {
            let size = params.dims.alphabets.size_of(readout.feature);
            if readout.target >= size {
                return Err(Error::InvalidConfig(format!(
                    "{} target {} >= vocabulary size {size}",
                    readout.feature.name(),
                    readout.target
                )));
            }
        }
    }
    Ok(())
}

/// Run the window forward, returning caches plus the loss breakdown.
fn window_forward(
    params: &ModelParams,
    state0: &ModelState,
    specs: &[SubstepSpec],
    masks: Option<&[SubstepMasks]>,
) -> (Vec<SubstepCache>, f64, [FeatureNll; 3]) {
    let mut caches = Vec::with_capacity(specs.len());
    let mut state = state0.clone();
    let mut nll = [FeatureNll::default(); 3];
    let mut clamped = 0usize;

    for (s, spec) in specs.iter().enumerate() {
        let cache = substep_forward(params, &state, &spec.input, masks.map(|m| &m[s]));
        state = cache.state_out();
        for readout in &spec.readouts {
            let log_probs = log_softmax(cache.logits.get(readout.feature.index()));
            let mut term = -log_probs[readout.target];
            if term > -PROB_FLOOR.ln() {
                term = -PROB_FLOOR.ln();
                clamped += 1;
            }
            let bucket = &mut nll[readout.feature.index()];
            bucket.sum += term;
            bucket.count += 1;
        }
        caches.push(cache);
    }

    if clamped > 0 {
        log::warn!("{clamped} readout probabilities clamped at {PROB_FLOOR:e}");
    }
    let total: usize = nll.iter().map(|b| b.count).sum();
    let loss = if total == 0 {
        0.0
    } else {
        nll.iter().map(|b| b.sum).sum::<f64>() / total as f64
    };
    (caches, loss, nll)
}

/// Compute the window loss without gradients.
///
/// Returns the mean negative log-probability and the exit state.
pub fn window_loss(
    params: &ModelParams,
    state0: &ModelState,
    specs: &[SubstepSpec],
    masks: Option<&[SubstepMasks]>,
) -> Result<(f64, ModelState)> {
    check_window(params, specs, masks)?;
    let (caches, loss, _) = window_forward(params, state0, specs, masks);
    let state_out = caches.last().map(SubstepCache::state_out).unwrap_or_else(|| state0.clone());
    Ok((loss, state_out))
}

/// `grad += column * row^T` without allocating the outer product.
fn add_outer(grad: &mut Array2<f64>, column: &Array1<f64>, row: &Array1<f64>) {
    for (mut grad_row, &scale) in grad.outer_iter_mut().zip(column.iter()) {
        if scale != 0.0 {
            grad_row.scaled_add(scale, row);
        }
    }
}

/// Forward + backward over one window.
///
/// Gradients are exact for the mean-NLL loss over the window's supervised
/// readouts, with truncation at `state0`: the entry state is treated as a
/// constant.
pub fn backprop_window(
    params: &ModelParams,
    state0: &ModelState,
    specs: &[SubstepSpec],
    masks: Option<&[SubstepMasks]>,
) -> Result<WindowOutcome> {
    check_window(params, specs, masks)?;
    let (caches, loss, feature_nll) = window_forward(params, state0, specs, masks);
    let state_out = caches.last().map(SubstepCache::state_out).unwrap_or_else(|| state0.clone());

    let mut grads = params.zeros_like();
    let total_terms: usize = feature_nll.iter().map(|b| b.count).sum();
    if total_terms == 0 {
        return Ok(WindowOutcome { loss, feature_nll, grads, state_out });
    }
    let scale = 1.0 / total_terms as f64;

    let dims = &params.dims;
    let n_layers = dims.n_layers();
    let top = n_layers - 1;
    // Recurrent gradient carried from substep s+1 back to substep s.
    let mut dh_next: Vec<Array1<f64>> =
        dims.layer_sizes.iter().map(|&h| Array1::zeros(h)).collect();
    let mut dc_next: Vec<Array1<f64>> =
        dims.layer_sizes.iter().map(|&h| Array1::zeros(h)).collect();

    for s in (0..specs.len()).rev() {
        let cache = &caches[s];

        // Head gradients and their pull on the readout feature.
        let mut dfeat = Array1::zeros(dims.feature_dim());
        for readout in &specs[s].readouts {
            let head = readout.feature.index();
            let mut dlogits = softmax(cache.logits.get(head));
            dlogits[readout.target] -= 1.0;
            dlogits.mapv_inplace(|v| v * scale);
            add_outer(&mut grads.heads[head].weight, &dlogits, &cache.feat);
            grads.heads[head].bias += &dlogits;
            dfeat += &params.heads[head].weight.t().dot(&dlogits);
        }

        // Same-substep gradient flowing into each layer's hidden output
        // (from the layer above, or from the heads for the top layer).
        let mut dh_same: Vec<Array1<f64>> =
            dims.layer_sizes.iter().map(|&h| Array1::zeros(h)).collect();
        dh_same[top] = unmask(dfeat.slice(s![..dims.layer_sizes[top]]).to_owned(), cache, top);

        for l in (0..n_layers).rev() {
            let lc = &cache.layers[l];
            let (h_prev, c_prev) = if s == 0 {
                (&state0.layers[l].h, &state0.layers[l].c)
            } else {
                (&caches[s - 1].layers[l].h, &caches[s - 1].layers[l].c)
            };

            let dh_total = &dh_next[l] + &dh_same[l];
            let tanh_c = lc.c.mapv(f64::tanh);
            let d_out = &dh_total * &tanh_c;
            let dc_total = &dc_next[l] + &(&dh_total * &lc.o * &tanh_c.mapv(|t| 1.0 - t * t));
            let d_in = &dc_total * &lc.g;
            let d_forget = &dc_total * c_prev;
            let d_cell = &dc_total * &lc.i;

            let dz_in = &d_in * &lc.i * &lc.i.mapv(|v| 1.0 - v);
            let dz_forget = &d_forget * &lc.f * &lc.f.mapv(|v| 1.0 - v);
            let dz_cell = &d_cell * &lc.g.mapv(|v| 1.0 - v * v);
            let dz_out = &d_out * &lc.o * &lc.o.mapv(|v| 1.0 - v);
            let dz = concatenate![
                Axis(0),
                dz_in.view(),
                dz_forget.view(),
                dz_cell.view(),
                dz_out.view()
            ];

            add_outer(&mut grads.layers[l].w_in, &dz, &lc.a);
            add_outer(&mut grads.layers[l].w_rec, &dz, h_prev);
            grads.layers[l].bias += &dz;

            if l > 0 {
                let da = params.layers[l].w_in.t().dot(&dz);
                let below = dims.layer_sizes[l - 1];
                dh_same[l - 1] += &unmask(da.slice(s![..below]).to_owned(), cache, l - 1);
            }
            dh_next[l] = params.layers[l].w_rec.t().dot(&dz);
            dc_next[l] = &dc_total * &lc.f;
        }
    }

    Ok(WindowOutcome { loss, feature_nll, grads, state_out })
}

/// Backward through a dropout mask: multiply by the same mask.
fn unmask(d_masked: Array1<f64>, cache: &SubstepCache, layer: usize) -> Array1<f64> {
    match &cache.masks {
        Some(masks) => &d_masked * &masks.hidden[layer],
        None => d_masked,
    }
}
