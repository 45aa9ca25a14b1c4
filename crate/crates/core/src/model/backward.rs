//! Reverse-mode gradients for the teacher-forced loss.
//!
//! Mirrors `forward_full` step by step. The encoder's per-step row masks mean
//! a finished example's state is an identity carry, so its gradient splits
//! into a pass-through part and a through-the-gates part.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};

use crate::data::Batch;
use crate::error::Result;

use super::forward::{forward_full, StepCache};
use super::{Gradients, ModelParams};

/// Gradient of the LSTM step w.r.t. its inputs and weights.
/// `dh`/`dc` are gradients on the step's raw outputs (pre state-mask).
/// Returns (dx, dh_prev, dc_prev) and accumulates weight gradients.
#[allow(clippy::too_many_arguments)]
fn lstm_step_backward(
    cache: &StepCache,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    dh: &Array2<f64>,
    dc: &Array2<f64>,
    grad_wx: &mut Array2<f64>,
    grad_wh: &mut Array2<f64>,
    grad_b: &mut Array2<f64>,
    wx: &Array2<f64>,
    wh: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (bsz, hidden) = (dh.nrows(), dh.ncols());

    let do_ = dh * &cache.tanh_c * &cache.o * &(1.0 - &cache.o);
    let dc_total = dc + &(dh * &cache.o * &(1.0 - &cache.tanh_c * &cache.tanh_c));
    let di = &dc_total * &cache.g * &cache.i * &(1.0 - &cache.i);
    let df = &dc_total * c_prev * &cache.f * &(1.0 - &cache.f);
    let dg = &dc_total * &cache.i * &(1.0 - &cache.g * &cache.g);
    let dc_prev = &dc_total * &cache.f;

    let mut dgates = Array2::zeros((bsz, 4 * hidden));
    dgates.slice_mut(ndarray::s![.., 0..hidden]).assign(&di);
    dgates
        .slice_mut(ndarray::s![.., hidden..2 * hidden])
        .assign(&df);
    dgates
        .slice_mut(ndarray::s![.., 2 * hidden..3 * hidden])
        .assign(&dg);
    dgates
        .slice_mut(ndarray::s![.., 3 * hidden..4 * hidden])
        .assign(&do_);

    general_mat_mul(1.0, &cache.x.t(), &dgates, 1.0, grad_wx);
    general_mat_mul(1.0, &h_prev.t(), &dgates, 1.0, grad_wh);
    let bias = dgates.sum_axis(Axis(0));
    grad_b.row_mut(0).zip_mut_with(&bias, |a, &b| *a += b);

    let dx = dgates.dot(&wx.t());
    let dh_prev = dgates.dot(&wh.t());
    (dx, dh_prev, dc_prev)
}

fn scatter_embedding(
    grad_embedding: &mut Array2<f64>,
    dx: &Array2<f64>,
    tokens: &[usize],
    emb_mask: Option<&Array2<f64>>,
) {
    for (r, &tok) in tokens.iter().enumerate() {
        let mut dst = grad_embedding.row_mut(tok);
        match emb_mask {
            Some(m) => {
                for k in 0..dx.ncols() {
                    dst[k] += dx[[r, k]] * m[[r, k]];
                }
            }
            None => {
                for k in 0..dx.ncols() {
                    dst[k] += dx[[r, k]];
                }
            }
        }
    }
}

/// Analytic gradient of `forward_loss` w.r.t. every parameter array.
/// Returns the loss alongside so training needs a single pass.
pub fn grad(params: &ModelParams, batch: &Batch, train_mode: bool) -> Result<(f64, Gradients)> {
    let cache = forward_full(params, batch, train_mode)?;
    let cfg = &params.config;
    let (bsz, hidden, v) = (batch.batch_size(), cfg.hidden_dim, cfg.vocab_size);
    let smooth = cfg.label_smoothing;
    let uniform = smooth / v as f64;
    let mut grads = Gradients::zeros_like(params);

    let enc_final_h = cache.enc_steps.last().map(|s| s.h.clone()).unwrap();
    let enc_final_c = cache.enc_steps.last().map(|s| s.c.clone()).unwrap();

    // ----- decoder, backwards in time -----
    let mut dh: Array2<f64> = Array2::zeros((bsz, hidden));
    let mut dc: Array2<f64> = Array2::zeros((bsz, hidden));
    for s in (0..cache.dec_steps.len()).rev() {
        // d loss / d logits = (softmax - smoothed onehot) * mask / n_tokens
        let logp = &cache.logp[s];
        let mut dlogits = Array2::zeros((bsz, v));
        for r in 0..bsz {
            let m = cache.loss_mask[s][r];
            if m == 0.0 {
                continue;
            }
            let gold = cache.gold[s][r];
            for k in 0..v {
                let p = logp[[r, k]].exp();
                let q = if k == gold { 1.0 - smooth + uniform } else { uniform };
                dlogits[[r, k]] = (p - q) / cache.n_tokens;
            }
        }

        let hdrop = &cache.dec_hdrop[s];
        general_mat_mul(1.0, &hdrop.t(), &dlogits, 1.0, &mut grads.out_w);
        let bias = dlogits.sum_axis(Axis(0));
        grads.out_b.row_mut(0).zip_mut_with(&bias, |a, &b| *a += b);

        let dhdrop = dlogits.dot(&params.out_w.t());
        match cache.masks.as_ref() {
            Some(m) => dh += &(&dhdrop * &m.dec_hid[s]),
            None => dh += &dhdrop,
        }

        let (h_prev, c_prev) = if s == 0 {
            (&enc_final_h, &enc_final_c)
        } else {
            (&cache.dec_steps[s - 1].h, &cache.dec_steps[s - 1].c)
        };
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &cache.dec_steps[s],
            h_prev,
            c_prev,
            &dh,
            &dc,
            &mut grads.dec_wx,
            &mut grads.dec_wh,
            &mut grads.dec_b,
            &params.dec_wx,
            &params.dec_wh,
        );
        scatter_embedding(
            &mut grads.embedding,
            &dx,
            &cache.dec_steps[s].inputs,
            cache.masks.as_ref().map(|m| &m.dec_emb[s]),
        );
        dh = dh_prev;
        dc = dc_prev;
    }

    // ----- encoder, backwards in time -----
    // dh/dc now sit on the encoder's final post-mask state.
    let zeros = Array2::zeros((bsz, hidden));
    for t in (0..cache.enc_steps.len()).rev() {
        let step_mask = &cache.enc_step_masks[t];
        let mask_row = Array1::from_iter(step_mask.iter().cloned());
        let keep = mask_row.clone().insert_axis(Axis(1));
        let carry = 1.0 - &keep;

        let dh_raw = &dh * &keep;
        let dc_raw = &dc * &keep;
        let carry_h = &dh * &carry;
        let carry_c = &dc * &carry;

        let (h_prev, c_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&cache.enc_steps[t - 1].h, &cache.enc_steps[t - 1].c)
        };
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &cache.enc_steps[t],
            h_prev,
            c_prev,
            &dh_raw,
            &dc_raw,
            &mut grads.enc_wx,
            &mut grads.enc_wh,
            &mut grads.enc_b,
            &params.enc_wx,
            &params.enc_wh,
        );
        scatter_embedding(
            &mut grads.embedding,
            &dx,
            &cache.enc_steps[t].inputs,
            cache.masks.as_ref().map(|m| &m.enc_emb[t]),
        );
        dh = dh_prev + carry_h;
        dc = dc_prev + carry_c;
    }

    grads.assert_finite()?;
    Ok((cache.loss, grads))
}
