//! Teacher-forced forward pass and the step-wise decoding interface.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, EOS, PAD};

use super::ModelParams;

/// Inverted-dropout masks for one batch, regenerated identically from the
/// batch's dropout seed on every call so forward and backward always agree.
/// Draw order is fixed: encoder embeddings by timestep, then decoder
/// embeddings, then decoder hidden outputs.
pub(crate) struct Masks {
    pub enc_emb: Vec<Array2<f64>>,
    pub dec_emb: Vec<Array2<f64>>,
    pub dec_hid: Vec<Array2<f64>>,
}

pub(crate) fn make_masks(
    rate: f64,
    seed: u64,
    batch: usize,
    embed: usize,
    hidden: usize,
    enc_steps: usize,
    dec_steps: usize,
) -> Masks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| {
            if rng.gen::<f64>() >= rate {
                keep
            } else {
                0.0
            }
        })
    };
    Masks {
        enc_emb: (0..enc_steps).map(|_| draw(batch, embed)).collect(),
        dec_emb: (0..dec_steps).map(|_| draw(batch, embed)).collect(),
        dec_hid: (0..dec_steps).map(|_| draw(batch, hidden)).collect(),
    }
}

/// Everything one LSTM step needs to remember for backprop.
pub(crate) struct StepCache {
    pub inputs: Vec<TokenId>,
    pub x: Array2<f64>, // embedded input after dropout, B x E
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub tanh_c: Array2<f64>, // tanh of the pre-mask cell
    pub h: Array2<f64>,      // post-mask hidden
    pub c: Array2<f64>,      // post-mask cell
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One batched LSTM step. `step_mask[b] = 0` freezes example b's state (used
/// by the encoder to park finished rows on their final state).
pub(crate) fn lstm_step(
    wx: &Array2<f64>,
    wh: &Array2<f64>,
    b: &Array2<f64>,
    inputs: Vec<TokenId>,
    x: Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    step_mask: Option<&[f64]>,
) -> StepCache {
    let bsz = x.nrows();
    let hidden = wh.nrows();
    let mut gates = x.dot(wx) + h_prev.dot(wh);
    gates += &b.row(0);

    let mut i = Array2::zeros((bsz, hidden));
    let mut f = Array2::zeros((bsz, hidden));
    let mut g = Array2::zeros((bsz, hidden));
    let mut o = Array2::zeros((bsz, hidden));
    for r in 0..bsz {
        for k in 0..hidden {
            i[[r, k]] = sigmoid(gates[[r, k]]);
            f[[r, k]] = sigmoid(gates[[r, hidden + k]]);
            g[[r, k]] = gates[[r, 2 * hidden + k]].tanh();
            o[[r, k]] = sigmoid(gates[[r, 3 * hidden + k]]);
        }
    }
    let c_raw = &f * c_prev + &i * &g;
    let tanh_c = c_raw.mapv(f64::tanh);
    let h_raw = &o * &tanh_c;

    let (h, c) = match step_mask {
        None => (h_raw, c_raw),
        Some(m) => {
            let mut h = h_raw;
            let mut c = c_raw;
            for r in 0..bsz {
                if m[r] == 0.0 {
                    for k in 0..hidden {
                        h[[r, k]] = h_prev[[r, k]];
                        c[[r, k]] = c_prev[[r, k]];
                    }
                }
            }
            (h, c)
        }
    };

    StepCache {
        inputs,
        x,
        i,
        f,
        g,
        o,
        tanh_c,
        h,
        c,
    }
}

/// Row-wise log-softmax, numerically stable.
pub(crate) fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

fn log_softmax_vec(logits: &mut Array1<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv_inplace(|v| v - lse);
}

fn embed_rows(
    embedding: &Array2<f64>,
    tokens: &[TokenId],
    mask: Option<&Array2<f64>>,
) -> Array2<f64> {
    let e = embedding.ncols();
    let mut x = Array2::zeros((tokens.len(), e));
    for (r, &tok) in tokens.iter().enumerate() {
        x.row_mut(r).assign(&embedding.row(tok));
    }
    if let Some(m) = mask {
        x *= m;
    }
    x
}

pub(crate) struct ForwardCache {
    pub loss: f64,
    /// Per decoder step: B x V log-probabilities.
    pub logp: Vec<Array2<f64>>,
    /// Per decoder step: gold token per row (EOS at the last real step).
    pub gold: Vec<Vec<TokenId>>,
    /// Per decoder step: 1.0 where the step is scored for that row.
    pub loss_mask: Vec<Vec<f64>>,
    pub enc_steps: Vec<StepCache>,
    pub enc_step_masks: Vec<Vec<f64>>,
    pub dec_steps: Vec<StepCache>,
    /// Decoder hidden after dropout (what the projection consumed).
    pub dec_hdrop: Vec<Array2<f64>>,
    pub masks: Option<Masks>,
    pub n_tokens: f64,
}

/// Full teacher-forced pass, keeping every intermediate needed by backprop.
pub(crate) fn forward_full(
    params: &ModelParams,
    batch: &Batch,
    train_mode: bool,
) -> Result<ForwardCache> {
    let cfg = &params.config;
    batch.validate_for_vocab(cfg.vocab_size)?;
    let bsz = batch.batch_size();
    let (e, h, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.vocab_size);
    let enc_t = batch.src.ncols();
    // One decoder step per target token plus the EOS step.
    let dec_t = batch.tgt_len.iter().max().unwrap() + 1;

    let masks = if train_mode && cfg.dropout_rate > 0.0 {
        Some(make_masks(
            cfg.dropout_rate,
            batch.dropout_seed,
            bsz,
            e,
            h,
            enc_t,
            dec_t,
        ))
    } else {
        None
    };

    // Encoder.
    let mut enc_steps = Vec::with_capacity(enc_t);
    let mut enc_step_masks = Vec::with_capacity(enc_t);
    let mut h_prev = Array2::zeros((bsz, h));
    let mut c_prev = Array2::zeros((bsz, h));
    for t in 0..enc_t {
        let tokens: Vec<TokenId> = (0..bsz).map(|r| batch.src[[r, t]]).collect();
        let emb_mask = masks.as_ref().map(|m| &m.enc_emb[t]);
        let x = embed_rows(&params.embedding, &tokens, emb_mask);
        let step_mask: Vec<f64> = batch
            .src_len
            .iter()
            .map(|&l| if t < l { 1.0 } else { 0.0 })
            .collect();
        let cache = lstm_step(
            &params.enc_wx,
            &params.enc_wh,
            &params.enc_b,
            tokens,
            x,
            &h_prev,
            &c_prev,
            Some(&step_mask),
        );
        h_prev = cache.h.clone();
        c_prev = cache.c.clone();
        enc_steps.push(cache);
        enc_step_masks.push(step_mask);
    }

    // Decoder, teacher-forced: input BOS, y1..yT; gold y1..yT, EOS.
    let smooth = cfg.label_smoothing;
    let uniform = smooth / v as f64;
    let n_tokens = batch.target_tokens() as f64;
    let mut dec_steps = Vec::with_capacity(dec_t);
    let mut dec_hdrop = Vec::with_capacity(dec_t);
    let mut logp_steps = Vec::with_capacity(dec_t);
    let mut gold_steps = Vec::with_capacity(dec_t);
    let mut mask_steps = Vec::with_capacity(dec_t);
    let mut loss = 0.0;
    for s in 0..dec_t {
        let tokens: Vec<TokenId> = (0..bsz)
            .map(|r| {
                if s == 0 {
                    BOS
                } else if s - 1 < batch.tgt_len[r] {
                    batch.tgt[[r, s - 1]]
                } else {
                    PAD
                }
            })
            .collect();
        let emb_mask = masks.as_ref().map(|m| &m.dec_emb[s]);
        let x = embed_rows(&params.embedding, &tokens, emb_mask);
        let cache = lstm_step(
            &params.dec_wx,
            &params.dec_wh,
            &params.dec_b,
            tokens,
            x,
            &h_prev,
            &c_prev,
            None,
        );
        h_prev = cache.h.clone();
        c_prev = cache.c.clone();

        let hdrop = match masks.as_ref() {
            Some(m) => &cache.h * &m.dec_hid[s],
            None => cache.h.clone(),
        };
        let mut logits = hdrop.dot(&params.out_w);
        logits += &params.out_b.row(0);
        log_softmax_rows(&mut logits);

        let mut gold = Vec::with_capacity(bsz);
        let mut lmask = Vec::with_capacity(bsz);
        for r in 0..bsz {
            let len = batch.tgt_len[r];
            let (tok, m) = if s < len {
                (batch.tgt[[r, s]], 1.0)
            } else if s == len {
                (EOS, 1.0)
            } else {
                (PAD, 0.0)
            };
            if m > 0.0 {
                let row = logits.row(r);
                let sum_lp: f64 = row.sum();
                loss -= ((1.0 - smooth) * row[tok] + uniform * sum_lp) / n_tokens;
            }
            gold.push(tok);
            lmask.push(m);
        }

        dec_steps.push(cache);
        dec_hdrop.push(hdrop);
        logp_steps.push(logits);
        gold_steps.push(gold);
        mask_steps.push(lmask);
    }

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }

    Ok(ForwardCache {
        loss,
        logp: logp_steps,
        gold: gold_steps,
        loss_mask: mask_steps,
        enc_steps,
        enc_step_masks,
        dec_steps,
        dec_hdrop,
        masks,
        n_tokens,
    })
}

/// Result of [`forward_loss`].
pub struct LossOutput {
    /// Mean label-smoothed negative log-likelihood over scored tokens.
    pub loss: f64,
    /// `per_token[b][s]`: log-probability of the gold token at step s
    /// (targets then EOS), lengths `tgt_len[b] + 1`.
    pub per_token: Vec<Vec<f64>>,
}

/// Teacher-forced loss. In train mode, dropout masks come from the batch's
/// dropout seed; eval mode is a pure function of (params, batch).
pub fn forward_loss(params: &ModelParams, batch: &Batch, train_mode: bool) -> Result<LossOutput> {
    let cache = forward_full(params, batch, train_mode)?;
    let bsz = batch.batch_size();
    let mut per_token = vec![Vec::new(); bsz];
    for (s, logp) in cache.logp.iter().enumerate() {
        for r in 0..bsz {
            if cache.loss_mask[s][r] > 0.0 {
                per_token[r].push(logp[[r, cache.gold[s][r]]]);
            }
        }
    }
    Ok(LossOutput {
        loss: cache.loss,
        per_token,
    })
}

/// Sum of gold-token log-probabilities for one (source, target) pair in eval
/// mode. `include_eos` controls whether the terminating EOS step is scored,
/// matching how decoders score terminated vs length-capped hypotheses.
pub fn score_target(
    params: &ModelParams,
    source: &[TokenId],
    target: &[TokenId],
    include_eos: bool,
) -> Result<f64> {
    let mut state = encode_source(params, source)?;
    let mut total = 0.0;
    let mut input = BOS;
    for &tok in target {
        let logp = decode_step(params, &mut state, input)?;
        total += logp[tok];
        input = tok;
    }
    if include_eos {
        let logp = decode_step(params, &mut state, input)?;
        total += logp[EOS];
    }
    Ok(total)
}

/// Running decoder state for incremental decoding (always eval mode).
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

fn lstm_step_single(
    wx: &Array2<f64>,
    wh: &Array2<f64>,
    b: &Array2<f64>,
    x: ArrayView1<f64>,
    h: &mut Array1<f64>,
    c: &mut Array1<f64>,
) {
    let hidden = wh.nrows();
    let mut gates = x.dot(wx) + h.dot(wh);
    gates += &b.index_axis(Axis(0), 0);
    for k in 0..hidden {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hidden + k]);
        let g = gates[2 * hidden + k].tanh();
        let o = sigmoid(gates[3 * hidden + k]);
        let c_new = f * c[k] + i * g;
        c[k] = c_new;
        h[k] = o * c_new.tanh();
    }
}

/// Run the encoder over one source and return the decoder's initial state.
pub fn encode_source(params: &ModelParams, source: &[TokenId]) -> Result<DecoderState> {
    let cfg = &params.config;
    if source.is_empty() {
        return Err(Error::Usage("cannot encode an empty source".into()));
    }
    if let Some(&bad) = source.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Config(format!(
            "source token id {bad} out of range (vocab {})",
            cfg.vocab_size
        )));
    }
    let mut h = Array1::zeros(cfg.hidden_dim);
    let mut c = Array1::zeros(cfg.hidden_dim);
    for &tok in source {
        let x = params.embedding.row(tok);
        lstm_step_single(&params.enc_wx, &params.enc_wh, &params.enc_b, x, &mut h, &mut c);
    }
    Ok(DecoderState { h, c })
}

/// Advance the decoder one step with `input` and return log-probabilities
/// over the vocabulary for the next token.
pub fn decode_step(
    params: &ModelParams,
    state: &mut DecoderState,
    input: TokenId,
) -> Result<Array1<f64>> {
    let cfg = &params.config;
    if input >= cfg.vocab_size {
        return Err(Error::Config(format!(
            "decoder input id {input} out of range (vocab {})",
            cfg.vocab_size
        )));
    }
    let x = params.embedding.row(input);
    lstm_step_single(
        &params.dec_wx,
        &params.dec_wh,
        &params.dec_b,
        x,
        &mut state.h,
        &mut state.c,
    );
    let mut logits = state.h.dot(&params.out_w);
    logits += &params.out_b.index_axis(Axis(0), 0);
    log_softmax_vec(&mut logits);
    Ok(logits)
}
