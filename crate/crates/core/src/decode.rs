//! Decoding over a frozen model: beam search, ancestral sampling, greedy.
//!
//! Decoding always runs in eval mode (no dropout). Hypothesis log-probs are
//! sums of per-token log-probabilities under the untempered model, including
//! the terminating EOS when one was emitted, so any returned hypothesis can
//! be re-scored exactly by a teacher-forced eval pass. PAD and BOS are never
//! candidates. Ties break toward the lower token id.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::model::{decode_step, encode_source, DecoderState, ModelParams};
use crate::vocab::{TokenId, BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Beam,
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSpec {
    pub mode: DecodeMode,
    pub beam_size: usize,
    pub max_len: usize,
    pub length_normalize: bool,
    pub temperature: f64,
    pub seed: u64,
}

impl DecodeSpec {
    pub fn beam(beam_size: usize, max_len: usize) -> Self {
        DecodeSpec {
            mode: DecodeMode::Beam,
            beam_size,
            max_len,
            length_normalize: true,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn greedy(max_len: usize) -> Self {
        DecodeSpec {
            mode: DecodeMode::Greedy,
            beam_size: 1,
            max_len,
            length_normalize: true,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn sample(max_len: usize, temperature: f64, seed: u64) -> Self {
        DecodeSpec {
            mode: DecodeMode::Sample,
            beam_size: 1,
            max_len,
            length_normalize: true,
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A decoded sequence with its score. `logprob` sums the log-probabilities of
/// the emitted tokens (plus EOS when `terminated`); `normalized_score`
/// divides by the number of scored tokens when length normalization is on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub seq: Sequence,
    pub logprob: f64,
    pub normalized_score: f64,
    pub terminated: bool,
}

fn normalized(logprob: f64, tokens: usize, normalize: bool) -> f64 {
    if normalize && tokens > 0 {
        logprob / tokens as f64
    } else {
        logprob
    }
}

fn finish(ids: Vec<TokenId>, logprob: f64, terminated: bool, spec: &DecodeSpec) -> ScoredHypothesis {
    let scored = ids.len() + usize::from(terminated);
    ScoredHypothesis {
        seq: Sequence::new(ids),
        logprob,
        normalized_score: normalized(logprob, scored, spec.length_normalize),
        terminated,
    }
}

/// Dispatch on `spec.mode`.
pub fn decode(params: &ModelParams, source: &Sequence, spec: &DecodeSpec) -> Result<ScoredHypothesis> {
    match spec.mode {
        DecodeMode::Beam => beam_search(params, source, spec),
        DecodeMode::Sample => sample_decode(params, source, spec),
        DecodeMode::Greedy => greedy_decode(params, source, spec),
    }
}

struct BeamHyp {
    ids: Vec<TokenId>,
    logprob: f64,
    state: DecoderState,
    last: TokenId,
}

/// Length-bounded beam search. Each step expands every live prefix over the
/// full vocabulary (minus PAD/BOS) and keeps the `beam_size` best candidates;
/// EOS candidates complete. Returns the best completed hypothesis by
/// normalized score, falling back to the best live prefix at `max_len`.
pub fn beam_search(
    params: &ModelParams,
    source: &Sequence,
    spec: &DecodeSpec,
) -> Result<ScoredHypothesis> {
    spec.validate()?;
    let init = encode_source(params, &source.ids)?;
    let mut live = vec![BeamHyp {
        ids: Vec::new(),
        logprob: 0.0,
        state: init,
        last: BOS,
    }];
    let mut completed: Vec<ScoredHypothesis> = Vec::new();

    for _ in 0..spec.max_len {
        // (score, parent, token) for every legal expansion of every live hyp.
        let mut expansions: Vec<(f64, usize, TokenId)> = Vec::new();
        let mut stepped: Vec<(DecoderState, Vec<f64>)> = Vec::with_capacity(live.len());
        for (pidx, hyp) in live.iter().enumerate() {
            let mut state = hyp.state.clone();
            let logp = decode_step(params, &mut state, hyp.last)?;
            for tok in 0..params.config.vocab_size {
                if tok == PAD || tok == BOS {
                    continue;
                }
                expansions.push((hyp.logprob + logp[tok], pidx, tok));
            }
            stepped.push((state, logp.to_vec()));
        }
        expansions.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });

        let mut next_live = Vec::with_capacity(spec.beam_size);
        for &(score, pidx, tok) in expansions.iter().take(spec.beam_size) {
            if tok == EOS {
                completed.push(finish(live[pidx].ids.clone(), score, true, spec));
            } else {
                let mut ids = live[pidx].ids.clone();
                ids.push(tok);
                next_live.push(BeamHyp {
                    ids,
                    logprob: score,
                    state: stepped[pidx].0.clone(),
                    last: tok,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }

    let best_of = |hyps: Vec<ScoredHypothesis>| -> Option<ScoredHypothesis> {
        hyps.into_iter().max_by(|a, b| {
            a.normalized_score
                .total_cmp(&b.normalized_score)
                .then_with(|| b.seq.ids.cmp(&a.seq.ids))
        })
    };

    if let Some(best) = best_of(completed) {
        return Ok(best);
    }
    let leftovers: Vec<ScoredHypothesis> = live
        .into_iter()
        .map(|h| finish(h.ids, h.logprob, false, spec))
        .collect();
    best_of(leftovers).ok_or_else(|| Error::Numeric("beam search produced no hypothesis".into()))
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_decode(
    params: &ModelParams,
    source: &Sequence,
    spec: &DecodeSpec,
) -> Result<ScoredHypothesis> {
    spec.validate()?;
    let mut state = encode_source(params, &source.ids)?;
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    let mut last = BOS;
    for _ in 0..spec.max_len {
        let logp = decode_step(params, &mut state, last)?;
        let tok = argmax_candidate(&logp.to_vec());
        logprob += logp[tok];
        if tok == EOS {
            return Ok(finish(ids, logprob, true, spec));
        }
        ids.push(tok);
        last = tok;
    }
    Ok(finish(ids, logprob, false, spec))
}

/// Ancestral sampling from the per-step softmax at `spec.temperature`,
/// deterministic given `spec.seed`. Temperatures below 1e-6 degrade to
/// argmax. Scores always come from the untempered distribution.
pub fn sample_decode(
    params: &ModelParams,
    source: &Sequence,
    spec: &DecodeSpec,
) -> Result<ScoredHypothesis> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut state = encode_source(params, &source.ids)?;
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    let mut last = BOS;
    for _ in 0..spec.max_len {
        let logp = decode_step(params, &mut state, last)?;
        let logp = logp.to_vec();
        let tok = if spec.temperature < 1e-6 {
            argmax_candidate(&logp)
        } else {
            sample_candidate(&logp, spec.temperature, &mut rng)
        };
        logprob += logp[tok];
        if tok == EOS {
            return Ok(finish(ids, logprob, true, spec));
        }
        ids.push(tok);
        last = tok;
    }
    Ok(finish(ids, logprob, false, spec))
}

fn argmax_candidate(logp: &[f64]) -> TokenId {
    let mut best = EOS;
    let mut best_lp = f64::NEG_INFINITY;
    for (tok, &lp) in logp.iter().enumerate() {
        if tok == PAD || tok == BOS {
            continue;
        }
        if lp > best_lp || (lp == best_lp && tok < best) {
            best = tok;
            best_lp = lp;
        }
    }
    best
}

fn sample_candidate(logp: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> TokenId {
    let weights: Vec<f64> = logp
        .iter()
        .enumerate()
        .map(|(tok, &lp)| {
            if tok == PAD || tok == BOS {
                0.0
            } else {
                (lp / temperature).exp()
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return argmax_candidate(logp);
    }
    let mut u = rng.gen::<f64>() * total;
    for (tok, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 && w > 0.0 {
            return tok;
        }
    }
    // Floating-point leftovers land on the last positive-weight token.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("total > 0 implies a positive weight")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, score_target, ModelConfig};

    fn cfg(vocab: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            hidden_dim: 7,
            dropout_rate: 0.3,
            label_smoothing: 0.1,
            vocab_size: vocab,
            max_decode_len: 8,
        }
    }

    fn sources() -> Vec<Sequence> {
        vec![
            Sequence::new(vec![6, 7]),
            Sequence::new(vec![7]),
            Sequence::new(vec![6, 5, 7]),
            Sequence::new(vec![7, 7, 6, 6]),
        ]
    }

    #[test]
    fn beam_of_one_is_greedy() {
        for seed in 0..6 {
            let params = init_params(&cfg(9), seed).unwrap();
            for src in sources() {
                let b = beam_search(&params, &src, &DecodeSpec::beam(1, 8)).unwrap();
                let g = greedy_decode(&params, &src, &DecodeSpec::greedy(8)).unwrap();
                assert_eq!(b.seq, g.seq, "seed {seed}");
                assert!((b.logprob - g.logprob).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_temperature_sampling_is_greedy() {
        let params = init_params(&cfg(9), 3).unwrap();
        for src in sources() {
            let s = sample_decode(&params, &src, &DecodeSpec::sample(8, 1e-9, 4)).unwrap();
            let g = greedy_decode(&params, &src, &DecodeSpec::greedy(8)).unwrap();
            assert_eq!(s.seq, g.seq);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let params = init_params(&cfg(9), 5).unwrap();
        let src = Sequence::new(vec![6, 7, 8]);
        let spec = DecodeSpec::sample(8, 1.0, 99);
        let a = sample_decode(&params, &src, &spec).unwrap();
        let b = sample_decode(&params, &src, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outputs_respect_limits_and_never_emit_control_tokens() {
        for seed in 0..10 {
            let params = init_params(&cfg(10), seed).unwrap();
            let src = Sequence::new(vec![6 + (seed as usize % 4)]);
            for spec in [
                DecodeSpec::beam(3, 5),
                DecodeSpec::greedy(5),
                DecodeSpec::sample(5, 1.3, seed),
            ] {
                let hyp = decode(&params, &src, &spec).unwrap();
                assert!(hyp.seq.len() <= 5);
                assert!(hyp.logprob <= 0.0);
                assert!(!hyp.seq.ids.contains(&PAD));
                assert!(!hyp.seq.ids.contains(&BOS));
                assert!(!hyp.seq.ids.contains(&EOS));
            }
        }
    }

    #[test]
    fn returned_logprob_matches_rescoring() {
        for seed in 0..5 {
            let params = init_params(&cfg(9), seed).unwrap();
            for src in sources() {
                for spec in [
                    DecodeSpec::beam(4, 8),
                    DecodeSpec::greedy(8),
                    DecodeSpec::sample(8, 1.0, seed + 17),
                ] {
                    let hyp = decode(&params, &src, &spec).unwrap();
                    if hyp.seq.is_empty() && !hyp.terminated {
                        continue;
                    }
                    let rescored = if hyp.seq.is_empty() {
                        score_target(&params, &src.ids, &[], true).unwrap()
                    } else {
                        score_target(&params, &src.ids, &hyp.seq.ids, hyp.terminated).unwrap()
                    };
                    assert!(
                        (hyp.logprob - rescored).abs() <= 1e-9,
                        "seed {seed} spec {spec:?}: {} vs {rescored}",
                        hyp.logprob
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = DecodeSpec::beam(0, 8);
        assert!(s.validate().is_err());
        s = DecodeSpec::beam(1, 0);
        assert!(s.validate().is_err());
        s = DecodeSpec::sample(8, 0.0, 0);
        assert!(s.validate().is_err());
    }

    /// Output projection ignores the hidden state and emits exactly
    /// p(tok 6) = 0.8, p(EOS) = 0.2 at every step.
    fn hand_built_bernoulli() -> ModelParams {
        let mut params = init_params(&cfg(8), 0).unwrap();
        params.out_w.fill(0.0);
        params.out_b.fill(-1000.0); // exp(-1000) == 0 exactly in f64
        params.out_b[[0, 6]] = 0.8f64.ln();
        params.out_b[[0, EOS]] = 0.2f64.ln();
        params
    }

    #[test]
    fn sampled_frequency_matches_hand_built_distribution() {
        let params = hand_built_bernoulli();
        let src = Sequence::new(vec![6]);
        let n = 1000;
        let mut hits = 0;
        for seed in 0..n {
            let hyp =
                sample_decode(&params, &src, &DecodeSpec::sample(8, 1.0, seed as u64)).unwrap();
            // First emitted token is 6 w.p. 0.8, else the hyp terminated
            // immediately on EOS.
            if hyp.seq.ids.first() == Some(&6) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.8).abs() <= 0.04, "frequency {freq}");

        // Exact binomial 99% acceptance interval for Bin(1000, 0.8).
        use statrs::distribution::{Binomial, DiscreteCDF};
        let bin = Binomial::new(0.8, n as u64).unwrap();
        let lo = bin.inverse_cdf(0.005);
        let hi = bin.inverse_cdf(0.995);
        assert!(
            (lo..=hi).contains(&(hits as u64)),
            "hits {hits} outside exact binomial 99% interval [{lo}, {hi}]"
        );
    }

    #[test]
    fn hand_built_logprob_is_exact() {
        let params = hand_built_bernoulli();
        let src = Sequence::new(vec![6]);
        let g = greedy_decode(&params, &src, &DecodeSpec::greedy(3)).unwrap();
        // Greedy picks token 6 (p=0.8) until max_len.
        assert_eq!(g.seq.ids, vec![6, 6, 6]);
        assert!((g.logprob - 3.0 * 0.8f64.ln()).abs() < 1e-12);
        assert!(!g.terminated);
    }
}
