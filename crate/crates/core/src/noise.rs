//! Input perturbations: synthetic token noise (drop / blank / local shuffle)
//! and the operand swap used by the toy sum task.
//!
//! All noise is a pure function of `(input, spec, example_seed)`. During
//! pseudo-training the caller draws a fresh `example_seed` per epoch and per
//! example, so the model sees a new corruption of each source every epoch.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::seeds;
use crate::vocab::{TokenId, BLANK, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Synthetic,
    OperandSwap,
}

/// The perturbation function g(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub drop_prob: f64,
    pub blank_prob: f64,
    pub shuffle_window: usize,
    pub seed_stream: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            drop_prob: 0.0,
            blank_prob: 0.0,
            shuffle_window: 0,
            seed_stream: 0,
        }
    }

    /// Default synthetic noise levels (drop 0.1, blank 0.2, window 3).
    pub fn synthetic_default(seed_stream: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 0.1,
            blank_prob: 0.2,
            shuffle_window: 3,
            seed_stream,
        }
    }

    pub fn operand_swap() -> Self {
        NoiseSpec {
            kind: NoiseKind::OperandSwap,
            drop_prob: 0.0,
            blank_prob: 0.0,
            shuffle_window: 0,
            seed_stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_prob) || !(0.0..=1.0).contains(&self.blank_prob) {
            return Err(Error::Config(format!(
                "noise probabilities must be in [0,1]: drop={} blank={}",
                self.drop_prob, self.blank_prob
            )));
        }
        Ok(())
    }
}

/// Token drop stage. Exposed to the module tests so the drop-rate oracle can
/// be checked ahead of the keep-one guard.
fn drop_tokens(rng: &mut ChaCha8Rng, ids: &[TokenId], drop_prob: f64) -> Vec<TokenId> {
    ids.iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= drop_prob)
        .collect()
}

/// Apply drop -> blank -> local shuffle. If the drop stage would delete every
/// token, one uniformly chosen original token is kept, so output length >= 1.
pub fn synthetic_noise(x: &Sequence, spec: &NoiseSpec, example_seed: u64) -> Result<Sequence> {
    if spec.kind != NoiseKind::Synthetic {
        return Err(Error::Usage(format!(
            "synthetic_noise called with noise kind {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed_stream, "synthetic", example_seed));

    let mut kept = drop_tokens(&mut rng, &x.ids, spec.drop_prob);
    if kept.is_empty() {
        kept.push(x.ids[rng.gen_range(0..x.ids.len())]);
    }

    for tok in kept.iter_mut() {
        if rng.gen::<f64>() < spec.blank_prob {
            *tok = BLANK;
        }
    }

    if spec.shuffle_window > 0 && kept.len() > 1 {
        // Each token gets key = index + U[0, window); a stable sort on the
        // keys moves no token more than `window` places past another.
        let window = spec.shuffle_window as f64;
        let keys: Vec<f64> = (0..kept.len())
            .map(|i| i as f64 + rng.gen::<f64>() * window)
            .collect();
        let mut order: Vec<usize> = (0..kept.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        kept = order.into_iter().map(|i| kept[i]).collect();
    }

    Ok(Sequence::new(kept))
}

/// Exchange the two operand spans around the single SEP token.
pub fn operand_swap(x: &Sequence) -> Result<Sequence> {
    let sep_positions: Vec<usize> = x
        .ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == SEP)
        .map(|(i, _)| i)
        .collect();
    let pos = match sep_positions.as_slice() {
        [p] => *p,
        _ => {
            return Err(Error::Usage(format!(
                "operand_swap needs exactly one <sep>, found {}",
                sep_positions.len()
            )))
        }
    };
    if pos == 0 || pos + 1 == x.ids.len() {
        return Err(Error::Usage("operand_swap needs tokens on both sides of <sep>".into()));
    }
    let mut ids = Vec::with_capacity(x.ids.len());
    ids.extend_from_slice(&x.ids[pos + 1..]);
    ids.push(SEP);
    ids.extend_from_slice(&x.ids[..pos]);
    Ok(Sequence::new(ids))
}

/// A noise spec bound into a reusable per-example perturbation function.
#[derive(Debug, Clone, Copy)]
pub struct Perturber {
    spec: NoiseSpec,
}

/// Bind a spec into a deterministic perturbation handle.
pub fn make_perturber(spec: NoiseSpec) -> Perturber {
    Perturber { spec }
}

impl Perturber {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        self.spec.kind == NoiseKind::None
    }

    pub fn apply(&self, x: &Sequence, example_seed: u64) -> Result<Sequence> {
        match self.spec.kind {
            NoiseKind::None => Ok(x.clone()),
            NoiseKind::Synthetic => synthetic_noise(x, &self.spec, example_seed),
            NoiseKind::OperandSwap => operand_swap(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn seq(ids: &[usize]) -> Sequence {
        Sequence::new(ids.to_vec())
    }

    #[test]
    fn zero_noise_is_identity() {
        let spec = NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 0.0,
            blank_prob: 0.0,
            shuffle_window: 0,
            seed_stream: 3,
        };
        let x = seq(&[6, 7, 5, 8]);
        for s in 0..20 {
            assert_eq!(synthetic_noise(&x, &spec, s).unwrap(), x);
        }
    }

    #[test]
    fn full_blanking_masks_everything() {
        let spec = NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 0.0,
            blank_prob: 1.0,
            shuffle_window: 0,
            seed_stream: 0,
        };
        let out = synthetic_noise(&seq(&[6, 7, 8]), &spec, 1).unwrap();
        assert_eq!(out.ids, vec![BLANK, BLANK, BLANK]);
    }

    #[test]
    fn drop_rate_matches_binomial_mean() {
        // Independent oracle: kept tokens ~ Binomial(10, 0.5), mean 5.
        // 10000 draws of the drop stage alone (ahead of the keep-one guard).
        let mut total = 0usize;
        for s in 0..10_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            total += drop_tokens(&mut rng, &[6; 10], 0.5).len();
        }
        let mean = total as f64 / 10_000.0;
        assert!((4.7..=5.3).contains(&mean), "mean kept length {mean}");
    }

    #[test]
    fn keep_one_guard_never_empties() {
        let spec = NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 1.0,
            blank_prob: 0.0,
            shuffle_window: 0,
            seed_stream: 7,
        };
        for s in 0..50 {
            let out = synthetic_noise(&seq(&[6, 7, 8]), &spec, s).unwrap();
            assert_eq!(out.len(), 1);
            assert!([6, 7, 8].contains(&out.ids[0]));
        }
    }

    #[test]
    fn noise_is_deterministic_in_seed() {
        let spec = NoiseSpec::synthetic_default(11);
        let x = seq(&[6, 7, 8, 9, 10, 11]);
        let a = synthetic_noise(&x, &spec, 42).unwrap();
        let b = synthetic_noise(&x, &spec, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_example_seeds_mostly_differ() {
        let spec = NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 0.5,
            blank_prob: 0.0,
            shuffle_window: 0,
            seed_stream: 5,
        };
        let x = seq(&[6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
        let outputs: Vec<_> = (0..100)
            .map(|s| synthetic_noise(&x, &spec, s).unwrap())
            .collect();
        let mut distinct = outputs.clone();
        distinct.sort_by(|a, b| a.ids.cmp(&b.ids));
        distinct.dedup();
        // 2^10 drop patterns over 100 seeds: collisions happen but rarely.
        assert!(distinct.len() >= 90, "only {} distinct outputs", distinct.len());
    }

    #[test]
    fn shuffle_is_local() {
        let spec = NoiseSpec {
            kind: NoiseKind::Synthetic,
            drop_prob: 0.0,
            blank_prob: 0.0,
            shuffle_window: 3,
            seed_stream: 1,
        };
        // Distinct ids so positions are recoverable.
        let x = seq(&(6..26).collect::<Vec<_>>());
        for s in 0..200 {
            let out = synthetic_noise(&x, &spec, s).unwrap();
            let pos_of = |id: usize| out.ids.iter().position(|&t| t == id).unwrap();
            for a in 0..x.ids.len() {
                for b in (a + 1)..x.ids.len() {
                    if b - a > 3 {
                        // Tokens further apart than the window never cross.
                        assert!(
                            pos_of(x.ids[a]) < pos_of(x.ids[b]),
                            "seed {s}: tokens {a} and {b} crossed"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn operand_swap_matches_definition() {
        // encode(12, 7) = "1 2 <sep> 7" with digit d at id 6+d.
        let x = seq(&[7, 8, SEP, 13]);
        let swapped = operand_swap(&x).unwrap();
        assert_eq!(swapped.ids, vec![13, SEP, 7, 8]);
    }

    #[test]
    fn operand_swap_is_involution() {
        let x = seq(&[7, 8, SEP, 13, 14]);
        assert_eq!(operand_swap(&operand_swap(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn symmetric_input_is_fixed_point() {
        let x = seq(&[11, SEP, 11]);
        assert_eq!(operand_swap(&x).unwrap(), x);
    }

    #[test]
    fn malformed_swap_input_rejected() {
        assert!(operand_swap(&seq(&[6, 7])).is_err()); // no sep
        assert!(operand_swap(&seq(&[SEP, 6])).is_err()); // empty left
        assert!(operand_swap(&seq(&[6, SEP])).is_err()); // empty right
        assert!(operand_swap(&seq(&[6, SEP, 7, SEP, 8])).is_err()); // two seps
    }

    #[test]
    fn perturber_delegates() {
        let x = seq(&[6, 7, 8, 9]);
        let ident = make_perturber(NoiseSpec::none());
        assert_eq!(ident.apply(&x, 9).unwrap(), x);

        let spec = NoiseSpec::synthetic_default(2);
        let p = make_perturber(spec);
        assert_eq!(p.apply(&x, 5).unwrap(), synthetic_noise(&x, &spec, 5).unwrap());
    }

    #[test]
    fn wrong_kind_is_usage_error() {
        let spec = NoiseSpec::none();
        assert!(synthetic_noise(&seq(&[6]), &spec, 0).is_err());
    }
}
