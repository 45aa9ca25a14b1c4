//! The two-integer sum task: dataset generation, digit-level encoding,
//! grid prediction and the error / smoothness / symmetry metrics.
//!
//! Inputs are pairs (x1, x2) with x1, x2 in [0, 99]; the source sequence is
//! the digits of x1, `<sep>`, the digits of x2 (no zero padding) and the
//! target is the digits of x1 + x2. The full input space is the 100x100 grid.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, ParallelExample, Sequence};
use crate::decode::{greedy_decode, DecodeSpec};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::selftrain::{StageObserver, TaskMetrics};
use crate::train::TrainOutcome;
use crate::vocab::{TokenId, Vocabulary, EOS, SEP};

pub const GRID_SIDE: usize = 100;
pub const GRID_POINTS: usize = GRID_SIDE * GRID_SIDE;

/// Error charged to a grid point whose prediction failed to parse: half the
/// maximum possible error (198). The failure rate is reported separately so
/// the penalty's influence stays visible.
pub const PARSE_FAILURE_PENALTY: f64 = 100.0;

pub const TRAIN_SIZE: usize = 250;
pub const VALID_SIZE: usize = 100;
pub const TEST_SIZE: usize = 5000;
pub const UNLABELED_SIZE: usize = 4000;

/// Disjoint splits over the 10000-point grid, stored as integer pairs.
#[derive(Debug, Clone)]
pub struct ToySplit {
    pub train: Vec<(u8, u8)>,
    pub valid: Vec<(u8, u8)>,
    pub test: Vec<(u8, u8)>,
    pub unlabeled: Vec<(u8, u8)>,
}

/// Sample the 250/100/5000/4000 splits without replacement; the remaining
/// 650 grid points are unused.
pub fn gen_toy_dataset(seed: u64) -> ToySplit {
    let mut idx: Vec<usize> = (0..GRID_POINTS).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let to_pair = |i: &usize| ((i / GRID_SIDE) as u8, (i % GRID_SIDE) as u8);
    let take = |n: usize, start: usize| idx[start..start + n].iter().map(to_pair).collect();
    ToySplit {
        train: take(TRAIN_SIZE, 0),
        valid: take(VALID_SIZE, TRAIN_SIZE),
        test: take(TEST_SIZE, TRAIN_SIZE + VALID_SIZE),
        unlabeled: take(UNLABELED_SIZE, TRAIN_SIZE + VALID_SIZE + TEST_SIZE),
    }
}

/// The fixed vocabulary for the task: reserved tokens plus digits 0-9.
pub fn toy_vocabulary() -> Vocabulary {
    Vocabulary::new((0..10).map(|d| d.to_string()))
}

fn digit_ids(vocab: &Vocabulary, value: u32) -> Result<Vec<TokenId>> {
    value
        .to_string()
        .chars()
        .map(|c| vocab.id_or_err(&c.to_string()))
        .collect()
}

/// Source sequence for the pair: digits of x1, `<sep>`, digits of x2.
pub fn encode_pair(vocab: &Vocabulary, x1: u32, x2: u32) -> Result<Sequence> {
    if x1 > 99 || x2 > 99 {
        return Err(Error::Usage(format!("operands ({x1}, {x2}) outside [0, 99]")));
    }
    let mut ids = digit_ids(vocab, x1)?;
    ids.push(SEP);
    ids.extend(digit_ids(vocab, x2)?);
    Ok(Sequence::new(ids))
}

/// Target sequence: digits of the sum.
pub fn encode_sum(vocab: &Vocabulary, sum: u32) -> Result<Sequence> {
    if sum > 198 {
        return Err(Error::Usage(format!("sum {sum} outside [0, 198]")));
    }
    Ok(Sequence::new(digit_ids(vocab, sum)?))
}

/// Map a decoded sequence back to an integer. Everything after a first EOS
/// is ignored; empty outputs, non-digit tokens and more than three digits
/// are parse failures.
pub fn parse_prediction(vocab: &Vocabulary, ids: &[TokenId]) -> Option<u32> {
    let upto = ids.iter().position(|&t| t == EOS).unwrap_or(ids.len());
    let digits = &ids[..upto];
    if digits.is_empty() || digits.len() > 3 {
        return None;
    }
    let mut value = 0u32;
    for &id in digits {
        let tok = vocab.token(id)?;
        let d = match tok.as_bytes() {
            [b] if b.is_ascii_digit() => (b - b'0') as u32,
            _ => return None,
        };
        value = value * 10 + d;
    }
    Some(value)
}

/// Parallel dataset for a list of grid points.
pub fn parallel_dataset(vocab: &Vocabulary, points: &[(u8, u8)]) -> Result<Dataset> {
    let examples = points
        .iter()
        .map(|&(a, b)| {
            Ok(ParallelExample {
                source: encode_pair(vocab, a as u32, b as u32)?,
                target: encode_sum(vocab, a as u32 + b as u32)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(examples))
}

/// Unlabeled sources for a list of grid points.
pub fn unlabeled_sources(vocab: &Vocabulary, points: &[(u8, u8)]) -> Result<Vec<Sequence>> {
    points
        .iter()
        .map(|&(a, b)| encode_pair(vocab, a as u32, b as u32))
        .collect()
}

/// Greedy predictions over the whole grid; `None` marks a parse failure.
/// Indexed by `x1 * 100 + x2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPrediction {
    pub values: Vec<Option<u32>>,
}

impl GridPrediction {
    pub fn get(&self, x1: usize, x2: usize) -> Option<u32> {
        self.values[x1 * GRID_SIDE + x2]
    }

    /// Grid where every point is predicted exactly (used by metric oracles).
    pub fn oracle() -> Self {
        let values = (0..GRID_POINTS)
            .map(|i| Some((i / GRID_SIDE + i % GRID_SIDE) as u32))
            .collect();
        GridPrediction { values }
    }

    pub fn constant(value: u32) -> Self {
        GridPrediction {
            values: vec![Some(value); GRID_POINTS],
        }
    }
}

/// Greedy-decode and parse all 10000 grid points. Read-only on the params;
/// points are decoded in parallel and collected in grid order.
pub fn predict_grid(params: &ModelParams, vocab: &Vocabulary) -> Result<GridPrediction> {
    let spec = DecodeSpec::greedy(params.config.max_decode_len);
    let values = (0..GRID_POINTS)
        .into_par_iter()
        .map(|i| {
            let (x1, x2) = ((i / GRID_SIDE) as u32, (i % GRID_SIDE) as u32);
            let src = encode_pair(vocab, x1, x2)?;
            let hyp = greedy_decode(params, &src, &spec)?;
            Ok(parse_prediction(vocab, &hyp.seq.ids))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridPrediction { values })
}

fn point_error(grid: &GridPrediction, x1: usize, x2: usize) -> f64 {
    match grid.get(x1, x2) {
        Some(v) => (v as f64 - (x1 + x2) as f64).abs(),
        None => PARSE_FAILURE_PENALTY,
    }
}

/// Mean absolute error over the given points, with the parse-failure penalty.
pub fn mean_test_error(grid: &GridPrediction, points: &[(u8, u8)]) -> f64 {
    let total: f64 = points
        .iter()
        .map(|&(a, b)| point_error(grid, a as usize, b as usize))
        .sum();
    total / points.len() as f64
}

/// Mean over all grid points of the population standard deviation of the
/// parseable predictions in the 3x3 neighborhood (clipped at the borders:
/// corners use 4 cells, edges 6). Neighborhoods with fewer than two
/// parseable values contribute 0.
pub fn smoothness(grid: &GridPrediction) -> f64 {
    let mut total = 0.0;
    for x1 in 0..GRID_SIDE as isize {
        for x2 in 0..GRID_SIDE as isize {
            let mut vals: Vec<f64> = Vec::with_capacity(9);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let (nx, ny) = (x1 + dx, x2 + dy);
                    if (0..GRID_SIDE as isize).contains(&nx)
                        && (0..GRID_SIDE as isize).contains(&ny)
                    {
                        if let Some(v) = grid.get(nx as usize, ny as usize) {
                            vals.push(v as f64);
                        }
                    }
                }
            }
            if vals.len() >= 2 {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / vals.len() as f64;
                total += var.sqrt();
            }
        }
    }
    total / GRID_POINTS as f64
}

/// Mean over all grid points of |f(x1, x2) - f(x2, x1)|. Diagonal points
/// contribute 0; off-diagonal pairs with a parse failure on either side
/// contribute the penalty.
pub fn symmetry(grid: &GridPrediction) -> f64 {
    let mut total = 0.0;
    for x1 in 0..GRID_SIDE {
        for x2 in 0..GRID_SIDE {
            if x1 == x2 {
                continue;
            }
            total += match (grid.get(x1, x2), grid.get(x2, x1)) {
                (Some(a), Some(b)) => (a as f64 - b as f64).abs(),
                _ => PARSE_FAILURE_PENALTY,
            };
        }
    }
    total / GRID_POINTS as f64
}

/// Per-point absolute error (penalty where parsing failed), row = x1.
pub fn error_heatmap(grid: &GridPrediction) -> Array2<f64> {
    Array2::from_shape_fn((GRID_SIDE, GRID_SIDE), |(x1, x2)| point_error(grid, x1, x2))
}

/// Fraction of grid points whose prediction failed to parse.
pub fn failure_rate(grid: &GridPrediction) -> f64 {
    grid.values.iter().filter(|v| v.is_none()).count() as f64 / GRID_POINTS as f64
}

/// Computes the toy metrics after each self-training stage.
pub struct ToyEvaluator {
    pub vocab: Vocabulary,
    pub test_points: Vec<(u8, u8)>,
}

impl ToyEvaluator {
    pub fn new(vocab: Vocabulary, test_points: Vec<(u8, u8)>) -> Self {
        ToyEvaluator { vocab, test_points }
    }

    pub fn metrics(&self, params: &ModelParams) -> Result<TaskMetrics> {
        let grid = predict_grid(params, &self.vocab)?;
        Ok(TaskMetrics {
            test_error: mean_test_error(&grid, &self.test_points),
            smoothness: smoothness(&grid),
            symmetry: symmetry(&grid),
            failure_rate: failure_rate(&grid),
        })
    }
}

impl StageObserver for ToyEvaluator {
    fn observe(
        &mut self,
        _iteration: usize,
        _stage: crate::selftrain::Stage,
        outcome: &TrainOutcome,
    ) -> Result<Option<TaskMetrics>> {
        self.metrics(&outcome.params).map(Some)
    }
}
