//! A single-layer LSTM encoder–decoder with analytic gradients.
//!
//! The encoder reads the source left-to-right; the decoder starts from the
//! encoder's final (h, c) and is teacher-forced during training. There is no
//! attention. Dropout (inverted) is applied to embedding outputs and to the
//! decoder hidden state before the output projection; the recurrence itself
//! is never perturbed. All math is f64.

mod backward;
mod forward;

pub use backward::grad;
pub use forward::{
    decode_step, encode_source, forward_loss, score_target, DecoderState, LossOutput,
};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Model hyper-parameters. `vocab_size` includes the reserved tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub vocab_size: usize,
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if self.vocab_size == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("vocab_size and max_decode_len must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// All trainable weights. Gate columns of the recurrent matrices are laid out
/// as four H-wide blocks `[input | forget | cell | output]`. Biases are kept
/// as 1-row matrices so every parameter is an `Array2` and optimizer,
/// checkpoint and gradient-check code can treat them uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Array2<f64>, // V x E, shared by encoder and decoder inputs
    pub enc_wx: Array2<f64>,    // E x 4H
    pub enc_wh: Array2<f64>,    // H x 4H
    pub enc_b: Array2<f64>,     // 1 x 4H
    pub dec_wx: Array2<f64>,    // E x 4H
    pub dec_wh: Array2<f64>,    // H x 4H
    pub dec_b: Array2<f64>,     // 1 x 4H
    pub out_w: Array2<f64>,     // H x V
    pub out_b: Array2<f64>,     // 1 x V
}

/// Gradient (or moment) arrays, shaped exactly like [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Array2<f64>,
    pub enc_wx: Array2<f64>,
    pub enc_wh: Array2<f64>,
    pub enc_b: Array2<f64>,
    pub dec_wx: Array2<f64>,
    pub dec_wh: Array2<f64>,
    pub dec_b: Array2<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
}

/// Fixed array order used by the optimizer, checkpoints and gradient checks.
pub const PARAM_NAMES: [&str; 9] = [
    "embedding", "enc_wx", "enc_wh", "enc_b", "dec_wx", "dec_wh", "dec_b", "out_w", "out_b",
];

impl ModelParams {
    pub fn arrays(&self) -> [(&'static str, &Array2<f64>); 9] {
        [
            ("embedding", &self.embedding),
            ("enc_wx", &self.enc_wx),
            ("enc_wh", &self.enc_wh),
            ("enc_b", &self.enc_b),
            ("dec_wx", &self.dec_wx),
            ("dec_wh", &self.dec_wh),
            ("dec_b", &self.dec_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 9] {
        [
            ("embedding", &mut self.embedding),
            ("enc_wx", &mut self.enc_wx),
            ("enc_wh", &mut self.enc_wh),
            ("enc_b", &mut self.enc_b),
            ("dec_wx", &mut self.dec_wx),
            ("dec_wh", &mut self.dec_wh),
            ("dec_b", &mut self.dec_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
        ]
    }

    /// Total number of scalar parameters.
    pub fn num_entries(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, a) in self.arrays() {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value in parameter {name}")));
            }
        }
        Ok(())
    }
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Gradients {
            embedding: z(&params.embedding),
            enc_wx: z(&params.enc_wx),
            enc_wh: z(&params.enc_wh),
            enc_b: z(&params.enc_b),
            dec_wx: z(&params.dec_wx),
            dec_wh: z(&params.dec_wh),
            dec_b: z(&params.dec_b),
            out_w: z(&params.out_w),
            out_b: z(&params.out_b),
        }
    }

    pub fn arrays(&self) -> [(&'static str, &Array2<f64>); 9] {
        [
            ("embedding", &self.embedding),
            ("enc_wx", &self.enc_wx),
            ("enc_wh", &self.enc_wh),
            ("enc_b", &self.enc_b),
            ("dec_wx", &self.dec_wx),
            ("dec_wh", &self.dec_wh),
            ("dec_b", &self.dec_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 9] {
        [
            ("embedding", &mut self.embedding),
            ("enc_wx", &mut self.enc_wx),
            ("enc_wh", &mut self.enc_wh),
            ("enc_b", &mut self.enc_b),
            ("dec_wx", &mut self.dec_wx),
            ("dec_wh", &mut self.dec_wh),
            ("dec_b", &mut self.dec_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
        ]
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, a) in self.arrays() {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {name}")));
            }
        }
        Ok(())
    }

    /// Global L2 norm across all arrays.
    pub fn global_norm(&self) -> f64 {
        self.arrays()
            .iter()
            .map(|(_, a)| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, a) in self.arrays_mut() {
            a.mapv_inplace(|v| v * factor);
        }
    }
}

/// Initialize parameters from uniform(-a, a) with a = 1/sqrt(hidden_dim).
/// Deterministic given the seed; arrays are filled in `PARAM_NAMES` order.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = 1.0 / (config.hidden_dim as f64).sqrt();
    let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
    let mut fill = |rows: usize, cols: usize| -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 * a - a)
    };
    Ok(ModelParams {
        embedding: fill(v, e),
        enc_wx: fill(e, 4 * h),
        enc_wh: fill(h, 4 * h),
        enc_b: fill(1, 4 * h),
        dec_wx: fill(e, 4 * h),
        dec_wh: fill(h, 4 * h),
        dec_b: fill(1, 4 * h),
        out_w: fill(h, v),
        out_b: fill(1, v),
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 5,
            dropout_rate: 0.3,
            label_smoothing: 0.1,
            vocab_size: 8,
            max_decode_len: 6,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let p1 = init_params(&cfg, 1).unwrap();
        let p2 = init_params(&cfg, 1).unwrap();
        for ((_, a), (_, b)) in p1.arrays().iter().zip(p2.arrays().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn distinct_seeds_differ() {
        let cfg = tiny_config();
        let p1 = init_params(&cfg, 1).unwrap();
        let p2 = init_params(&cfg, 2).unwrap();
        let any_diff = p1
            .arrays()
            .iter()
            .zip(p2.arrays().iter())
            .any(|((_, a), (_, b))| a != b);
        assert!(any_diff);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 3).unwrap();
        assert_eq!(p.embedding.dim(), (8, 4));
        assert_eq!(p.enc_wx.dim(), (4, 20));
        assert_eq!(p.enc_wh.dim(), (5, 20));
        assert_eq!(p.enc_b.dim(), (1, 20));
        assert_eq!(p.out_w.dim(), (5, 8));
        assert_eq!(p.out_b.dim(), (1, 8));
    }

    #[test]
    fn init_respects_uniform_bound() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 9).unwrap();
        let a = 1.0 / (cfg.hidden_dim as f64).sqrt();
        for (_, arr) in p.arrays() {
            assert!(arr.iter().all(|v| v.abs() <= a));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny_config();
        cfg.dropout_rate = 1.0;
        assert!(init_params(&cfg, 0).is_err());
        cfg = tiny_config();
        cfg.embed_dim = 0;
        assert!(init_params(&cfg, 0).is_err());
    }
}
