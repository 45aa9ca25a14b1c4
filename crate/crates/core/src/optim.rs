//! Adam with linear warmup followed by inverse-square-root decay, plus
//! global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning-rate schedule: `peak * t / warmup` for the first `warmup` steps,
/// then `peak * sqrt(warmup / t)`. With `warmup = 0` the rate is constant at
/// `peak` (used by unit tests that need a fixed rate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: usize) -> Self {
        LrSchedule { peak, warmup_steps }
    }

    pub fn constant(rate: f64) -> Self {
        LrSchedule {
            peak: rate,
            warmup_steps: 0,
        }
    }

    /// Rate for 1-based step `t`.
    pub fn rate(&self, t: usize) -> f64 {
        assert!(t >= 1, "schedule steps are 1-based");
        if self.warmup_steps == 0 {
            self.peak
        } else if t <= self.warmup_steps {
            self.peak * t as f64 / self.warmup_steps as f64
        } else {
            self.peak * (self.warmup_steps as f64 / t as f64).sqrt()
        }
    }
}

/// Adam moment buffers plus the step counter and schedule.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: usize,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, schedule: LrSchedule) -> Self {
        OptimizerState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            schedule,
        }
    }
}

/// Clip `grads` to a global L2 norm of `clip_norm` (no-op when `None` or the
/// norm is already within bounds). Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Gradients, clip_norm: Option<f64>) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient norm {norm}")));
    }
    if let Some(limit) = clip_norm {
        if limit <= 0.0 {
            return Err(Error::Config(format!("clip_norm {limit} must be > 0")));
        }
        if norm > limit {
            grads.scale(limit / norm);
        }
    }
    Ok(norm)
}

/// One Adam update with bias correction. Clips first, advances the step
/// counter, then applies the scheduled rate for the new step.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grads: &Gradients,
    clip_norm: Option<f64>,
) -> Result<()> {
    let mut grads = grads.clone();
    clip_global_norm(&mut grads, clip_norm)?;

    state.step += 1;
    let t = state.step;
    let lr = state.schedule.rate(t);
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);

    for (((pname, p), (_, g)), ((_, m), (_, v))) in params
        .arrays_mut()
        .into_iter()
        .zip(grads.arrays())
        .zip(state.m.arrays_mut().into_iter().zip(state.v.arrays_mut()))
    {
        if p.raw_dim() != g.raw_dim() {
            return Err(Error::Config(format!(
                "gradient shape mismatch for {pname}: {:?} vs {:?}",
                p.raw_dim(),
                g.raw_dim()
            )));
        }
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            });
    }
    params.assert_finite().map_err(|_| {
        Error::Numeric("non-finite parameter after Adam update".into())
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn scalar_setup() -> (ModelParams, OptimizerState) {
        // Smallest legal model; we treat out_b[0,0] as "the scalar".
        let cfg = ModelConfig {
            embed_dim: 1,
            hidden_dim: 1,
            dropout_rate: 0.0,
            label_smoothing: 0.0,
            vocab_size: 1,
            max_decode_len: 1,
        };
        let params = init_params(&cfg, 0).unwrap();
        let state = OptimizerState::new(&params, LrSchedule::constant(0.001));
        (params, state)
    }

    /// Independent scalar Adam, written directly from the update equations.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: i32,
    }

    impl ScalarAdam {
        fn new() -> Self {
            ScalarAdam { m: 0.0, v: 0.0, t: 0 }
        }

        fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
            self.t += 1;
            self.m = 0.9 * self.m + 0.1 * g;
            self.v = 0.98 * self.v + 0.02 * g * g;
            let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
            let v_hat = self.v / (1.0 - 0.98f64.powi(self.t));
            theta - lr * m_hat / (v_hat.sqrt() + 1e-8)
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let (mut params, mut state) = scalar_setup();
        let mut oracle = ScalarAdam::new();
        let mut theta = params.out_b[[0, 0]];
        for step in 0..5 {
            let g = 1.0 + 0.25 * step as f64;
            let mut grads = Gradients::zeros_like(&params);
            grads.out_b[[0, 0]] = g;
            adam_step(&mut params, &mut state, &grads, None).unwrap();
            theta = oracle.step(theta, g, 0.001);
            assert!(
                (params.out_b[[0, 0]] - theta).abs() <= 1e-12,
                "step {step}: {} vs oracle {theta}",
                params.out_b[[0, 0]]
            );
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut params, mut state) = scalar_setup();
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        adam_step(&mut params, &mut state, &grads, Some(5.0)).unwrap();
        for ((_, a), (_, b)) in params.arrays().iter().zip(before.arrays().iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn positive_gradient_descends_twice() {
        let (mut params, mut state) = scalar_setup();
        let mut grads = Gradients::zeros_like(&params);
        grads.out_b[[0, 0]] = 1.0;
        let v0 = params.out_b[[0, 0]];
        adam_step(&mut params, &mut state, &grads, None).unwrap();
        let v1 = params.out_b[[0, 0]];
        adam_step(&mut params, &mut state, &grads, None).unwrap();
        let v2 = params.out_b[[0, 0]];
        assert!(v1 < v0);
        assert!(v2 < v1);
    }

    #[test]
    fn clipping_rescales_to_the_limit() {
        let (params, _) = scalar_setup();
        let mut grads = Gradients::zeros_like(&params);
        grads.out_b[[0, 0]] = 3.0;
        grads.out_w[[0, 0]] = 4.0;
        let norm = clip_global_norm(&mut grads, Some(1.0)).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        // direction preserved
        assert!((grads.out_b[[0, 0]] / grads.out_w[[0, 0]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn schedule_warmup_then_inverse_sqrt() {
        let s = LrSchedule::new(5e-4, 400);
        assert!((s.rate(1) - 5e-4 / 400.0).abs() < 1e-18);
        assert!((s.rate(400) - 5e-4).abs() < 1e-18);
        assert!((s.rate(1600) - 5e-4 * 0.5).abs() < 1e-18);
        assert!(s.rate(401) < s.rate(400));
    }
}
