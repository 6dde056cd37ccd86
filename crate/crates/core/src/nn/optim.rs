use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW style); zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for every parameter in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            config,
        }
    }
}

/// One bias-corrected Adam update. Parameters for which `trainable` returns
/// false keep their values and moments.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    trainable: impl Fn(ParamId) -> bool,
) -> Result<(), NnError> {
    if state.first_moment.len() != params.len() {
        return Err(NnError::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "{} moment buffers for {} params",
                state.first_moment.len(),
                params.len()
            ),
        });
    }
    if !(lr >= 0.0) {
        return Err(NnError::InvalidSchedule(format!("negative learning rate {lr}")));
    }
    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let bc1 = 1.0 - beta1.powf(state.step as f64);
    let bc2 = 1.0 - beta2.powf(state.step as f64);
    for i in 0..params.len() {
        let id = ParamId(i);
        if !trainable(id) {
            continue;
        }
        let g = grads.get(id);
        let p = params.get_mut(id).values_mut();
        if g.len() != p.len() || state.first_moment[i].len() != p.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam_step",
                detail: format!("parameter {i}: {} values, {} grads", p.len(), g.len()),
            });
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[j]);
        }
    }
    Ok(())
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Result<Self, NnError> {
        if !(base_lr >= 0.0) || !base_lr.is_finite() {
            return Err(NnError::InvalidSchedule(format!("base_lr {base_lr}")));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(NnError::InvalidSchedule(format!("warmup_fraction {warmup_fraction}")));
        }
        if total_steps == 0 {
            return Err(NnError::InvalidSchedule("zero total steps".into()));
        }
        Ok(Self {
            base_lr,
            total_steps,
            warmup_fraction,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).round() as usize).min(self.total_steps - 1)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64, NnError> {
    let total = schedule.total_steps;
    if step > total {
        return Err(NnError::StepOutOfRange { step, total });
    }
    let warmup = schedule.warmup_steps();
    if step < warmup {
        return Ok(schedule.base_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok((schedule.base_lr * 0.5 * (1.0 + (PI * progress).cos())).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, TensorBuffer};

    fn scalar_param(value: f64) -> (ParamSet, ParamId) {
        let mut p = ParamSet::new();
        let id = p.add("w", TensorBuffer::matrix(1, 1, vec![value]).unwrap());
        (p, id)
    }

    fn grads_for(params: &ParamSet, g: f64) -> Gradients {
        let mut tape = Tape::new(params);
        let w = tape.param(ParamId(0));
        let s = tape.scale(w, g).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut p, id) = scalar_param(0.123456789);
        let before = p.clone();
        let g = grads_for(&p, 3.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, 0.0, |_| true).unwrap();
        }
        assert_eq!(p.get(id).values(), before.get(id).values());
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut p, id) = scalar_param(1.0);
        let g = grads_for(&p, 0.5);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st, 0.01, |_| true).unwrap();
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p.get(id).values()[0] - expected).abs() < 1e-15);
        assert!(((1.0 - p.get(id).values()[0]) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let (mut p, _) = scalar_param(1.0);
        let g = grads_for(&p, -2.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..100 {
            adam_step(&mut p, &g, &mut st, 1e-3, |_| true).unwrap();
            assert!(st.second_moment[0][0] >= 0.0);
        }
    }

    #[test]
    fn frozen_params_untouched() {
        let (mut p, id) = scalar_param(2.0);
        let g = grads_for(&p, 1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st, 0.1, |_| false).unwrap();
        assert_eq!(p.get(id).values()[0], 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, _) = scalar_param(2.0);
        let (other, _) = scalar_param(1.0);
        let g = grads_for(&other, 1.0);
        let mut st = AdamState::new(&ParamSet::new(), AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 0.1, |_| true),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1e-3, 1000, 0.1).unwrap();
        assert_eq!(s.warmup_steps(), 100);
        assert_eq!(lr_at(&s, 0).unwrap(), 0.0);
        assert!((lr_at(&s, 50).unwrap() - 5e-4).abs() < 1e-15);
        assert_eq!(lr_at(&s, 100).unwrap(), 1e-3);
        assert!((lr_at(&s, 550).unwrap() - 5e-4).abs() < 1e-15);
        assert!(lr_at(&s, 1000).unwrap().abs() < 1e-18);
        assert_eq!(
            lr_at(&s, 1001),
            Err(NnError::StepOutOfRange {
                step: 1001,
                total: 1000
            })
        );
        for step in 0..=1000 {
            assert!(lr_at(&s, step).unwrap() >= 0.0);
        }
    }

    #[test]
    fn tiny_warmup_fraction_accepted() {
        let s = LrSchedule::new(3e-4, 315, 0.0003).unwrap();
        assert_eq!(s.warmup_steps(), 0);
        assert_eq!(lr_at(&s, 0).unwrap(), 3e-4);
        assert!(LrSchedule::new(3e-4, 315, 1.0).is_err());
        assert!(LrSchedule::new(-1.0, 315, 0.03).is_err());
    }
}
