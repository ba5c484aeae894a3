use crate::nn::{ModelParams, Scalar};

/// Adam hyperparameters. Weight decay is decoupled: parameters shrink by
/// `1 - lr * weight_decay` before the moment-based update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moments, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: ModelParams<T>,
    pub second: ModelParams<T>,
    /// Number of applied updates.
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    grads: &ModelParams<T>,
    config: &AdamConfig,
) -> StepOutcome {
    if !grads.all_finite() {
        log::warn!(
            "skipping optimizer step {} after a non-finite gradient",
            state.step + 1
        );
        return StepOutcome::SkippedNonFinite;
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = config.learning_rate;
    let decay = T::from_f64(1.0 - lr * config.weight_decay);
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one = T::one();
    let correct1 = T::from_f64(1.0 - num_traits::Float::powi(config.beta1, t));
    let correct2 = T::from_f64(1.0 - num_traits::Float::powi(config.beta2, t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(config.epsilon);

    for (((p, g), m), v) in params
        .params
        .iter_mut()
        .zip(&grads.params)
        .zip(&mut state.first.params)
        .zip(&mut state.second.params)
    {
        for (((pv, &gv), mv), vv) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(&mut m.data)
            .zip(&mut v.data)
        {
            *pv = *pv * decay;
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / correct1;
            let v_hat = *vv / correct2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    StepOutcome::Applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use alloc::vec;

    fn single(v: f64) -> ModelParams<f64> {
        ModelParams {
            params: vec![Param {
                name: "w".into(),
                dims: vec![1],
                data: vec![v],
            }],
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(0.7);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &mut s, &single(0.0), &cfg);
        assert_eq!(p.params[0].data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        assert_eq!(
            adam_step(&mut p, &mut s, &single(1.0), &cfg),
            StepOutcome::Applied
        );
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((p.params[0].data[0] - expected).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn decoupled_decay_scales_parameters() {
        let mut p = single(2.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &mut s, &single(0.0), &cfg);
        assert!((p.params[0].data[0] - 2.0 * (1.0 - 5e-8)).abs() < 1e-15);
        adam_step(&mut p, &mut s, &single(0.0), &cfg);
        assert!((p.params[0].data[0] - 2.0 * (1.0 - 5e-8) * (1.0 - 5e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p);
        let out = adam_step(&mut p, &mut s, &single(f64::NAN), &AdamConfig::default());
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(p.params[0].data[0], 1.0);
        assert_eq!(s.step, 0);
    }
}
