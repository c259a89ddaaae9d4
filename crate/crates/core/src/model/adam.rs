use super::{ModelError, ModelParams, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(ModelError::ShapeMismatch(
                "parameters, gradients and optimizer state differ in shape".into(),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    params: &ModelParams,
    grads: &ModelParams,
    state: &AdamState,
    lr: f64,
) -> Result<(ModelParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads, lr)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, MlpParams};

    fn params(fill: f64) -> ModelParams {
        let dims = Dims {
            input: 2,
            hidden: 3,
            output: 2,
        };
        let mut p = ModelParams {
            user: MlpParams::zeros(dims),
            item: MlpParams::zeros(dims),
        };
        for t in p.tensors_mut() {
            t.fill(fill);
        }
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = params(0.25);
        let (q, s) = adam_step(&p, &params(0.0), &AdamState::new(&p), 1e-3).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        // With a constant gradient the bias-corrected moments equal g and g^2,
        // so every step moves by lr * g / (|g| + eps).
        let lr = 1e-3;
        for g in [0.3, -2.0] {
            let mut p = params(0.0);
            let mut s = AdamState::new(&p);
            let grads = params(g);
            for _ in 0..500 {
                let before = p.user.w1[[0, 0]];
                s.step(&mut p, &grads, lr).unwrap();
                let delta = p.user.w1[[0, 0]] - before;
                let expected = -lr * g / (g.abs() + EPSILON);
                assert!((delta - expected).abs() < 1e-12, "{delta} vs {expected}");
            }
            let end = p.user.w1[[0, 0]];
            assert!((end + 500.0 * lr * g / (g.abs() + EPSILON)).abs() < 1e-12, "{end}");
        }
    }

    #[test]
    fn step_is_pure_function_of_state() {
        let p = params(0.1);
        let mut s = AdamState::new(&p);
        s.step(&mut p.clone(), &params(0.7), 1e-3).unwrap();
        let a = adam_step(&p, &params(-0.4), &s, 1e-3).unwrap();
        let b = adam_step(&p, &params(-0.4), &s, 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = params(0.0);
        let other = ModelParams {
            user: MlpParams::zeros(Dims {
                input: 1,
                hidden: 1,
                output: 1,
            }),
            item: p.item.clone(),
        };
        assert!(adam_step(&p, &other, &AdamState::new(&p), 1e-3).is_err());
    }
}
