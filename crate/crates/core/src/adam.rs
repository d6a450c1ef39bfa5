use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseNet, ParamGrads};
use crate::scalar::Scalar;

/// Adam optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    first_moment: ParamGrads<T>,
    second_moment: ParamGrads<T>,
    step_count: u64,
    hyper: AdamHyper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNet<T>) -> Self {
        Self::with_hyper(net, AdamHyper::default())
    }

    pub fn with_hyper(net: &DenseNet<T>, hyper: AdamHyper) -> Self {
        Self {
            first_moment: ParamGrads::zeros_like(net),
            second_moment: ParamGrads::zeros_like(net),
            step_count: 0,
            hyper,
        }
    }

    /// Rebuild a state from saved moments.
    pub fn from_parts(
        first_moment: ParamGrads<T>,
        second_moment: ParamGrads<T>,
        step_count: u64,
        hyper: AdamHyper,
    ) -> Result<Self> {
        first_moment.check_congruent(&second_moment)?;
        Ok(Self {
            first_moment,
            second_moment,
            step_count,
            hyper,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    pub fn first_moment(&self) -> &ParamGrads<T> {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &ParamGrads<T> {
        &self.second_moment
    }

    /// One bias-corrected descent step: `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Nothing is modified when the gradient contains a non-finite entry.
    pub fn update(&mut self, net: &mut DenseNet<T>, grads: &ParamGrads<T>, lr: T) -> Result<()> {
        self.first_moment.check_congruent(grads)?;
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient passed to Adam".into()));
        }
        self.step_count += 1;
        let b1 = T::of(self.hyper.beta1);
        let b2 = T::of(self.hyper.beta2);
        let eps = T::of(self.hyper.eps);
        let t = self.step_count as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);

        let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
        for ((p, g), (m, v)) in net.params_mut().zip(grads.iter()).zip(moments) {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_update<T: Scalar>(
    net: &mut DenseNet<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    state.update(net, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetSpec};

    fn net() -> DenseNet<f64> {
        DenseNet::new(NetSpec::mlp(3, &[5], 2, Activation::Tanh).unwrap(), 9).unwrap()
    }

    fn constant_grads(net: &DenseNet<f64>, value: f64) -> ParamGrads<f64> {
        let mut g = ParamGrads::zeros_like(net);
        g.iter_mut().enumerate().for_each(|(i, x)| {
            *x = if i % 2 == 0 { value } else { -value };
        });
        g
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_fixed_point() {
        let mut n = net();
        let before = n.clone();
        let mut st = AdamState::new(&n);
        st.update(&mut n, &ParamGrads::zeros_like(&before), 1e-3).unwrap();
        assert_eq!(n, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_each_parameter_by_lr_against_the_sign() {
        let mut n = net();
        let before = n.clone();
        let mut st = AdamState::new(&n);
        let lr = 1e-3;
        let g = constant_grads(&n, 0.37);
        st.update(&mut n, &g, lr).unwrap();
        for ((after, prev), gi) in n.params().zip(before.params()).zip(g.iter()) {
            let delta = after - prev;
            // closed form: -lr * g / (|g| + eps)
            let want = -lr * gi / (gi.abs() + 1e-8);
            assert!((delta - want).abs() < 1e-15, "{delta} vs {want}");
            assert!((delta.abs() - lr).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut n = net();
        let before = n.clone();
        let mut st = AdamState::new(&n);
        for k in 0..5 {
            st.update(&mut n, &constant_grads(&before, k as f64 + 0.1), 0.0).unwrap();
        }
        assert_eq!(n, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn updates_are_deterministic() {
        let g = constant_grads(&net(), 0.2);
        let run = || {
            let mut n = net();
            let mut st = AdamState::new(&n);
            adam_update(&mut n, &g, &mut st, 0.01).unwrap();
            adam_update(&mut n, &g, &mut st, 0.01).unwrap();
            (n, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut n = net();
        let before = n.clone();
        let mut st = AdamState::new(&n);
        let mut g = constant_grads(&n, 1.0);
        *g.iter_mut().nth(3).unwrap() = f64::NAN;
        assert!(matches!(st.update(&mut n, &g, 0.1), Err(Error::Numerical(_))));
        assert_eq!(n, before);
        assert_eq!(st.step_count(), 0);
    }
}
