//! Bias-corrected Adam over a list of parameter blocks.

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments for blocks of the given sizes.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update. All gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn update(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[Vec<T>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!(
                    "block {i}: parameter/gradient size mismatch"
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::<f64>::new(0.1, &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        st.update(&mut [&mut p[..]], &[vec![0.0; 3]], &[]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut st = AdamState::<f64>::new(0.1, &[1]);
        let mut p = vec![1.0];
        st.update(&mut [&mut p[..]], &[vec![1.0]], &[]).unwrap();
        // m_hat = v_hat = 1, step = lr / (1 + eps).
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn identical_histories_identical_trajectories() {
        let run = || {
            let mut st = AdamState::<f32>::new(0.01, &[2]);
            let mut p = vec![0.5f32, -0.5];
            for k in 0..20 {
                let g = vec![(k as f32).sin(), (k as f32 * 0.3).cos()];
                st.update(&mut [&mut p[..]], &[g], &[]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut st = AdamState::<f64>::new(0.1, &[1, 1]);
        let (mut a, mut b) = (vec![0.0], vec![0.0]);
        let err = st
            .update(
                &mut [&mut a[..], &mut b[..]],
                &[vec![0.0], vec![f64::NAN]],
                &["a".into(), "b".into()],
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "b"));
        assert_eq!(st.step, 0);
    }
}
