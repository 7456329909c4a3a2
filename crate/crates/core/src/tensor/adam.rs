use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments matching `params`, default betas (0.9, 0.999) and eps 1e-8.
    pub fn new(params: &ParamStore<T>, lr: T) -> Self {
        let zeros = |p: &ParamStore<T>| -> Vec<Vec<T>> {
            p.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect()
        };
        Self {
            step_count: 0,
            m: zeros(params),
            v: zeros(params),
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }

    /// Applies one update. A non-finite gradient rejects the whole step and
    /// leaves both parameters and state untouched.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::dim(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.get(i).len() {
                return Err(Error::dim(format!(
                    "adam: gradient {i} has {} values, parameter has {}",
                    g.len(),
                    params.get(i).len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient for parameter `{}`",
                    params.names()[i]
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_update<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.push("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_store(1.5);
        let mut s = AdamState::new(&p, 0.1);
        s.update(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p.get(0).data(), &[1.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = scalar_store(0.0);
            let mut s = AdamState::new(&p, 0.01);
            s.update(&mut p, &[vec![g]]).unwrap();
            let want = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.get(0).data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn three_steps_on_square() {
        // scripted reference iteration for f(x) = x^2
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expect.push(x);
        }

        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(&p, 0.1);
        for want in expect {
            let g = 2.0 * p.get(0).data()[0];
            adam_update(&mut p, &[vec![g]], &mut s).unwrap();
            assert!((p.get(0).data()[0] - want).abs() < 1e-15);
        }
        assert_eq!(s.step_count, 3);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(&p, 0.1);
        assert!(matches!(s.update(&mut p, &[vec![f64::NAN]]), Err(Error::NonFinite(_))));
        assert_eq!(s.step_count, 0);
        assert_eq!(p.get(0).data(), &[1.0]);
    }
}
