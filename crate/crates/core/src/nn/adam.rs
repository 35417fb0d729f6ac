use super::{Gradients, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 0.001;

/// Adam with bias correction. Moments exist only for parameters that were
/// trainable when the state was created; frozen parameters are never touched.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: params
                .params
                .iter()
                .map(|p| {
                    p.trainable
                        .then(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
                })
                .collect(),
        }
    }

    /// Number of parameter arrays that carry moment buffers.
    pub fn tracked(&self) -> usize {
        self.moments.iter().filter(|m| m.is_some()).count()
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        if params.len() != self.moments.len() || grads.tensors.len() != self.moments.len() {
            return Err(Error::Parameter(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.tensors.len(),
                self.moments.len()
            )));
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((p, g), slot) in params.params.iter_mut().zip(&grads.tensors).zip(&mut self.moments) {
            let Some((m, v)) = slot else { continue };
            if !p.trainable {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam grad", g.shape(), p.value.shape()));
            }
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
