use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias-corrected moments, one moment buffer pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self::with_coefficients(lr, BETA1, BETA2, EPSILON, sizes)
    }

    pub fn with_coefficients(lr: f64, beta1: f64, beta2: f64, eps: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(Error::Shape(format!("tensor {k}: gradient size mismatch")));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
