use super::matrix::Matrix;
use super::param::Param;
use crate::error::{Error, Result};

/// Bias-corrected Adam. Moment buffers are created lazily on the first step
/// and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(Matrix, Matrix)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over `params`; gradients are zeroed afterwards.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, mut params: Vec<&mut Param>) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let (r, c) = p.value.shape();
                    (Matrix::zeros(r, c), Matrix::zeros(r, c))
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Parameter(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if m.shape() != p.value.shape() {
                return Err(Error::dim("adam", m.shape(), p.value.shape()));
            }
            let value = p.value.data_mut();
            for (k, &g) in p.grad.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * g;
                let m_hat = *mk / bc1;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * g * g;
                let v_hat = *vk / bc2;
                value[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
