//! Bias-corrected Adam over the model's flat parameter list.

use crate::error::{Result, SedrError};
use crate::numerics::Param;

/// First/second-moment buffers, one pair per parameter tensor, in the same
/// order as the parameter list they were created from.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, sizes: &[usize]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` holds the gradient for `params[i]`;
    /// `None` means an all-zero gradient (the parameter is left untouched
    /// by this step apart from moment decay).
    pub fn step(&mut self, params: &mut [&mut Param], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SedrError::Contract(format!(
                "adam: {} parameters / {} gradients vs state over {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if m.len() != p.numel() {
                return Err(SedrError::Contract(format!(
                    "adam: parameter {} has {} elements, state expects {}",
                    p.name,
                    p.numel(),
                    m.len()
                )));
            }
            match &grads[i] {
                Some(g) => {
                    if g.len() != m.len() {
                        return Err(SedrError::Contract(format!(
                            "adam: gradient for {} has {} elements, expected {}",
                            p.name,
                            g.len(),
                            m.len()
                        )));
                    }
                    for j in 0..m.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
                None => {
                    // zero gradient: moments decay, the update term is zero
                    for j in 0..m.len() {
                        m[j] *= self.beta1;
                        v[j] *= self.beta2;
                        if m[j] != 0.0 {
                            let m_hat = m[j] / bc1;
                            let v_hat = v[j] / bc2;
                            p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
