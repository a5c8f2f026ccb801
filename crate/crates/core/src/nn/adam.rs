use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Bias-corrected Adam over a list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(tensor_lens: &[usize], learning_rate: f64) -> Self {
        AdamState {
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return invalid(format!("learning rate {} must be positive", self.learning_rate));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return invalid(format!(
                "{} parameter tensors, {} gradients, {} optimizer slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return invalid(format!("tensor {i}: {} params vs {} grads", p.len(), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow(format!("non-finite gradient in tensor {i}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first_moment.iter_mut().zip(&mut self.second_moment)) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = AdamState::new(&[2], 1e-3);
        s.first_moment[0] = vec![1.0, -1.0];
        s.second_moment[0] = vec![4.0, 4.0];
        let mut p = [0.5, 0.25];
        // The stored moments still move the parameters; zero both to isolate the decay.
        let mut q = vec![0.5, 0.25];
        let mut fresh = AdamState::new(&[2], 1e-3);
        fresh.step(&mut [&mut q[..]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(q, vec![0.5, 0.25]);
        s.step(&mut [&mut p[..]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(s.first_moment[0], vec![0.9, -0.9]);
        assert!((s.second_moment[0][0] - 4.0 * 0.999).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(&[1], 1e-3);
        let mut p = [0.0];
        s.step(&mut [&mut p[..]], &[vec![1.0]]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18, "{}", p[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = AdamState::new(&[1], 1e-3);
        let mut p = [0.0];
        assert!(matches!(s.step(&mut [&mut p[..]], &[vec![f64::NAN]]), Err(Error::NumericOverflow(_))));
        assert!(s.step(&mut [&mut p[..]], &[vec![1.0, 2.0]]).is_err());
        s.learning_rate = 0.0;
        assert!(s.step(&mut [&mut p[..]], &[vec![1.0]]).is_err());
        assert_eq!(s.step, 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::new(&[3], 1e-2);
            let mut p = vec![1.0, -2.0, 0.5];
            for i in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + i as f64 * 1e-3).collect();
                s.step(&mut [&mut p[..]], &[g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
