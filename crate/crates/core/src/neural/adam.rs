use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// `sizes` lists the length of every parameter buffer, in update order.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update parameter buffer `slot` in place; call `begin_step` once per batch first.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // After one step the bias-corrected ratio is g/|g|, so each parameter moves by ~lr.
        let mut adam = AdamState::new(0.01, &[2]);
        let mut p = vec![1.0, -1.0];
        adam.begin_step();
        adam.update(0, &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = AdamState::new(0.05, &[1]);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            adam.begin_step();
            let g = [2.0 * (p[0] - 1.5)];
            adam.update(0, &mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
