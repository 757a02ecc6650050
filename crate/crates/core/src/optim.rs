//! Adaptive moment estimation.

use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per parameter tensor, sized from `shapes`.
    pub fn new(learning_rate: f64, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `updates[i]` is `Some(grad)` for parameter `i` when
    /// it should move; `None` leaves both the parameter and its moments alone.
    pub fn step(&mut self, params: &mut [&mut Tensor], updates: &[Option<&Tensor>]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(params.len(), updates.len());
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(grad) = updates[i] else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (p, g)) in param.values_mut().iter_mut().zip(grad.values()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut x = Tensor::row_vector(vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1, [2]);
        for _ in 0..500 {
            let grad = x.map(|v| 2.0 * v);
            opt.step(&mut [&mut x], &[Some(&grad)]);
        }
        assert!(x.values().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn skipped_parameters_are_untouched() {
        let mut a = Tensor::row_vector(vec![1.0]);
        let mut b = Tensor::row_vector(vec![1.0]);
        let g = Tensor::row_vector(vec![1.0]);
        let mut opt = Adam::new(0.1, [1, 1]);
        opt.step(&mut [&mut a, &mut b], &[Some(&g), None]);
        assert!(a.values()[0] < 1.0);
        assert_eq!(b.values()[0].to_bits(), 1.0f64.to_bits());
    }
}
