//! AdaGrad with per-coordinate accumulators.

/// Starting value of every squared-gradient accumulator.
pub const ADAGRAD_INITIAL_ACCUMULATOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdaGrad {
    learning_rate: f64,
    accumulators: Vec<Vec<f64>>,
}

impl AdaGrad {
    /// One accumulator block per parameter group, sized by `shapes`.
    pub fn new(learning_rate: f64, shapes: &[usize]) -> Self {
        AdaGrad {
            learning_rate,
            accumulators: shapes
                .iter()
                .map(|&n| vec![ADAGRAD_INITIAL_ACCUMULATOR; n])
                .collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Descends `params` of group `group` along `grad`.
    pub fn step(&mut self, group: usize, params: &mut [f64], grad: &[f64]) {
        let acc = &mut self.accumulators[group];
        debug_assert_eq!(acc.len(), params.len());
        debug_assert_eq!(grad.len(), params.len());
        if self.learning_rate == 0.0 {
            return;
        }
        for ((p, &g), a) in params.iter_mut().zip(grad).zip(acc.iter_mut()) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= self.learning_rate * g / a.sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized() {
        let mut opt = AdaGrad::new(0.1, &[2]);
        let mut p = vec![1.0, 1.0];
        opt.step(0, &mut p, &[4.0, -0.5]);
        // |g| / sqrt(g² + 1e-8) ≈ 1
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn zero_rate_is_noop() {
        let mut opt = AdaGrad::new(0.0, &[3]);
        let mut p = vec![0.5, -0.0, 2.0];
        let before = p.clone();
        opt.step(0, &mut p, &[1.0, 2.0, 3.0]);
        assert_eq!(
            p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            before.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn steps_shrink() {
        let mut opt = AdaGrad::new(1.0, &[1]);
        let mut p = vec![0.0];
        opt.step(0, &mut p, &[1.0]);
        let first = -p[0];
        opt.step(0, &mut p, &[1.0]);
        let second = -p[0] - first;
        assert!(second < first);
    }
}
