/// Step learning rate: `base · decay^m` where `m` counts the milestones
/// already reached by `epoch` (zero-based).
pub fn step_lr(base: f64, decay: f64, milestones: &[usize], epoch: usize) -> f64 {
    let reached = milestones.iter().filter(|&&m| epoch >= m).count();
    base * decay.powi(reached as i32)
}

/// SGD with heavy-ball momentum and L2 weight decay over a fixed list of
/// parameter groups:
/// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, group_sizes: &[usize]) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(
            params.len(),
            self.velocity.len(),
            "parameter group count changed"
        );
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            assert_eq!(p.len(), v.len(), "parameter group size changed");
            for ((p, g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *v = self.momentum * *v + g + self.weight_decay * *p;
                *p -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_at_milestones() {
        let m = [60, 80];
        assert_eq!(step_lr(0.1, 0.1, &m, 0), 0.1);
        assert_eq!(step_lr(0.1, 0.1, &m, 59), 0.1);
        assert!((step_lr(0.1, 0.1, &m, 60) - 0.01).abs() < 1e-15);
        assert!((step_lr(0.1, 0.1, &m, 99) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_hand_iteration() {
        let mut p = vec![1.0];
        let mut sgd = Sgd::new(0.9, 0.0, &[1]);
        sgd.step(0.1, &mut [&mut p], &[&[1.0]]);
        assert!((p[0] - 0.9).abs() < 1e-15);
        sgd.step(0.1, &mut [&mut p], &[&[1.0]]);
        // v = 0.9 + 1 = 1.9
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = vec![2.0];
        let mut sgd = Sgd::new(0.0, 0.5, &[1]);
        sgd.step(0.1, &mut [&mut p], &[&[0.0]]);
        assert!((p[0] - 1.9).abs() < 1e-15);
    }
}
