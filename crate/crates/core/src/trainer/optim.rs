use crate::autodiff::Tensor;

/// Adam with bias correction and one learning rate for every tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` gives the element count of each tensor passed to `update`.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Tensors without a gradient buffer are left alone.
    pub fn update(&mut self, tensors: &mut [&mut Tensor]) {
        assert_eq!(tensors.len(), self.m.len(), "optimizer built for a different parameter list");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((t, m), v) in tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// L2 norm over every gradient buffer.
pub fn global_grad_norm(tensors: &[&mut Tensor]) -> f64 {
    tensors
        .iter()
        .filter_map(|t| t.grad())
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns whether rescaling happened.
pub fn clip_global_norm(tensors: &mut [&mut Tensor], max_norm: f64) -> bool {
    let norm = global_grad_norm(tensors);
    if norm <= max_norm {
        return false;
    }
    let factor = max_norm / norm;
    for t in tensors.iter_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
    true
}
