use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::layers::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with coupled L2 weight decay (decay is added to the gradient).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    cfg: AdamConfig,
    t: i32,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, cfg: AdamConfig) -> Self {
        Adam { lr, weight_decay, cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update to `params`; the slice order must be stable across calls.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        let params: Vec<&mut Param> = params.into_iter().collect();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer reused across different parameter sets");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        let step = self.lr / bc1;
        let wd = self.weight_decay;
        for ((p, m), v) in params.into_iter().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= step * *m / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g).
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[2]), 1.0));
        p.grad[[0]] = 3.0;
        p.grad[[1]] = -0.5;
        let mut opt = Adam::new(0.1, 0.0, AdamConfig::default());
        opt.step([&mut p]);
        assert!((p.value[[0]] - 0.9).abs() < 1e-6);
        assert!((p.value[[1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 5.0));
        let mut opt = Adam::new(0.05, 0.0, AdamConfig::default());
        for _ in 0..2000 {
            p.grad[[0]] = 2.0 * (p.value[[0]] - 1.5);
            opt.step([&mut p]);
        }
        assert!((p.value[[0]] - 1.5).abs() < 1e-3);
    }
}
