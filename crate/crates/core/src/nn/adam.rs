use crate::error::{Error, Result};
use crate::graph::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&s| Matrix::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Matrix::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Updates `params[i]` with `grads[i]`; a missing gradient leaves the
    /// parameter untouched. Fails before touching anything if a gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dims("Adam parameter count", self.m.len(), params.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.dim() != self.m[i].dim() {
                    return Err(Error::dims("Adam gradient shape", format!("{:?}", self.m[i].dim()), format!("{:?}", g.dim())));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                    return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(&mut **p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g + weight_decay * *p;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // After bias correction the first update is lr * g / (|g| + eps).
        let mut p = array![[1.0, -2.0]];
        let g = array![[0.5, -3.0]];
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[(1, 2)]);
        adam.step(&mut [&mut p], &[Some(&g)], &["w".into()]).unwrap();
        assert!((p[[0, 0]] - 0.9).abs() < 1e-7);
        assert!((p[[0, 1]] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = array![[5.0]];
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[(1, 1)]);
        for _ in 0..500 {
            let g = &p * 2.0;
            adam.step(&mut [&mut p], &[Some(&g)], &[]).unwrap();
        }
        assert!(p[[0, 0]].abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = array![[1.0]];
        let g = array![[f64::NAN]];
        let mut adam = AdamState::new(AdamConfig::default(), &[(1, 1)]);
        let err = adam.step(&mut [&mut p], &[Some(&g)], &["mlp.w0".into()]).unwrap_err();
        assert!(err.to_string().contains("mlp.w0"));
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }
}
