use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            m: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `p ← p − lr · m̂ / (√v̂ + eps) − lr · wd · p` with bias-corrected
    /// moments.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64, wd: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Mismatch(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() || g.len() != p.numel() {
                return Err(Error::Mismatch(format!("parameter {i} changed size")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= lr * mh / (vh.sqrt() + self.eps) + lr * wd * *x;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 0.0);
        opt.update(&mut p, &[vec![2.0]], 0.1, 0.0).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-15);
        opt.update(&mut p, &[vec![2.0]], 0.1, 0.0).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![Tensor::vector(&[1.0, -2.0])];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8);
        opt.update(&mut p, &[vec![0.0, 0.0]], 0.1, 0.5).unwrap();
        assert_eq!(p[0].data(), &[0.95, -1.9]);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8);
        assert!(opt.update(&mut p, &[vec![1.0, 2.0]], 0.1, 0.0).is_err());
        assert!(opt.update(&mut p, &[], 0.1, 0.0).is_err());
    }
}
