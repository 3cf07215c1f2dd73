use super::tensor::{Gradients, ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam parameter count", params.len(), grads.len()));
        }
        for ((p, g), m) in params.iter().map(|(_, t)| t).zip(grads.iter()).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam gradient",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.add("x", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    fn grads_of(p: &ParameterSet, g: f64) -> Gradients {
        let mut gr = p.zeros_like();
        gr.get_mut(p.id("x").unwrap()).data_mut()[0] = g;
        gr
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_set(0.3);
        let mut s = AdamState::new(&p, DEFAULT_LR);
        let g = grads_of(&p, 0.0);
        s.step(&mut p, &g).unwrap();
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.by_name("x").unwrap().data()[0], 0.3);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [-3.7, 0.02, 150.0] {
            let mut p = scalar_set(1.0);
            let mut s = AdamState::new(&p, DEFAULT_LR);
            let gr = grads_of(&p, g);
            s.step(&mut p, &gr).unwrap();
            let delta = p.by_name("x").unwrap().data()[0] - 1.0;
            assert!((delta + DEFAULT_LR * g.signum()).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn two_constant_steps() {
        let mut p = scalar_set(0.0);
        let mut s = AdamState::new(&p, DEFAULT_LR);
        // hand-iterated recurrence with g = 1
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            let gr = grads_of(&p, 1.0);
            s.step(&mut p, &gr).unwrap();
        }
        let got = p.by_name("x").unwrap().data()[0];
        assert!((got - x).abs() < 1e-15);
        assert!((got + 0.002).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_set(0.0);
        let mut s = AdamState::new(&p, DEFAULT_LR);
        let other = scalar_set(0.0);
        let mut extra = other.clone();
        extra.add("y", Tensor::zeros(&[2])).unwrap();
        assert!(s.step(&mut p, &extra.zeros_like()).is_err());
    }
}
