use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state. Adam moment buffers are created lazily on the
/// first step and must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored on `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if let Some(i) = (0..params.len()).find(|&i| params.get(i).grad().is_none()) {
            return Err(Error::State(format!(
                "parameter `{}` has no gradient; run backward first",
                params.name(i)
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for t in params.tensors_mut() {
                    let g = t.grad().expect("checked").to_vec();
                    t.data_mut().iter_mut().zip(&g).for_each(|(p, gv)| *p -= self.lr * gv);
                }
            }
            OptimizerKind::Adam => self.adam_step(params)?,
        }
        self.step += 1;
        Ok(())
    }

    fn adam_step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(params.tensors()).any(|(m, t)| m.len() != t.numel())
        {
            return Err(Error::Shape(
                "Adam moment buffers no longer match the parameter set".into(),
            ));
        }
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = tensor.grad().expect("checked").to_vec();
            for (((p, gv), mv), vv) in tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
