use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamSet};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order optimizer with per-parameter state.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    step_count: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            momentum,
            step_count: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) {
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Adam => self.adam_step(params, grads),
            OptimizerKind::Sgd => self.sgd_step(params, grads),
        }
    }

    fn adam_step(&mut self, params: &mut ParamSet, grads: &ParamGrads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let t = self.step_count as f64;
        let c1 = 1.0 - B1.powf(t);
        let c2 = 1.0 - B2.powf(t);
        for (idx, g) in grads.by_param.iter().enumerate() {
            let g = match g {
                Some(g) => g,
                None => continue,
            };
            let p = params.tensor_mut(idx);
            let m = self
                .m
                .get_mut(idx)
                .unwrap()
                .get_or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            let v = self
                .v
                .get_mut(idx)
                .unwrap()
                .get_or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = B1 * m.data[i] + (1.0 - B1) * gi;
                v.data[i] = B2 * v.data[i] + (1.0 - B2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + EPS);
            }
        }
    }

    fn sgd_step(&mut self, params: &mut ParamSet, grads: &ParamGrads) {
        for (idx, g) in grads.by_param.iter().enumerate() {
            let g = match g {
                Some(g) => g,
                None => continue,
            };
            let p = params.tensor_mut(idx);
            if self.momentum > 0.0 {
                let vel = self
                    .m
                    .get_mut(idx)
                    .unwrap()
                    .get_or_insert_with(|| Tensor::zeros(p.rows, p.cols));
                for i in 0..p.data.len() {
                    vel.data[i] = self.momentum * vel.data[i] + g.data[i];
                    p.data[i] -= self.lr * vel.data[i];
                }
            } else {
                for i in 0..p.data.len() {
                    p.data[i] -= self.lr * g.data[i];
                }
            }
        }
    }
}

/// Scale gradients in place so the global norm does not exceed `max_norm`.
/// A `max_norm` of zero disables clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}
