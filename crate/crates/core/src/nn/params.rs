use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Named parameter tensors of one model, in registration order.
/// Order is part of a model's identity: optimizers, gradients and checkpoints
/// all index into the same flat list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let idx = self.entries.len();
        self.by_name.insert(name.to_string(), idx);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].tensor
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    /// Rebuild the name index after deserialization.
    pub fn reindex(&mut self) {
        self.by_name = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
    }
}

/// Gradients parallel to a ParamSet; entries stay None until touched.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub by_param: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros(n: usize) -> Self {
        ParamGrads {
            by_param: vec![None; n],
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (slot, g) in self.by_param.iter_mut().zip(other.by_param.iter()) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => acc.add_assign(g),
                    None => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for slot in self.by_param.iter_mut().flatten() {
            slot.scale_assign(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(|t| t.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.iter().flatten().all(|t| t.is_finite())
    }
}

/// Uniform Glorot initialization.
pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::from_vec(rows, cols, data)
}
