//! Key-value prompt pool with top-N key lookup by cosine similarity.

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DiscoError, Result};
use crate::losses::cosine_similarity;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool {
    /// `M × d` keys.
    pub keys: Array2<f64>,
    /// One `L_p × d` prompt per key.
    pub prompts: Vec<Array2<f64>>,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySelection {
    /// Selected key indices per query, most similar first.
    pub indices: Vec<Vec<usize>>,
    /// How often each key was selected across the batch.
    pub frequencies: Vec<usize>,
}

impl PromptPool {
    pub fn new(keys: Array2<f64>, prompts: Vec<Array2<f64>>, top_n: usize) -> Result<Self> {
        let m = keys.nrows();
        if top_n < 1 || top_n > m {
            return Err(DiscoError::PromptPool(format!(
                "top-N width {top_n} must lie in 1..={m}"
            )));
        }
        if prompts.len() != m {
            return Err(DiscoError::PromptPool(format!(
                "{} prompts for {m} keys",
                prompts.len()
            )));
        }
        if let Some(p) = prompts.iter().find(|p| p.ncols() != keys.ncols()) {
            return Err(DiscoError::DimensionMismatch {
                expected: keys.ncols(),
                actual: p.ncols(),
            });
        }
        Ok(PromptPool {
            keys,
            prompts,
            top_n,
        })
    }

    /// Pool with standard-normal keys and prompts.
    pub fn random(
        m: usize,
        dim: usize,
        prompt_len: usize,
        top_n: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut r = rng::stream(seed, Stream::PromptPool);
        let keys = Array2::from_shape_fn((m, dim), |_| StandardNormal.sample(&mut r));
        let prompts = (0..m)
            .map(|_| Array2::from_shape_fn((prompt_len, dim), |_| StandardNormal.sample(&mut r)))
            .collect();
        PromptPool::new(keys, prompts, top_n)
    }

    pub fn size(&self) -> usize {
        self.keys.nrows()
    }

    pub fn dim(&self) -> usize {
        self.keys.ncols()
    }

    /// For each query row, the `top_n` keys of highest cosine similarity
    /// (ties to the lower key index), plus selection counts over the batch.
    pub fn select_keys(&self, queries: ArrayView2<f64>) -> Result<KeySelection> {
        if queries.ncols() != self.dim() {
            return Err(DiscoError::DimensionMismatch {
                expected: self.dim(),
                actual: queries.ncols(),
            });
        }
        let mut frequencies = vec![0; self.size()];
        let mut indices = Vec::with_capacity(queries.nrows());
        for q in queries.axis_iter(Axis(0)) {
            let q = q.to_vec();
            let mut scored = Vec::with_capacity(self.size());
            for (i, key) in self.keys.axis_iter(Axis(0)).enumerate() {
                scored.push((cosine_similarity(&q, &key.to_vec())?, i));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let chosen: Vec<usize> = scored[..self.top_n].iter().map(|&(_, i)| i).collect();
            for &i in &chosen {
                frequencies[i] += 1;
            }
            indices.push(chosen);
        }
        Ok(KeySelection {
            indices,
            frequencies,
        })
    }
}
