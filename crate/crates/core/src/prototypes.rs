//! Task prototypes: batch-wise prototypes, their running-mean accumulation
//! over a task, and the per-task pool.
//!
//! A batch prototype is either the mean projected feature of a mini-batch,
//! the text embedding of a prompt naming the batch's classes, or the mean of
//! the most frequently selected prompt keys. Within a task the batch
//! prototypes are folded into a running mean
//!
//! ```text
//! p_i = ((i - 1) / i) · p_{i-1} + (1 / i) · batch_i
//! ```
//!
//! and the value after the last batch becomes the task prototype.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DiscoError, Result};
use crate::model::{read_vector, write_vector};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrototype {
    pub vector: Vec<f64>,
    /// One-based index of the batch within its task; 0 for prototypes that
    /// did not come from an accumulation.
    pub batch_index: usize,
}

/// Arithmetic mean over the batch axis.
pub fn batch_prototype(projected: ArrayView2<f64>) -> Result<BatchPrototype> {
    if projected.nrows() == 0 {
        return Err(DiscoError::Empty("prototype batch"));
    }
    if projected.iter().any(|v| !v.is_finite()) {
        return Err(DiscoError::NonFinite("projected features"));
    }
    let mean = projected.mean_axis(Axis(0)).expect("non-empty batch");
    Ok(BatchPrototype {
        vector: mean.to_vec(),
        batch_index: 0,
    })
}

/// Running-mean accumulation state `(p, i)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    mean: Vec<f64>,
    count: usize,
}

impl Accumulator {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn current(&self) -> Option<BatchPrototype> {
        (self.count > 0).then(|| BatchPrototype {
            vector: self.mean.clone(),
            batch_index: self.count,
        })
    }

    /// Fold in the next batch prototype and return the updated running mean.
    pub fn update(&mut self, batch: &[f64]) -> Result<BatchPrototype> {
        if self.count > 0 && batch.len() != self.mean.len() {
            return Err(DiscoError::DimensionMismatch {
                expected: self.mean.len(),
                actual: batch.len(),
            });
        }
        let i = self.count + 1;
        if i == 1 {
            self.mean = batch.to_vec();
        } else {
            let keep = (i - 1) as f64 / i as f64;
            let add = 1.0 / i as f64;
            for (m, b) in self.mean.iter_mut().zip(batch) {
                *m = keep * *m + add * b;
            }
        }
        self.count = i;
        Ok(BatchPrototype {
            vector: self.mean.clone(),
            batch_index: i,
        })
    }

    pub fn reset(&mut self) {
        self.mean.clear();
        self.count = 0;
    }
}

/// Finalized task prototypes plus the in-flight accumulation for the current
/// task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrototypePool {
    prototypes: BTreeMap<usize, Vec<f64>>,
    accumulator: Accumulator,
}

impl PrototypePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, batch: &[f64]) -> Result<BatchPrototype> {
        self.accumulator.update(batch)
    }

    pub fn accumulator(&self) -> &Accumulator {
        &self.accumulator
    }

    /// Store the running mean as the prototype of task `t` and reset the
    /// accumulation.
    pub fn finalize_task(&mut self, t: usize) -> Result<&[f64]> {
        if self.prototypes.contains_key(&t) {
            return Err(DiscoError::Prototype(format!(
                "task {t} is already finalized"
            )));
        }
        let Some(current) = self.accumulator.current() else {
            return Err(DiscoError::Prototype(format!(
                "cannot finalize task {t}: no batches were accumulated"
            )));
        };
        self.prototypes.insert(t, current.vector);
        self.accumulator.reset();
        Ok(&self.prototypes[&t])
    }

    pub fn get(&self, t: usize) -> Option<&[f64]> {
        self.prototypes.get(&t).map(Vec::as_slice)
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.prototypes.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Prototypes of all tasks before `t`, in task order.
    pub fn previous(&self, t: usize) -> Vec<Vec<f64>> {
        self.prototypes.range(..t).map(|(_, v)| v.clone()).collect()
    }

    /// One snapshot-format vector file per task plus `index.txt` mapping each
    /// task id to its file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DiscoError::io(dir, e))?;
        let mut index = String::from("# task_id,file\n");
        for (t, v) in &self.prototypes {
            let name = format!("task_{t}.bin");
            write_vector(&dir.join(&name), v)?;
            index.push_str(&format!("{t},{name}\n"));
        }
        let path = dir.join("index.txt");
        fs::write(&path, index).map_err(|e| DiscoError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.txt");
        let text = fs::read_to_string(&path).map_err(|e| DiscoError::io(&path, e))?;
        let mut pool = PrototypePool::new();
        for line in text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        {
            let (t, name) = line
                .split_once(',')
                .ok_or_else(|| DiscoError::artifact(&path, format!("bad index line `{line}`")))?;
            let t: usize = t
                .trim()
                .parse()
                .map_err(|_| DiscoError::artifact(&path, format!("bad task id `{t}`")))?;
            pool.prototypes
                .insert(t, read_vector(&dir.join(name.trim()))?);
        }
        Ok(pool)
    }
}

/// Maps a prompt string to a fixed-size embedding.
pub trait TextEmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, prompt: &str) -> Result<Vec<f64>>;
}

/// Offline stand-in for a text encoder: a unit-norm Gaussian vector seeded by
/// the SHA-256 of the prompt. Identical prompts give identical vectors; any
/// change to the prompt gives an unrelated vector.
#[derive(Debug, Clone)]
pub struct HashEmbeddingProvider {
    dim: usize,
    seed: u64,
}

impl HashEmbeddingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbeddingProvider { dim, seed }
    }
}

impl TextEmbeddingProvider for HashEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: &str) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(DiscoError::Embedding("embedding dimension is zero".into()));
        }
        let mut r = rng::keyed(self.seed, prompt);
        let v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut r))
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / n).collect())
    }
}

/// `"a photo of {c0} or {c1} or ... or {cn}"`, keeping the given order.
pub fn text_prompt(class_names: &[String]) -> Result<String> {
    if class_names.is_empty() {
        return Err(DiscoError::Empty("class name list"));
    }
    Ok(format!("a photo of {}", class_names.join(" or ")))
}

pub fn text_prototype(
    class_names: &[String],
    provider: &dyn TextEmbeddingProvider,
) -> Result<BatchPrototype> {
    let prompt = text_prompt(class_names)?;
    let vector = provider.embed(&prompt)?;
    if vector.len() != provider.dim() {
        return Err(DiscoError::Embedding(format!(
            "provider returned {} values for dimension {}",
            vector.len(),
            provider.dim()
        )));
    }
    Ok(BatchPrototype {
        vector,
        batch_index: 0,
    })
}

/// Mean of the `n` most frequently selected keys; ties go to the lower key
/// index.
pub fn prompt_key_prototype(
    frequencies: &[usize],
    keys: ArrayView2<f64>,
    n: usize,
) -> Result<BatchPrototype> {
    if frequencies.len() != keys.nrows() {
        return Err(DiscoError::DimensionMismatch {
            expected: keys.nrows(),
            actual: frequencies.len(),
        });
    }
    let selected = frequencies.iter().filter(|&&f| f > 0).count();
    if n == 0 || selected < n {
        return Err(DiscoError::PromptPool(format!(
            "need {n} selected keys, only {selected} have nonzero frequency"
        )));
    }
    let mut order: Vec<usize> = (0..frequencies.len()).collect();
    order.sort_by(|&a, &b| frequencies[b].cmp(&frequencies[a]).then(a.cmp(&b)));
    let mut mean = vec![0.0; keys.ncols()];
    for &i in &order[..n] {
        for (m, k) in mean.iter_mut().zip(keys.row(i)) {
            *m += k / n as f64;
        }
    }
    Ok(BatchPrototype {
        vector: mean,
        batch_index: 0,
    })
}
