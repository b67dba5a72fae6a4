use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{DiscoError, Result};
use crate::rng::Rng;
use crate::scenario::ClassId;

/// Bias-free linear map from backbone features into the contrast space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
}

impl Projector {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Projector {
            in_dim,
            out_dim,
            weights,
        }
    }

    pub fn from_weights(in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(DiscoError::DimensionMismatch {
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        Ok(Projector {
            in_dim,
            out_dim,
            weights,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.out_dim, self.in_dim), &self.weights)
            .expect("projector layout")
    }

    pub fn forward(&self, features: ArrayView2<f64>) -> Array2<f64> {
        features.dot(&self.matrix().t())
    }

    /// Accumulates the weight gradient and returns the feature gradient.
    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
        grad_weights: &mut [f64],
    ) -> Array2<f64> {
        let mut gw = ArrayViewMut2::from_shape((self.out_dim, self.in_dim), grad_weights)
            .expect("projector layout");
        gw += &grad_out.t().dot(&features);
        grad_out.dot(&self.matrix())
    }
}

/// Linear head with one row (weights then bias) per class, in the order the
/// classes were added.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    dim: usize,
    labels: Vec<ClassId>,
    /// Row-major `labels.len() × (dim + 1)`.
    pub params: Vec<f64>,
}

impl Classifier {
    pub fn new(dim: usize) -> Self {
        Classifier {
            dim,
            labels: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, labels: Vec<ClassId>, params: Vec<f64>) -> Result<Self> {
        if params.len() != labels.len() * (dim + 1) {
            return Err(DiscoError::DimensionMismatch {
                expected: labels.len() * (dim + 1),
                actual: params.len(),
            });
        }
        Ok(Classifier {
            dim,
            labels,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn row_of(&self, label: ClassId) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Append zero-mean rows (std 0.01, zero bias) for `new_labels`; existing
    /// rows are untouched.
    pub fn expand(&mut self, new_labels: &[ClassId], rng: &mut Rng) -> Result<()> {
        let mut overlap: Vec<ClassId> = new_labels
            .iter()
            .copied()
            .filter(|l| self.labels.contains(l))
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        overlap.extend(new_labels.iter().copied().filter(|l| !seen.insert(*l)));
        if !overlap.is_empty() {
            overlap.sort_unstable();
            overlap.dedup();
            return Err(DiscoError::LabelOverlap(overlap));
        }
        let init = Normal::new(0.0, 0.01).expect("valid std");
        for &label in new_labels {
            self.labels.push(label);
            for _ in 0..self.dim {
                self.params.push(init.sample(rng));
            }
            self.params.push(0.0);
        }
        Ok(())
    }

    fn weights(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.labels.len(), self.dim + 1), &self.params)
            .expect("classifier layout")
    }

    pub fn forward(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let rows = self.weights();
        let w = rows.slice(ndarray::s![.., ..self.dim]);
        let mut logits = features.dot(&w.t());
        for mut row in logits.rows_mut() {
            for (v, b) in row.iter_mut().zip(rows.column(self.dim)) {
                *v += b;
            }
        }
        logits
    }

    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        grad_logits: ArrayView2<f64>,
        grad_params: &mut [f64],
    ) -> Array2<f64> {
        let k = self.labels.len();
        let mut g =
            ArrayViewMut2::from_shape((k, self.dim + 1), grad_params).expect("classifier layout");
        let gw = grad_logits.t().dot(&features);
        g.slice_mut(ndarray::s![.., ..self.dim])
            .zip_mut_with(&gw, |a, b| *a += b);
        for (c, col) in grad_logits.columns().into_iter().enumerate() {
            g[[c, self.dim]] += col.sum();
        }
        let rows = self.weights();
        grad_logits.dot(&rows.slice(ndarray::s![.., ..self.dim]))
    }
}
