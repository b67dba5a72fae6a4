//! Cosine triplet primitive and the three contrastive regularizers.
//!
//! Every loss comes with an analytic gradient with respect to all of its
//! vector inputs. Callers decide which of those gradients to use; the engine
//! treats prototypes and teacher features as constants.
//!
//! The triplet primitive is the soft-margin form
//!
//! ```text
//! triplet(a, p, n) = ln(1 + exp(1 - S(a, p) + S(a, n)))
//! ```
//!
//! with `S` the cosine similarity.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DiscoError, Result};
use crate::rng::Rng;
use crate::scenario::ClassId;

/// Fixed margin inside the softplus.
pub const TRIPLET_MARGIN: f64 = 1.0;

/// Norm floor used when [`LossOptions::norm_floor`] is switched on.
pub const DEFAULT_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(rename = "lambda_tcon")]
    pub tcon: f64,
    #[serde(rename = "lambda_ccon")]
    pub ccon: f64,
    #[serde(rename = "lambda_ccd")]
    pub ccd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tcon: 0.5,
            ccon: 0.5,
            ccd: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            tcon: 0.0,
            ccon: 0.0,
            ccd: 0.0,
        }
    }

    pub fn is_default(&self) -> bool {
        *self == LossWeights::default()
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("lambda_tcon", self.tcon),
            ("lambda_ccon", self.ccon),
            ("lambda_ccd", self.ccd),
        ] {
            if !v.is_finite() || v < 0.0 {
                errors.push(format!(
                    "loss.{name}: must be a finite non-negative number, got {v}"
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// How the distillation loss aggregates its pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Average over valid pairs, keeping the weight comparable across batch
    /// sizes.
    #[default]
    Mean,
    /// Literal double sum.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    /// When set, norms below this value are clamped instead of rejected.
    pub norm_floor: Option<f64>,
    pub ccd_reduction: Reduction,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn checked_norm(x: &[f64], floor: Option<f64>) -> Result<(f64, bool)> {
    let n = norm(x);
    if !n.is_finite() {
        return Err(DiscoError::NonFinite("cosine operand"));
    }
    match floor {
        Some(eps) if n < eps => Ok((eps, true)),
        None if n == 0.0 => Err(DiscoError::ZeroVector),
        _ => Ok((n, false)),
    }
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    cosine_similarity_with(x, y, None)
}

pub fn cosine_similarity_with(x: &[f64], y: &[f64], floor: Option<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(DiscoError::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let (nx, _) = checked_norm(x, floor)?;
    let (ny, _) = checked_norm(y, floor)?;
    Ok(dot(x, y) / (nx * ny))
}

/// Cosine similarity with its gradients `(S, ∂S/∂x, ∂S/∂y)`.
fn cosine_grad(x: &[f64], y: &[f64], floor: Option<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(DiscoError::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let (nx, x_clamped) = checked_norm(x, floor)?;
    let (ny, y_clamped) = checked_norm(y, floor)?;
    let s = dot(x, y) / (nx * ny);
    let inv = 1.0 / (nx * ny);
    // A clamped norm is a constant, so its radial term vanishes.
    let rx = if x_clamped { 0.0 } else { s / (nx * nx) };
    let ry = if y_clamped { 0.0 } else { s / (ny * ny) };
    let gx = x.iter().zip(y).map(|(xi, yi)| yi * inv - rx * xi).collect();
    let gy = x.iter().zip(y).map(|(xi, yi)| xi * inv - ry * yi).collect();
    Ok((s, gx, gy))
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn triplet(a: &[f64], p: &[f64], n: &[f64]) -> Result<f64> {
    triplet_with(a, p, n, None)
}

pub fn triplet_with(a: &[f64], p: &[f64], n: &[f64], floor: Option<f64>) -> Result<f64> {
    let sp = cosine_similarity_with(a, p, floor)?;
    let sn = cosine_similarity_with(a, n, floor)?;
    Ok(softplus(TRIPLET_MARGIN - sp + sn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

pub fn triplet_grad(a: &[f64], p: &[f64], n: &[f64], floor: Option<f64>) -> Result<TripletGrad> {
    let (sp, d_sp_a, d_sp_p) = cosine_grad(a, p, floor)?;
    let (sn, d_sn_a, d_sn_n) = cosine_grad(a, n, floor)?;
    let z = TRIPLET_MARGIN - sp + sn;
    let w = sigmoid(z);
    Ok(TripletGrad {
        loss: softplus(z),
        anchor: d_sp_a
            .iter()
            .zip(&d_sn_a)
            .map(|(gp, gn)| w * (gn - gp))
            .collect(),
        positive: d_sp_p.iter().map(|g| -w * g).collect(),
        negative: d_sn_n.iter().map(|g| w * g).collect(),
    })
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn row(m: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Task-level contrast and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TconGrad {
    pub loss: f64,
    pub anchors: Array2<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Mean over all `N × (t − 1)` triplets pairing each anchor with the batch
/// prototype (positive) and one earlier task prototype (negative). Exactly 0
/// when there are no earlier prototypes.
pub fn tcon(
    anchors: ArrayView2<f64>,
    positive: &[f64],
    negatives: &[Vec<f64>],
    options: &LossOptions,
) -> Result<f64> {
    Ok(tcon_grad(anchors, positive, negatives, options)?.loss)
}

pub fn tcon_grad(
    anchors: ArrayView2<f64>,
    positive: &[f64],
    negatives: &[Vec<f64>],
    options: &LossOptions,
) -> Result<TconGrad> {
    let n = anchors.nrows();
    if n == 0 {
        return Err(DiscoError::Empty("anchor batch"));
    }
    let mut out = TconGrad {
        loss: 0.0,
        anchors: Array2::zeros(anchors.raw_dim()),
        positive: vec![0.0; positive.len()],
        negatives: negatives.iter().map(|v| vec![0.0; v.len()]).collect(),
    };
    if negatives.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / (n * negatives.len()) as f64;
    for j in 0..n {
        let a = row(&anchors, j);
        let mut ga = vec![0.0; a.len()];
        for (k, neg) in negatives.iter().enumerate() {
            let g = triplet_grad(&a, positive, neg, options.norm_floor)?;
            out.loss += g.loss * scale;
            add_into(&mut ga, &g.anchor, scale);
            add_into(&mut out.positive, &g.positive, scale);
            add_into(&mut out.negatives[k], &g.negative, scale);
        }
        out.anchors
            .row_mut(j)
            .iter_mut()
            .zip(&ga)
            .for_each(|(d, s)| *d = *s);
    }
    Ok(out)
}

/// Indices of one sampled class-level triplet within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// For each anchor with at least one same-label peer and one different-label
/// sample, draw one of each uniformly. Anchors are visited in batch order.
pub fn sample_class_triplets(labels: &[ClassId], rng: &mut Rng) -> Vec<TripletIndex> {
    let mut out = Vec::new();
    let mut same = Vec::with_capacity(labels.len());
    let mut diff = Vec::with_capacity(labels.len());
    for (j, &y) in labels.iter().enumerate() {
        same.clear();
        diff.clear();
        for (k, &yk) in labels.iter().enumerate() {
            if k == j {
                continue;
            }
            if yk == y {
                same.push(k);
            } else {
                diff.push(k);
            }
        }
        if same.is_empty() || diff.is_empty() {
            continue;
        }
        let positive = same[rng.random_range(0..same.len())];
        let negative = diff[rng.random_range(0..diff.len())];
        out.push(TripletIndex {
            anchor: j,
            positive,
            negative,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossGrad {
    pub loss: f64,
    /// Gradient with respect to every row of the batch.
    pub features: Array2<f64>,
}

/// Class-level contrast over pre-sampled triplets: the mean triplet loss over
/// eligible anchors, 0 when none is eligible.
pub fn ccon_from_triplets(
    features: ArrayView2<f64>,
    triplets: &[TripletIndex],
    options: &LossOptions,
) -> Result<BatchLossGrad> {
    let mut grad = Array2::zeros(features.raw_dim());
    if triplets.is_empty() {
        return Ok(BatchLossGrad {
            loss: 0.0,
            features: grad,
        });
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    for t in triplets {
        let g = triplet_grad(
            &row(&features, t.anchor),
            &row(&features, t.positive),
            &row(&features, t.negative),
            options.norm_floor,
        )?;
        loss += g.loss * scale;
        for (idx, gv) in [
            (t.anchor, &g.anchor),
            (t.positive, &g.positive),
            (t.negative, &g.negative),
        ] {
            grad.row_mut(idx)
                .iter_mut()
                .zip(gv)
                .for_each(|(d, s)| *d += scale * s);
        }
    }
    Ok(BatchLossGrad {
        loss,
        features: grad,
    })
}

/// Class-level contrast with triplets drawn from `rng`.
pub fn ccon(
    features: ArrayView2<f64>,
    labels: &[ClassId],
    rng: &mut Rng,
    options: &LossOptions,
) -> Result<BatchLossGrad> {
    if features.nrows() == 0 {
        return Err(DiscoError::Empty("class-contrast batch"));
    }
    if labels.len() != features.nrows() {
        return Err(DiscoError::DimensionMismatch {
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    let triplets = sample_class_triplets(labels, rng);
    if triplets.is_empty() {
        log::debug!("class-level contrast skipped: no anchor has both a positive and a negative");
    }
    ccon_from_triplets(features, &triplets, options)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcdGrad {
    pub loss: f64,
    pub student: Array2<f64>,
    pub teacher: Array2<f64>,
    pub pairs: usize,
}

/// Cross-task contrastive distillation over a rehearsal batch: for every
/// ordered pair `(j, k)` with different labels, pull the student feature of
/// `j` toward the teacher feature of `j` and away from the student feature of
/// `k`.
pub fn ccd_grad(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    labels: &[ClassId],
    options: &LossOptions,
) -> Result<CcdGrad> {
    if student.raw_dim() != teacher.raw_dim() {
        return Err(DiscoError::DimensionMismatch {
            expected: student.len(),
            actual: teacher.len(),
        });
    }
    if labels.len() != student.nrows() {
        return Err(DiscoError::DimensionMismatch {
            expected: student.nrows(),
            actual: labels.len(),
        });
    }
    let mut out = CcdGrad {
        loss: 0.0,
        student: Array2::zeros(student.raw_dim()),
        teacher: Array2::zeros(teacher.raw_dim()),
        pairs: 0,
    };
    let n = labels.len();
    let pairs: usize = (0..n)
        .map(|j| labels.iter().filter(|&&y| y != labels[j]).count())
        .sum();
    if pairs == 0 {
        return Ok(out);
    }
    out.pairs = pairs;
    let scale = match options.ccd_reduction {
        Reduction::Mean => 1.0 / pairs as f64,
        Reduction::Sum => 1.0,
    };
    for j in 0..n {
        let a = row(&student, j);
        let p = row(&teacher, j);
        for k in 0..n {
            if labels[k] == labels[j] {
                continue;
            }
            let g = triplet_grad(&a, &p, &row(&student, k), options.norm_floor)?;
            out.loss += g.loss * scale;
            out.student
                .row_mut(j)
                .iter_mut()
                .zip(&g.anchor)
                .for_each(|(d, s)| *d += scale * s);
            out.student
                .row_mut(k)
                .iter_mut()
                .zip(&g.negative)
                .for_each(|(d, s)| *d += scale * s);
            out.teacher
                .row_mut(j)
                .iter_mut()
                .zip(&g.positive)
                .for_each(|(d, s)| *d += scale * s);
        }
    }
    Ok(out)
}

pub fn ccd(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    labels: &[ClassId],
    options: &LossOptions,
) -> Result<f64> {
    Ok(ccd_grad(student, teacher, labels, options)?.loss)
}

/// Weighted sum of the baseline loss and the three regularizers.
pub fn total_loss(
    baseline: f64,
    tcon: f64,
    ccon: f64,
    ccd: f64,
    weights: &LossWeights,
) -> Result<f64> {
    for (name, v) in [
        ("baseline loss", baseline),
        ("tcon", tcon),
        ("ccon", ccon),
        ("ccd", ccd),
    ] {
        if !v.is_finite() {
            return Err(DiscoError::NonFinite(name));
        }
    }
    Ok(baseline + weights.tcon * tcon + weights.ccon * ccon + weights.ccd * ccd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // (1·2 + 2·1) / (√5 · √5)
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_vectors_are_rejected_unless_floored() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(DiscoError::ZeroVector)
        ));
        assert_eq!(
            cosine_similarity_with(&[0.0, 0.0], &[1.0, 0.0], Some(DEFAULT_NORM_FLOOR)).unwrap(),
            0.0
        );
        assert!(triplet(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn triplet_examples() {
        assert_abs_diff_eq!(
            triplet(&[1.0, 0.0], &[2.0, 0.0], &[0.0, 3.0]).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            triplet(&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]).unwrap(),
            (1.0 + 1f64.exp()).ln(),
            epsilon = 1e-12
        );
        let direct = (1.0 + 2f64.exp()).ln();
        assert_abs_diff_eq!(
            triplet(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap(),
            direct,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(direct, 2.126928, epsilon = 1e-6);
    }

    #[test]
    fn tcon_examples() {
        let opts = LossOptions::default();
        let anchors = array![[1.0, 0.0], [0.3, 0.4]];
        assert_eq!(tcon(anchors.view(), &[1.0, 1.0], &[], &opts).unwrap(), 0.0);
        let single = array![[1.0, 0.0]];
        assert_abs_diff_eq!(
            tcon(single.view(), &[3.0, 0.0], &[vec![0.0, 1.0]], &opts).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(tcon(empty.view(), &[1.0, 0.0], &[vec![0.0, 1.0]], &opts).is_err());
    }

    #[test]
    fn ccon_examples() {
        let opts = LossOptions::default();
        let mut r = stream(0, Stream::ClassContrast);
        let same = array![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]];
        assert_eq!(
            ccon(same.view(), &[2, 2, 2], &mut r, &opts).unwrap().loss,
            0.0
        );
        let two = array![[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 5.0]];
        let l = ccon(two.view(), &[0, 0, 1, 1], &mut r, &opts).unwrap().loss;
        assert_abs_diff_eq!(l, LN2, epsilon = 1e-12);
    }

    #[test]
    fn ccon_replays_with_the_same_seed() {
        let opts = LossOptions::default();
        let f = Array2::from_shape_fn((8, 3), |(i, j)| ((i * 3 + j) as f64).sin() + 0.1);
        let labels = [0, 1, 0, 2, 1, 2, 0, 1];
        let a = ccon(
            f.view(),
            &labels,
            &mut stream(5, Stream::ClassContrast),
            &opts,
        )
        .unwrap();
        let b = ccon(
            f.view(),
            &labels,
            &mut stream(5, Stream::ClassContrast),
            &opts,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ccd_examples() {
        let opts = LossOptions::default();
        let f = array![[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]];
        let l = ccd(f.view(), f.view(), &[0, 1, 0], &opts).unwrap();
        assert_abs_diff_eq!(l, LN2, epsilon = 1e-12);
        assert_eq!(ccd(f.view(), f.view(), &[4, 4, 4], &opts).unwrap(), 0.0);
        let short = array![[1.0, 0.0]];
        assert!(ccd(f.view(), short.view(), &[0, 1, 0], &opts).is_err());
        let sum = LossOptions {
            ccd_reduction: Reduction::Sum,
            ..opts
        };
        // four ordered cross-label pairs
        assert_abs_diff_eq!(
            ccd(f.view(), f.view(), &[0, 1, 0], &sum).unwrap(),
            4.0 * LN2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_abs_diff_eq!(
            total_loss(1.0, LN2, LN2, LN2, &w).unwrap(),
            1.0 + 2.0 * LN2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(1.0 + 2.0 * LN2, 2.386294, epsilon = 1e-6);
        assert_eq!(
            total_loss(1.5, 3.0, 2.0, 1.0, &LossWeights::zero()).unwrap(),
            1.5
        );
        let no_ccd = LossWeights { ccd: 0.0, ..w };
        assert_abs_diff_eq!(
            total_loss(1.0, 0.2, 0.4, 99.0, &no_ccd).unwrap(),
            1.3,
            epsilon = 1e-12
        );
        assert!(total_loss(f64::NAN, 0.0, 0.0, 0.0, &w).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            tcon: -1.0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().len(), 1);
    }
}
