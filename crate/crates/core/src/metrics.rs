//! Continual-learning metrics over accuracy matrices, parameter snapshots and
//! prediction logs.
//!
//! Accuracy values are percentages in `[0, 100]`. `a[k][j]` (zero-based here)
//! is the accuracy on the test set of task `j` after training task `k`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::error::{DiscoError, Result};
use crate::scenario::{ClassId, ContinualScenario};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(DiscoError::InvalidMatrix("matrix has no rows".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(DiscoError::InvalidMatrix(format!(
                    "row {} has {} entries, expected {}",
                    k + 1,
                    row.len(),
                    k + 1
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(DiscoError::InvalidMatrix(format!(
                    "row {} holds {v}, outside [0, 100]",
                    k + 1
                )));
            }
        }
        Ok(AccuracyMatrix { rows })
    }

    /// Empty matrix that rows are appended to during a run.
    pub(crate) fn empty() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    pub(crate) fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let mut rows = std::mem::take(&mut self.rows);
        rows.push(row);
        *self = AccuracyMatrix::new(rows)?;
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// One-based accessor `a_{k,j}`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.rows[k - 1][j - 1]
    }

    /// Row `k` holds `k` comma-separated values; values are written in their
    /// shortest round-tripping decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split(',')
                    .map(|cell| {
                        cell.trim()
                            .parse::<f64>()
                            .map_err(|_| DiscoError::InvalidMatrix(format!("bad cell `{cell}`")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        AccuracyMatrix::new(rows)
    }
}

/// `(AA_k for k = 1..T, AA)`.
pub fn average_accuracy(matrix: &AccuracyMatrix) -> (Vec<f64>, f64) {
    let per_task: Vec<f64> = matrix
        .rows
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let aa = per_task.iter().sum::<f64>() / per_task.len() as f64;
    (per_task, aa)
}

/// `(f_j for j = 1..T-1, FM)`, each `f_j` measured against the final row:
/// `f_j = max_{i<T} (a_{i,j} - a_{T,j})`. Negative values (backward transfer)
/// are kept.
pub fn forgetting_measure(matrix: &AccuracyMatrix) -> Result<(Vec<f64>, f64)> {
    let t = matrix.num_tasks();
    if t < 2 {
        return Err(DiscoError::MetricUndefined(
            "forgetting needs at least two tasks".into(),
        ));
    }
    let last = &matrix.rows[t - 1];
    let per_task: Vec<f64> = (0..t - 1)
        .map(|j| {
            (j..t - 1)
                .map(|i| matrix.rows[i][j] - last[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let fm = per_task.iter().sum::<f64>() / (t - 1) as f64;
    Ok((per_task, fm))
}

/// Mean of the diagonal: each task's accuracy right after learning it.
pub fn initial_accuracy(matrix: &AccuracyMatrix) -> f64 {
    let t = matrix.num_tasks();
    (0..t).map(|i| matrix.rows[i][i]).sum::<f64>() / t as f64
}

/// Percentile of `values` with linear interpolation between order
/// statistics (position `q · (n − 1)` in the sorted sample).
pub fn percentile_linear(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(DiscoError::Empty("percentile sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// High-magnitude update set of one task transition.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateProfile {
    /// Upper quartile of `|Δθ|`.
    pub threshold: f64,
    /// Indices with `|Δθ_i| > threshold`, ascending.
    pub high: BTreeSet<usize>,
    /// Euclidean norm of `Δθ`.
    pub norm: f64,
    pub count: usize,
}

pub fn high_magnitude_set(delta: &[f64]) -> Result<UpdateProfile> {
    if delta.is_empty() {
        return Err(DiscoError::Empty("parameter update"));
    }
    let magnitudes: Vec<f64> = delta.iter().map(|v| v.abs()).collect();
    let threshold = percentile_linear(&magnitudes, 0.75)?;
    let high = magnitudes
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(UpdateProfile {
        threshold,
        high,
        norm: delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        count: delta.len(),
    })
}

/// Jaccard overlap of two index sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `(IS, FTS)` for a pair of transitions.
pub fn interference_and_transfer(a: &UpdateProfile, b: &UpdateProfile) -> Result<(f64, f64)> {
    if a.count != b.count {
        return Err(DiscoError::DimensionMismatch {
            expected: a.count,
            actual: b.count,
        });
    }
    let is = jaccard(&a.high, &b.high);
    Ok((is, is * (a.norm + b.norm) / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceReport {
    /// Mean consecutive-transition Jaccard overlap, as a percentage.
    pub piv: f64,
    pub pfts: f64,
    /// `IS(t, t-1)` for t = 2..T.
    pub interference: Vec<f64>,
    /// `FTS(t, t-1)` for t = 2..T.
    pub transfer: Vec<f64>,
}

/// PIV and PFTS over consecutive transitions `Δθ_t = s_t − s_{t−1}` of the
/// snapshot chain `s_0..s_T`.
pub fn piv_pfts(snapshots: &[Vec<f64>]) -> Result<InterferenceReport> {
    if snapshots.len() < 3 {
        return Err(DiscoError::MetricUndefined(format!(
            "interference needs at least 3 snapshots (2 transitions), got {}",
            snapshots.len()
        )));
    }
    let count = snapshots[0].len();
    if let Some(s) = snapshots.iter().find(|s| s.len() != count) {
        return Err(DiscoError::DimensionMismatch {
            expected: count,
            actual: s.len(),
        });
    }
    let profiles = snapshots
        .windows(2)
        .map(|w| {
            let delta: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
            high_magnitude_set(&delta)
        })
        .collect::<Result<Vec<_>>>()?;
    piv_pfts_from_profiles(&profiles)
}

pub fn piv_pfts_from_profiles(profiles: &[UpdateProfile]) -> Result<InterferenceReport> {
    if profiles.len() < 2 {
        return Err(DiscoError::MetricUndefined(
            "interference needs at least 2 transitions".into(),
        ));
    }
    let mut interference = Vec::with_capacity(profiles.len() - 1);
    let mut transfer = Vec::with_capacity(profiles.len() - 1);
    for w in profiles.windows(2) {
        let (is, fts) = interference_and_transfer(&w[1], &w[0])?;
        interference.push(is);
        transfer.push(fts);
    }
    let n = interference.len() as f64;
    Ok(InterferenceReport {
        piv: 100.0 * interference.iter().sum::<f64>() / n,
        pfts: transfer.iter().sum::<f64>() / n,
        interference,
        transfer,
    })
}

/// One evaluated test sample: its true class and the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub label: ClassId,
    pub predicted: ClassId,
}

/// Percentage of samples whose predicted class belongs to the label set of
/// the sample's own task.
pub fn task_inference_accuracy(
    predictions: &[Prediction],
    scenario: &ContinualScenario,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(DiscoError::Empty("prediction log"));
    }
    let mut hits = 0usize;
    for p in predictions {
        let predicted_task = scenario
            .task_of(p.predicted)
            .ok_or(DiscoError::PredictionOutsideTasks(p.predicted))?;
        let true_task = scenario
            .task_of(p.label)
            .ok_or(DiscoError::PredictionOutsideTasks(p.label))?;
        if predicted_task == true_task {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Accuracy with the argmax restricted to the classifier rows of `mask`.
///
/// `logits` has one column per entry of `head_labels`; `labels` are the true
/// classes of the rows.
pub fn masked_accuracy(
    logits: ArrayView2<f64>,
    head_labels: &[ClassId],
    labels: &[ClassId],
    mask: &[ClassId],
) -> Result<f64> {
    if logits.nrows() != labels.len() || logits.ncols() != head_labels.len() {
        return Err(DiscoError::DimensionMismatch {
            expected: labels.len() * head_labels.len(),
            actual: logits.len(),
        });
    }
    if labels.is_empty() {
        return Err(DiscoError::Empty("evaluation set"));
    }
    let columns = mask
        .iter()
        .map(|&c| {
            head_labels
                .iter()
                .position(|&h| h == c)
                .ok_or(DiscoError::MissingClass(c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let best = argmax(columns.iter().map(|&c| row[c])).expect("non-empty mask");
        if mask[best] == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// Intra-task accuracy of task `j`: masked accuracy with the head restricted
/// to that task's classes, over that task's test samples.
pub fn intra_task_accuracy(
    logits: ArrayView2<f64>,
    head_labels: &[ClassId],
    labels: &[ClassId],
    scenario: &ContinualScenario,
    j: usize,
) -> Result<f64> {
    let task = scenario.task(j)?;
    masked_accuracy(logits, head_labels, labels, &task.label_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn m(rows: Vec<Vec<f64>>) -> AccuracyMatrix {
        AccuracyMatrix::new(rows).unwrap()
    }

    #[test]
    fn matrix_validation() {
        assert!(AccuracyMatrix::new(vec![]).is_err());
        assert!(AccuracyMatrix::new(vec![vec![1.0, 2.0]]).is_err());
        assert!(AccuracyMatrix::new(vec![vec![101.0]]).is_err());
        let a = m(vec![vec![80.0], vec![70.0, 60.5]]);
        assert_eq!(AccuracyMatrix::from_csv(&a.to_csv()).unwrap(), a);
        assert_eq!(a.to_csv(), "80\n70,60.5\n");
    }

    #[test]
    fn aa_fm_ia_examples() {
        let a = m(vec![vec![80.0], vec![70.0, 60.0]]);
        let (per, aa) = average_accuracy(&a);
        assert_eq!(per, vec![80.0, 65.0]);
        assert_eq!(aa, 72.5);
        let (f, fm) = forgetting_measure(&a).unwrap();
        assert_eq!(f, vec![10.0]);
        assert_eq!(fm, 10.0);
        assert_eq!(initial_accuracy(&a), 70.0);

        let gain = m(vec![vec![50.0], vec![60.0, 40.0]]);
        assert_eq!(forgetting_measure(&gain).unwrap().1, -10.0);
        let flat = m(vec![vec![33.0], vec![33.0, 12.0]]);
        assert_eq!(forgetting_measure(&flat).unwrap().0, vec![0.0]);

        let single = m(vec![vec![42.0]]);
        assert_eq!(average_accuracy(&single).1, 42.0);
        assert_eq!(initial_accuracy(&single), 42.0);
        assert!(forgetting_measure(&single).is_err());

        let constant = m(vec![vec![7.0], vec![7.0, 7.0], vec![7.0, 7.0, 7.0]]);
        assert_eq!(average_accuracy(&constant).1, 7.0);
        assert_eq!(initial_accuracy(&constant), 7.0);
    }

    #[test]
    fn high_magnitude_examples() {
        let p = high_magnitude_set(&[0.1, -0.2, 0.3, -0.4]).unwrap();
        assert_abs_diff_eq!(p.threshold, 0.325, epsilon = 1e-12);
        assert_eq!(p.high.iter().copied().collect::<Vec<_>>(), vec![3]);
        assert!(high_magnitude_set(&[0.5; 4]).unwrap().high.is_empty());
        let p = high_magnitude_set(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.high.iter().copied().collect::<Vec<_>>(), vec![3]);
        assert!(high_magnitude_set(&[]).is_err());
    }

    fn profile(high: &[usize], norm: f64, count: usize) -> UpdateProfile {
        UpdateProfile {
            threshold: 0.0,
            high: high.iter().copied().collect(),
            norm,
            count,
        }
    }

    #[test]
    fn interference_examples() {
        let a = profile(&[1, 2, 3], 2.0, 8);
        let b = profile(&[2, 3, 4], 4.0, 8);
        let (is, fts) = interference_and_transfer(&a, &b).unwrap();
        assert_eq!(is, 0.5);
        assert_eq!(fts, 1.5);
        assert_eq!(interference_and_transfer(&a, &a).unwrap().0, 1.0);
        assert_eq!(
            interference_and_transfer(&a, &profile(&[5, 6], 1.0, 8))
                .unwrap()
                .0,
            0.0
        );
        assert_eq!(
            interference_and_transfer(&profile(&[], 1.0, 8), &profile(&[], 1.0, 8))
                .unwrap()
                .0,
            0.0
        );
        assert!(interference_and_transfer(&a, &profile(&[1], 1.0, 9)).is_err());
    }

    #[test]
    fn piv_examples() {
        let too_few = vec![vec![0.0; 4]; 2];
        assert!(piv_pfts(&too_few).is_err());
        let same = vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 3.0],
        ];
        let r = piv_pfts(&same).unwrap();
        assert_eq!(r.piv, 100.0);
        assert_eq!(r.interference, vec![1.0]);
        // FTS = 1 · (|2| + |1|) / 2
        assert_eq!(r.pfts, 1.5);
    }

    #[test]
    fn tia_examples() {
        let s =
            ContinualScenario::from_label_sets(vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]], 0)
                .unwrap();
        let ok = [Prediction {
            label: 6,
            predicted: 7,
        }];
        assert_eq!(task_inference_accuracy(&ok, &s).unwrap(), 100.0);
        let wrong = [
            Prediction {
                label: 6,
                predicted: 1,
            },
            Prediction {
                label: 0,
                predicted: 9,
            },
        ];
        assert_eq!(task_inference_accuracy(&wrong, &s).unwrap(), 0.0);
        let outside = [Prediction {
            label: 6,
            predicted: 42,
        }];
        assert!(matches!(
            task_inference_accuracy(&outside, &s),
            Err(DiscoError::PredictionOutsideTasks(42))
        ));
    }

    #[test]
    fn masked_accuracy_examples() {
        let head = [0, 1, 2, 3];
        // Globally the argmax is class 2 or 3 (wrong task); inside {0, 1} it is right.
        let logits = array![[0.9, 0.1, 5.0, 0.0], [0.2, 0.8, 0.0, 4.0]];
        let labels = [0, 1];
        assert_eq!(
            masked_accuracy(logits.view(), &head, &labels, &head).unwrap(),
            0.0
        );
        assert_eq!(
            masked_accuracy(logits.view(), &head, &labels, &[0, 1]).unwrap(),
            100.0
        );
        assert!(matches!(
            masked_accuracy(logits.view(), &head, &labels, &[0, 7]),
            Err(DiscoError::MissingClass(7))
        ));
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(std::iter::empty()), None);
    }
}
