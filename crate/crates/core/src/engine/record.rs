use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{DiscoError, Result};
use crate::metrics::AccuracyMatrix;
use crate::model::{BackboneSpec, ModelBundle, ParameterSnapshot};
use crate::prototypes::PrototypePool;
use crate::scenario::{ClassId, SampleShape};

/// Feature space of the per-task feature dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    None,
    /// Backbone output, dimension `D`.
    #[default]
    Raw,
    /// Projector output, dimension `d`.
    Projected,
}

/// Final-model logits on the test set of one task, one column per head
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLogits {
    pub task_id: usize,
    pub labels: Vec<ClassId>,
    pub logits: Array2<f64>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub backbone: BackboneSpec,
    pub shape: SampleShape,
    pub architecture_hash: String,
    pub accuracy: AccuracyMatrix,
    /// `s_0..s_T`; `s_0` is taken at initialization.
    pub snapshots: Vec<ParameterSnapshot>,
    pub pool: PrototypePool,
    /// Head classes, in classifier row order.
    pub head_labels: Vec<ClassId>,
    pub final_logits: Vec<TaskLogits>,
    /// `(k, csv)` per task when feature dumping is on.
    pub feature_dumps: Vec<(usize, String)>,
    pub bundle: ModelBundle,
}

pub const ACCURACY_FILE: &str = "accuracy_matrix.csv";
pub const LOGITS_FILE: &str = "final_logits.csv";

pub fn snapshot_path(dir: &Path, t: usize) -> std::path::PathBuf {
    dir.join("snapshots").join(format!("task_{t}.bin"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DiscoError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DiscoError::io(path, e))
}

impl RunRecord {
    /// Write the accuracy matrix, snapshots, prototypes, feature dumps,
    /// final logits and the trained model under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write(&dir.join(ACCURACY_FILE), &self.accuracy.to_csv())?;
        create_dir(&dir.join("snapshots"))?;
        for s in &self.snapshots {
            s.save(&snapshot_path(dir, s.task_id), &self.architecture_hash)?;
        }
        let protos = dir.join("prototypes");
        create_dir(&protos)?;
        self.pool.save(&protos)?;
        if !self.feature_dumps.is_empty() {
            let features = dir.join("features");
            create_dir(&features)?;
            for (k, text) in &self.feature_dumps {
                write(&features.join(format!("after_task_{k}.csv")), text)?;
            }
        }
        write(
            &dir.join(LOGITS_FILE),
            &logits_csv(&self.head_labels, &self.final_logits),
        )?;
        let model = dir.join("model");
        create_dir(&model)?;
        self.bundle.save(&model, &self.backbone, self.shape)
    }
}

/// Feature CSV `task_id,label,f0..` over `(task_id, inputs, labels)` groups.
pub fn features_csv<'v>(
    bundle: &ModelBundle,
    space: FeatureSpace,
    tasks: impl IntoIterator<Item = (usize, ArrayView2<'v, f64>, &'v [ClassId])>,
) -> String {
    let dim = match space {
        FeatureSpace::Projected => bundle.projection_dim(),
        _ => bundle.feature_dim(),
    };
    let mut out = String::from("task_id,label");
    for i in 0..dim {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (j, inputs, labels) in tasks {
        let mut feats = bundle.features(inputs);
        if space == FeatureSpace::Projected {
            feats = bundle.project(feats.view());
        }
        for (row, label) in feats.rows().into_iter().zip(labels) {
            let _ = write!(out, "{j},{label}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Header `task_id,label,<class>...`, then one row per test sample.
pub fn logits_csv(head_labels: &[ClassId], tasks: &[TaskLogits]) -> String {
    let mut out = String::from("task_id,label");
    for c in head_labels {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for t in tasks {
        for (row, label) in t.logits.rows().into_iter().zip(&t.labels) {
            let _ = write!(out, "{},{label}", t.task_id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Inverse of [`logits_csv`].
pub fn read_logits_csv(path: &Path) -> Result<(Vec<ClassId>, Vec<TaskLogits>)> {
    let text = fs::read_to_string(path).map_err(|e| DiscoError::io(path, e))?;
    let bad = |m: String| DiscoError::artifact(path, m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let head: Vec<ClassId> = header
        .split(',')
        .skip(2)
        .map(|c| {
            c.parse()
                .map_err(|_| bad(format!("bad class id `{c}` in header")))
        })
        .collect::<Result<_>>()?;
    let mut tasks: Vec<(usize, Vec<ClassId>, Vec<f64>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != head.len() + 2 {
            return Err(bad(format!(
                "line {}: expected {} cells",
                n + 2,
                head.len() + 2
            )));
        }
        let task: usize = cells[0]
            .parse()
            .map_err(|_| bad(format!("line {}: bad task id", n + 2)))?;
        let label: ClassId = cells[1]
            .parse()
            .map_err(|_| bad(format!("line {}: bad label", n + 2)))?;
        let values = cells[2..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad logit `{c}`", n + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if tasks.last().is_none_or(|t| t.0 != task) {
            tasks.push((task, Vec::new(), Vec::new()));
        }
        let entry = tasks.last_mut().unwrap();
        entry.1.push(label);
        entry.2.extend(values);
    }
    let tasks = tasks
        .into_iter()
        .map(|(task_id, labels, data)| TaskLogits {
            task_id,
            logits: Array2::from_shape_vec((labels.len(), head.len()), data).expect("rows checked"),
            labels,
        })
        .collect();
    Ok((head, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn logits_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tasks = vec![
            TaskLogits {
                task_id: 1,
                labels: vec![3, 1],
                logits: array![[0.5, -1.25, 2.0], [0.1, 0.2, 0.3]],
            },
            TaskLogits {
                task_id: 2,
                labels: vec![7],
                logits: array![[1e-17, 3.0, -0.0]],
            },
        ];
        let path = dir.path().join(LOGITS_FILE);
        fs::write(&path, logits_csv(&[1, 3, 7], &tasks)).unwrap();
        let (head, back) = read_logits_csv(&path).unwrap();
        assert_eq!(head, vec![1, 3, 7]);
        assert_eq!(back, tasks);
    }
}
