//! Continual training loop: per-task optimization with the contrastive
//! regularizers on top of a baseline objective, rehearsal buffer upkeep,
//! teacher snapshots, evaluation after every task and run artifacts.

mod buffer;
mod optim;
mod record;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use buffer::{Exemplar, RehearsalBuffer, ReplayBatch};
pub use optim::{step_lr, Sgd};
pub use record::{
    features_csv, logits_csv, read_logits_csv, snapshot_path, FeatureSpace, RunRecord, TaskLogits,
    ACCURACY_FILE, LOGITS_FILE,
};

use crate::error::{DiscoError, Result};
use crate::losses::{self, LossOptions, LossWeights, Reduction, DEFAULT_NORM_FLOOR};
use crate::metrics::{argmax, AccuracyMatrix};
use crate::model::{BackboneSpec, ModelBundle, ParameterSnapshot, Projector};
use crate::prototypes::{self, HashEmbeddingProvider, PrototypePool, TextEmbeddingProvider};
use crate::rng::{self, Rng, Stream};
use crate::scenario::{ClassId, ContinualScenario, Dataset, SampleShape, Split};

/// Objective the regularizers are added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Baseline {
    /// Cross-entropy on the current batch concatenated with a replay batch.
    #[default]
    #[serde(rename = "rehearsal-er")]
    RehearsalEr,
    /// Cross-entropy on the current batch plus squared-error distillation of
    /// backbone features toward the previous-task model; no buffer.
    #[serde(rename = "distill-reg")]
    DistillReg,
}

impl Baseline {
    pub fn uses_buffer(self) -> bool {
        self == Baseline::RehearsalEr
    }
}

/// Source of the batch prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeMode {
    /// Mean projected feature of the batch.
    #[default]
    Image,
    /// Text embedding of a prompt naming the batch's classes.
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs (zero-based) at which the learning rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub baseline: Baseline,
    /// Master switch for the three regularizers; `false` runs the plain
    /// baseline.
    pub disco: bool,
    pub weights: LossWeights,
    pub prototype_mode: PrototypeMode,
    pub buffer_capacity: usize,
    /// Weight of the feature-distillation term of `distill-reg`.
    pub distill_weight: f64,
    pub ccd_reduction: Reduction,
    /// Clamp tiny norms in cosine similarities instead of failing.
    pub norm_floor: bool,
    /// Draw a fresh projector at the start of every task.
    pub reinit_projector: bool,
    /// Which features to dump after each task.
    pub dump_features: FeatureSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            milestones: vec![60, 80],
            lr: 0.1,
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            seed: 0,
            baseline: Baseline::RehearsalEr,
            disco: true,
            weights: LossWeights::default(),
            prototype_mode: PrototypeMode::Image,
            buffer_capacity: 200,
            distill_weight: 1.0,
            ccd_reduction: Reduction::Mean,
            norm_floor: true,
            reinit_projector: false,
            dump_features: FeatureSpace::Raw,
        }
    }
}

impl TrainConfig {
    /// Field-level problems, prefixed with `train.`.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.epochs == 0 {
            errors.push("train.epochs: must be at least 1".to_string());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            errors.push(format!(
                "train.milestones: must be strictly increasing, got {:?}",
                self.milestones
            ));
        }
        if let Some(m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
            errors.push(format!(
                "train.milestones: {m} is not below epochs = {}",
                self.epochs
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("distill_weight", self.distill_weight),
        ] {
            if !v.is_finite() || v <= 0.0 {
                errors.push(format!("train.{name}: must be a positive number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errors.push(format!(
                "train.momentum: must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            errors.push(format!(
                "train.weight_decay: must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            errors.push("train.batch_size: must be at least 1".to_string());
        }
        if self.baseline.uses_buffer() && self.buffer_capacity == 0 {
            errors.push("train.buffer_capacity: rehearsal-er needs a non-zero buffer".to_string());
        }
        if let Err(mut e) = self.weights.validate() {
            errors.append(&mut e);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            norm_floor: self.norm_floor.then_some(DEFAULT_NORM_FLOOR),
            ccd_reduction: self.ccd_reduction,
        }
    }
}

/// Loss values of one optimization step. Regularizers that were not
/// evaluated are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub baseline: f64,
    pub tcon: f64,
    pub ccon: f64,
    pub ccd: f64,
    pub total: f64,
}

/// What the training loop touched in one step; handed to the observer.
#[derive(Debug)]
pub struct StepInfo<'s> {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub current_labels: &'s [ClassId],
    pub current_sources: &'s [usize],
    pub replay_labels: &'s [ClassId],
    pub replay_sources: &'s [usize],
    pub teacher: Option<&'s ModelBundle>,
    pub losses: StepLosses,
}

/// Materialized inputs of one task and split, in view order.
#[derive(Debug, Clone)]
struct TaskData {
    inputs: Array2<f64>,
    labels: Vec<ClassId>,
    sources: Vec<usize>,
}

struct Streams {
    batch: Rng,
    buffer: Rng,
    replay: Rng,
    ccon: Rng,
    head: Rng,
}

type Observer<'a> = Box<dyn FnMut(&StepInfo<'_>) + 'a>;

pub struct Trainer<'a> {
    config: TrainConfig,
    backbone_spec: BackboneSpec,
    shape: SampleShape,
    scenario: &'a ContinualScenario,
    train: Vec<TaskData>,
    test: Vec<TaskData>,
    bundle: ModelBundle,
    teacher: Option<ModelBundle>,
    buffer: RehearsalBuffer,
    pool: PrototypePool,
    provider: Box<dyn TextEmbeddingProvider>,
    streams: Streams,
    snapshots: Vec<ParameterSnapshot>,
    accuracy: AccuracyMatrix,
    feature_dumps: Vec<(usize, String)>,
    trained: usize,
    observer: Option<Observer<'a>>,
}

impl<'a> Trainer<'a> {
    /// Validate the configuration, materialize every task of the scenario
    /// and initialize the model. Data gaps surface here, before training.
    pub fn new(
        config: &TrainConfig,
        backbone: &BackboneSpec,
        projection_dim: usize,
        scenario: &'a ContinualScenario,
        dataset: &Dataset,
    ) -> Result<Self> {
        config.validate().map_err(DiscoError::Config)?;
        backbone
            .validate(dataset.shape)
            .map_err(|e| DiscoError::Config(vec![e]))?;
        if projection_dim == 0 {
            return Err(DiscoError::Config(vec![
                "model.projection_dim: must be at least 1".into(),
            ]));
        }
        scenario.validate()?;
        let mut train = Vec::with_capacity(scenario.num_tasks());
        let mut test = Vec::with_capacity(scenario.num_tasks());
        for t in 1..=scenario.num_tasks() {
            train.push(materialize(scenario, dataset, t, Split::Train)?);
            test.push(materialize(scenario, dataset, t, Split::Test)?);
        }
        let seed = config.seed;
        let mut init = rng::stream(seed, Stream::ModelInit);
        let net = backbone.build(dataset.shape, &mut init);
        let bundle = ModelBundle::new(net, projection_dim, &mut init);
        let snapshots = vec![bundle.snapshot(0)];
        Ok(Trainer {
            config: config.clone(),
            backbone_spec: backbone.clone(),
            shape: dataset.shape,
            scenario,
            train,
            test,
            bundle,
            teacher: None,
            buffer: RehearsalBuffer::new(config.buffer_capacity),
            pool: PrototypePool::new(),
            provider: Box::new(HashEmbeddingProvider::new(projection_dim, seed)),
            streams: Streams {
                batch: rng::stream(seed, Stream::BatchOrder),
                buffer: rng::stream(seed, Stream::Buffer),
                replay: rng::stream(seed, Stream::Replay),
                ccon: rng::stream(seed, Stream::ClassContrast),
                head: rng::stream(seed, Stream::HeadExpansion),
            },
            snapshots,
            accuracy: AccuracyMatrix::empty(),
            feature_dumps: Vec::new(),
            trained: 0,
            observer: None,
        })
    }

    /// Called after every optimization step.
    pub fn with_observer(mut self, observer: impl FnMut(&StepInfo<'_>) + 'a) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    /// Replace the default hash-based text embedder used in text prototype
    /// mode. Its dimension must equal the projection dimension.
    pub fn with_text_provider(mut self, provider: Box<dyn TextEmbeddingProvider>) -> Result<Self> {
        if provider.dim() != self.bundle.projection_dim() {
            return Err(DiscoError::DimensionMismatch {
                expected: self.bundle.projection_dim(),
                actual: provider.dim(),
            });
        }
        self.provider = provider;
        Ok(self)
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn buffer(&self) -> &RehearsalBuffer {
        &self.buffer
    }

    pub fn pool(&self) -> &PrototypePool {
        &self.pool
    }

    pub fn teacher(&self) -> Option<&ModelBundle> {
        self.teacher.as_ref()
    }

    pub fn snapshots(&self) -> &[ParameterSnapshot] {
        &self.snapshots
    }

    pub fn tasks_trained(&self) -> usize {
        self.trained
    }

    /// Train every task in order, evaluating after each.
    pub fn run(mut self) -> Result<RunRecord> {
        for t in 1..=self.scenario.num_tasks() {
            self.train_task(t)?;
            let row = self.evaluate(t)?;
            log::info!(
                "task {t}/{}: accuracy {:?}",
                self.scenario.num_tasks(),
                row.iter()
                    .map(|a| (a * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()
            );
            self.accuracy.push_row(row)?;
            if let Some(text) = self.dump_features(t, self.config.dump_features)? {
                self.feature_dumps.push((t, text));
            }
        }
        self.finish()
    }

    fn finish(self) -> Result<RunRecord> {
        let final_logits = (1..=self.scenario.num_tasks())
            .map(|j| {
                let data = &self.test[j - 1];
                TaskLogits {
                    task_id: j,
                    labels: data.labels.clone(),
                    logits: self.bundle.logits(data.inputs.view()),
                }
            })
            .collect();
        Ok(RunRecord {
            config: self.config,
            backbone: self.backbone_spec,
            shape: self.shape,
            architecture_hash: self.bundle.architecture_hash(),
            accuracy: self.accuracy,
            snapshots: self.snapshots,
            pool: self.pool,
            head_labels: self.bundle.classifier.labels().to_vec(),
            final_logits,
            feature_dumps: self.feature_dumps,
            bundle: self.bundle,
        })
    }

    /// Train task `t`; tasks must be trained in order.
    pub fn train_task(&mut self, t: usize) -> Result<()> {
        if t != self.trained + 1 || t > self.scenario.num_tasks() {
            return Err(DiscoError::Training {
                task: t,
                epoch: 0,
                step: 0,
                message: format!("expected task {} next", self.trained + 1),
            });
        }
        let labels = self.scenario.task(t)?.label_set.clone();
        self.bundle
            .expand_classifier(&labels, &mut self.streams.head)?;
        if self.config.reinit_projector && t > 1 {
            self.bundle.projector = Projector::new(
                self.bundle.feature_dim(),
                self.bundle.projection_dim(),
                &mut self.streams.head,
            );
        }
        let b = &self.bundle;
        let mut sgd = Sgd::new(
            self.config.momentum,
            self.config.weight_decay,
            &[
                b.backbone.param_count(),
                b.projector.weights.len(),
                b.classifier.params.len(),
            ],
        );
        let n = self.train[t - 1].labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0;
        for epoch in 0..self.config.epochs {
            let lr = step_lr(
                self.config.lr,
                self.config.lr_decay,
                &self.config.milestones,
                epoch,
            );
            order.shuffle(&mut self.streams.batch);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.config.batch_size) {
                let losses = self.step(t, epoch, step, lr, chunk, &mut sgd)?;
                epoch_loss += losses.total;
                batches += 1;
                step += 1;
            }
            log::debug!(
                "task {t} epoch {epoch}: mean loss {:.5}",
                epoch_loss / batches as f64
            );
        }
        self.end_task(t, &labels)
    }

    fn step(
        &mut self,
        t: usize,
        epoch: usize,
        step: usize,
        lr: f64,
        chunk: &[usize],
        sgd: &mut Sgd,
    ) -> Result<StepLosses> {
        let data = &self.train[t - 1];
        let current = data.inputs.select(Axis(0), chunk);
        let current_labels: Vec<ClassId> = chunk.iter().map(|&i| data.labels[i]).collect();
        let current_sources: Vec<usize> = chunk.iter().map(|&i| data.sources[i]).collect();
        let nb = chunk.len();

        let replay = if self.config.baseline.uses_buffer() && t > 1 {
            self.buffer
                .sample(self.config.batch_size, &mut self.streams.replay)
        } else {
            ReplayBatch::default()
        };
        let nr = replay.len();
        let input = if nr == 0 {
            current
        } else {
            let dim = current.ncols();
            let mut m = Array2::zeros((nb + nr, dim));
            m.slice_mut(s![..nb, ..]).assign(&current);
            for (i, row) in replay.rows.iter().enumerate() {
                m.row_mut(nb + i).assign(&ArrayView1::from(row.as_slice()));
            }
            m
        };
        let mut all_labels = current_labels.clone();
        all_labels.extend_from_slice(&replay.labels);

        let pass = self.bundle.forward(input.view());
        let targets: Vec<usize> = all_labels
            .iter()
            .map(|&l| {
                self.bundle
                    .classifier
                    .row_of(l)
                    .ok_or(DiscoError::MissingClass(l))
            })
            .collect::<Result<_>>()?;

        let mut losses = StepLosses::default();
        let mut grad_features_extra = None;
        let (ce, grad_logits) = cross_entropy(pass.logits.view(), &targets);
        losses.baseline = ce;
        if let (Baseline::DistillReg, Some(teacher)) = (self.config.baseline, &self.teacher) {
            let target = teacher.features(input.view());
            let (mse, grad) = feature_mse(pass.features.view(), target.view());
            losses.baseline += self.config.distill_weight * mse;
            grad_features_extra = Some(grad * self.config.distill_weight);
        }

        let mut grad_projected: Option<Array2<f64>> = None;
        if self.config.disco {
            let opts = self.config.loss_options();
            let w = self.config.weights;
            let projected_current = pass.projected.slice(s![..nb, ..]);
            let batch_proto = match self.config.prototype_mode {
                PrototypeMode::Image => prototypes::batch_prototype(projected_current)?,
                PrototypeMode::Text => {
                    let mut classes = current_labels.clone();
                    classes.sort_unstable();
                    classes.dedup();
                    let names: Vec<String> = classes.iter().map(|c| class_name(*c)).collect();
                    prototypes::text_prototype(&names, self.provider.as_ref())?
                }
            };
            let running = self.pool.accumulate(&batch_proto.vector)?;
            let previous = self.pool.previous(t);
            let mut gp = Array2::<f64>::zeros(pass.projected.raw_dim());

            let tcon = losses::tcon_grad(projected_current, &running.vector, &previous, &opts)?;
            losses.tcon = tcon.loss;
            if w.tcon != 0.0 {
                gp.slice_mut(s![..nb, ..]).scaled_add(w.tcon, &tcon.anchors);
            }

            let ccon = losses::ccon(
                projected_current,
                &current_labels,
                &mut self.streams.ccon,
                &opts,
            )?;
            losses.ccon = ccon.loss;
            if w.ccon != 0.0 {
                gp.slice_mut(s![..nb, ..])
                    .scaled_add(w.ccon, &ccon.features);
            }

            if let (Some(teacher), true) = (&self.teacher, nr > 0) {
                let replay_inputs = input.slice(s![nb.., ..]);
                let teacher_projected = teacher.project(teacher.features(replay_inputs).view());
                let ccd = losses::ccd_grad(
                    pass.projected.slice(s![nb.., ..]),
                    teacher_projected.view(),
                    &replay.labels,
                    &opts,
                )?;
                losses.ccd = ccd.loss;
                if w.ccd != 0.0 {
                    gp.slice_mut(s![nb.., ..]).scaled_add(w.ccd, &ccd.student);
                }
            }
            if w.tcon != 0.0 || w.ccon != 0.0 || w.ccd != 0.0 {
                grad_projected = Some(gp);
            }
            losses.total =
                losses::total_loss(losses.baseline, losses.tcon, losses.ccon, losses.ccd, &w)
                    .map_err(|e| training_error(t, epoch, step, e))?;
        } else {
            losses.total = losses::total_loss(losses.baseline, 0.0, 0.0, 0.0, &LossWeights::zero())
                .map_err(|e| training_error(t, epoch, step, e))?;
        }

        let mut grads = self.bundle.zero_grads();
        self.bundle.backward(
            &pass,
            Some(grad_logits.view()),
            grad_projected.as_ref().map(|g| g.view()),
            grad_features_extra.as_ref().map(|g| g.view()),
            &mut grads,
        );
        let bundle = &mut self.bundle;
        sgd.step(
            lr,
            &mut [
                bundle.backbone.params_mut(),
                &mut bundle.projector.weights,
                &mut bundle.classifier.params,
            ],
            &[&grads.backbone, &grads.projector, &grads.classifier],
        );
        if bundle.backbone.params().iter().any(|v| !v.is_finite()) {
            return Err(training_error(
                t,
                epoch,
                step,
                DiscoError::NonFinite("backbone parameters"),
            ));
        }

        if let Some(observer) = self.observer.as_mut() {
            observer(&StepInfo {
                task: t,
                epoch,
                step,
                lr,
                current_labels: &current_labels,
                current_sources: &current_sources,
                replay_labels: &replay.labels,
                replay_sources: &replay.source_indices,
                teacher: self.teacher.as_ref(),
                losses,
            });
        }
        Ok(losses)
    }

    fn end_task(&mut self, t: usize, labels: &[ClassId]) -> Result<()> {
        if self.config.disco {
            self.pool.finalize_task(t)?;
        }
        self.snapshots.push(self.bundle.snapshot(t));
        if self.config.baseline.uses_buffer() {
            let data = &self.train[t - 1];
            let candidates = (0..data.labels.len())
                .map(|i| Exemplar {
                    source_index: data.sources[i],
                    label: data.labels[i],
                    task_id: t,
                    features: data.inputs.row(i).to_vec(),
                })
                .collect();
            self.buffer
                .update(candidates, labels, &mut self.streams.buffer)?;
        }
        self.teacher = Some(self.bundle.clone());
        self.trained = t;
        Ok(())
    }

    /// Accuracy (percent) on the test set of each task `1..=k`, predicting by
    /// argmax over every class the head currently holds.
    pub fn evaluate(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.trained {
            return Err(DiscoError::TaskOutOfRange {
                task: k,
                num_tasks: self.trained,
            });
        }
        let head = self.bundle.classifier.labels();
        (1..=k)
            .map(|j| {
                let data = &self.test[j - 1];
                if data.labels.is_empty() {
                    return Err(DiscoError::Empty("test split"));
                }
                let logits = self.bundle.logits(data.inputs.view());
                let correct = logits
                    .rows()
                    .into_iter()
                    .zip(&data.labels)
                    .filter(|(row, &label)| {
                        head[argmax(row.iter().copied()).expect("non-empty head")] == label
                    })
                    .count();
                Ok(100.0 * correct as f64 / data.labels.len() as f64)
            })
            .collect()
    }

    /// CSV of `task_id,label,f0..` for every test sample of tasks `1..=k`,
    /// or `None` when dumping is switched off.
    pub fn dump_features(&self, k: usize, space: FeatureSpace) -> Result<Option<String>> {
        if space == FeatureSpace::None {
            return Ok(None);
        }
        if k == 0 || k > self.trained {
            return Err(DiscoError::TaskOutOfRange {
                task: k,
                num_tasks: self.trained,
            });
        }
        let tasks = (1..=k).map(|j| {
            let data = &self.test[j - 1];
            (j, data.inputs.view(), &data.labels[..])
        });
        Ok(Some(features_csv(&self.bundle, space, tasks)))
    }
}

/// Name used for class `c` in text prompts.
pub fn class_name(c: ClassId) -> String {
    format!("class_{c}")
}

fn materialize(
    scenario: &ContinualScenario,
    dataset: &Dataset,
    t: usize,
    split: Split,
) -> Result<TaskData> {
    let view = scenario.materialize_task(t, dataset, split)?;
    let (inputs, labels) = view.to_matrix(dataset)?;
    Ok(TaskData {
        inputs,
        labels,
        sources: view.indices,
    })
}

fn training_error(task: usize, epoch: usize, step: usize, e: DiscoError) -> DiscoError {
    DiscoError::Training {
        task,
        epoch,
        step,
        message: e.to_string(),
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[y];
        for (gi, e) in g.iter_mut().zip(&exps) {
            *gi = e / z / n;
        }
        g[y] -= 1.0 / n;
    }
    (loss / n, grad)
}

/// Mean squared difference over all entries, and its gradient with respect
/// to `student`.
pub fn feature_mse(student: ArrayView2<f64>, teacher: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let diff = &student - &teacher;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / count;
    (loss, diff * (2.0 / count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{gaussian_blobs, split_even, BlobSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn blobs(classes: usize, seed: u64) -> Dataset {
        gaussian_blobs(&BlobSpec {
            num_classes: classes,
            shape: SampleShape::flat(4),
            train_per_class: 20,
            test_per_class: 10,
            center_scale: 4.0,
            background: 0.0,
            noise: 0.5,
            seed,
        })
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            milestones: vec![2],
            lr: 0.05,
            batch_size: 8,
            buffer_capacity: 20,
            ..TrainConfig::default()
        }
    }

    fn mlp() -> BackboneSpec {
        BackboneSpec::Mlp {
            hidden: vec![16],
            feature_dim: 8,
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = array![[0.2, -1.0, 0.5], [1.5, 0.3, -0.2]];
        let targets = [2, 0];
        let (_, g) = cross_entropy(logits.view(), &targets);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut m = logits.clone();
                m[[i, j]] -= h;
                let fd = (cross_entropy(p.view(), &targets).0
                    - cross_entropy(m.view(), &targets).0)
                    / (2.0 * h);
                assert_abs_diff_eq!(g[[i, j]], fd, epsilon = 1e-8);
            }
        }
        let uniform = Array2::zeros((1, 4));
        assert_abs_diff_eq!(
            cross_entropy(uniform.view(), &[1]).0,
            4f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig {
            epochs: 10,
            milestones: vec![8, 5, 12],
            buffer_capacity: 0,
            ..TrainConfig::default()
        };
        let errors = bad.validate().unwrap_err();
        assert!(errors.iter().any(|e| e.starts_with("train.milestones")));
        assert!(errors
            .iter()
            .any(|e| e.starts_with("train.buffer_capacity")));
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn first_task_has_no_task_contrast_or_distillation() {
        let data = blobs(4, 1);
        let scenario = split_even(4, 2, 1).unwrap();
        let mut seen = Vec::new();
        let mut trainer = Trainer::new(&small_config(), &mlp(), 6, &scenario, &data)
            .unwrap()
            .with_observer(|info: &StepInfo<'_>| {
                seen.push((info.task, info.losses, info.teacher.is_some()))
            });
        trainer.train_task(1).unwrap();
        drop(trainer);
        assert!(!seen.is_empty());
        for (task, losses, teacher) in seen {
            assert_eq!(task, 1);
            assert_eq!(losses.tcon, 0.0);
            assert_eq!(losses.ccd, 0.0);
            assert!(!teacher);
        }
    }

    #[test]
    fn tasks_must_be_trained_in_order() {
        let data = blobs(4, 1);
        let scenario = split_even(4, 2, 1).unwrap();
        let mut trainer = Trainer::new(&small_config(), &mlp(), 6, &scenario, &data).unwrap();
        assert!(trainer.train_task(2).is_err());
        assert!(trainer.evaluate(1).is_err());
    }

    #[test]
    fn evaluation_is_pure() {
        let data = blobs(4, 2);
        let scenario = split_even(4, 2, 2).unwrap();
        let mut trainer = Trainer::new(&small_config(), &mlp(), 6, &scenario, &data).unwrap();
        trainer.train_task(1).unwrap();
        let a = trainer.evaluate(1).unwrap();
        assert_eq!(a, trainer.evaluate(1).unwrap());
        assert!(a.iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn record_has_one_snapshot_per_task_plus_initial() {
        let data = blobs(6, 3);
        let scenario = split_even(6, 3, 3).unwrap();
        let record = Trainer::new(&small_config(), &mlp(), 6, &scenario, &data)
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(record.snapshots.len(), 4);
        assert_eq!(record.accuracy.num_tasks(), 3);
        assert_eq!(record.pool.len(), 3);
        assert_eq!(record.feature_dumps.len(), 3);
        // 2 tasks × 2 classes × 10 test samples, plus the header.
        assert_eq!(record.feature_dumps[1].1.lines().count(), 41);
    }

    #[test]
    fn text_mode_prototypes_come_from_the_provider() {
        let data = blobs(4, 4);
        let scenario = split_even(4, 2, 4).unwrap();
        let config = TrainConfig {
            prototype_mode: PrototypeMode::Text,
            ..small_config()
        };
        let record = Trainer::new(&config, &mlp(), 6, &scenario, &data)
            .unwrap()
            .run()
            .unwrap();
        let p = record.pool.get(1).unwrap();
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-12);
    }
}
