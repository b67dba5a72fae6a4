//! In-memory datasets, synthetic generators and per-task views.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use super::transform::DomainTransform;
use super::{ClassId, ContinualScenario};
use crate::error::{DiscoError, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Layout of one sample as `channels × height × width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl SampleShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        SampleShape {
            channels,
            height,
            width,
        }
    }

    /// A flat vector viewed as a single-channel one-row plane.
    pub fn flat(dim: usize) -> Self {
        SampleShape::new(1, 1, dim)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that can be filtered into task views: labels, domains and splits
/// per record.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> ClassId;
    fn domain(&self, index: usize) -> &str;
    fn split(&self, index: usize) -> Split;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: ClassId,
    pub task_id: usize,
    /// Index of the record in its source.
    pub source_index: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: SampleShape,
    /// Row-major `len × shape.len()` feature storage.
    pub features: Vec<f64>,
    pub labels: Vec<ClassId>,
    pub domains: Vec<String>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(shape: SampleShape) -> Self {
        Dataset {
            shape,
            features: Vec::new(),
            labels: Vec::new(),
            domains: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        features: &[f64],
        label: ClassId,
        domain: &str,
        split: Split,
    ) -> Result<()> {
        if features.len() != self.shape.len() {
            return Err(DiscoError::DimensionMismatch {
                expected: self.shape.len(),
                actual: features.len(),
            });
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.domains.push(domain.to_string());
        self.splits.push(split);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.features[index * d..(index + 1) * d]
    }

    /// Decode every manifest record as an image resized to `shape`, scaled to
    /// `[0, 1]`. Paths are resolved relative to `root`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        root: &Path,
        shape: SampleShape,
    ) -> Result<Self> {
        if shape.channels != 1 && shape.channels != 3 {
            return Err(DiscoError::Config(vec![format!(
                "dataset.shape: image manifests need 1 or 3 channels, got {}",
                shape.channels
            )]));
        }
        let mut ds = Dataset::new(shape);
        for record in &manifest.records {
            let path = root.join(&record.path);
            let img = image::open(&path).map_err(|e| DiscoError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let img = img.resize_exact(
                shape.width as u32,
                shape.height as u32,
                image::imageops::FilterType::Triangle,
            );
            let plane = shape.height * shape.width;
            let mut values = vec![0.0; shape.len()];
            if shape.channels == 1 {
                for (i, px) in img.to_luma8().pixels().enumerate() {
                    values[i] = px[0] as f64 / 255.0;
                }
            } else {
                for (i, px) in img.to_rgb8().pixels().enumerate() {
                    for ch in 0..3 {
                        values[ch * plane + i] = px[ch] as f64 / 255.0;
                    }
                }
            }
            ds.push(&values, record.label, &record.domain, record.split)?;
        }
        Ok(ds)
    }
}

impl SampleSource for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, index: usize) -> ClassId {
        self.labels[index]
    }

    fn domain(&self, index: usize) -> &str {
        &self.domains[index]
    }

    fn split(&self, index: usize) -> Split {
        self.splits[index]
    }
}

/// Isotropic Gaussian clusters, one per class, all in the `real` domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub shape: SampleShape,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the class centres around the origin.
    pub center_scale: f64,
    /// Standard deviation of samples around their class centre.
    pub noise: f64,
    /// Amplitude of a fixed pattern, uniform in `[-background, background]`
    /// per coordinate, added to every sample. Classes then share common
    /// input statistics the way natural images do. 0 disables it.
    #[serde(default)]
    pub background: f64,
    pub seed: u64,
}

pub fn gaussian_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let dim = spec.shape.len();
    if spec.num_classes == 0 || dim == 0 {
        return Err(DiscoError::Empty("blob dataset"));
    }
    let mut r = rng::stream(spec.seed, Stream::Dataset);
    let center_dist = Normal::new(0.0, spec.center_scale)
        .map_err(|e| DiscoError::Config(vec![format!("dataset.center_scale: {e}")]))?;
    let noise_dist = Normal::new(0.0, spec.noise)
        .map_err(|e| DiscoError::Config(vec![format!("dataset.noise: {e}")]))?;
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..dim).map(|_| center_dist.sample(&mut r)).collect())
        .collect();
    let background: Vec<f64> = if spec.background > 0.0 {
        let mut rb = rng::keyed(spec.seed, "blob-background");
        (0..dim)
            .map(|_| rb.random_range(-spec.background..=spec.background))
            .collect()
    } else {
        vec![0.0; dim]
    };
    let mut ds = Dataset::new(spec.shape);
    let mut buf = vec![0.0; dim];
    for (label, center) in centers.iter().enumerate() {
        for i in 0..spec.train_per_class + spec.test_per_class {
            for ((b, c), g) in buf.iter_mut().zip(center).zip(&background) {
                *b = c + g + noise_dist.sample(&mut r);
            }
            let split = if i < spec.train_per_class {
                Split::Train
            } else {
                Split::Test
            };
            ds.push(&buf, label as ClassId, "real", split)?;
        }
    }
    Ok(ds)
}

/// Interleaved half-moons in the plane; classes `2k` and `2k+1` form one
/// pair, shifted by `3k` along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoonsSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn two_moons(spec: &MoonsSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || !spec.num_classes.is_multiple_of(2) {
        return Err(DiscoError::Config(vec![
            "dataset.num_classes: moons need a positive even class count".into(),
        ]));
    }
    let mut r = rng::stream(spec.seed, Stream::Dataset);
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| DiscoError::Config(vec![format!("dataset.noise: {e}")]))?;
    let mut ds = Dataset::new(SampleShape::flat(2));
    for label in 0..spec.num_classes {
        let pair = (label / 2) as f64;
        let upper = label % 2 == 0;
        for i in 0..spec.train_per_class + spec.test_per_class {
            let theta = r.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if upper {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let point = [
                x + 3.0 * pair + noise.sample(&mut r),
                y + noise.sample(&mut r),
            ];
            let split = if i < spec.train_per_class {
                Split::Train
            } else {
                Split::Test
            };
            ds.push(&point, label as ClassId, "real", split)?;
        }
    }
    Ok(ds)
}

/// The records of one task and split, plus the transform its samples go
/// through. Holds indices only; samples are produced on demand.
#[derive(Debug, Clone)]
pub struct TaskDatasetView {
    pub task_id: usize,
    pub split: Split,
    pub indices: Vec<usize>,
    pub transform: Option<DomainTransform>,
}

impl TaskDatasetView {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn sample(&self, dataset: &Dataset, position: usize) -> Result<Sample> {
        let index = self.indices[position];
        let raw = dataset.row(index);
        let features = match &self.transform {
            Some(t) => t.apply(raw, dataset.shape)?,
            None => raw.to_vec(),
        };
        Ok(Sample {
            features,
            label: dataset.labels[index],
            task_id: self.task_id,
            source_index: index,
        })
    }

    pub fn iter<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = Result<Sample>> + 'a {
        (0..self.len()).map(move |i| self.sample(dataset, i))
    }

    /// All samples stacked into a matrix together with their labels.
    pub fn to_matrix(&self, dataset: &Dataset) -> Result<(Array2<f64>, Vec<ClassId>)> {
        let dim = dataset.dim();
        let mut data = Vec::with_capacity(self.len() * dim);
        let mut labels = Vec::with_capacity(self.len());
        for sample in self.iter(dataset) {
            let sample = sample?;
            data.extend_from_slice(&sample.features);
            labels.push(sample.label);
        }
        let m = Array2::from_shape_vec((labels.len(), dim), data).expect("consistent sample width");
        Ok((m, labels))
    }
}

impl ContinualScenario {
    /// Records of task `t` restricted to its label set (and, when the task
    /// reads from a domain of the source, to that domain).
    ///
    /// Tasks with a synthetic transform draw from every record of their labels
    /// and apply the transform; tasks with only a domain tag filter the source
    /// by that tag.
    pub fn materialize_task<S: SampleSource + ?Sized>(
        &self,
        t: usize,
        source: &S,
        split: Split,
    ) -> Result<TaskDatasetView> {
        let task = self.task(t)?;
        let domain_filter = match (&task.domain_id, &task.transform_id) {
            (Some(domain), None) => Some(domain.as_str()),
            _ => None,
        };
        let labels: BTreeSet<ClassId> = task.label_set.iter().copied().collect();
        let mut indices = Vec::new();
        let mut present: BTreeMap<ClassId, usize> = BTreeMap::new();
        for i in 0..source.len() {
            let label = source.label(i);
            if !labels.contains(&label) || source.split(i) != split {
                continue;
            }
            if let Some(domain) = domain_filter {
                if source.domain(i) != domain {
                    continue;
                }
            }
            *present.entry(label).or_insert(0) += 1;
            indices.push(i);
        }
        let gaps: Vec<(ClassId, String)> = labels
            .iter()
            .filter(|l| !present.contains_key(l))
            .map(|&l| (l, domain_filter.unwrap_or("*").to_string()))
            .collect();
        if !gaps.is_empty() {
            return Err(DiscoError::MissingData(gaps));
        }
        let transform = task
            .transform_id
            .as_deref()
            .map(|id| DomainTransform::new(id, self.seed()))
            .transpose()?;
        Ok(TaskDatasetView {
            task_id: t,
            split,
            indices,
            transform,
        })
    }
}
