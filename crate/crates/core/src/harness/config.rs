//! Experiment configuration: a TOML document with a `format_version` field,
//! resolved to a fully concrete form before anything runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::TrainConfig;
use crate::error::{DiscoError, Result};
use crate::model::BackboneSpec;
use crate::scenario::{
    gaussian_blobs, split_base_increment, split_even, two_moons, BlobSpec, ContinualScenario,
    Dataset, DatasetManifest, MoonsSpec, SampleShape,
};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable that overrides the output root of every command.
pub const OUTPUT_ENV: &str = "DISCO_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// One run per seed; reports average over them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Concurrent runs for multi-seed, sweep and compare commands.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Blobs(BlobsConfig),
    Moons(MoonsConfig),
    Manifest(ManifestConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub num_classes: usize,
    /// `[dim]` or `[channels, height, width]`.
    pub shape: Vec<usize>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub center_scale: f64,
    pub background: f64,
    pub noise: f64,
    /// Fixed data seed; when absent each run uses its own seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            num_classes: 10,
            shape: vec![16],
            train_per_class: 50,
            test_per_class: 20,
            center_scale: 3.0,
            background: 0.0,
            noise: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        MoonsConfig {
            num_classes: 4,
            train_per_class: 100,
            test_per_class: 50,
            noise: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestConfig {
    pub path: PathBuf,
    /// Directory image paths are relative to; defaults to the manifest's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// `[channels, height, width]` images are resized to.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    #[default]
    Even,
    BaseIncrement,
}

/// Where per-task domains come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainSource {
    /// Plain class-incremental scenario.
    #[default]
    None,
    /// Each task's samples pass through the transform named by its domain.
    Synthesize,
    /// Each task reads the records tagged with its domain.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub split: SplitKind,
    /// Task count for `even`.
    pub num_tasks: usize,
    /// First-task size for `base_increment`.
    pub base: usize,
    /// Number of tasks after the base task for `base_increment`.
    pub increments: usize,
    pub domains: DomainSource,
    pub domain_order: Vec<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            split: SplitKind::Even,
            num_tasks: 5,
            base: 0,
            increments: 0,
            domains: DomainSource::None,
            domain_order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneSpec::default(),
            projection_dim: 32,
        }
    }
}

/// Axes of a loss-weight sweep; an empty axis keeps the configured weight.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_tcon: Vec<f64>,
    pub lambda_ccon: Vec<f64>,
    pub lambda_ccd: Vec<f64>,
}

fn shape_from(dims: &[usize], field: &str) -> std::result::Result<SampleShape, String> {
    match dims {
        [d] if *d > 0 => Ok(SampleShape::flat(*d)),
        [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Ok(SampleShape::new(*c, *h, *w)),
        _ => Err(format!(
            "{field}: expected [dim] or [channels, height, width] with positive entries, got {dims:?}"
        )),
    }
}

impl ExperimentConfig {
    /// Parse and validate a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| DiscoError::Config(vec![e.to_string()]))?;
        config.validate().map_err(DiscoError::Config)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            DiscoError::Config(vec![format!("{}: cannot read config: {e}", path.display())])
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            DiscoError::Config(errors) => DiscoError::Config(
                errors
                    .into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })?;
        // Manifest paths are relative to the config file.
        if let DatasetConfig::Manifest(m) = &mut config.dataset {
            if let Some(parent) = path.parent() {
                if m.path.is_relative() {
                    m.path = parent.join(&m.path);
                }
                if let Some(root) = &mut m.root {
                    if root.is_relative() {
                        *root = parent.join(&*root);
                    }
                }
            }
        }
        Ok(config)
    }

    /// The fully concrete document; resolving it again gives the same text.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every field-level problem, one message each.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.format_version != FORMAT_VERSION {
            errors.push(format!(
                "format_version: unsupported version {}, expected {FORMAT_VERSION}",
                self.format_version
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            errors.push(format!(
                "name: must be a non-empty plain name, got {:?}",
                self.name
            ));
        }
        if self.seeds.is_empty() {
            errors.push("seeds: at least one seed is required".into());
        }
        if self.jobs == 0 {
            errors.push("jobs: must be at least 1".into());
        }
        let (num_classes, shape) = match &self.dataset {
            DatasetConfig::Blobs(b) => {
                if b.num_classes == 0 {
                    errors.push("dataset.num_classes: must be at least 1".into());
                }
                if b.train_per_class == 0 || b.test_per_class == 0 {
                    errors.push(
                        "dataset.train_per_class / test_per_class: must be at least 1".into(),
                    );
                }
                for (name, v) in [
                    ("center_scale", b.center_scale),
                    ("noise", b.noise),
                    ("background", b.background),
                ] {
                    if !v.is_finite() || v < 0.0 {
                        errors.push(format!(
                            "dataset.{name}: must be a finite non-negative number, got {v}"
                        ));
                    }
                }
                (
                    Some(b.num_classes),
                    shape_from(&b.shape, "dataset.shape")
                        .map_err(|e| errors.push(e))
                        .ok(),
                )
            }
            DatasetConfig::Moons(m) => {
                if m.num_classes == 0 || m.num_classes % 2 != 0 {
                    errors.push(format!(
                        "dataset.num_classes: must be a positive even number, got {}",
                        m.num_classes
                    ));
                }
                if m.train_per_class == 0 || m.test_per_class == 0 {
                    errors.push(
                        "dataset.train_per_class / test_per_class: must be at least 1".into(),
                    );
                }
                (Some(m.num_classes), Some(SampleShape::flat(2)))
            }
            DatasetConfig::Manifest(m) => {
                let shape = shape_from(&m.shape, "dataset.shape")
                    .map_err(|e| errors.push(e))
                    .ok();
                if shape.is_some() && m.shape.len() != 3 {
                    errors.push(
                        "dataset.shape: manifest images need [channels, height, width]".into(),
                    );
                }
                (None, shape)
            }
        };
        let s = &self.scenario;
        match s.split {
            SplitKind::Even => {
                if s.num_tasks == 0 {
                    errors.push("scenario.num_tasks: must be at least 1".into());
                } else if let Some(n) = num_classes {
                    if n % s.num_tasks != 0 {
                        errors.push(format!(
                            "scenario.num_tasks: {n} classes do not split evenly into {} tasks",
                            s.num_tasks
                        ));
                    }
                }
            }
            SplitKind::BaseIncrement => {
                if s.base == 0 {
                    errors.push("scenario.base: must be at least 1 for base_increment".into());
                }
            }
        }
        if s.domains != DomainSource::None && s.domain_order.is_empty() {
            errors.push(
                "scenario.domain_order: required when scenario.domains is not \"none\"".into(),
            );
        }
        if s.domains == DomainSource::Synthesize {
            for d in &s.domain_order {
                if crate::scenario::TransformKind::from_name(d).is_err() {
                    errors.push(format!(
                        "scenario.domain_order: unknown transform {d:?} (known: {})",
                        crate::scenario::TRANSFORM_NAMES.join(", ")
                    ));
                }
            }
        }
        if self.model.projection_dim == 0 {
            errors.push("model.projection_dim: must be at least 1".into());
        }
        if let Some(shape) = shape {
            if let Err(e) = self.model.backbone.validate(shape) {
                errors.push(e);
            }
        }
        if let Err(mut e) = self.train.validate() {
            errors.append(&mut e);
        }
        for (name, axis) in [
            ("lambda_tcon", &self.sweep.lambda_tcon),
            ("lambda_ccon", &self.sweep.lambda_ccon),
            ("lambda_ccd", &self.sweep.lambda_ccd),
        ] {
            if axis.iter().any(|v| !v.is_finite() || *v < 0.0) {
                errors.push(format!(
                    "sweep.{name}: weights must be finite and non-negative"
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Copy with the train seed set to `seed`.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.train.seed = seed;
        c.seeds = vec![seed];
        c
    }

    pub fn shape(&self) -> Result<SampleShape> {
        let dims = match &self.dataset {
            DatasetConfig::Blobs(b) => &b.shape,
            DatasetConfig::Moons(_) => return Ok(SampleShape::flat(2)),
            DatasetConfig::Manifest(m) => &m.shape,
        };
        shape_from(dims, "dataset.shape").map_err(|e| DiscoError::Config(vec![e]))
    }

    /// Build the dataset for one run seed.
    pub fn build_dataset(&self, seed: u64) -> Result<Dataset> {
        let shape = self.shape()?;
        match &self.dataset {
            DatasetConfig::Blobs(b) => gaussian_blobs(&BlobSpec {
                num_classes: b.num_classes,
                shape,
                train_per_class: b.train_per_class,
                test_per_class: b.test_per_class,
                center_scale: b.center_scale,
                background: b.background,
                noise: b.noise,
                seed: b.seed.unwrap_or(seed),
            }),
            DatasetConfig::Moons(m) => two_moons(&MoonsSpec {
                num_classes: m.num_classes,
                train_per_class: m.train_per_class,
                test_per_class: m.test_per_class,
                noise: m.noise,
                seed: m.seed.unwrap_or(seed),
            }),
            DatasetConfig::Manifest(m) => {
                let manifest = DatasetManifest::load(&m.path)?;
                let root = match &m.root {
                    Some(r) => r.clone(),
                    None => m.path.parent().map(Path::to_path_buf).unwrap_or_default(),
                };
                Dataset::from_manifest(&manifest, &root, shape)
            }
        }
    }

    /// Label partition for one seed, without domains.
    pub fn base_scenario(&self, dataset: &Dataset, seed: u64) -> Result<ContinualScenario> {
        let num_classes = match &self.dataset {
            DatasetConfig::Blobs(b) => b.num_classes,
            DatasetConfig::Moons(m) => m.num_classes,
            DatasetConfig::Manifest(_) => {
                let labels: std::collections::BTreeSet<_> =
                    dataset.labels.iter().copied().collect();
                let n = labels.len();
                if labels.iter().copied().ne(0..n as u32) {
                    return Err(DiscoError::Config(vec![format!(
                        "dataset.path: manifest labels must be 0..{n} without gaps"
                    )]));
                }
                n
            }
        };
        let s = &self.scenario;
        match s.split {
            SplitKind::Even => split_even(num_classes, s.num_tasks, seed),
            SplitKind::BaseIncrement => {
                split_base_increment(num_classes, s.base, s.increments, seed)
            }
        }
    }

    /// The configured scenario for one seed: plain, or with domains attached.
    pub fn build_scenario(&self, dataset: &Dataset, seed: u64) -> Result<ContinualScenario> {
        let base = self.base_scenario(dataset, seed)?;
        let order = &self.scenario.domain_order;
        match self.scenario.domains {
            DomainSource::None => Ok(base),
            DomainSource::Synthesize => base.attach_synthetic_domains(order),
            DomainSource::Split => base.attach_domains(order),
        }
    }

    /// `--out`, then `DISCO_OUT`, then the configured directory.
    pub fn output_root(&self, cli_out: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_out {
            return p.to_path_buf();
        }
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }
}
