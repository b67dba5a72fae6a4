//! Class-incremental task sequences, with or without a per-task domain shift.
//!
//! A [`ContinualScenario`] is an immutable ordered list of [`TaskSpec`]s whose
//! label sets are pairwise disjoint. Scenarios are built by [`split_even`] or
//! [`split_base_increment`]; [`ContinualScenario::attach_domains`] and
//! [`ContinualScenario::attach_synthetic_domains`] turn a plain class-incremental
//! scenario into its domain-shifted counterpart.

mod dataset;
mod manifest;
mod transform;

pub use dataset::{
    gaussian_blobs, two_moons, BlobSpec, Dataset, MoonsSpec, Sample, SampleShape, SampleSource,
    Split, TaskDatasetView,
};
pub use manifest::{DatasetManifest, ManifestRecord};
pub use transform::{DomainTransform, TransformKind, TRANSFORM_NAMES};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DiscoError, Result};
use crate::rng::{self, Stream};

pub type ClassId = u32;

pub const SCENARIO_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScenarioMode {
    Cil,
    Cild,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// One-based task index.
    pub task_id: usize,
    pub label_set: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
}

impl TaskSpec {
    pub fn contains(&self, label: ClassId) -> bool {
        self.label_set.binary_search(&label).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinualScenario {
    scenario_format: u32,
    seed: u64,
    mode: ScenarioMode,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    domain_order: Vec<String>,
    tasks: Vec<TaskSpec>,
}

/// Split `num_classes` classes into `num_tasks` equally sized tasks after a
/// seeded permutation of the class ids.
pub fn split_even(num_classes: usize, num_tasks: usize, seed: u64) -> Result<ContinualScenario> {
    if num_tasks < 1 {
        return Err(DiscoError::InvalidSplit(
            "num_tasks must be at least 1".into(),
        ));
    }
    if num_classes == 0 || !num_classes.is_multiple_of(num_tasks) {
        return Err(DiscoError::InvalidSplit(format!(
            "{num_classes} classes cannot be split evenly into {num_tasks} tasks"
        )));
    }
    let sizes = vec![num_classes / num_tasks; num_tasks];
    ContinualScenario::from_sizes(num_classes, &sizes, seed)
}

/// `base` classes in the first task, the remainder split evenly over
/// `increments` further tasks (the "B50-10" style protocol).
pub fn split_base_increment(
    num_classes: usize,
    base: usize,
    increments: usize,
    seed: u64,
) -> Result<ContinualScenario> {
    if base < 1 {
        return Err(DiscoError::InvalidSplit("base must be at least 1".into()));
    }
    if base > num_classes {
        return Err(DiscoError::InvalidSplit(format!(
            "base {base} exceeds {num_classes} classes"
        )));
    }
    let rest = num_classes - base;
    let mut sizes = vec![base];
    if increments == 0 {
        if rest != 0 {
            return Err(DiscoError::InvalidSplit(format!(
                "{rest} classes remain after the base task but no increments were requested"
            )));
        }
    } else {
        if !rest.is_multiple_of(increments) || rest == 0 {
            return Err(DiscoError::InvalidSplit(format!(
                "{rest} remaining classes cannot be split evenly into {increments} increments"
            )));
        }
        sizes.extend(std::iter::repeat_n(rest / increments, increments));
    }
    ContinualScenario::from_sizes(num_classes, &sizes, seed)
}

impl ContinualScenario {
    fn from_sizes(num_classes: usize, sizes: &[usize], seed: u64) -> Result<Self> {
        let mut classes: Vec<ClassId> = (0..num_classes as ClassId).collect();
        classes.shuffle(&mut rng::stream(seed, Stream::ClassPermutation));
        let mut offset = 0;
        let tasks = sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| {
                let mut label_set = classes[offset..offset + size].to_vec();
                label_set.sort_unstable();
                offset += size;
                TaskSpec {
                    task_id: i + 1,
                    label_set,
                    domain_id: None,
                    transform_id: None,
                }
            })
            .collect();
        let scenario = ContinualScenario {
            scenario_format: SCENARIO_FORMAT,
            seed,
            mode: ScenarioMode::Cil,
            num_classes,
            domain_order: Vec::new(),
            tasks,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Build a scenario from explicit label sets, e.g. for fixtures.
    pub fn from_label_sets(label_sets: Vec<Vec<ClassId>>, seed: u64) -> Result<Self> {
        let num_classes = label_sets.iter().map(Vec::len).sum();
        let tasks = label_sets
            .into_iter()
            .enumerate()
            .map(|(i, mut label_set)| {
                label_set.sort_unstable();
                TaskSpec {
                    task_id: i + 1,
                    label_set,
                    domain_id: None,
                    transform_id: None,
                }
            })
            .collect();
        let scenario = ContinualScenario {
            scenario_format: SCENARIO_FORMAT,
            seed,
            mode: ScenarioMode::Cil,
            num_classes,
            domain_order: Vec::new(),
            tasks,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> ScenarioMode {
        self.mode
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn domain_order(&self) -> &[String] {
        &self.domain_order
    }

    /// Task by one-based index.
    pub fn task(&self, t: usize) -> Result<&TaskSpec> {
        if t == 0 || t > self.tasks.len() {
            return Err(DiscoError::TaskOutOfRange {
                task: t,
                num_tasks: self.tasks.len(),
            });
        }
        Ok(&self.tasks[t - 1])
    }

    /// Union of the label sets of tasks `1..=t`.
    pub fn cumulative_labels(&self, t: usize) -> Result<BTreeSet<ClassId>> {
        self.task(t)?;
        Ok(self.tasks[..t]
            .iter()
            .flat_map(|task| task.label_set.iter().copied())
            .collect())
    }

    /// One-based task owning `label`, if any.
    pub fn task_of(&self, label: ClassId) -> Option<usize> {
        self.tasks
            .iter()
            .find(|task| task.contains(label))
            .map(|task| task.task_id)
    }

    /// Domain-shifted counterpart in which each task draws samples tagged with
    /// its own domain from the source ("splitting" an existing multi-domain set).
    pub fn attach_domains(&self, domain_order: &[String]) -> Result<Self> {
        self.check_domain_order(domain_order)?;
        let mut out = self.clone();
        for (task, domain) in out.tasks.iter_mut().zip(domain_order) {
            task.domain_id = Some(domain.clone());
            task.transform_id = None;
        }
        out.domain_order = domain_order.to_vec();
        out.mode = ScenarioMode::Cild;
        out.validate()?;
        Ok(out)
    }

    /// Domain-shifted counterpart in which each task's samples are synthesized
    /// by the registered transform named by its domain tag.
    pub fn attach_synthetic_domains(&self, domain_order: &[String]) -> Result<Self> {
        self.check_domain_order(domain_order)?;
        for domain in domain_order {
            TransformKind::from_name(domain)?;
        }
        let mut out = self.attach_domains(domain_order)?;
        for task in &mut out.tasks {
            task.transform_id = task.domain_id.clone();
        }
        Ok(out)
    }

    /// Class-incremental counterpart of a domain order: every task lives in the
    /// first domain of the order, keeping the label partition.
    pub fn single_domain_counterpart(
        &self,
        domain_order: &[String],
        synthetic: bool,
    ) -> Result<Self> {
        self.check_domain_order(domain_order)?;
        let first = &domain_order[0];
        if synthetic {
            TransformKind::from_name(first)?;
        }
        let mut out = self.strip_domains();
        for task in &mut out.tasks {
            task.domain_id = Some(first.clone());
            task.transform_id = synthetic.then(|| first.clone());
        }
        out.domain_order = domain_order.to_vec();
        out.validate()?;
        Ok(out)
    }

    /// Drop all domain information, recovering the plain class-incremental
    /// scenario with the same label partition.
    pub fn strip_domains(&self) -> Self {
        let mut out = self.clone();
        for task in &mut out.tasks {
            task.domain_id = None;
            task.transform_id = None;
        }
        out.domain_order.clear();
        out.mode = ScenarioMode::Cil;
        out
    }

    fn check_domain_order(&self, domain_order: &[String]) -> Result<()> {
        if domain_order.len() != self.tasks.len() {
            return Err(DiscoError::InvalidScenario(format!(
                "domain order has {} entries but the scenario has {} tasks",
                domain_order.len(),
                self.tasks.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for domain in domain_order {
            if !seen.insert(domain.as_str()) {
                return Err(DiscoError::InvalidScenario(format!(
                    "duplicate domain tag `{domain}` in domain order"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario_format != SCENARIO_FORMAT {
            return Err(DiscoError::InvalidScenario(format!(
                "unsupported scenario_format {}",
                self.scenario_format
            )));
        }
        if self.tasks.is_empty() {
            return Err(DiscoError::InvalidScenario("no tasks".into()));
        }
        let mut owner: BTreeMap<ClassId, usize> = BTreeMap::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if task.task_id != i + 1 {
                return Err(DiscoError::InvalidScenario(format!(
                    "task at position {} has task_id {}",
                    i + 1,
                    task.task_id
                )));
            }
            if task.label_set.is_empty() {
                return Err(DiscoError::InvalidScenario(format!(
                    "task {} has an empty label set",
                    task.task_id
                )));
            }
            if task.label_set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DiscoError::InvalidScenario(format!(
                    "task {} label set is not strictly ordered",
                    task.task_id
                )));
            }
            for &label in &task.label_set {
                if let Some(prev) = owner.insert(label, task.task_id) {
                    return Err(DiscoError::InvalidScenario(format!(
                        "class {label} appears in tasks {prev} and {}",
                        task.task_id
                    )));
                }
            }
        }
        if owner.len() != self.num_classes {
            return Err(DiscoError::InvalidScenario(format!(
                "label sets cover {} classes, expected {}",
                owner.len(),
                self.num_classes
            )));
        }
        match self.mode {
            ScenarioMode::Cil => {
                let first = &self.tasks[0].transform_id;
                if self.tasks.iter().any(|task| &task.transform_id != first) {
                    return Err(DiscoError::InvalidScenario(
                        "class-incremental scenario mixes domain transforms".into(),
                    ));
                }
            }
            ScenarioMode::Cild => {
                for pair in self.tasks.windows(2) {
                    if pair[0].domain_id.is_none() || pair[0].domain_id == pair[1].domain_id {
                        return Err(DiscoError::InvalidScenario(format!(
                            "tasks {} and {} must carry distinct domains",
                            pair[0].task_id, pair[1].task_id
                        )));
                    }
                }
                if self.tasks.iter().any(|task| task.domain_id.is_none()) {
                    return Err(DiscoError::InvalidScenario(
                        "domain-shifted scenario has a task without a domain".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Plain-text key-value document, stamped with `scenario_format`.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let scenario: ContinualScenario =
            toml::from_str(text).map_err(|e| DiscoError::InvalidScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }
}
