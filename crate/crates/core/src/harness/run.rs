use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{DomainSource, ExperimentConfig};
use super::report::{summarize_run_dir, RunSummary};
use crate::engine::Trainer;
use crate::error::{DiscoError, Result};
use crate::scenario::ContinualScenario;

/// Resolved config copy inside a run directory.
pub const CONFIG_FILE: &str = "config.txt";
/// Scenario document inside a run directory.
pub const SCENARIO_FILE: &str = "scenario.txt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Which scenario a job trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// The scenario the config describes.
    Configured,
    /// Same label partition with every task in the first domain of the order.
    SingleDomain,
}

/// One training run to execute.
#[derive(Debug, Clone)]
pub struct Job {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub dir: PathBuf,
    pub arm: Arm,
}

impl Job {
    pub fn new(config: &ExperimentConfig, seed: u64, dir: PathBuf) -> Self {
        Job {
            config: config.for_seed(seed),
            seed,
            dir,
            arm: Arm::Configured,
        }
    }
}

pub fn seed_dir(parent: &Path, seed: u64) -> PathBuf {
    parent.join(format!("seed_{seed}"))
}

/// Scenario a job trains on, built from its config and seed.
pub fn job_scenario(job: &Job, dataset: &crate::scenario::Dataset) -> Result<ContinualScenario> {
    match job.arm {
        Arm::Configured => job.config.build_scenario(dataset, job.seed),
        Arm::SingleDomain => {
            let s = &job.config.scenario;
            if s.domains == DomainSource::None || s.domain_order.is_empty() {
                return Err(DiscoError::Config(vec![
                    "scenario.domain_order: a domain order is required for the single-domain arm"
                        .into(),
                ]));
            }
            job.config
                .base_scenario(dataset, job.seed)?
                .single_domain_counterpart(&s.domain_order, s.domains == DomainSource::Synthesize)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DiscoError::io(path, e))
}

/// Train one run and write its directory: the resolved config, the
/// scenario, every engine artifact and `summary.json`.
pub fn execute(job: &Job) -> Result<RunSummary> {
    let config = &job.config;
    let dataset = config.build_dataset(job.seed)?;
    let scenario = job_scenario(job, &dataset)?;
    let trainer = Trainer::new(
        &config.train,
        &config.model.backbone,
        config.model.projection_dim,
        &scenario,
        &dataset,
    )?;
    log::info!("run {} (seed {})", job.dir.display(), job.seed);
    let record = trainer.run()?;
    record.write(&job.dir)?;
    write(&job.dir.join(CONFIG_FILE), &config.to_text())?;
    write(&job.dir.join(SCENARIO_FILE), &scenario.to_text())?;
    let summary = summarize_run_dir(&job.dir)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&job.dir.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}

/// Run jobs on up to `workers` threads. Results come back in job order; each
/// run is deterministic regardless of scheduling.
pub fn execute_all(jobs: &[Job], workers: usize) -> Vec<Result<RunSummary>> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(execute).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let outcome = execute(job);
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Train the config once per seed under `<root>/<name>/seed_<s>/`.
pub fn run(config: &ExperimentConfig, root: &Path, seeds: &[u64]) -> Result<Vec<RunSummary>> {
    config.validate().map_err(DiscoError::Config)?;
    let parent = root.join(&config.name);
    let jobs: Vec<Job> = seeds
        .iter()
        .map(|&s| Job::new(config, s, seed_dir(&parent, s)))
        .collect();
    execute_all(&jobs, config.jobs).into_iter().collect()
}
