use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::run::{CONFIG_FILE, SCENARIO_FILE};
use crate::engine::{features_csv, FeatureSpace};
use crate::error::{DiscoError, Result};
use crate::model::ModelBundle;
use crate::scenario::{ContinualScenario, Split};

/// Recompute test-set features of a finished run from its saved model,
/// resolved config and scenario, and write them as `task_id,label,f0..`.
/// Defaults to `<run>/features/export_<space>.csv`.
pub fn export_features(run_dir: &Path, space: FeatureSpace, out: Option<&Path>) -> Result<PathBuf> {
    if space == FeatureSpace::None {
        return Err(DiscoError::Config(vec![
            "--space: choose raw or projected".into()
        ]));
    }
    let read = |name: &str| {
        let path = run_dir.join(name);
        fs::read_to_string(&path).map_err(|e| DiscoError::io(path, e))
    };
    let config = ExperimentConfig::parse(&read(CONFIG_FILE)?)?;
    let scenario = ContinualScenario::from_text(&read(SCENARIO_FILE)?)?;
    let bundle = ModelBundle::load(&run_dir.join("model"))?;
    let dataset = config.build_dataset(config.train.seed)?;
    let mut tasks = Vec::with_capacity(scenario.num_tasks());
    for t in 1..=scenario.num_tasks() {
        let view = scenario.materialize_task(t, &dataset, Split::Test)?;
        tasks.push((t, view.to_matrix(&dataset)?));
    }
    let text = features_csv(
        &bundle,
        space,
        tasks
            .iter()
            .map(|(t, (inputs, labels))| (*t, inputs.view(), labels.as_slice())),
    );
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let name = match space {
                FeatureSpace::Projected => "export_projected.csv",
                _ => "export_raw.csv",
            };
            run_dir.join("features").join(name)
        }
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DiscoError::io(parent, e))?;
    }
    fs::write(&path, text).map_err(|e| DiscoError::io(&path, e))?;
    Ok(path)
}
