use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{CONFIG_FILE, SCENARIO_FILE};
use crate::engine::{read_logits_csv, snapshot_path, ACCURACY_FILE, LOGITS_FILE};
use crate::error::{DiscoError, Result};
use crate::metrics::{
    argmax, average_accuracy, forgetting_measure, initial_accuracy, intra_task_accuracy, piv_pfts,
    task_inference_accuracy, AccuracyMatrix, Prediction,
};
use crate::model::ParameterSnapshot;
use crate::rng::digest_hex;
use crate::scenario::{ContinualScenario, ScenarioMode};

pub const REPORT_FILE: &str = "report.json";

/// Metrics of one run directory, recomputed from its files alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScenarioMode>,
    /// SHA-256 of the resolved config copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// SHA-256 of the accuracy matrix file.
    pub accuracy_hash: String,
    pub num_tasks: usize,
    pub metrics: MetricRow,
    /// `AA_k` for `k = 1..=T`.
    pub aa_curve: Vec<f64>,
    /// Accuracy on task 1 after each task.
    pub first_task_curve: Vec<f64>,
    /// `f_j` for `j = 1..T-1`.
    pub forgetting: Vec<f64>,
    /// IS per transition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interference: Vec<f64>,
    /// ITA per task of the final model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intra_task: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One table row. Metrics that could not be computed are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub aa: Option<f64>,
    pub fm: Option<f64>,
    pub ia: Option<f64>,
    pub piv: Option<f64>,
    pub pfts: Option<f64>,
    pub tia: Option<f64>,
    /// Mean ITA over tasks.
    pub ita: Option<f64>,
}

pub const METRIC_NAMES: [&str; 7] = ["AA", "FM", "IA", "PIV", "PFTS", "TIA", "ITA"];

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.aa, self.fm, self.ia, self.piv, self.pfts, self.tia, self.ita,
        ]
    }

    fn from_values(v: [Option<f64>; 7]) -> Self {
        MetricRow {
            aa: v[0],
            fm: v[1],
            ia: v[2],
            piv: v[3],
            pfts: v[4],
            tia: v[5],
            ita: v[6],
        }
    }

    /// Column-wise mean; a column is `None` unless every row has it.
    pub fn mean(rows: &[MetricRow]) -> MetricRow {
        Self::reduce(rows, |xs| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Column-wise population standard deviation.
    pub fn std(rows: &[MetricRow]) -> MetricRow {
        Self::reduce(rows, |xs| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
        })
    }

    fn reduce(rows: &[MetricRow], f: impl Fn(&[f64]) -> f64) -> MetricRow {
        let mut out = [None; 7];
        if rows.is_empty() {
            return MetricRow::default();
        }
        for (i, slot) in out.iter_mut().enumerate() {
            let col: Option<Vec<f64>> = rows.iter().map(|r| r.values()[i]).collect();
            *slot = col.map(|xs| f(&xs));
        }
        Self::from_values(out)
    }
}

pub fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DiscoError::io(path, e))
}

fn warn(warnings: &mut Vec<String>, dir: &Path, message: String) {
    log::warn!("{}: {message}", dir.display());
    warnings.push(message);
}

/// Compute every metric the files under `dir` support. Only the accuracy
/// matrix is required; missing snapshots drop PIV/PFTS and missing logits
/// or scenario drop TIA/ITA, each with a warning.
pub fn summarize_run_dir(dir: &Path) -> Result<RunSummary> {
    let acc_text = read(&dir.join(ACCURACY_FILE))?;
    let accuracy = AccuracyMatrix::from_csv(&acc_text)
        .map_err(|e| DiscoError::artifact(dir.join(ACCURACY_FILE), e.to_string()))?;
    let t = accuracy.num_tasks();
    let mut warnings = Vec::new();
    let mut metrics = MetricRow::default();

    let (aa_curve, aa) = average_accuracy(&accuracy);
    metrics.aa = Some(aa);
    metrics.ia = Some(initial_accuracy(&accuracy));
    let forgetting = match forgetting_measure(&accuracy) {
        Ok((per, fm)) => {
            metrics.fm = Some(fm);
            per
        }
        Err(_) => Vec::new(),
    };
    let first_task_curve = accuracy.rows().iter().map(|r| r[0]).collect();

    let (seed, config_hash) = match fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(text) => {
            let seed = ExperimentConfig::parse(&text).ok().map(|c| c.train.seed);
            (seed, Some(digest_hex(text.as_bytes())))
        }
        Err(_) => (None, None),
    };

    let mut interference = Vec::new();
    let snapshot_paths: Vec<PathBuf> = (0..=t).map(|k| snapshot_path(dir, k)).collect();
    if let Some(missing) = snapshot_paths.iter().find(|p| !p.exists()) {
        warn(
            &mut warnings,
            dir,
            format!("snapshot {} missing; PIV/PFTS omitted", missing.display()),
        );
    } else if t + 1 < 3 {
        warn(
            &mut warnings,
            dir,
            "PIV/PFTS need at least three snapshots; omitted".into(),
        );
    } else {
        let snapshots = snapshot_paths
            .iter()
            .map(|p| ParameterSnapshot::load(p).map(|(s, _)| s.values))
            .collect::<Result<Vec<_>>>()?;
        let r = piv_pfts(&snapshots)?;
        metrics.piv = Some(r.piv);
        metrics.pfts = Some(r.pfts);
        interference = r.interference;
    }

    let scenario = match fs::read_to_string(dir.join(SCENARIO_FILE)) {
        Ok(text) => Some(ContinualScenario::from_text(&text)?),
        Err(_) => None,
    };
    let mut intra_task = Vec::new();
    let logits_path = dir.join(LOGITS_FILE);
    match (&scenario, logits_path.exists()) {
        (Some(scenario), true) => {
            let (head, tasks) = read_logits_csv(&logits_path)?;
            let mut predictions = Vec::new();
            for task in &tasks {
                for (row, &label) in task.logits.rows().into_iter().zip(&task.labels) {
                    let best = argmax(row.iter().copied()).ok_or_else(|| {
                        DiscoError::artifact(&logits_path, "empty classifier head")
                    })?;
                    predictions.push(Prediction {
                        label,
                        predicted: head[best],
                    });
                }
                intra_task.push(intra_task_accuracy(
                    task.logits.view(),
                    &head,
                    &task.labels,
                    scenario,
                    task.task_id,
                )?);
            }
            metrics.tia = Some(task_inference_accuracy(&predictions, scenario)?);
            if !intra_task.is_empty() {
                metrics.ita = Some(intra_task.iter().sum::<f64>() / intra_task.len() as f64);
            }
        }
        _ => warn(
            &mut warnings,
            dir,
            "final logits or scenario missing; TIA/ITA omitted".into(),
        ),
    }

    Ok(RunSummary {
        run_dir: dir.to_path_buf(),
        seed,
        mode: scenario.map(|s| s.mode()),
        config_hash,
        accuracy_hash: digest_hex(acc_text.as_bytes()),
        num_tasks: t,
        metrics,
        aa_curve,
        first_task_curve,
        forgetting,
        interference,
        intra_task,
        warnings,
    })
}

/// Aggregate over runs: per-run rows plus mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub mean: MetricRow,
    pub std: MetricRow,
    /// Mean `AA_k` curve when every run has the same task count.
    pub aa_curve: Vec<f64>,
    pub first_task_curve: Vec<f64>,
}

fn mean_curve(curves: &[&[f64]]) -> Vec<f64> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    if curves.iter().any(|c| c.len() != first.len()) {
        return Vec::new();
    }
    (0..first.len())
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn run_label(s: &RunSummary) -> String {
    s.run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| s.run_dir.display().to_string())
}

impl Report {
    pub fn from_runs(runs: Vec<RunSummary>) -> Self {
        let rows: Vec<MetricRow> = runs.iter().map(|r| r.metrics).collect();
        let aa: Vec<&[f64]> = runs.iter().map(|r| r.aa_curve.as_slice()).collect();
        let first: Vec<&[f64]> = runs.iter().map(|r| r.first_task_curve.as_slice()).collect();
        Report {
            mean: MetricRow::mean(&rows),
            std: MetricRow::std(&rows),
            aa_curve: mean_curve(&aa),
            first_task_curve: mean_curve(&first),
            runs,
        }
    }

    /// Plain-text table: one row per run, then the mean.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, MetricRow)> = self
            .runs
            .iter()
            .map(|r| (run_label(r), r.metrics))
            .collect();
        if self.runs.len() > 1 {
            rows.push(("mean".into(), self.mean));
            rows.push(("std".into(), self.std));
        }
        render_table(
            "run",
            &rows
                .into_iter()
                .map(|(name, m)| (name, m.values().map(format_cell).to_vec()))
                .collect::<Vec<_>>(),
        )
    }

    /// Write `report.json`, `report.csv`, `aa_curve.csv` and
    /// `forgetting.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DiscoError::io(dir, e))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| DiscoError::io(&path, e))
        };
        put(
            REPORT_FILE,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )?;

        let mut csv = format!("run,{}\n", METRIC_NAMES.join(","));
        let mut push_row = |name: &str, m: &MetricRow| {
            let cells: Vec<String> = m
                .values()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            let _ = writeln!(csv, "{name},{}", cells.join(","));
        };
        for r in &self.runs {
            push_row(&run_label(r), &r.metrics);
        }
        push_row("mean", &self.mean);
        put("report.csv", csv)?;

        let mut curves = String::from("run,k,aa_k,first_task\n");
        for r in &self.runs {
            for (k, (aa, first)) in r.aa_curve.iter().zip(&r.first_task_curve).enumerate() {
                let _ = writeln!(curves, "{},{},{aa},{first}", run_label(r), k + 1);
            }
        }
        put("aa_curve.csv", curves)?;

        let mut forgetting = String::from("run,task,forgetting\n");
        for r in &self.runs {
            for (j, f) in r.forgetting.iter().enumerate() {
                let _ = writeln!(forgetting, "{},{},{f}", run_label(r), j + 1);
            }
        }
        put("forgetting.csv", forgetting)
    }
}

/// Fixed-width text table with the metric columns.
pub fn render_table(first_column: &str, rows: &[(String, Vec<String>)]) -> String {
    let mut header = vec![first_column.to_string()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for (name, cells) in rows {
        widths[0] = widths[0].max(name.chars().count());
        for (i, c) in cells.iter().enumerate() {
            widths[i + 1] = widths[i + 1].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(String::as_str).collect());
    for (name, cells) in rows {
        let mut all = vec![name.as_str()];
        all.extend(cells.iter().map(String::as_str));
        out.push_str(&line(all));
    }
    out
}

/// Run directories under `path`: `path` itself when it holds an accuracy
/// matrix, otherwise its `seed_*` children in seed order.
pub fn expand_run_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(ACCURACY_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| DiscoError::io(path, e))?;
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| DiscoError::io(path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse().ok()) {
            if entry.path().join(ACCURACY_FILE).is_file() {
                seeds.push((seed, entry.path()));
            }
        }
    }
    if seeds.is_empty() {
        return Err(DiscoError::artifact(
            path,
            format!("no {ACCURACY_FILE} here and no seed_* run directories below"),
        ));
    }
    seeds.sort();
    Ok(seeds.into_iter().map(|(_, p)| p).collect())
}

/// Summarize every run directory reachable from `paths`.
pub fn report(paths: &[PathBuf]) -> Result<Report> {
    let mut runs = Vec::new();
    for p in paths {
        for dir in expand_run_dirs(p)? {
            runs.push(summarize_run_dir(&dir)?);
        }
    }
    Ok(Report::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_needs_every_row() {
        let a = MetricRow {
            aa: Some(50.0),
            piv: Some(10.0),
            ..Default::default()
        };
        let b = MetricRow {
            aa: Some(70.0),
            ..Default::default()
        };
        let m = MetricRow::mean(&[a, b]);
        assert_eq!(m.aa, Some(60.0));
        assert_eq!(m.piv, None);
        assert_eq!(MetricRow::std(&[a, b]).aa, Some(10.0));
    }

    #[test]
    fn summary_from_matrix_only() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ACCURACY_FILE), "80\n60,90\n").unwrap();
        let s = summarize_run_dir(dir.path()).unwrap();
        assert_eq!(s.metrics.aa, Some(77.5));
        assert_eq!(s.aa_curve, vec![80.0, 75.0]);
        assert_eq!(s.metrics.fm, Some(20.0));
        assert_eq!(s.metrics.ia, Some(85.0));
        assert_eq!(s.metrics.piv, None);
        assert_eq!(s.metrics.tia, None);
        assert_eq!(s.first_task_curve, vec![80.0, 60.0]);
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn expands_seed_directories() {
        let dir = tempfile::tempdir().unwrap();
        for s in [10, 2] {
            let d = dir.path().join(format!("seed_{s}"));
            fs::create_dir(&d).unwrap();
            fs::write(d.join(ACCURACY_FILE), "50\n").unwrap();
        }
        fs::create_dir(dir.path().join("seed_x")).unwrap();
        let dirs = expand_run_dirs(dir.path()).unwrap();
        assert_eq!(
            dirs,
            vec![dir.path().join("seed_2"), dir.path().join("seed_10")]
        );
        assert!(expand_run_dirs(&dir.path().join("seed_x")).is_err());
    }

    #[test]
    fn table_has_mean_row_for_many_runs() {
        let dir = tempfile::tempdir().unwrap();
        for s in 0..3 {
            let d = dir.path().join(format!("seed_{s}"));
            fs::create_dir(&d).unwrap();
            fs::write(d.join(ACCURACY_FILE), format!("{}\n", 50 + s)).unwrap();
        }
        let r = report(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(r.runs.len(), 3);
        assert_eq!(r.mean.aa, Some(51.0));
        let table = r.table();
        assert_eq!(table.lines().count(), 6);
        assert!(table.contains("mean"));
    }
}
