use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DomainSource, ExperimentConfig, SweepConfig};
use super::report::{format_cell, render_table, MetricRow, Report, RunSummary, METRIC_NAMES};
use super::run::{execute_all, seed_dir, Arm, Job};
use crate::error::{DiscoError, Result};
use crate::losses::LossWeights;

pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub message: String,
}

/// One configuration of a comparison with its per-seed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    /// The variant uses the default loss weights.
    #[serde(default)]
    pub is_default: bool,
    /// `None` when every seed failed.
    pub report: Option<Report>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<Failure>,
}

impl Variant {
    pub fn mean(&self) -> Option<MetricRow> {
        self.report.as_ref().map(|r| r.mean)
    }

    pub fn runs(&self) -> &[RunSummary] {
        self.report.as_ref().map_or(&[], |r| &r.runs)
    }
}

/// Side-by-side variants; the delta row is `last − first` of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub title: String,
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<MetricRow>,
}

fn signed(x: f64) -> String {
    if x < 0.0 {
        format!("\u{2212}{:.2}", -x)
    } else {
        format!("+{x:.2}")
    }
}

impl ComparisonReport {
    fn new(title: impl Into<String>, variants: Vec<Variant>, with_delta: bool) -> Self {
        let delta = if with_delta && variants.len() == 2 {
            match (variants[0].mean(), variants[1].mean()) {
                (Some(a), Some(b)) => {
                    let mut d = [None; 7];
                    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
                        d[i] = x.zip(y).map(|(x, y)| y - x);
                    }
                    Some(MetricRow {
                        aa: d[0],
                        fm: d[1],
                        ia: d[2],
                        piv: d[3],
                        pfts: d[4],
                        tia: d[5],
                        ita: d[6],
                    })
                }
                _ => None,
            }
        } else {
            None
        };
        ComparisonReport {
            title: title.into(),
            variants,
            delta,
        }
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Mean row per variant. With a delta, the last variant's cells read
    /// `value (delta)` and a delta row follows. `*` marks the default weights.
    pub fn table(&self) -> String {
        let mut rows = Vec::new();
        let last = self.variants.len().saturating_sub(1);
        for (i, v) in self.variants.iter().enumerate() {
            let name = if v.is_default {
                format!("{} *", v.name)
            } else {
                v.name.clone()
            };
            let cells = match v.mean() {
                None => vec!["failed".to_string(); METRIC_NAMES.len()],
                Some(m) => m
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(c, value)| match (self.delta, i == last && i > 0) {
                        (Some(d), true) => match (value, d.values()[c]) {
                            (Some(x), Some(dx)) => format!("{x:.2} ({})", signed(dx)),
                            _ => format_cell(*value),
                        },
                        _ => format_cell(*value),
                    })
                    .collect(),
            };
            rows.push((name, cells));
        }
        if let Some(d) = self.delta {
            rows.push((
                "delta".into(),
                d.values()
                    .iter()
                    .map(|v| v.map_or("-".into(), signed))
                    .collect(),
            ));
        }
        let mut out = format!("{}\n", self.title);
        out.push_str(&render_table("variant", &rows));
        for v in &self.variants {
            for f in &v.failures {
                let _ = writeln!(out, "failed: {} seed {}: {}", v.name, f.seed, f.message);
            }
        }
        out
    }

    /// Write `comparison.json`, `comparison.csv` (per-seed and mean rows,
    /// each traceable to its run directory and config hash) and
    /// `comparison.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DiscoError::io(dir, e))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| DiscoError::io(&path, e))
        };
        put(
            COMPARISON_FILE,
            serde_json::to_string_pretty(self).expect("comparison serializes"),
        )?;
        let mut csv = format!(
            "variant,row,{},run_dir,config_hash\n",
            METRIC_NAMES.join(",")
        );
        let cells = |m: &MetricRow| {
            m.values()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect::<Vec<_>>()
                .join(",")
        };
        for v in &self.variants {
            for r in v.runs() {
                let seed = r.seed.map(|s| format!("seed_{s}")).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{seed},{},{},{}",
                    v.name,
                    cells(&r.metrics),
                    r.run_dir.display(),
                    r.config_hash.as_deref().unwrap_or("")
                );
            }
            if let Some(m) = v.mean() {
                let _ = writeln!(csv, "{},mean,{},,", v.name, cells(&m));
            }
        }
        put("comparison.csv", csv)?;
        put("comparison.txt", self.table())
    }
}

/// Parse `--grid` entries such as `lambda_tcon=0.5,1.0` (the `lambda_`
/// prefix is optional) into sweep axes.
pub fn parse_grid(entries: &[String]) -> Result<SweepConfig> {
    let mut grid = SweepConfig::default();
    let mut errors = Vec::new();
    for entry in entries {
        let Some((key, values)) = entry.split_once('=') else {
            errors.push(format!("--grid: expected key=v1,v2 in {entry:?}"));
            continue;
        };
        let axis = match key.trim().trim_start_matches("lambda_") {
            "tcon" => &mut grid.lambda_tcon,
            "ccon" => &mut grid.lambda_ccon,
            "ccd" => &mut grid.lambda_ccd,
            other => {
                errors.push(format!(
                    "--grid: unknown axis {other:?} (expected lambda_tcon, lambda_ccon or lambda_ccd)"
                ));
                continue;
            }
        };
        for v in values.split(',') {
            match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() && x >= 0.0 => axis.push(x),
                _ => errors.push(format!("--grid {key}: invalid weight {v:?}")),
            }
        }
    }
    if errors.is_empty() {
        Ok(grid)
    } else {
        Err(DiscoError::Config(errors))
    }
}

/// Cartesian product of the axes; an empty axis keeps `base`'s weight.
pub fn grid_points(grid: &SweepConfig, base: LossWeights) -> Vec<LossWeights> {
    let axis = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let mut points = Vec::new();
    for &tcon in &axis(&grid.lambda_tcon, base.tcon) {
        for &ccon in &axis(&grid.lambda_ccon, base.ccon) {
            for &ccd in &axis(&grid.lambda_ccd, base.ccd) {
                points.push(LossWeights { tcon, ccon, ccd });
            }
        }
    }
    points
}

/// Execute every `(variant, seed)` job and assemble the variants. Failed
/// runs are recorded and the rest continue.
fn run_variants(
    specs: Vec<(String, Option<LossWeights>, Vec<Job>)>,
    workers: usize,
) -> Vec<Variant> {
    let all: Vec<Job> = specs.iter().flat_map(|(_, _, jobs)| jobs.clone()).collect();
    let mut results = execute_all(&all, workers).into_iter();
    specs
        .into_iter()
        .map(|(name, weights, jobs)| {
            let mut runs = Vec::new();
            let mut failures = Vec::new();
            for job in jobs {
                match results.next().expect("one result per job") {
                    Ok(s) => runs.push(s),
                    Err(e) => {
                        log::error!("{name} seed {}: {e}", job.seed);
                        failures.push(Failure {
                            seed: job.seed,
                            run_dir: job.dir,
                            message: e.to_string(),
                        });
                    }
                }
            }
            Variant {
                is_default: weights.is_some_and(|w| w.is_default()),
                name,
                weights,
                report: (!runs.is_empty()).then(|| Report::from_runs(runs)),
                failures,
            }
        })
        .collect()
}

/// One run per grid point and seed under
/// `<root>/<name>/sweep/tcon_<a>_ccon_<b>_ccd_<c>/seed_<s>/`.
pub fn sweep(config: &ExperimentConfig, root: &Path, seeds: &[u64]) -> Result<ComparisonReport> {
    config.validate().map_err(DiscoError::Config)?;
    let base = root.join(&config.name).join("sweep");
    let specs = grid_points(&config.sweep, config.train.weights)
        .into_iter()
        .map(|w| {
            let name = format!("tcon_{}_ccon_{}_ccd_{}", w.tcon, w.ccon, w.ccd);
            let mut c = config.clone();
            c.train.weights = w;
            c.train.disco = true;
            let jobs = seeds
                .iter()
                .map(|&s| Job::new(&c, s, seed_dir(&base.join(&name), s)))
                .collect();
            (name, Some(w), jobs)
        })
        .collect();
    let report = ComparisonReport::new(
        "loss-weight sweep (lambda_tcon, lambda_ccon, lambda_ccd); * = default weights",
        run_variants(specs, config.jobs),
        false,
    );
    report.write(&base)?;
    Ok(report)
}

/// Same label partition twice: every task in the first domain of the order
/// (CIL) and each task in its own domain (CILD). Runs live under
/// `<root>/<name>/compare/{cil,cild}/seed_<s>/`.
pub fn compare_cil_cild(
    config: &ExperimentConfig,
    root: &Path,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    config.validate().map_err(DiscoError::Config)?;
    if config.scenario.domains == DomainSource::None || config.scenario.domain_order.is_empty() {
        return Err(DiscoError::Config(vec![
            "scenario.domains / scenario.domain_order: compare needs a domain order and a domain source".into(),
        ]));
    }
    // Pre-flight: every seed's scenarios must build before anything trains.
    for &s in seeds {
        let data = config.build_dataset(s)?;
        for arm in [Arm::SingleDomain, Arm::Configured] {
            let job = Job {
                arm,
                ..Job::new(config, s, PathBuf::new())
            };
            super::run::job_scenario(&job, &data)?;
        }
    }
    let base = root.join(&config.name).join("compare");
    let specs = [
        ("CIL", "cil", Arm::SingleDomain),
        ("CILD", "cild", Arm::Configured),
    ]
    .into_iter()
    .map(|(name, dir, arm)| {
        let jobs = seeds
            .iter()
            .map(|&s| Job {
                arm,
                ..Job::new(config, s, seed_dir(&base.join(dir), s))
            })
            .collect();
        (name.to_string(), None, jobs)
    })
    .collect();
    let report = ComparisonReport::new(
        "CIL vs CILD (CILD cells: value (delta vs CIL))",
        run_variants(specs, config.jobs),
        true,
    );
    report.write(&base)?;
    Ok(report)
}

/// The baseline with and without the regularizers, same seeds. Runs live
/// under `<root>/<name>/compare_disco/{baseline,disco}/seed_<s>/`.
pub fn compare_disco(
    config: &ExperimentConfig,
    root: &Path,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    config.validate().map_err(DiscoError::Config)?;
    let base = root.join(&config.name).join("compare_disco");
    let specs = [("baseline", false), ("baseline+disco", true)]
        .into_iter()
        .map(|(name, disco)| {
            let mut c = config.clone();
            c.train.disco = disco;
            let dir = base.join(if disco { "disco" } else { "baseline" });
            let jobs = seeds
                .iter()
                .map(|&s| Job::new(&c, s, seed_dir(&dir, s)))
                .collect();
            (name.to_string(), disco.then_some(c.train.weights), jobs)
        })
        .collect();
    let report = ComparisonReport::new(
        "baseline vs baseline+DisCo (second row: value (delta vs baseline))",
        run_variants(specs, config.jobs),
        true,
    );
    report.write(&base)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality_and_defaults() {
        let grid = parse_grid(&[
            "tcon=0.5,1.0".into(),
            "lambda_ccon=0.5,1".into(),
            "ccd=1.0".into(),
        ])
        .unwrap();
        let points = grid_points(&grid, LossWeights::default());
        assert_eq!(points.len(), 4);
        assert_eq!(points.iter().filter(|w| w.is_default()).count(), 1);
        let single = grid_points(&SweepConfig::default(), LossWeights::zero());
        assert_eq!(single, vec![LossWeights::zero()]);
    }

    #[test]
    fn bad_grid_entries_are_config_errors() {
        for bad in ["tcon", "alpha=1", "ccd=-1", "ccon=x"] {
            assert!(
                parse_grid(&[bad.to_string()]).unwrap_err().is_config(),
                "{bad}"
            );
        }
    }

    #[test]
    fn signed_uses_minus_sign() {
        assert_eq!(signed(-33.444), "\u{2212}33.44");
        assert_eq!(signed(1.0), "+1.00");
    }
}
