//! Static SVG plots: `AA_k` curves, first-task accuracy over time and a
//! principal-component scatter of exported features.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use plotters::prelude::*;

use super::report::{expand_run_dirs, report, Report, REPORT_FILE};
use super::sweep::{ComparisonReport, COMPARISON_FILE};
use crate::error::{DiscoError, Result};

/// A labelled curve indexed by task `k = 1..`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub values: Vec<f64>,
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> DiscoError {
    DiscoError::artifact(path, format!("plot failed: {e}"))
}

/// Overlaid line plot of accuracy-like curves in percent.
pub fn line_plot(path: &Path, title: &str, y_label: &str, curves: &[Curve]) -> Result<()> {
    let max_k = curves
        .iter()
        .map(|c| c.values.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(1f64..max_k as f64, 0f64..100f64)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("task k")
        .y_desc(y_label)
        .x_labels(max_k.min(20))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points: Vec<(f64, f64)> = c
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| ((k + 1) as f64, v))
            .collect();
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(c.name.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
        chart
            .draw_series(
                points
                    .into_iter()
                    .map(|p| Circle::new(p, 3, color.filled())),
            )
            .map_err(|e| plot_err(path, e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Project rows onto their first two principal components. Component signs
/// are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(DiscoError::Empty("feature rows"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(DiscoError::DimensionMismatch {
            expected: d,
            actual: rows.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
        });
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let component = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (c1, c2) = (component(0), component(1));
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            (dot(&c1), dot(&c2))
        })
        .collect())
}

/// Read a `task_id,label,f0..` feature file.
pub fn read_features(path: &Path) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| DiscoError::io(path, e))?;
    let mut tasks = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || DiscoError::artifact(path, format!("line {}: malformed row", n + 1));
        let mut cells = line.split(',');
        let task = cells.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        cells.next().ok_or_else(bad)?;
        let values = cells
            .map(|c| c.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        tasks.push(task);
        rows.push(values);
    }
    Ok((tasks, rows))
}

/// Two-component scatter of a feature file, coloured by task id.
pub fn feature_scatter(features: &Path, out: &Path) -> Result<()> {
    let (tasks, rows) = read_features(features)?;
    let points = pca_2d(&rows)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| ((b - a) * 0.05).max(1e-6);
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let root = SVGBackend::new(out, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(out, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            "features, first two principal components",
            ("sans-serif", 18),
        )
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(|e| plot_err(out, e))?;
    chart
        .configure_mesh()
        .x_desc("PC1")
        .y_desc("PC2")
        .draw()
        .map_err(|e| plot_err(out, e))?;
    let mut ids: Vec<usize> = tasks.clone();
    ids.sort_unstable();
    ids.dedup();
    for (i, &t) in ids.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let series = points
            .iter()
            .zip(&tasks)
            .filter(|(_, &task)| task == t)
            .map(|(&p, _)| Circle::new(p, 2, color.filled()));
        chart
            .draw_series(series)
            .map_err(|e| plot_err(out, e))?
            .label(format!("task {t}"))
            .legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(out, e))?;
    root.present().map_err(|e| plot_err(out, e))
}

fn curves_from_report(name: &str, r: &Report) -> (Curve, Curve) {
    let (aa, first) = if r.runs.len() == 1 {
        (
            r.runs[0].aa_curve.clone(),
            r.runs[0].first_task_curve.clone(),
        )
    } else {
        (r.aa_curve.clone(), r.first_task_curve.clone())
    };
    (
        Curve {
            name: name.to_string(),
            values: aa,
        },
        Curve {
            name: name.to_string(),
            values: first,
        },
    )
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DiscoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DiscoError::artifact(path, e.to_string()))
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Plot every input into `out`: run directories (or parents of `seed_*`
/// runs), `report.json` / `comparison.json` files, or directories holding a
/// comparison. Variants become overlaid curves. Returns the written files.
pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut aa = Vec::new();
    let mut first = Vec::new();
    let mut feature_files = Vec::new();
    for input in inputs {
        let comparison = if input.is_file() {
            Some(input.clone())
        } else {
            let c = input.join(COMPARISON_FILE);
            c.is_file().then_some(c)
        };
        if let Some(file) = comparison {
            let is_comparison = match file.file_name() {
                Some(n) if n == COMPARISON_FILE => true,
                Some(n) if n == REPORT_FILE => false,
                _ => load_json::<ComparisonReport>(&file).is_ok(),
            };
            if is_comparison {
                let c: ComparisonReport = load_json(&file)?;
                for v in &c.variants {
                    if let Some(r) = &v.report {
                        let (a, f) = curves_from_report(&v.name, r);
                        aa.push(a);
                        first.push(f);
                    }
                }
            } else {
                let r: Report = load_json(&file)?;
                let name = display_name(file.parent().unwrap_or(&file));
                let (a, f) = curves_from_report(&name, &r);
                aa.push(a);
                first.push(f);
            }
            continue;
        }
        let r = report(std::slice::from_ref(input))?;
        let (a, f) = curves_from_report(&display_name(input), &r);
        aa.push(a);
        first.push(f);
        for dir in expand_run_dirs(input)? {
            if let Some(file) = last_feature_file(&dir)? {
                feature_files.push((dir, file));
            }
        }
    }
    if aa.is_empty() {
        return Err(DiscoError::Empty("plot inputs"));
    }
    fs::create_dir_all(out).map_err(|e| DiscoError::io(out, e))?;
    let mut written = Vec::new();
    let path = out.join("aa_curve.svg");
    line_plot(&path, "average accuracy AA_k after task k", "AA_k (%)", &aa)?;
    written.push(path);
    let path = out.join("first_task.svg");
    line_plot(
        &path,
        "first-task accuracy after task k",
        "accuracy on task 1 (%)",
        &first,
    )?;
    written.push(path);
    for (dir, file) in feature_files {
        let path = out.join(format!("features_{}.svg", display_name(&dir)));
        feature_scatter(&file, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// `features/after_task_<k>.csv` with the largest `k`.
fn last_feature_file(dir: &Path) -> Result<Option<PathBuf>> {
    let features = dir.join("features");
    if !features.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&features).map_err(|e| DiscoError::io(&features, e))? {
        let entry = entry.map_err(|e| DiscoError::io(&features, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let k = name
            .strip_prefix("after_task_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(k) = k {
            if best.as_ref().is_none_or(|(b, _)| k > *b) {
                best = Some((k, entry.path()));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}
