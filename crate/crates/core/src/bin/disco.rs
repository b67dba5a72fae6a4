//! `disco` command line. Exit codes: 0 success, 1 configuration error,
//! 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use disco::engine::FeatureSpace;
use disco::harness::{self, sweep::parse_grid, ExperimentConfig};
use disco::{DiscoError, Result};

#[derive(Parser)]
#[command(
    name = "disco",
    version,
    about = "Class-incremental learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured seeds.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run seeds 0..N instead of the configured seeds.
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Output root; overrides DISCO_OUT and the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs; overrides the config's jobs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareMode {
    /// CIL vs CILD on the same label partition.
    Cild,
    /// The baseline with and without the regularizers.
    Disco,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Raw,
    Projected,
}

#[derive(Subcommand)]
enum Command {
    /// Train every task and write run directories.
    Run(Common),
    /// Compute metrics over run directories (or parents of seed_* runs).
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where report files go; defaults to the single input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per loss-weight grid point and seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis such as `lambda_tcon=0.5,1.0`; replaces the config's axis.
        #[arg(long)]
        grid: Vec<String>,
    },
    /// Side-by-side comparison of two scenario or method variants.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cild")]
        mode: CompareMode,
    },
    /// SVG curves and feature scatters.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory; defaults to `plots/` under the first input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute test-set features from a run's saved model.
    ExportFeatures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "raw")]
        space: Space,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Prepared {
    config: ExperimentConfig,
    root: PathBuf,
    seeds: Vec<u64>,
}

fn prepare(common: &Common) -> Result<Prepared> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(jobs) = common.jobs {
        config.jobs = jobs;
    }
    let seeds = match (common.seed, common.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(0)) => {
            return Err(DiscoError::Config(vec![
                "--seeds: must be at least 1".into()
            ]))
        }
        (None, Some(n)) => (0..n).collect(),
        (None, None) => config.seeds.clone(),
    };
    config.validate().map_err(DiscoError::Config)?;
    let root = config.output_root(common.out.as_deref());
    Ok(Prepared {
        config,
        root,
        seeds,
    })
}

fn report_target(inputs: &[PathBuf], out: Option<&Path>) -> PathBuf {
    match (out, inputs) {
        (Some(o), _) => o.to_path_buf(),
        (None, [single]) => single.clone(),
        _ => PathBuf::from("."),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let p = prepare(&common)?;
            let runs = harness::run(&p.config, &p.root, &p.seeds)?;
            let report = harness::Report::from_runs(runs);
            if report.runs.len() > 1 {
                report.write(&p.root.join(&p.config.name))?;
            }
            for r in &report.runs {
                println!("{}", r.run_dir.display());
            }
            print!("{}", report.table());
        }
        Command::Report { runs, out } => {
            let report = harness::report(&runs)?;
            report.write(&report_target(&runs, out.as_deref()))?;
            print!("{}", report.table());
        }
        Command::Sweep { common, grid } => {
            let mut p = prepare(&common)?;
            if !grid.is_empty() {
                let axes = parse_grid(&grid)?;
                let s = &mut p.config.sweep;
                for (axis, given) in [
                    (&mut s.lambda_tcon, axes.lambda_tcon),
                    (&mut s.lambda_ccon, axes.lambda_ccon),
                    (&mut s.lambda_ccd, axes.lambda_ccd),
                ] {
                    if !given.is_empty() {
                        *axis = given;
                    }
                }
            }
            let report = harness::sweep(&p.config, &p.root, &p.seeds)?;
            print!("{}", report.table());
        }
        Command::Compare { common, mode } => {
            let p = prepare(&common)?;
            let report = match mode {
                CompareMode::Cild => harness::compare_cil_cild(&p.config, &p.root, &p.seeds)?,
                CompareMode::Disco => harness::compare_disco(&p.config, &p.root, &p.seeds)?,
            };
            print!("{}", report.table());
        }
        Command::Plot { inputs, out } => {
            let out = out.unwrap_or_else(|| {
                let first = &inputs[0];
                let base = if first.is_file() {
                    first.parent().map(Path::to_path_buf).unwrap_or_default()
                } else {
                    first.clone()
                };
                base.join("plots")
            });
            for path in harness::plot::plot(&inputs, &out)? {
                println!("{}", path.display());
            }
        }
        Command::ExportFeatures { run, space, out } => {
            let space = match space {
                Space::Raw => FeatureSpace::Raw,
                Space::Projected => FeatureSpace::Projected,
            };
            let path = harness::export_features(&run, space, out.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(DiscoError::Config(errors)) => {
            eprintln!("configuration error:");
            for e in errors {
                eprintln!("  {e}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
