//! The `dal` command line: run experiments, plot and report results, and
//! generate synthetic datasets.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::al_loop::{run_experiment, SeedRun};
use crate::config::{DataSource, RunConfig};
use crate::data::{format_column, format_delimited, write_file, SyntheticTaggingSpec};
use crate::error::{DalError, Result};
use crate::metrics::CurvePoint;
use crate::plot::{render_svg, Series};

#[derive(Debug, Parser)]
#[command(name = "dal", version, about = "Pool-based active learning simulator")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every experiment of a config file (or re-run a manifest).
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Concurrent worker threads (defaults to the number of cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Draw learning curves from one or more summary.json files.
    Plot {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset and its metadata.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the AUC table of a finished run directory.
    Report { dir: PathBuf },
}

pub const CSV_HEADER: &str = "seed,round,labeled_sentences,labeled_words,labeled_fraction,metric_name,metric_value,epochs,wall_ms";

/// One matrix cell in the summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub acquisition: String,
    pub architecture: String,
    pub metric_name: String,
    pub seeds: Vec<u64>,
    pub complete: bool,
    /// AUC of the mean curve.
    pub auc: Option<f64>,
    pub seed_aucs: Vec<f64>,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub experiment: String,
    pub runs: Vec<RunSummary>,
}

impl SummaryDocument {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub wall_ms: u64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub complete: bool,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub summary: PathBuf,
    pub runs: Vec<ManifestRun>,
    /// Fully resolved configuration; `dal run manifest.json` repeats the run.
    pub config: RunConfig,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DalError::Serde(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DalError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DalError::Serde(format!("{}: {e}", path.display())))
}

/// The per-round CSV. `wall_ms` is 0 unless `timing` is set so reruns match byte for byte.
pub fn rounds_csv(runs: &[SeedRun], metric_name: &str, timing: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for run in runs {
        for r in &run.rounds {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run.seed,
                r.round,
                r.labeled_sentences,
                r.labeled_words,
                r.labeled_fraction,
                metric_name,
                r.test_metric,
                r.epochs,
                if timing { r.wall_ms } else { 0 }
            )
            .unwrap();
        }
    }
    out
}

/// `seed,round,ids` with ids space-separated, one line per round.
pub fn acquired_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from("seed,round,ids\n");
    for run in runs {
        for r in &run.rounds {
            let ids: Vec<String> = r.acquired_ids.iter().map(usize::to_string).collect();
            writeln!(out, "{},{},{}", run.seed, r.round, ids.join(" ")).unwrap();
        }
    }
    out
}

/// Executes `config`, writing results under `out`. Returns the manifest;
/// `manifest.complete` is false when any seed failed.
pub fn cmd_run(config: &RunConfig, out: &Path, workers: Option<usize>) -> Result<RunManifest> {
    let started = now_ms();
    let data = config.data.load()?;
    let plan = config.plan(&data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| DalError::invalid(format!("cannot start workers: {e}")))?;
    let results = pool.install(|| {
        plan.par_iter()
            .map(|p| {
                let t = Instant::now();
                let r = run_experiment(&p.experiment, &data);
                (r, t.elapsed().as_millis() as u64)
            })
            .collect::<Vec<_>>()
    });

    fs::create_dir_all(out).map_err(|e| DalError::io(out, e))?;
    let mut summaries = Vec::new();
    let mut manifest_runs = Vec::new();
    for (planned, (result, wall_ms)) in plan.iter().zip(results) {
        let result = result?;
        let dir = out.join(&planned.name);
        let rounds = dir.join("rounds.csv");
        let acquired = dir.join("acquired.csv");
        let summary_path = dir.join("summary.json");
        write_file(&rounds, &rounds_csv(&result.runs, &result.metric_name, config.experiment.record_timing))?;
        write_file(&acquired, &acquired_csv(&result.runs))?;
        let summary = RunSummary {
            name: planned.name.clone(),
            acquisition: planned.experiment.acquisition.name().into(),
            architecture: planned.experiment.model.architecture.name().into(),
            metric_name: result.metric_name.clone(),
            seeds: planned.experiment.seeds.clone(),
            complete: result.is_complete(),
            auc: result.summary.as_ref().map(|s| s.auc),
            seed_aucs: if result.is_complete() { result.seed_aucs()? } else { Vec::new() },
            points: result.summary.as_ref().map(|s| s.points.clone()).unwrap_or_default(),
        };
        write_json(&summary_path, &summary)?;
        summaries.push(summary);
        manifest_runs.push(ManifestRun {
            name: planned.name.clone(),
            files: vec![rounds, acquired, summary_path],
            wall_ms,
            errors: result.runs.iter().filter_map(|r| r.error.as_ref().map(|e| format!("seed {}: {e}", r.seed))).collect(),
        });
    }
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &SummaryDocument { experiment: config.experiment.name.clone(), runs: summaries })?;
    let manifest = RunManifest {
        tool: "dal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        complete: manifest_runs.iter().all(|r| r.errors.is_empty()),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        summary: summary_path,
        runs: manifest_runs,
        config: config.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Series for every run of every summary document.
pub fn load_series(paths: &[PathBuf]) -> Result<(Vec<Series>, String)> {
    if paths.is_empty() {
        return Err(DalError::invalid("no summary documents given"));
    }
    let mut series = Vec::new();
    let mut metric = String::new();
    for path in paths {
        let doc: SummaryDocument = read_json(path)?;
        for run in doc.runs {
            let name = if paths.len() > 1 { format!("{}/{}", doc.experiment, run.name) } else { run.name };
            metric = run.metric_name;
            series.push(Series { name, points: run.points });
        }
    }
    Ok((series, metric))
}

pub fn cmd_plot(summaries: &[PathBuf], out: &Path) -> Result<()> {
    let (series, metric) = load_series(summaries)?;
    let series: Vec<Series> = series.into_iter().filter(|s| !s.points.is_empty()).collect();
    let svg = render_svg(&series, "labeled fraction", &metric)?;
    write_file(out, &svg)
}

/// Writes the dataset described by a synthetic `DataSource` spec file.
/// Returns the written paths.
pub fn cmd_gen_data(spec: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(spec).map_err(|e| DalError::io(spec, e))?;
    let source: DataSource = toml::from_str(&text)
        .map_err(|e| DalError::Config { field: spec.display().to_string(), message: e.to_string() })?;
    fs::create_dir_all(out).map_err(|e| DalError::io(out, e))?;
    let meta_path = out.join("metadata.json");
    let (data_path, body, meta) = match &source {
        DataSource::SyntheticClassification { spec } => {
            let (examples, meta) = spec.generate()?;
            let meta = serde_json::json!({ "spec": spec, "metadata": meta });
            (out.join("data.tsv"), format_delimited(&examples, '\t'), meta)
        }
        DataSource::DeskTagging(d) => {
            let spec = SyntheticTaggingSpec::desk_default(d.num_sentences, d.rare_frequency, d.seed);
            let (corpus, meta) = spec.generate()?;
            let meta = serde_json::json!({ "spec": spec, "metadata": meta });
            (out.join("data.conll"), format_column(&corpus), meta)
        }
        DataSource::SyntheticTagging { spec } => {
            let (corpus, meta) = spec.generate()?;
            let meta = serde_json::json!({ "spec": spec, "metadata": meta });
            (out.join("data.conll"), format_column(&corpus), meta)
        }
        _ => return Err(DalError::config("kind", "gen-data needs a synthetic data source")),
    };
    write_file(&data_path, &body)?;
    write_json(&meta_path, &meta)?;
    Ok(vec![data_path, meta_path])
}

/// The AUC table of a run directory.
pub fn format_report(dir: &Path) -> Result<String> {
    let doc: SummaryDocument = read_json(&dir.join("summary.json"))?;
    let mut out = String::new();
    writeln!(out, "experiment {}", doc.experiment).unwrap();
    writeln!(out, "{:<28} {:<10} {:>8} {:>8} {:>6}", "run", "metric", "auc", "sd", "seeds").unwrap();
    for run in &doc.runs {
        let sd = if run.seed_aucs.len() > 1 {
            let n = run.seed_aucs.len() as f64;
            let m = run.seed_aucs.iter().sum::<f64>() / n;
            format!("{:.4}", (run.seed_aucs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        } else {
            "-".into()
        };
        let auc = run.auc.map_or("incomplete".to_owned(), |a| format!("{a:.4}"));
        writeln!(out, "{:<28} {:<10} {:>8} {:>8} {:>6}", run.name, run.metric_name, auc, sd, run.seeds.len()).unwrap();
    }
    Ok(out)
}

/// Runs the command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Run { config, out, workers } => RunConfig::load(config).and_then(|c| cmd_run(&c, out, *workers)).map(|m| {
            if m.complete {
                println!("wrote {}", m.summary.display());
                0
            } else {
                for r in &m.runs {
                    for e in &r.errors {
                        eprintln!("{}: {e}", r.name);
                    }
                }
                eprintln!("run incomplete; partial results kept in {}", out.display());
                1
            }
        }),
        Command::Plot { summaries, out } => cmd_plot(summaries, out).map(|_| 0),
        Command::GenData { spec, out } => cmd_gen_data(spec, out).map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }),
        Command::Report { dir } => format_report(dir).map(|t| {
            print!("{t}");
            0
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                DalError::Config { .. } | DalError::Incompatible(_) => 2,
                _ => 1,
            }
        }
    }
}
