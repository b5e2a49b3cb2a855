//! `nlscore` command-line driver.

mod config;
mod data;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nlscore::evaluation::{write_metrics_csv, write_scores_csv, EER_CONVENTION};
use nlscore::format::format_sig;
use nlscore::geometry::GEOMETRY_HEADER;
use nlscore::scoring::argmax;
use nlscore::simulation::{cells, metadata, preset_table, run_cell, PRESET_NAMES};
use nlscore::{
    annulus_stats, compute_eer, det_points, preset, run_experiment, score_matrix, AnyModel, ExperimentConfig,
    ScoreType, TrialSet,
};

use config::{load_config, override_config, LoadError};

#[derive(Parser)]
#[command(name = "nlscore", version, about = "Normalized-likelihood scoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write metrics.csv and meta.txt.
    Simulate(SimulateArgs),
    /// Score test vectors against enrolled classes under a model file.
    Score(ScoreArgs),
    /// Compute EER and IDR from a scores.csv file.
    Eval(EvalArgs),
    /// Write high-dimensional concentration statistics to geometry.csv.
    Geometry(GeometryArgs),
    /// List the built-in presets and their parameters.
    Presets(PresetsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in preset name.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set rounds=5 --set sigmas=0.5,2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "nlscore-out")]
    output_dir: PathBuf,
    /// Also write scores.csv with every trial of round 0 of each cell.
    #[arg(long)]
    dump_scores: bool,
    /// Also write plot_metrics.py, a plotting template for metrics.csv.
    #[arg(long)]
    emit_plot_script: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Model JSON document.
    #[arg(long)]
    model: PathBuf,
    /// Enrollment CSV: `class_id,v1,...,vd` with a header row.
    #[arg(long)]
    enroll: PathBuf,
    /// Test CSV: `test_id,class_id,v1,...,vd` with a header row; class_id may be empty.
    #[arg(long)]
    test: PathBuf,
    /// Score types (comma-separated or repeated).
    #[arg(long = "score-type", value_delimiter = ',', default_value = "NL_UNKNOWN")]
    score_types: Vec<String>,
    #[arg(long, default_value = "nlscore-out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// scores.csv as written by `score` or `simulate --dump-scores`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "nlscore-out")]
    output_dir: PathBuf,
    /// Also write det.csv with this many thresholds per score type.
    #[arg(long, value_name = "N")]
    det: Option<usize>,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,10,100,400")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "nlscore-out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct PresetsArgs {
    /// Print each preset as a JSON config instead of a table.
    #[arg(long)]
    json: bool,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(LoadError),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Score(a) => score(a).map_err(Failure::from),
        Command::Eval(a) => eval(a).map_err(Failure::from),
        Command::Geometry(a) => geometry(a).map_err(Failure::from),
        Command::Presets(a) => presets(a).map_err(Failure::from),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn resolve_config(args: &SimulateArgs) -> Result<ExperimentConfig, Failure> {
    match (&args.preset, &args.config) {
        (Some(name), None) => {
            let base = preset(name).ok_or_else(|| {
                Failure::Config(LoadError::Shape(format!(
                    "unknown preset `{name}` (available: {})",
                    PRESET_NAMES.join(", ")
                )))
            })?;
            override_config(&base, &args.overrides).map_err(Failure::Config)
        }
        (None, Some(path)) => load_config(path, &args.overrides).map_err(|e| match e {
            LoadError::Io(io) => Failure::Runtime(anyhow::anyhow!("cannot read {}: {io}", path.display())),
            other => Failure::Config(other),
        }),
        _ => unreachable!("clap enforces exactly one of --preset/--config"),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let config = resolve_config(&args)?;
    let reports = run_experiment(&config).context("simulation failed")?;
    let dir = &args.output_dir;

    let mut out = create(dir, "metrics.csv")?;
    write_metrics_csv(&mut out, &reports).context("writing metrics.csv")?;
    out.flush().context("writing metrics.csv")?;

    let mut meta = create(dir, "meta.txt")?;
    meta.write_all(metadata(&config, args.preset.as_deref()).as_bytes())
        .and_then(|_| meta.flush())
        .context("writing meta.txt")?;

    if args.dump_scores {
        dump_scores(&config, dir)?;
    }
    if args.emit_plot_script {
        let mut f = create(dir, "plot_metrics.py")?;
        f.write_all(PLOT_TEMPLATE.as_bytes()).and_then(|_| f.flush()).context("writing plot_metrics.py")?;
    }
    eprintln!("wrote {} rows to {}", reports.len(), dir.join("metrics.csv").display());
    Ok(())
}

fn dump_scores(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let mut out = create(dir, "scores.csv")?;
    let mut header = true;
    for (dim, sigma, round) in cells(config).into_iter().filter(|c| c.2 == 0) {
        let outcome = run_cell(config, dim, sigma, round)?;
        let cell = format!("d{dim}-s{sigma}-r{round}");
        let test_ids: Vec<String> = (0..outcome.true_class.len()).map(|t| format!("{cell}-t{t}")).collect();
        let class_ids: Vec<String> = (0..config.n_classes).map(|k| k.to_string()).collect();
        let truth: Vec<Option<usize>> = outcome.true_class.iter().map(|&k| Some(k)).collect();
        for sm in &outcome.matrices {
            let records: Vec<_> = sm.records(&test_ids, &class_ids, &truth).collect();
            write_scores_csv(&mut out, &records, header).context("writing scores.csv")?;
            header = false;
        }
    }
    out.flush().context("writing scores.csv")?;
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let text = fs::read_to_string(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let any = AnyModel::from_json(&text).with_context(|| format!("loading {}", args.model.display()))?;
    let (model, transform) = any.to_canonical().context("canonicalizing model")?;
    let dim = any.dim();
    let score_types = args.score_types.iter().map(|s| s.parse::<ScoreType>()).collect::<nlscore::Result<Vec<_>>>()?;

    let to_canonical = |v: Vec<f64>| -> Result<Vec<f64>> {
        match &transform {
            Some(t) => Ok(t.apply(&v)?),
            None => Ok(v),
        }
    };
    let enroll = data::read_enroll(&args.enroll, dim)?;
    let tests = data::read_tests(&args.test, dim)?;
    let enrollments = enroll
        .samples
        .into_iter()
        .zip(&enroll.class_ids)
        .map(|(samples, id)| {
            let samples = samples.into_iter().map(to_canonical).collect::<Result<Vec<_>>>()?;
            Ok(model.posterior_retaining(samples)?.with_class_id(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let vectors = tests.vectors.into_iter().map(to_canonical).collect::<Result<Vec<_>>>()?;
    let truth: Vec<Option<usize>> =
        tests.class_ids.iter().map(|c| c.as_ref().and_then(|c| enroll.class_ids.iter().position(|k| k == c))).collect();

    let mut out = create(&args.output_dir, "scores.csv")?;
    for (i, &st) in score_types.iter().enumerate() {
        let sm = score_matrix(&model, &enrollments, &vectors, st).with_context(|| format!("scoring {st}"))?;
        let records: Vec<_> = sm.records(&tests.test_ids, &enroll.class_ids, &truth).collect();
        write_scores_csv(&mut out, &records, i == 0).context("writing scores.csv")?;
    }
    out.flush().context("writing scores.csv")?;
    Ok(())
}

struct EvalRow {
    score_type: ScoreType,
    eer: f64,
    idr: Option<f64>,
    n_target: usize,
    n_nontarget: usize,
    n_identification: usize,
}

/// Identification rate over tests with exactly one target row; the first
/// row of a test wins ties.
fn idr_from_rows(rows: &[&data::ScoreRow]) -> (Option<f64>, usize) {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&data::ScoreRow>> = HashMap::new();
    for r in rows {
        let key = data::test_key(&r.trial_id);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for key in order {
        let g = &groups[key];
        if g.iter().filter(|r| r.is_target).count() != 1 {
            continue;
        }
        let values: Vec<f64> = g.iter().map(|r| r.value).collect();
        total += 1;
        if argmax(&values).is_some_and(|i| g[i].is_target) {
            hits += 1;
        }
    }
    ((total > 0).then(|| hits as f64 / total as f64), total)
}

fn eval(args: EvalArgs) -> Result<()> {
    let rows = data::read_scores(&args.scores)?;
    if rows.is_empty() {
        bail!("{} has no score rows", args.scores.display());
    }
    let mut types: Vec<ScoreType> = Vec::new();
    for r in &rows {
        if !types.contains(&r.score_type) {
            types.push(r.score_type);
        }
    }
    let mut results = Vec::new();
    let mut det = Vec::new();
    for st in types {
        let subset: Vec<&data::ScoreRow> = rows.iter().filter(|r| r.score_type == st).collect();
        let trials = TrialSet::new(
            subset.iter().filter(|r| r.is_target).map(|r| r.value).collect(),
            subset.iter().filter(|r| !r.is_target).map(|r| r.value).collect(),
        );
        let eer = compute_eer(&trials).with_context(|| format!("EER for {st}"))?;
        let (idr, n_identification) = idr_from_rows(&subset);
        if let Some(n) = args.det {
            det.push((st, det_points(&trials, n)?));
        }
        results.push(EvalRow {
            score_type: st,
            eer,
            idr,
            n_target: trials.target_scores.len(),
            n_nontarget: trials.nontarget_scores.len(),
            n_identification,
        });
    }

    let mut out = create(&args.output_dir, "eval.csv")?;
    writeln!(out, "score_type,eer,idr,n_target,n_nontarget,n_identification_trials")?;
    for r in &results {
        let idr = r.idr.map_or_else(|| "nan".to_string(), |v| format_sig(v, 9));
        let line = format!(
            "{},{},{},{},{},{}",
            r.score_type,
            format_sig(r.eer, 9),
            idr,
            r.n_target,
            r.n_nontarget,
            r.n_identification
        );
        writeln!(out, "{line}")?;
        say(&line)?;
    }
    out.flush()?;
    if !det.is_empty() {
        let mut out = create(&args.output_dir, "det.csv")?;
        writeln!(out, "score_type,threshold,far,frr")?;
        for (st, points) in det {
            for p in points {
                writeln!(
                    out,
                    "{st},{},{},{}",
                    format_sig(p.threshold, 17),
                    format_sig(p.far, 9),
                    format_sig(p.frr, 9)
                )?;
            }
        }
        out.flush()?;
    }
    eprintln!("eer convention: {EER_CONVENTION}");
    Ok(())
}

fn geometry(args: GeometryArgs) -> Result<()> {
    let mut out = create(&args.output_dir, "geometry.csv")?;
    writeln!(out, "{GEOMETRY_HEADER}")?;
    for &d in &args.dims {
        let report =
            annulus_stats(d, args.epsilon, args.samples, args.seed).with_context(|| format!("geometry at dim {d}"))?;
        writeln!(out, "{}", report.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Prints a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(line: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn presets(args: PresetsArgs) -> Result<()> {
    for name in PRESET_NAMES {
        let config = preset(name).expect("listed preset exists");
        if args.json {
            say(&config.to_json_pretty())?;
        } else {
            say(preset_table(&config).trim_end())?;
        }
    }
    Ok(())
}

const PLOT_TEMPLATE: &str = r#"# Plotting template for metrics.csv written by `nlscore simulate`.
# Columns: experiment,score_type,dim,sigma,round,eer,idr,n_target,n_nontarget,n_identification_trials
# Aggregated rows have round == -1.
import sys

import matplotlib.pyplot as plt
import pandas as pd

path = sys.argv[1] if len(sys.argv) > 1 else "metrics.csv"
df = pd.read_csv(path)
agg = df[df["round"] == -1]

for metric in ("eer", "idr"):
    for dim, block in agg.groupby("dim"):
        fig, ax = plt.subplots()
        for score_type, rows in block.groupby("score_type"):
            rows = rows.sort_values("sigma")
            ax.plot(rows["sigma"], rows[metric], marker="o", label=score_type)
        ax.set_xlabel("sigma")
        ax.set_ylabel(metric.upper())
        ax.set_title(f"{metric.upper()} at dim {dim}")
        ax.legend()
        fig.savefig(f"{metric}_dim{dim}.png", dpi=120)
        plt.close(fig)
"#;
