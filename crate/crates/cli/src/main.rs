use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundnav::bench::{
    aggregate, box_plot_svg, overlay_svg, policy_corpus, read_csv, rows_csv, run_suite, run_sweep, scale_corpus, suite_worlds,
    train_policy, train_scale, write_csv, BenchConfig, BenchError, DemoScene, Metric, PolicyConfig, Resources, ScaleSource,
};
use groundnav::control::ControllerKind;
use groundnav::sim::Dataset;
use serde_json::json;

const POLICY_DATA: &str = "policy_data.gnds";
const SCALE_DATA: &str = "scale_data.gnds";
const EPISODES: &str = "episodes.csv";

#[derive(Parser)]
#[command(name = "groundnav", version, about = "Metric-grounded diffusion navigation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark worlds and their topological routes.
    GenWorlds(Common),
    /// Build the policy and scale-regressor training corpora.
    GenData(Common),
    /// Train the diffusion policy on the policy corpus.
    TrainPolicy(Common),
    /// Train the scale regressor on the scale corpus.
    TrainScale(Common),
    /// Run the benchmark suite; writes per-episode CSV and an aggregated JSON report.
    Bench(Common),
    /// Sweep guidance weights on the demo scene; writes cost tables and overlays.
    Sweep(Common),
    /// Draw box plots from the per-episode CSV.
    Plot(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum GuidanceFlag {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repetitions per route.
    #[arg(long)]
    seeds: Option<usize>,
    /// Controllers to run (comma separated).
    #[arg(long, value_delimiter = ',')]
    controller: Vec<ControllerKind>,
    /// Scale sources to run (comma separated).
    #[arg(long = "scale-source", value_delimiter = ',')]
    scale_source: Vec<ScaleSource>,
    /// Guided cells, unguided cells, or both.
    #[arg(long, value_enum)]
    guidance: Option<GuidanceFlag>,
    /// Output directory [default: config value, then $GROUNDNAV_OUT, then ./groundnav-out].
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<BenchConfig, BenchError> {
        let mut cfg = match &self.config {
            Some(path) => BenchConfig::load(path)?,
            None => BenchConfig::default(),
        };
        if let Some(s) = self.seeds {
            cfg.suite.seeds = s;
        }
        if !self.controller.is_empty() {
            cfg.controllers = self.controller.clone();
        }
        if !self.scale_source.is_empty() {
            cfg.scale_sources = self.scale_source.clone();
        }
        match self.guidance {
            Some(GuidanceFlag::On) => cfg.guidance = vec![true],
            Some(GuidanceFlag::Off) => cfg.guidance = vec![false],
            Some(GuidanceFlag::Both) => cfg.guidance = vec![false, true],
            None => {}
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>, written: &mut Vec<String>) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| BenchError::io(path, e))?;
    written.push(path.display().to_string());
    Ok(())
}

fn load_or_build(path: &Path, build: impl FnOnce() -> Result<Dataset, BenchError>) -> Result<Dataset, BenchError> {
    if path.exists() {
        Ok(Dataset::load(path)?)
    } else {
        build()
    }
}

fn policy_checkpoint(cfg: &BenchConfig) -> PathBuf {
    match &cfg.policy {
        PolicyConfig::Diffusion { checkpoint } => cfg.resolve(checkpoint),
        PolicyConfig::Expert { .. } => cfg.resolve(Path::new("policy.ck")),
    }
}

fn run(command: Command) -> Result<serde_json::Value, BenchError> {
    let mut written = Vec::new();
    let summary = match command {
        Command::GenWorlds(c) => {
            let cfg = c.config()?;
            let dir = cfg.resolved_out_dir().join("worlds");
            for sw in suite_worlds(&cfg.suite)? {
                let name = sw.world.name().to_string();
                write(&dir.join(format!("{name}.world")), sw.world.to_text(), &mut written)?;
                write(&dir.join(format!("{name}.topomaps.json")), serde_json::to_string_pretty(&sw.topomaps)?, &mut written)?;
            }
            json!({ "worlds": cfg.suite.worlds })
        }
        Command::GenData(c) => {
            let cfg = c.config()?;
            let out = cfg.resolved_out_dir();
            fs::create_dir_all(&out).map_err(|e| BenchError::io(&out, e))?;
            let policy = policy_corpus(&cfg.training)?;
            policy.save(&out.join(POLICY_DATA))?;
            written.push(out.join(POLICY_DATA).display().to_string());
            let scale = scale_corpus(&cfg.training)?;
            scale.save(&out.join(SCALE_DATA))?;
            written.push(out.join(SCALE_DATA).display().to_string());
            json!({ "policy_records": policy.records.len(), "scale_records": scale.records.len() })
        }
        Command::TrainPolicy(c) => {
            let cfg = c.config()?;
            let out = cfg.resolved_out_dir();
            let corpus = load_or_build(&out.join(POLICY_DATA), || policy_corpus(&cfg.training))?;
            let trained = train_policy(&corpus, &cfg.training)?;
            let path = policy_checkpoint(&cfg);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
            }
            trained.predictor.to_checkpoint().save(&path)?;
            written.push(path.display().to_string());
            write(&out.join("policy_loss.csv"), trained.loss_csv(), &mut written)?;
            json!({ "records": corpus.records.len(), "final_loss": trained.loss_curve.last() })
        }
        Command::TrainScale(c) => {
            let cfg = c.config()?;
            let out = cfg.resolved_out_dir();
            let corpus = load_or_build(&out.join(SCALE_DATA), || scale_corpus(&cfg.training))?;
            let trained = train_scale(&corpus, &cfg.training)?;
            let regressor = trained
                .regressor
                .as_ref()
                .ok_or_else(|| BenchError::Missing("training returned no regressor".into()))?;
            let path = cfg.resolve(&cfg.scale.learned_checkpoint);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
            }
            regressor.to_checkpoint().save(&path)?;
            written.push(path.display().to_string());
            write(&out.join("scale_training.json"), serde_json::to_string_pretty(&trained)?, &mut written)?;
            json!({
                "records": corpus.records.len(),
                "validation_mae": trained.validation_mae,
                "relative_validation_mae": trained.relative_validation_mae(),
            })
        }
        Command::Bench(c) => {
            let cfg = c.config()?;
            let out = cfg.resolved_out_dir();
            let resources = Resources::load(&cfg)?;
            let rows = run_suite(&cfg, &resources)?;
            let mut csv = Vec::new();
            write_csv(&rows, &mut csv)?;
            write(&out.join(EPISODES), csv, &mut written)?;
            let report = aggregate(&rows)?;
            write(&out.join("report.json"), report.to_json()?, &mut written)?;
            write(&out.join("bench_config.toml"), cfg.to_toml()?, &mut written)?;
            json!({
                "episodes": rows.len(),
                "cells": report.cells.iter().map(|c| json!({
                    "cell": c.key.label(),
                    "mean_fraction": c.fraction.mean,
                    "mean_collisions": c.collisions.mean,
                })).collect::<Vec<_>>(),
            })
        }
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let dir = cfg.resolved_out_dir().join("sweep");
            let scene = DemoScene::new()?;
            let report = run_sweep(&scene, &cfg.guidance_params, &cfg.sweep)?;
            write(&dir.join("sweep.csv"), rows_csv(&report.rows)?, &mut written)?;
            let mut traces = Vec::new();
            for run in &report.runs {
                let name = format!("{}_{}", run.axis, run.value);
                write(&dir.join(format!("overlay_{name}.svg")), overlay_svg(&scene, &run.outcome), &mut written)?;
                traces.push(json!({ "axis": run.axis, "value": run.value, "chosen": run.outcome.chosen, "trace": run.outcome.trace }));
            }
            write(&dir.join("traces.json"), serde_json::to_string(&traces)?, &mut written)?;
            json!({ "runs": report.runs.len() })
        }
        Command::Plot(c) => {
            let cfg = c.config()?;
            let out = cfg.resolved_out_dir();
            let path = out.join(EPISODES);
            let file = fs::File::open(&path).map_err(|e| BenchError::io(&path, e))?;
            let report = aggregate(&read_csv(file)?)?;
            for metric in Metric::ALL {
                write(&out.join(format!("box_{}.svg", metric.as_str())), box_plot_svg(&report, metric)?, &mut written)?;
            }
            json!({ "cells": report.cells.len() })
        }
    };
    Ok(json!({ "status": "ok", "summary": summary, "written": written }))
}

fn error_kind(e: &BenchError) -> &'static str {
    match e {
        BenchError::Config(_) => "config",
        BenchError::Missing(_) => "missing-input",
        BenchError::Empty => "empty",
        BenchError::Io { .. } => "io",
        BenchError::Csv(_) | BenchError::Json(_) => "format",
        _ => "runtime",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "kind": error_kind(&e), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
