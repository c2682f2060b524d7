use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{apply_denoiser_flag, parse_steps, CommonArgs, TimingFile, TIMING_FILE};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::experiment::{run_experiment, Summary, TrialRecord, TrialTiming};
use crate::io::{json_bytes, Staged, FORMAT_VERSION};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_FILE: &str = "sweep.csv";

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated step counts, e.g. `1,5,10,20`.
    #[arg(long)]
    pub steps: Option<String>,
    /// Grid axis `KEY=V1,V2,...` over config keys (repeatable); the sweep
    /// runs the cartesian product.
    #[arg(long, value_name = "KEY=VALUES")]
    pub grid: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// `analytic` or `trained:PATH`.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// One grid point: the override assigned to every axis.
pub type GridPoint = Vec<(String, String)>;

/// Cartesian product of `KEY=V1,V2` axes, last axis varying fastest.
pub fn parse_grid(axes: &[String]) -> Result<Vec<GridPoint>> {
    let mut points: Vec<GridPoint> = vec![Vec::new()];
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("grid axis `{axis}` is not KEY=V1,V2,...")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Usage(format!("grid axis `{key}` has no values")));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.trim().to_string(), v.to_string()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Serialize)]
struct ResultLine<'a> {
    grid: &'a GridPoint,
    #[serde(flatten)]
    record: &'a TrialRecord,
}

#[derive(Debug, Serialize)]
struct PointSummary {
    grid: GridPoint,
    config: Config,
    summary: Summary,
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    format_version: u32,
    config: &'a Config,
    grid_axes: &'a [String],
    points: Vec<PointSummary>,
}

#[derive(Debug, Serialize)]
struct PointTiming<'a> {
    grid: &'a GridPoint,
    trials: Vec<TrialTiming>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run(common: &CommonArgs, args: SweepArgs) -> Result<()> {
    let mut cfg = common.resolve()?;
    apply_denoiser_flag(&mut cfg, args.denoiser.as_deref())?;
    if let Some(s) = &args.steps {
        cfg.steps = parse_steps(s)?;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if args.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let points = parse_grid(&args.grid)?;
    let configs: Vec<Config> = points
        .iter()
        .map(|p| {
            let sets: Vec<String> = p.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let c = cfg.clone().with_overrides(&sets)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let keys: Vec<String> = args.grid.iter().filter_map(|a| a.split_once('=')).map(|(k, _)| k.trim().to_string()).collect();
    let mut lines = Vec::new();
    let mut table = csv::Writer::from_writer(Vec::new());
    let header = keys.iter().cloned().chain(
        [
            "trial",
            "seed",
            "steps",
            "correspondences",
            "inlier_ratio",
            "nfmr",
            "rotation_error",
            "translation_error",
            "epe",
            "acc_s",
            "acc_r",
            "outlier_ratio",
            "error",
        ]
        .map(String::from),
    );
    let csv_err = |e: csv::Error| CliError::Usage(e.to_string());
    table.write_record(header).map_err(csv_err)?;
    let mut summaries = Vec::new();
    let mut timings = Vec::new();
    for (point, c) in points.iter().zip(&configs) {
        let result = run_experiment(c, args.workers)?;
        for r in &result.records {
            lines.extend(serde_json::to_vec(&ResultLine { grid: point, record: r }).expect("serialisable record"));
            lines.push(b'\n');
            let rep = r.report.as_ref();
            let flow = rep.and_then(|x| x.flow);
            let row = point.iter().map(|(_, v)| v.clone()).chain([
                r.trial.to_string(),
                r.seed.to_string(),
                r.steps.to_string(),
                rep.map(|x| x.correspondences.to_string()).unwrap_or_default(),
                opt(rep.map(|x| x.inlier_ratio)),
                opt(rep.map(|x| x.nfmr)),
                opt(rep.and_then(|x| x.rotation_error)),
                opt(rep.and_then(|x| x.translation_error)),
                opt(flow.map(|f| f.epe)),
                opt(flow.map(|f| f.acc_s)),
                opt(flow.map(|f| f.acc_r)),
                opt(flow.map(|f| f.outlier_ratio)),
                r.error.clone().unwrap_or_default(),
            ]);
            table.write_record(row).map_err(csv_err)?;
        }
        for s in &result.summary.per_steps {
            if let Some(ir) = s.inlier_ratio {
                log::info!("{point:?} steps {}: mean IR {:.4} over {} trials", s.steps, ir.mean, ir.count);
            }
        }
        summaries.push(PointSummary {
            grid: point.clone(),
            config: c.clone(),
            summary: result.summary,
        });
        timings.push(result.timings);
    }
    let timing: Vec<PointTiming> = points.iter().zip(timings).map(|(grid, trials)| PointTiming { grid, trials }).collect();

    let mut staged = Staged::new();
    staged.add(RESULTS_FILE, lines);
    staged.add(CSV_FILE, table.into_inner().map_err(|e| CliError::Usage(e.to_string()))?);
    let summary = SweepSummary {
        format_version: FORMAT_VERSION,
        config: &cfg,
        grid_axes: &args.grid,
        points: summaries,
    };
    staged.add(SUMMARY_FILE, json_bytes(&summary));
    staged.add_json(TIMING_FILE, &TimingFile { timing });
    staged.commit(&args.out)?;
    for p in &summary.points {
        for s in &p.summary.per_steps {
            let mean = |st: Option<crate::experiment::Stat>| st.map(|x| format!("{:.4}", x.mean)).unwrap_or_else(|| "-".into());
            let label: String = p.grid.iter().map(|(k, v)| format!("{k}={v} ")).collect();
            println!("{label}steps {}: IR {} NFMR {} ({} failed)", s.steps, mean(s.inlier_ratio), mean(s.nfmr), s.failed);
        }
    }
    Ok(())
}
