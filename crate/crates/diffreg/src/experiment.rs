//! Seeded multi-trial registration experiments.

use std::time::Instant;

use diffreg_core::bench::{evaluate_registration, generate_scene, register, trajectory_inlier_ratios, MetricsReport, SceneSpec};
use diffreg_core::denoiser::{AnalyticNet, AttentionNet, CloudPair, Denoiser, GTheta};
use diffreg_core::diffusion::{DiffusionConfig, Initial};
use diffreg_core::matrixspace::MatchMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, DenoiserKind};
use crate::error::{CliError, Result};
use crate::io::params::read_archive;

/// The denoisers selectable from a config.
#[derive(Debug, Clone)]
pub enum AnyDenoiser {
    Analytic(GTheta<AnalyticNet>),
    Trained(GTheta<AttentionNet>),
}

impl Denoiser for AnyDenoiser {
    fn predict(&self, et: &MatchMatrix, t: usize, pair: CloudPair<'_>) -> diffreg_core::Result<MatchMatrix> {
        match self {
            Self::Analytic(d) => d.predict(et, t, pair),
            Self::Trained(d) => d.predict(et, t, pair),
        }
    }
}

impl AnyDenoiser {
    /// Builds the configured denoiser, loading trained parameters from disk.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let section = &cfg.denoiser;
        match section.kind {
            DenoiserKind::Analytic => Ok(Self::Analytic(GTheta::new(AnalyticNet::new(section.analytic), section.gtheta))),
            DenoiserKind::Trained => {
                let path = section
                    .path
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("trained denoiser needs a parameter path".into()))?;
                let archive = read_archive(path)?;
                Ok(Self::Trained(GTheta::new(AttentionNet { params: archive.params }, section.gtheta)))
            }
        }
    }
}

/// Seed of trial `index`: the first word of stream `index` of a generator
/// seeded with the master seed.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Generator used for the sampling noise of a trial; independent of the
/// scene generator, which consumes `seed` directly.
pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// One (trial, step count) run. Failures are recorded, not propagated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    pub report: Option<MetricsReport>,
    /// Inlier ratio of the prediction at every sampling step.
    pub trajectory_inlier_ratio: Vec<f64>,
    pub error: Option<String>,
}

/// Wall-clock seconds of one record, kept apart from the deterministic
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub steps: usize,
    pub generate: f64,
    pub sample: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self {
            count: values.len(),
            mean,
            median,
            std,
        })
    }
}

/// Aggregates over the successful trials of one step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub steps: usize,
    pub trials: usize,
    pub failed: usize,
    pub empty_predictions: usize,
    pub inlier_ratio: Option<Stat>,
    pub nfmr: Option<Stat>,
    pub rotation_error: Option<Stat>,
    pub translation_error: Option<Stat>,
    pub epe: Option<Stat>,
    pub acc_s: Option<Stat>,
    pub acc_r: Option<Stat>,
    pub outlier_ratio: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// True when no trial was run.
    pub empty: bool,
    pub tau_fraction: f64,
    pub per_steps: Vec<StepSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by trial, then by position in `config.steps`.
    pub records: Vec<TrialRecord>,
    pub timings: Vec<TrialTiming>,
    pub summary: Summary,
}

fn run_trial(cfg: &Config, denoiser: &AnyDenoiser, trial: usize) -> Vec<(TrialRecord, TrialTiming)> {
    let seed = trial_seed(cfg.seed, trial);
    let clock = Instant::now();
    let scene = generate_scene(&SceneSpec {
        seed,
        ..cfg.generator.clone()
    });
    let generate = clock.elapsed().as_secs_f64();
    cfg.steps
        .iter()
        .map(|&steps| {
            let mut timing = TrialTiming {
                trial,
                steps,
                generate,
                sample: 0.0,
                evaluate: 0.0,
            };
            let mut record = TrialRecord {
                trial,
                seed,
                steps,
                report: None,
                trajectory_inlier_ratio: Vec::new(),
                error: None,
            };
            let outcome = scene.as_ref().map_err(Clone::clone).and_then(|scene| {
                let diffusion = DiffusionConfig {
                    inference_steps: steps,
                    ..cfg.diffusion.clone()
                };
                let clock = Instant::now();
                let reg = register(&Initial::WhiteNoise, denoiser, scene.clouds(), &diffusion, &cfg.registration, &mut sampling_rng(seed))?;
                timing.sample = clock.elapsed().as_secs_f64();
                let clock = Instant::now();
                let report = evaluate_registration(&reg, scene, &cfg.registration)?;
                let irs = trajectory_inlier_ratios(&reg.sample, scene, &cfg.registration)?;
                timing.evaluate = clock.elapsed().as_secs_f64();
                Ok((report, irs))
            });
            match outcome {
                Ok((report, irs)) => {
                    record.report = Some(report);
                    record.trajectory_inlier_ratio = irs;
                }
                Err(e) => {
                    log::warn!("trial {trial} (steps {steps}) failed: {e}");
                    record.error = Some(e.to_string());
                }
            }
            (record, timing)
        })
        .collect()
}

/// Summaries in the order of `steps`.
pub fn summarize(records: &[TrialRecord], steps: &[usize], tau_fraction: f64) -> Summary {
    let per_steps = steps
        .iter()
        .map(|&s| {
            let all: Vec<&TrialRecord> = records.iter().filter(|r| r.steps == s).collect();
            let ok: Vec<&MetricsReport> = all.iter().filter_map(|r| r.report.as_ref()).collect();
            let stat = |f: &dyn Fn(&MetricsReport) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            StepSummary {
                steps: s,
                trials: all.len(),
                failed: all.len() - ok.len(),
                empty_predictions: ok.iter().filter(|r| r.empty_prediction).count(),
                inlier_ratio: stat(&|r| Some(r.inlier_ratio)),
                nfmr: stat(&|r| Some(r.nfmr)),
                rotation_error: stat(&|r| r.rotation_error),
                translation_error: stat(&|r| r.translation_error),
                epe: stat(&|r| r.flow.map(|f| f.epe)),
                acc_s: stat(&|r| r.flow.map(|f| f.acc_s)),
                acc_r: stat(&|r| r.flow.map(|f| f.acc_r)),
                outlier_ratio: stat(&|r| r.flow.map(|f| f.outlier_ratio)),
            }
        })
        .collect();
    Summary {
        empty: records.is_empty(),
        tau_fraction,
        per_steps,
    }
}

/// Runs `cfg.trials` seeded trials, each registered once per entry of
/// `cfg.steps`, on up to `workers` threads (all cores when `None`).
/// Results do not depend on the worker count.
pub fn run_experiment(cfg: &Config, workers: Option<usize>) -> Result<ExperimentResult> {
    use rayon::prelude::*;
    cfg.validate()?;
    let denoiser = AnyDenoiser::from_config(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows: Vec<(TrialRecord, TrialTiming)> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .flat_map_iter(|trial| run_trial(cfg, &denoiser, trial))
            .collect()
    });
    let (records, timings): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let summary = summarize(&records, &cfg.steps, cfg.registration.tau_fraction);
    Ok(ExperimentResult { records, timings, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_small_samples() {
        assert!(Stat::of(&[]).is_none());
        let s = Stat::of(&[3.0]).unwrap();
        assert_eq!((s.mean, s.median, s.std), (3.0, 3.0, 0.0));
        let s = Stat::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trial_seeds_differ_and_repeat() {
        let a: Vec<u64> = (0..8).map(|i| trial_seed(5, i)).collect();
        let b: Vec<u64> = (0..8).map(|i| trial_seed(5, i)).collect();
        assert_eq!(a, b);
        let mut uniq = a.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
        assert_ne!(trial_seed(6, 0), a[0]);
    }

    #[test]
    fn zero_trials_is_flagged_empty() {
        let cfg = Config {
            trials: 0,
            ..Config::default()
        };
        let out = run_experiment(&cfg, Some(1)).unwrap();
        assert!(out.records.is_empty());
        assert!(out.summary.empty);
        assert!(out.summary.per_steps.iter().all(|s| s.trials == 0 && s.inlier_ratio.is_none()));
    }
}
