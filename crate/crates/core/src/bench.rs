//! Experiment drivers: recovery/similarity against signal strength, and
//! clustering time against process count or tensor size.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{msc, MscConfig};
use crate::comm::run_local;
use crate::error::{MscError, Result};
use crate::eval::{mean_std, mode_recovery, mode_similarity, QualityReport};
use crate::parallel::{clustering_seconds, parallel_msc, ParallelResult};
use crate::synth::Synthetic;

/// Default number of noise resamples per setting.
pub const DEFAULT_REPS: usize = 10;

/// Runs the SPMD pipeline on `p` ranks and returns the global root's result.
pub trait ParallelRunner {
    fn run(&self, p: usize, data: &Synthetic, config: &MscConfig) -> Result<ParallelResult>;
}

/// Ranks as threads of this process.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThreadRunner;

impl ParallelRunner for ThreadRunner {
    fn run(&self, p: usize, data: &Synthetic, config: &MscConfig) -> Result<ParallelResult> {
        let outcomes = run_local(p, |mut world| {
            let mut source = data.clone();
            parallel_msc(world.as_mut(), &mut source, config)
        });
        collect_root(outcomes)
    }
}

/// Picks the root's result out of per-rank outcomes, preferring the first
/// non-communication error if any rank failed.
pub fn collect_root(outcomes: Vec<Result<crate::parallel::RankOutcome>>) -> Result<ParallelResult> {
    let mut first_err = None;
    let mut result = None;
    for o in outcomes {
        match o {
            Ok(out) => {
                if out.result.is_some() {
                    result = out.result;
                }
            }
            Err(e) => {
                let is_comm = matches!(e.root_cause(), MscError::Comm(_));
                match &first_err {
                    None => first_err = Some(e),
                    Some(prev) if matches!(prev.root_cause(), MscError::Comm(_)) && !is_comm => {
                        first_err = Some(e)
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    result.ok_or_else(|| MscError::Comm("no rank returned a result".into()))
}

/// Sequential (`None`) or SPMD with the given process count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Sequential,
    Parallel(usize),
}

/// `n` values from `lo` to `hi`, evenly spaced on a log scale.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepConfig {
    pub dims: [usize; 3],
    pub l: usize,
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub msc: MscConfig,
    pub backend: Backend,
}

/// One CSV line of the signal-strength sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub rec_mean: f64,
    pub rec_std: f64,
    pub sim_mean: f64,
    pub sim_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSweep {
    pub rows: Vec<GammaRow>,
    /// Per gamma, per repetition.
    pub runs: Vec<Vec<QualityReport>>,
}

/// One clustering run on a synthetic tensor, scored against its ground truth.
pub fn evaluate_run(
    data: &Synthetic,
    config: &MscConfig,
    backend: Backend,
    runner: &dyn ParallelRunner,
) -> Result<QualityReport> {
    let truth = data.ground_truth();
    let truth = truth.sets();
    match backend {
        Backend::Sequential => {
            let r = msc(&data.tensor()?, config)?;
            let mut rec = [0.0; 3];
            let mut sim = [0.0; 3];
            for (m, mode) in r.modes.iter().enumerate() {
                rec[m] = mode_recovery(truth[m], &mode.cluster.indices)?;
                sim[m] = mode_similarity(&mode.sim, &mode.cluster.indices)?;
            }
            Ok(QualityReport::from_modes(rec, sim))
        }
        Backend::Parallel(p) => {
            let r = runner.run(p, data, config)?;
            let mut rec = [0.0; 3];
            let mut sim = [0.0; 3];
            for (m, mode) in r.modes.iter().enumerate() {
                rec[m] = mode_recovery(truth[m], &mode.report.j)?;
                sim[m] = mode.cohesion;
            }
            Ok(QualityReport::from_modes(rec, sim))
        }
    }
}

/// For every gamma, `reps` runs with seeds `seed, seed + 1, …`.
pub fn run_experiment_gamma_sweep(cfg: &GammaSweepConfig, runner: &dyn ParallelRunner) -> Result<GammaSweep> {
    let mut rows = Vec::with_capacity(cfg.gammas.len());
    let mut runs = Vec::with_capacity(cfg.gammas.len());
    for &gamma in &cfg.gammas {
        let mut reports = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let data = Synthetic::new(cfg.dims, cfg.l, gamma, cfg.seed.wrapping_add(rep as u64))?;
            reports.push(evaluate_run(&data, &cfg.msc, cfg.backend, runner)?);
        }
        let recs: Vec<f64> = reports.iter().map(|q| q.rec).collect();
        let sims: Vec<f64> = reports.iter().map(|q| q.sim).collect();
        let (rec_mean, rec_std) = mean_std(&recs);
        let (sim_mean, sim_std) = mean_std(&sims);
        log::info!("gamma {gamma:.3}: rec {rec_mean:.3} ± {rec_std:.3}, sim {sim_mean:.3} ± {sim_std:.3}");
        rows.push(GammaRow {
            gamma,
            rec_mean,
            rec_std,
            sim_mean,
            sim_std,
        });
        runs.push(reports);
    }
    Ok(GammaSweep { rows, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub dims: Vec<[usize; 3]>,
    /// Process counts, each a multiple of 3.
    pub procs: Vec<usize>,
    pub reps: usize,
    /// Signal strength; `None` uses the first dimension.
    pub gamma: Option<f64>,
    pub cluster_frac: f64,
    pub seed: u64,
    pub msc: MscConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub dims: String,
    /// 1 is the sequential pipeline.
    pub p: usize,
    pub seconds_mean: f64,
    pub seconds_std: f64,
    pub speedup_vs_sequential: f64,
}

pub fn dims_label(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

/// Times the sequential pipeline (as `p = 1`) and then every process count.
/// Data generation is excluded from every measurement.
pub fn run_experiment_scaling(cfg: &ScalingConfig, runner: &dyn ParallelRunner) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &dims in &cfg.dims {
        let gamma = cfg.gamma.unwrap_or(dims[0] as f64);
        let mut seq = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let data = Synthetic::with_fraction(dims, cfg.cluster_frac, gamma, cfg.seed.wrapping_add(rep as u64))?;
            let t = data.tensor()?;
            let start = Instant::now();
            msc(&t, &cfg.msc)?;
            seq.push(start.elapsed().as_secs_f64());
        }
        let (seq_mean, seq_std) = mean_std(&seq);
        log::info!("{} sequential: {seq_mean:.3}s", dims_label(dims));
        rows.push(ScalingRow {
            dims: dims_label(dims),
            p: 1,
            seconds_mean: seq_mean,
            seconds_std: seq_std,
            speedup_vs_sequential: 1.0,
        });
        for &p in &cfg.procs {
            let mut times = Vec::with_capacity(cfg.reps);
            for rep in 0..cfg.reps {
                let data =
                    Synthetic::with_fraction(dims, cfg.cluster_frac, gamma, cfg.seed.wrapping_add(rep as u64))?;
                let r = runner.run(p, &data, &cfg.msc)?;
                times.push(clustering_seconds(&r.timings));
            }
            let (mean, std) = mean_std(&times);
            log::info!("{} p={p}: {mean:.3}s", dims_label(dims));
            rows.push(ScalingRow {
                dims: dims_label(dims),
                p,
                seconds_mean: mean,
                seconds_std: std,
                speedup_vs_sequential: seq_mean / mean,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(MscError::from))
        .collect()
}
