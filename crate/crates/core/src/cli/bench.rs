//! Seeded benchmark sweeps. Repeat `r` of every bench uses
//! `child_seed(seed, r)` for the truth and the data, so cells of a grid share
//! random numbers and differ only in the swept size.

use super::config::Config;
use super::output::{num, Table};
use super::pipeline::{light1_subspace, run_pipeline_with, PipelineOptions};
use crate::classify::classify_all;
use crate::cluster::{auto_batches, cluster_tasks, median, Linkage};
use crate::datagen::{sample_meta_params, TaskSource};
use crate::em::{em_fit_refs, em_init_perturbed, EmConfig, InitPerturbation};
use crate::error::{Error, Result};
use crate::eval::{accuracy_under, clustering_accuracy, estimation_error, label_mapping, subspace_error, task_labels};
use crate::model::{MetaParams, PoolSizes, TaskBatch};
use crate::rng::{child_seed, StreamTag};

/// Per-task accuracy needed for a trial to count as a success.
pub const STAGE_SUCCESS: f64 = 0.99;

/// EM counts as failed past this estimation error, or on a collapsed component.
pub const EM_FAILURE_EPSILON: f64 = 0.5;

pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    child_seed(seed, repeat as u64)
}

fn truth(cfg: &Config, seed: u64) -> Result<MetaParams<f64>> {
    sample_meta_params(cfg.k, cfg.d, cfg.gen_preset(), seed)
}

fn sizes_with(cfg: &Config, n_l1: usize, t_l1: usize) -> PoolSizes {
    PoolSizes {
        n_l1,
        t_l1,
        n_h: cfg.n_h[0],
        t_h: cfg.t_h[0],
        n_l2: cfg.n_l2[0],
        t_l2: cfg.t_l2[0],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceCell {
    pub t_l1: usize,
    pub n_l1: usize,
    /// One value per repeat, in repeat order.
    pub errors: Vec<f64>,
    pub median: f64,
}

/// Subspace error for one grid cell and one repeat.
pub fn subspace_trial(cfg: &Config, t_l1: usize, n_l1: usize, seed: u64) -> Result<f64> {
    let meta = truth(cfg, seed)?;
    let source = TaskSource::new(&meta, seed);
    let u = light1_subspace(&source, sizes_with(cfg, n_l1, t_l1), cfg.k)?;
    subspace_error(&u, &meta)
}

/// Every `t_l1 x n_l1` cell, median over `repeats`.
pub fn bench_subspace(cfg: &Config, seed: u64) -> Result<Vec<SubspaceCell>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &t_l1 in &cfg.t_l1 {
        for &n_l1 in &cfg.n_l1 {
            let errors = (0..cfg.repeats)
                .map(|r| subspace_trial(cfg, t_l1, n_l1, repeat_seed(seed, r)))
                .collect::<Result<Vec<_>>>()?;
            let median = median(&mut errors.clone());
            cells.push(SubspaceCell { t_l1, n_l1, errors, median });
        }
    }
    Ok(cells)
}

pub fn subspace_table(cells: &[SubspaceCell], cfg: &Config, seed: u64) -> Table {
    let mut t = Table::new(&["t_l1", "n_l1", "repeats", "median_subspace_error", "min", "max"], &cfg.hash(), seed);
    t.note("k", cfg.k);
    t.note("d", cfg.d);
    for c in cells {
        let min = c.errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = c.errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        t.push(vec![
            c.t_l1.to_string(),
            c.n_l1.to_string(),
            c.errors.len().to_string(),
            num(c.median),
            num(min),
            num(max),
        ]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Cluster,
    Classify,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::Classify => "classify",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TminRow {
    pub t: usize,
    /// Accuracy of each trial, in trial order.
    pub accuracies: Vec<f64>,
    pub success_fraction: f64,
    pub median_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TminResult {
    pub stage: Stage,
    pub rows: Vec<TminRow>,
    pub confidence: f64,
    /// `None` when no scanned size reached the confidence: censored.
    pub t_min: Option<usize>,
    pub t_min_half: Option<usize>,
}

/// Sizes to scan. A single value `T` expands to `5, 10, ...` up to `T`.
pub fn scan_sizes(list: &[usize]) -> Vec<usize> {
    match list {
        [top] => {
            let mut v: Vec<usize> = (1..).map(|i| 5 * i).take_while(|&t| t < *top).collect();
            v.push(*top);
            v
        }
        _ => {
            let mut v = list.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
    }
}

/// Smallest scanned size whose success fraction reaches `level`.
pub fn t_min(rows: &[TminRow], level: f64) -> Option<usize> {
    rows.iter().find(|r| r.success_fraction >= level).map(|r| r.t)
}

fn batches_for(cfg: &Config, n_h: usize, t_h: usize) -> usize {
    if cfg.l == 0 {
        auto_batches(n_h, t_h, cfg.k)
    } else {
        cfg.l
    }
}

/// Accuracy at every scanned size for one trial. The subspace and, for the
/// classify stage, the clustering are computed once; tasks are truncated.
pub fn tmin_trial(cfg: &Config, stage: Stage, ts: &[usize], seed: u64) -> Result<Vec<f64>> {
    let t_top = *ts.last().ok_or(Error::Empty("scan sizes"))?;
    let meta = truth(cfg, seed)?;
    let source = TaskSource::new(&meta, seed);
    let sizes = sizes_with(cfg, cfg.n_l1[0], cfg.t_l1[0]);
    let u = light1_subspace(&source, sizes, cfg.k)?;
    let k = cfg.k;
    match stage {
        Stage::Cluster => {
            let heavy = source.tasks(StreamTag::Heavy, sizes.n_h, t_top)?;
            let truth_labels = task_labels(&heavy)?;
            ts.iter()
                .map(|&t| {
                    let cut: Vec<TaskBatch<f64>> = heavy.iter().map(|h| h.truncated(t)).collect();
                    let c = cluster_tasks(&cut, &u, k, batches_for(cfg, sizes.n_h, t), Linkage::Average)?;
                    clustering_accuracy(c.partition.labels(), &truth_labels)
                })
                .collect()
        }
        Stage::Classify => {
            let t_h = *cfg.t_h.iter().max().expect("validated");
            let heavy = source.tasks(StreamTag::Heavy, sizes.n_h, t_h)?;
            let c = cluster_tasks(&heavy, &u, k, batches_for(cfg, sizes.n_h, t_h), Linkage::Average)?;
            let map = label_mapping(c.partition.labels(), &task_labels(&heavy)?);
            let light = source.tasks(StreamTag::Light2, sizes.n_l2, t_top)?;
            let truth_labels = task_labels(&light)?;
            ts.iter()
                .map(|&t| {
                    let cut: Vec<TaskBatch<f64>> = light.iter().map(|l| l.truncated(t)).collect();
                    let pred = classify_all(&cut, &c.model)?;
                    Ok(accuracy_under(&map, &pred, &truth_labels))
                })
                .collect()
        }
    }
}

/// Scans `t_h` (cluster) or `t_l2` (classify) over `trials` trials.
pub fn bench_tmin(cfg: &Config, stage: Stage, seed: u64) -> Result<TminResult> {
    cfg.validate()?;
    let ts = scan_sizes(match stage {
        Stage::Cluster => &cfg.t_h,
        Stage::Classify => &cfg.t_l2,
    });
    let per_trial = (0..cfg.trials)
        .map(|r| tmin_trial(cfg, stage, &ts, repeat_seed(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<TminRow> = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let accuracies: Vec<f64> = per_trial.iter().map(|a| a[i]).collect();
            let hits = accuracies.iter().filter(|&&a| a >= STAGE_SUCCESS).count();
            TminRow {
                t,
                success_fraction: hits as f64 / accuracies.len() as f64,
                median_accuracy: median(&mut accuracies.clone()),
                accuracies,
            }
        })
        .collect();
    Ok(TminResult {
        stage,
        t_min: t_min(&rows, cfg.confidence),
        t_min_half: t_min(&rows, 0.5),
        confidence: cfg.confidence,
        rows,
    })
}

pub fn tmin_table(res: &TminResult, cfg: &Config, seed: u64) -> Table {
    let mut t = Table::new(&["t", "trials", "successes", "success_fraction", "median_accuracy"], &cfg.hash(), seed);
    let show = |v: Option<usize>| v.map_or("censored".to_string(), |t| t.to_string());
    t.note("stage", res.stage.name());
    t.note("confidence", num(res.confidence));
    t.note("t_min", show(res.t_min));
    t.note("t_min_0.5", show(res.t_min_half));
    for r in &res.rows {
        let hits = r.accuracies.iter().filter(|&&a| a >= STAGE_SUCCESS).count();
        t.push(vec![
            r.t.to_string(),
            r.accuracies.len().to_string(),
            hits.to_string(),
            num(r.success_fraction),
            num(r.median_accuracy),
        ]);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmCompareRow {
    pub repeat: usize,
    pub gamma2: f64,
    /// `"spectral"` or `"em"`.
    pub method: &'static str,
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub collapsed: usize,
    pub failed: bool,
}

/// Spectral pipeline against EM started from a perturbed truth, on the same
/// pooled light-1, heavy and light-2 tasks. Two rows per repeat and `gamma2`.
pub fn bench_em_compare(cfg: &Config, seed: u64) -> Result<Vec<EmCompareRow>> {
    cfg.validate()?;
    let em_cfg = EmConfig {
        max_iters: cfg.em_max_iters,
        tol: cfg.em_tol,
        ..EmConfig::default()
    };
    let opts = PipelineOptions {
        predict: false,
        ..PipelineOptions::default()
    };
    let mut rows = Vec::new();
    for r in 0..cfg.repeats {
        let s = repeat_seed(seed, r);
        let run = run_pipeline_with(cfg, s, opts)?;
        let spectral = run.report.metrics.estimation_error.epsilon;
        let sizes = cfg.pool_sizes()?;
        // Light-1 stays out of the EM pool: at bench sizes it does not fit in
        // memory, and with t_l1 << d it barely moves the likelihood.
        let pooled: Vec<&TaskBatch<f64>> = run.heavy.iter().chain(&run.light2).collect();
        for (g, &gamma2) in cfg.gamma2_grid.iter().enumerate() {
            rows.push(EmCompareRow {
                repeat: r,
                gamma2,
                method: "spectral",
                epsilon: spectral,
                converged: true,
                iterations: 0,
                collapsed: 0,
                failed: spectral > EM_FAILURE_EPSILON,
            });
            let init = em_init_perturbed(&run.meta, InitPerturbation::new(gamma2), child_seed(s, g as u64))?;
            let state = em_fit_refs(&pooled, &init, &em_cfg).map_err(|e| e.in_stage("em"))?;
            let epsilon = estimation_error(&state.model, &run.meta, sizes.t_l2)?.epsilon;
            let collapsed = state.collapsed.iter().filter(|&&c| c).count();
            rows.push(EmCompareRow {
                repeat: r,
                gamma2,
                method: "em",
                epsilon,
                converged: state.converged,
                iterations: state.iterations,
                collapsed,
                failed: !(epsilon <= EM_FAILURE_EPSILON) || collapsed > 0,
            });
        }
    }
    Ok(rows)
}

pub fn em_table(rows: &[EmCompareRow], cfg: &Config, seed: u64) -> Table {
    let mut t = Table::new(
        &["repeat", "gamma2", "method", "epsilon", "converged", "iterations", "collapsed", "failed"],
        &cfg.hash(),
        seed,
    );
    for r in rows {
        t.push(vec![
            r.repeat.to_string(),
            num(r.gamma2),
            r.method.to_string(),
            num(r.epsilon),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.collapsed.to_string(),
            r.failed.to_string(),
        ]);
    }
    t
}
