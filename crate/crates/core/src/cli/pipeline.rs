//! End-to-end run: generate, estimate the subspace, cluster, classify,
//! refine, evaluate and optionally predict.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::output::{num, Table, VERSION};
use crate::classify::{refine, Refinement};
use crate::cluster::{auto_batches, cluster_tasks, Clustering, Linkage};
use crate::datagen::{sample_meta_params, TaskSource};
use crate::error::{Error, Result};
use crate::eval::{accuracy_under, clustering_accuracy, estimation_error, label_mapping, prediction_error, subspace_error, task_labels, EstimationError, PredictionError};
use crate::model::{MetaParams, PoolSizes, Subspace, TaskBatch};
use crate::rng::{child_seed, StreamTag};
use crate::subspace::{estimate_subspace_from, half_estimates};

/// Offset for the prediction trials' seed so they never share streams with the pool.
const PREDICTION_SEED: u64 = 0x5052_4544;

/// Wall-clock seconds per stage. Kept apart from the metrics so reports can
/// be compared for determinism.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub datagen: f64,
    pub subspace: f64,
    pub cluster: f64,
    pub classify: f64,
    pub eval: f64,
    pub predict: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub subspace_error: f64,
    pub clustering_accuracy: f64,
    pub classification_accuracy: f64,
    pub estimation_error: EstimationError,
    /// Batch pairs behind each median distance.
    pub batches: usize,
    pub degenerate_clusters: usize,
    pub prediction: Option<PredictionError>,
    /// Why prediction was skipped, if it was.
    pub prediction_skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: BTreeMap<String, String>,
    pub metrics: PipelineMetrics,
    pub timings: StageTimings,
}

impl PipelineReport {
    /// JSON of everything except timings: identical for identical inputs.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serializable report");
        v.as_object_mut().expect("object").remove("timings");
        serde_json::to_string(&v).expect("serializable value")
    }

    pub fn to_table(&self) -> Table {
        let m = &self.metrics;
        let cols = [
            "subspace_error",
            "clustering_accuracy",
            "classification_accuracy",
            "epsilon",
            "epsilon_w",
            "epsilon_s2",
            "epsilon_p",
            "batches",
            "degenerate_clusters",
            "map_train_mse",
            "map_test_mse",
            "bayes_train_mse",
            "bayes_test_mse",
            "noise_floor",
            "time_datagen",
            "time_subspace",
            "time_cluster",
            "time_classify",
            "time_eval",
            "time_predict",
        ];
        let mut t = Table::new(&cols, &self.config_sha256, self.seed);
        let p = m.prediction;
        let opt = |f: fn(&PredictionError) -> f64| p.as_ref().map_or(String::new(), |p| num(f(p)));
        let e = &m.estimation_error;
        let tm = &self.timings;
        t.push(vec![
            num(m.subspace_error),
            num(m.clustering_accuracy),
            num(m.classification_accuracy),
            num(e.epsilon),
            num(e.w_term),
            num(e.s2_term),
            num(e.p_term),
            m.batches.to_string(),
            m.degenerate_clusters.to_string(),
            opt(|p| p.map_train_mse),
            opt(|p| p.map_test_mse),
            opt(|p| p.bayes_train_mse),
            opt(|p| p.bayes_test_mse),
            opt(|p| p.noise_floor),
            num(tm.datagen),
            num(tm.subspace),
            num(tm.cluster),
            num(tm.classify),
            num(tm.eval),
            num(tm.predict),
        ]);
        t
    }
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub meta: MetaParams<f64>,
    pub subspace: Subspace<f64>,
    pub clustering: Clustering<f64>,
    pub refinement: Refinement<f64>,
    pub heavy: Vec<TaskBatch<f64>>,
    pub light2: Vec<TaskBatch<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct PipelineOptions {
    pub linkage: Linkage,
    pub predict: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            linkage: Linkage::Average,
            predict: true,
        }
    }
}

pub fn run_pipeline(cfg: &Config, seed: u64) -> Result<PipelineRun> {
    run_pipeline_with(cfg, seed, PipelineOptions::default())
}

pub fn run_pipeline_with(cfg: &Config, seed: u64, opts: PipelineOptions) -> Result<PipelineRun> {
    cfg.validate()?;
    let sizes = cfg.pool_sizes()?;
    sizes.validate()?;
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let meta: MetaParams<f64> = sample_meta_params(cfg.k, cfg.d, cfg.gen_preset(), seed).map_err(|e| e.in_stage("datagen"))?;
    let source = TaskSource::new(&meta, seed);
    let heavy = source.tasks(StreamTag::Heavy, sizes.n_h, sizes.t_h).map_err(|e| e.in_stage("datagen"))?;
    let light2 = source.tasks(StreamTag::Light2, sizes.n_l2, sizes.t_l2).map_err(|e| e.in_stage("datagen"))?;
    timings.datagen = clock.elapsed().as_secs_f64();

    // Light-1 tasks are generated on the fly inside the moment accumulation.
    let clock = Instant::now();
    let subspace = light1_subspace(&source, sizes, cfg.k).map_err(|e| e.in_stage("subspace"))?;
    timings.subspace = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let batches = if cfg.l == 0 { auto_batches(sizes.n_h, sizes.t_h, cfg.k) } else { cfg.l };
    let clustering = cluster_tasks(&heavy, &subspace, cfg.k, batches, opts.linkage).map_err(|e| e.in_stage("cluster"))?;
    timings.cluster = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let refinement = refine(&heavy, &clustering.partition, &light2, &clustering.model).map_err(|e| e.in_stage("classify"))?;
    timings.classify = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let eval = || -> Result<_> {
        let sub = subspace_error(&subspace, &meta)?;
        let heavy_truth = task_labels(&heavy)?;
        let clus = clustering_accuracy(clustering.partition.labels(), &heavy_truth)?;
        let map = label_mapping(clustering.partition.labels(), &heavy_truth);
        let light_truth = task_labels(&light2)?;
        let class = accuracy_under(&map, &refinement.light_labels, &light_truth);
        let eps = estimation_error(&refinement.model, &meta, sizes.t_l2)?;
        Ok((sub, clus, class, eps))
    };
    let (sub_err, clus_acc, class_acc, eps) = eval().map_err(|e| e.in_stage("eval"))?;
    timings.eval = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (prediction, prediction_skipped) = if opts.predict {
        match prediction_error(&refinement.model, &meta, cfg.tau, cfg.trials, child_seed(seed, PREDICTION_SEED)) {
            Ok(p) => (Some(p), None),
            Err(Error::NonPositiveParameter(c)) => (None, Some(format!("component {c} has a non-positive variance or weight"))),
            Err(e) => return Err(e.in_stage("predict")),
        }
    } else {
        (None, Some("disabled".into()))
    };
    timings.predict = clock.elapsed().as_secs_f64();

    let report = PipelineReport {
        version: VERSION.into(),
        seed,
        config_sha256: cfg.hash(),
        config: cfg.to_map(),
        metrics: PipelineMetrics {
            subspace_error: sub_err,
            clustering_accuracy: clus_acc,
            classification_accuracy: class_acc,
            estimation_error: eps,
            batches,
            degenerate_clusters: refinement.model.degenerate.iter().filter(|&&d| d).count(),
            prediction,
            prediction_skipped,
        },
        timings,
    };
    Ok(PipelineRun {
        report,
        meta,
        subspace,
        clustering,
        refinement,
        heavy,
        light2,
    })
}

/// Subspace from `n_l1` streamed light tasks of size `t_l1`.
pub fn light1_subspace(source: &TaskSource<'_, f64>, sizes: PoolSizes, k: usize) -> Result<Subspace<f64>> {
    estimate_subspace_from(sizes.n_l1, source.meta.d(), k, |i| {
        half_estimates(&source.task(StreamTag::Light1, i, sizes.t_l1)?)
    })
}
