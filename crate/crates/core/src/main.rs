use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use metareg::cli::bench::{em_table, subspace_table, tmin_table};
use metareg::cli::output::num;
use metareg::cli::{bench_em_compare, bench_subspace, bench_tmin, run_pipeline, Config, Format, Stage, Table};
use metareg::datagen::{sample_meta_params, sample_pool};
use metareg::eval::prediction_error;
use metareg::rng::child_seed;
use metareg::{FittedModel, MetaParams, Result};

#[derive(Parser)]
#[command(name = "metareg", version, about = "Spectral meta-learning for mixed linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Sample meta-parameters and the three task pools, written as JSON.
    Gen,
    /// Run the full pipeline once and report every metric.
    Pipeline,
    /// Subspace error over the t_l1 x n_l1 grid.
    BenchSubspace,
    /// Smallest t_h at which clustering reaches 99% accuracy.
    BenchTminCluster,
    /// Smallest t_l2 at which classification reaches 99% accuracy.
    BenchTminClassify,
    /// EM from perturbed starts against the spectral pipeline.
    BenchEm,
    /// Prediction error of the fitted model and of the truth.
    Predict,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| metareg::Error::InvalidArgument(e.to_string()))?;
    }
    let cfg = match &c.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    cfg.validate()?;
    let mut out: Box<dyn Write> = match &c.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let seed = c.seed;
    match cli.command {
        Command::Gen => {
            let meta: MetaParams<f64> = sample_meta_params(cfg.k, cfg.d, cfg.gen_preset(), seed)?;
            let pool = sample_pool(&meta, cfg.pool_sizes()?, seed)?;
            let doc = json!({
                "config_sha256": cfg.hash(),
                "seed": seed,
                "version": metareg::cli::output::VERSION,
                "meta": meta,
                "pool": pool,
            });
            serde_json::to_writer(&mut out, &doc)?;
            writeln!(out)?;
        }
        Command::Pipeline => {
            let run = run_pipeline(&cfg, seed)?;
            match c.format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut out, &run.report)?;
                    writeln!(out)?;
                }
                Format::Csv => run.report.to_table().write(&mut out, Format::Csv)?,
            }
        }
        Command::BenchSubspace => subspace_table(&bench_subspace(&cfg, seed)?, &cfg, seed).write(&mut out, c.format)?,
        Command::BenchTminCluster => tmin_table(&bench_tmin(&cfg, Stage::Cluster, seed)?, &cfg, seed).write(&mut out, c.format)?,
        Command::BenchTminClassify => tmin_table(&bench_tmin(&cfg, Stage::Classify, seed)?, &cfg, seed).write(&mut out, c.format)?,
        Command::BenchEm => em_table(&bench_em_compare(&cfg, seed)?, &cfg, seed).write(&mut out, c.format)?,
        Command::Predict => predict_table(&cfg, seed)?.write(&mut out, c.format)?,
    }
    out.flush()?;
    Ok(())
}

fn predict_table(cfg: &Config, seed: u64) -> Result<Table> {
    let run = metareg::cli::run_pipeline_with(
        cfg,
        seed,
        metareg::cli::PipelineOptions {
            predict: false,
            ..Default::default()
        },
    )?;
    let trial_seed = child_seed(seed, 1);
    let mut t = Table::new(
        &[
            "model",
            "tau",
            "trials",
            "map_train_mse",
            "map_test_mse",
            "bayes_train_mse",
            "bayes_test_mse",
            "map_param_sq_error",
            "bayes_param_sq_error",
            "noise_floor",
        ],
        &cfg.hash(),
        seed,
    );
    let truth = FittedModel::from_meta(&run.meta);
    for (name, model) in [("fitted", &run.refinement.model), ("truth", &truth)] {
        let p = prediction_error(model, &run.meta, cfg.tau, cfg.trials, trial_seed)?;
        t.push(vec![
            name.into(),
            p.tau.to_string(),
            p.trials.to_string(),
            num(p.map_train_mse),
            num(p.map_test_mse),
            num(p.bayes_train_mse),
            num(p.bayes_test_mse),
            num(p.map_param_sq_error),
            num(p.bayes_param_sq_error),
            num(p.noise_floor),
        ]);
    }
    Ok(t)
}
