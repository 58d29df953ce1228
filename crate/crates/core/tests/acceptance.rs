//! End-to-end acceptance checks. One PASS/FAIL line per criterion; the
//! process fails if any criterion fails.
//!
//! `cargo test --release --test acceptance -- 2 5` runs a subset.

mod oracles;

use std::time::{Duration, Instant};

use metareg::cli::{bench_em_compare, bench_subspace, run_pipeline_with, Config, PipelineOptions, PipelineRun};
use metareg::cluster::{pairwise_distance, Linkage};
use metareg::datagen::{sample_meta_params, sample_pool, GenPreset, TaskSource};
use metareg::em::{em_fit, em_init_perturbed, EmConfig, InitPerturbation};
use metareg::eval::prediction_error;
use metareg::rng::StreamTag;
use metareg::subspace::moment_matrix;
use metareg::{FittedModel, Matrix, MetaParams, PoolSizes};

const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(text: &str) -> Config {
    Config::parse(text).expect("valid acceptance config")
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn spectral_runs(cfg: &Config) -> Vec<PipelineRun> {
    let opts = PipelineOptions {
        predict: false,
        ..PipelineOptions::default()
    };
    (0..SEEDS).map(|s| run_pipeline_with(cfg, s, opts).expect("pipeline run")).collect()
}

// k = 16, d = 128 with light-1 sizes that put the subspace error under 0.15.
const BASE: &str = "
[meta]
k = 16
d = 128
[pool]
n_l1 = 131072
t_l1 = 12
n_h = 256
t_h = 80
n_l2 = 512
t_l2 = 40
";

fn subspace_table() -> Outcome {
    let cfg = config(
        "[meta]\nk = 16\nd = 128\n[pool]\nt_l1 = 2, 4, 8\nn_l1 = 32768, 65536, 131072\n[bench]\nrepeats = 3\n",
    );
    let start = Instant::now();
    let cells = bench_subspace(&cfg, 0).expect("bench");
    let elapsed = start.elapsed();
    let at = |t: usize, n: usize| cells.iter().find(|c| c.t_l1 == t && c.n_l1 == n).expect("grid cell").median;
    let (ts, ns) = (&cfg.t_l1, &cfg.n_l1);
    let mut monotone = true;
    for &t in ts {
        monotone &= ns.windows(2).all(|w| at(t, w[1]) < at(t, w[0]));
    }
    for &n in ns {
        monotone &= ts.windows(2).all(|w| at(w[1], n) < at(w[0], n));
    }
    let (a, b) = (at(8, 65536), at(2, 131072));
    let grid: Vec<String> = ts.iter().map(|&t| format!("t={t}: {}", fmt(&ns.iter().map(|&n| at(t, n)).collect::<Vec<_>>()))).collect();
    outcome(
        a <= 0.15 && b <= 0.40 && monotone && elapsed <= Duration::from_secs(180),
        format!(
            "(8, 2^16) = {a:.4} (<= 0.15), (2, 2^17) = {b:.4} (<= 0.40), monotone = {monotone}, {:.1}s (<= 180s); {}",
            elapsed.as_secs_f64(),
            grid.join("; ")
        ),
    )
}

fn clustering(runs: &[PipelineRun], elapsed: Duration) -> Outcome {
    let sub: Vec<f64> = runs.iter().map(|r| r.report.metrics.subspace_error).collect();
    let acc: Vec<f64> = runs.iter().map(|r| r.report.metrics.clustering_accuracy).collect();
    let good = acc.iter().filter(|&&a| a >= 0.99).count();
    let sub_ok = sub.iter().all(|&e| e <= 0.15);
    outcome(
        good >= 4 && sub_ok && elapsed <= Duration::from_secs(60),
        format!(
            "accuracy {} ({good}/5 >= 0.99), subspace errors {} (all <= 0.15: {sub_ok}), {:.1}s for 5 runs (<= 60s)",
            fmt(&acc),
            fmt(&sub),
            elapsed.as_secs_f64()
        ),
    )
}

fn classification(runs: &[PipelineRun]) -> Outcome {
    let acc: Vec<f64> = runs.iter().map(|r| r.report.metrics.classification_accuracy).collect();
    let good = acc.iter().filter(|&&a| a >= 0.99).count();
    outcome(good >= 4, format!("accuracy {} ({good}/5 >= 0.99)", fmt(&acc)))
}

fn refined_estimation() -> Outcome {
    // n_l2 * t_l2 * p_min = 8192 * 40 / 16 = 20480 >= 50 d = 6400.
    let eps_at = |n_l2: usize| {
        let cfg = config(&BASE.replace("n_l2 = 512", &format!("n_l2 = {n_l2}")));
        spectral_runs(&cfg).iter().map(|r| r.report.metrics.estimation_error.epsilon).collect::<Vec<_>>()
    };
    let (small, large) = (eps_at(8192), eps_at(16384));
    let (m1, m2) = (median(&small), median(&large));
    outcome(
        m1 <= 0.3 && m2 < m1,
        format!("n_l2=8192: median {m1:.4} {} (<= 0.3); n_l2=16384: median {m2:.4} {} (< previous)", fmt(&small), fmt(&large)),
    )
}

fn prediction_ceiling() -> Outcome {
    let mut lines = Vec::new();
    let (mut ceiling_ok, mut bayes_wins) = (true, 0);
    for seed in 0..SEEDS {
        let meta = sample_meta_params::<f64>(32, 256, GenPreset::Orthonormal { sigma: 1.0 }, seed).unwrap();
        assert!(meta.delta() >= 0.2);
        let p = prediction_error(&FittedModel::from_meta(&meta), &meta, 60, 2000, seed).unwrap();
        let limit = 1.1 * p.noise_floor;
        ceiling_ok &= p.map_test_mse <= limit && p.bayes_test_mse <= limit;
        if p.bayes_train_mse <= p.map_train_mse {
            bayes_wins += 1;
        }
        lines.push(format!(
            "seed {seed}: test map {:.4} bayes {:.4} (<= {limit:.4}), train map {:.6} bayes {:.6}",
            p.map_test_mse, p.bayes_test_mse, p.map_train_mse, p.bayes_train_mse
        ));
    }
    outcome(
        ceiling_ok && bayes_wins >= 4,
        format!("ceiling held = {ceiling_ok}, bayes train <= map train in {bayes_wins}/5; {}", lines.join("; ")),
    )
}

fn lower_bound() -> Outcome {
    // delta = 1 with sigma^2 = 1 - delta^2 / 2 puts rho at exactly 1.
    let sigma = 0.5f64.sqrt();
    let preset = GenPreset::LowerBound {
        delta: 1.0,
        sigma,
        rescale: true,
    };
    let meta = sample_meta_params::<f64>(32, 256, preset, 0).unwrap();
    let delta = meta.delta();
    let p = prediction_error(&FittedModel::from_meta(&meta), &meta, 2, 200, 0).unwrap();
    let bound = delta * delta / 16.0;
    outcome(
        p.bayes_param_sq_error >= bound,
        format!("mean Bayes parameter error {:.4} (>= {bound:.4}, delta = {delta:.4}, rho = {:.4})", p.bayes_param_sq_error, meta.rho()),
    )
}

fn em_sensitivity() -> Outcome {
    let cfg = config(
        "
[meta]
k = 32
d = 256
[pool]
n_l1 = 262144
t_l1 = 8
n_h = 512
t_h = 120
n_l2 = 1024
t_l2 = 40
[pipeline]
em_max_iters = 50
[bench]
repeats = 5
gamma2_grid = 0.5
",
    );
    let rows = bench_em_compare(&cfg, 0).expect("em comparison");
    let mut worse = 0;
    let mut lines = Vec::new();
    for r in 0..cfg.repeats {
        let eps = |m: &str| rows.iter().find(|x| x.repeat == r && x.method == m).expect("row").epsilon;
        let (spectral, em) = (eps("spectral"), eps("em"));
        let em_row = rows.iter().find(|x| x.repeat == r && x.method == "em").unwrap();
        if em > spectral {
            worse += 1;
        }
        lines.push(format!("spectral {spectral:.3} em {em:.3} (collapsed {})", em_row.collapsed));
    }
    outcome(worse >= 4, format!("EM worse in {worse}/5; {}", lines.join("; ")))
}

fn on_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn thread_invariant<R: Send + PartialEq>(f: impl Fn() -> R + Send + Sync) -> bool {
    let base = on_threads(1, &f);
    [2, 4].iter().all(|&n| on_threads(n, &f) == base)
}

fn property_suites() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut run = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    for s in 0..200 {
        run("top_k_eig", oracles::check_top_k_eig(s));
    }
    for s in 0..200 {
        run("least_squares", oracles::check_least_squares(s));
    }
    for s in 0..50 {
        run("single_linkage", oracles::check_single_linkage(s));
    }
    for s in 0..200 {
        run("classify_task", oracles::check_classify(s));
    }
    run("posterior reference", oracles::check_posterior_reference());
    for s in 0..200 {
        run("posterior direct", oracles::check_posterior_direct(s));
    }
    for s in 0..20 {
        run("em monotone", oracles::check_em_monotone(s));
    }
    let w = Matrix::from_columns(&[vec![0.6, 0.0, 0.2], vec![-0.3, 0.5, 0.0]]).unwrap();
    let meta = MetaParams::new(w, vec![0.5, 0.7], vec![0.3, 0.7]).unwrap();
    for s in 0..4 {
        run("moment unbiased", oracles::check_moment_unbiased(&meta, 40_000, 4, s));
    }

    let meta = sample_meta_params::<f64>(4, 20, GenPreset::Orthonormal { sigma: 0.5 }, 1).unwrap();
    let sizes = PoolSizes {
        n_l1: 2000,
        t_l1: 4,
        n_h: 40,
        t_h: 30,
        n_l2: 100,
        t_l2: 10,
    };
    let source = TaskSource::new(&meta, 1);
    let light = source.tasks(StreamTag::Light1, 2000, 4).unwrap();
    let heavy = source.tasks(StreamTag::Heavy, 200, 20).unwrap();
    let u = metareg::subspace::estimate_subspace(&light, 4).unwrap();
    let init = em_init_perturbed(&meta, InitPerturbation::new(0.3), 2).unwrap();
    let small = config(
        "[meta]\nk = 3\nd = 24\n[pool]\nn_l1 = 3000\nt_l1 = 4\nn_h = 60\nt_h = 40\nn_l2 = 300\nt_l2 = 20\n[pipeline]\ntau = 10\n[bench]\ntrials = 50\n",
    );
    let checks = [
        ("pool", thread_invariant(|| sample_pool(&meta, sizes, 3).unwrap())),
        ("moment", thread_invariant(|| moment_matrix(&light).unwrap())),
        ("distance", thread_invariant(|| pairwise_distance(&heavy, &u, 2).unwrap())),
        (
            "em",
            thread_invariant(|| {
                em_fit(&heavy, &init, &EmConfig { max_iters: 10, ..EmConfig::default() })
                    .map(|s| (s.model, s.trace))
                    .unwrap()
            }),
        ),
        ("prediction", thread_invariant(|| prediction_error(&FittedModel::from_meta(&meta), &meta, 10, 200, 5).unwrap())),
        (
            "pipeline",
            thread_invariant(|| {
                let opts = PipelineOptions {
                    linkage: Linkage::Average,
                    predict: true,
                };
                run_pipeline_with(&small, 7, opts).unwrap().report.deterministic_json()
            }),
        ),
    ];
    for (name, ok) in checks {
        if !ok {
            failures.push(format!("determinism: {name}"));
        }
    }
    let n = failures.len();
    outcome(n == 0, if n == 0 { "all oracle and determinism checks passed".into() } else { failures.join("; ") })
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: u32| wanted.is_empty() || wanted.contains(&c);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |c: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {c} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((c, name, o));
    };

    if want(1) {
        report(1, "subspace table", subspace_table());
    }
    if want(2) || want(3) {
        let start = Instant::now();
        let runs = spectral_runs(&config(BASE));
        let elapsed = start.elapsed();
        if want(2) {
            report(2, "clustering", clustering(&runs, elapsed));
        }
        if want(3) {
            report(3, "classification", classification(&runs));
        }
    }
    if want(4) {
        report(4, "refined estimation", refined_estimation());
    }
    if want(5) {
        report(5, "prediction ceiling", prediction_ceiling());
    }
    if want(6) {
        report(6, "lower bound", lower_bound());
    }
    if want(7) {
        report(7, "EM sensitivity", em_sensitivity());
    }
    if want(8) {
        report(8, "property suites", property_suites());
    }

    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(c, _, _)| *c).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
