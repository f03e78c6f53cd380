//! Multi-seed experiment driver and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use gradmatch_core::{
    evaluate, make_linear_benchmark, make_vecsprites, track_gip, train, verify_theorem1, Algo, DomainDataset,
    GradEngine, ParamVector, VecSpritesConfig,
};
use serde::Serialize;

use crate::config::{DatasetSpec, ExperimentSpec};
use crate::formats::{
    format_dataset, format_gip_trace, format_history, format_params, format_theorem, parse_dataset, read_file,
    write_file,
};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub iterations: usize,
    /// Linear weights without the bias; empty for other families.
    pub weights: Vec<f64>,
    /// 1-based index of the largest |w|.
    pub argmax_feature: Option<usize>,
    #[serde(skip)]
    pub theta: Option<ParamVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algo: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub mean_train_acc: f64,
    pub std_train_acc: f64,
    pub mean_test_acc: Option<f64>,
    pub std_test_acc: Option<f64>,
    pub runs: Vec<SeedOutcome>,
}

/// Sample mean and standard deviation; the deviation is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds the train and test splits; generated vecsprites data is keyed by `seed`.
pub fn load_data(spec: &DatasetSpec, seed: u64) -> Result<(DomainDataset, Option<DomainDataset>), CliError> {
    match spec {
        DatasetSpec::Linear { n } => {
            let (tr, te) = make_linear_benchmark(*n)?;
            Ok((tr, Some(te)))
        }
        DatasetSpec::VecSprites { n_domains, per_domain, noise_dim, test_size, color_gain } => {
            let mut cfg = VecSpritesConfig::new(*n_domains, *per_domain, seed);
            cfg.noise_dim = *noise_dim;
            cfg.test_size = *test_size;
            cfg.color_gain = *color_gain;
            let (tr, te) = make_vecsprites(&cfg)?;
            Ok((tr, Some(te)))
        }
        DatasetSpec::File { train, test } => {
            let tr = parse_dataset(&read_file(train)?)?;
            let te = test.as_deref().map(|p| read_file(p).and_then(|t| parse_dataset(&t))).transpose()?;
            Ok((tr, te))
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let probe = dir.join(".write_check");
    fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

fn run_seed(spec: &ExperimentSpec, seed: u64, write_to: Option<&Path>) -> Result<SeedOutcome, CliError> {
    let (tr, te) = load_data(&spec.dataset, seed)?;
    let engine = GradEngine::new(spec.model, tr.feature_dim())?;
    let init = engine.init(seed);
    let mut cfg = spec.trainer.clone();
    cfg.seed = seed;
    let result = train(&engine, &tr, te.as_ref(), &cfg, &init)?;
    let theta = &result.theta_final;
    let train_acc = evaluate(&engine, &theta.values, &tr)?.pooled;
    let test_acc = te.as_ref().map(|t| evaluate(&engine, &theta.values, t)).transpose()?.map(|a| a.pooled);
    let weights = theta.block("W").map(<[f64]>::to_vec).unwrap_or_default();
    let argmax_feature = weights
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, w)| match best {
            Some((_, b)) if b >= w.abs() => best,
            _ => Some((i, w.abs())),
        })
        .map(|(i, _)| i + 1);

    if let Some(dir) = write_to {
        write_file(&dir.join(format!("result_{seed}.csv")), &format_history(&result.history, cfg.record_gip))?;
        if spec.dump_params {
            write_file(&dir.join(format!("params_{seed}.txt")), &format_params(theta))?;
        }
        if spec.track_gip {
            let trace = track_gip(&engine, &tr, &cfg, &init)?;
            write_file(&dir.join(format!("gip_{seed}.csv")), &format_gip_trace(&trace))?;
        }
        if let Some(grid) = &spec.theorem_probe {
            let probe = verify_theorem1(&engine, &tr, &init.values, grid, spec.n_mc, seed, None)?;
            write_file(&dir.join(format!("theorem_{seed}.csv")), &format_theorem(&probe))?;
        }
    }
    Ok(SeedOutcome {
        seed,
        train_acc,
        test_acc,
        iterations: result.history.len(),
        weights,
        argmax_feature,
        theta: Some(result.theta_final),
    })
}

/// Runs every seed on its own thread and returns outcomes in seed order.
pub fn run_seeds(spec: &ExperimentSpec, write_to: Option<&Path>) -> Result<Vec<SeedOutcome>, CliError> {
    thread::scope(|s| {
        let handles: Vec<_> = spec.seeds.iter().map(|&seed| s.spawn(move || run_seed(spec, seed, write_to))).collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    })
}

pub fn summarize(spec: &ExperimentSpec, runs: Vec<SeedOutcome>) -> Summary {
    let train: Vec<f64> = runs.iter().map(|r| r.train_acc).collect();
    let test: Option<Vec<f64>> = runs.iter().map(|r| r.test_acc).collect();
    let (mean_train_acc, std_train_acc) = mean_std(&train);
    let test_stats = test.map(|t| mean_std(&t));
    Summary {
        algo: spec.trainer.algo.to_string(),
        dataset: spec.dataset.name().to_string(),
        seeds: spec.seeds.clone(),
        mean_train_acc,
        std_train_acc,
        mean_test_acc: test_stats.map(|s| s.0),
        std_test_acc: test_stats.map(|s| s.1),
        runs,
    }
}

/// Trains every seed, writes per-seed files plus `summary.json`, and returns the summary.
pub fn run(spec: &ExperimentSpec) -> Result<Summary, CliError> {
    ensure_out_dir(&spec.out)?;
    let runs = run_seeds(spec, Some(&spec.out))?;
    let summary = summarize(spec, runs);
    let path = spec.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&path, &(json + "\n"))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NDomains,
    Gamma,
    Alpha,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.replace('-', "_").as_str() {
            "n_domains" => Ok(SweepAxis::NDomains),
            "gamma" => Ok(SweepAxis::Gamma),
            "alpha" => Ok(SweepAxis::Alpha),
            _ => Err(CliError::Config(format!("unknown sweep axis `{s}` (n_domains|gamma|alpha)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub algo: Algo,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

fn with_value(base: &ExperimentSpec, axis: SweepAxis, value: f64, algo: Algo) -> Result<ExperimentSpec, CliError> {
    let mut spec = base.clone();
    spec.trainer.algo = algo;
    spec.track_gip = false;
    spec.theorem_probe = None;
    match axis {
        SweepAxis::NDomains => match &mut spec.dataset {
            DatasetSpec::VecSprites { n_domains, .. } => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(CliError::Config(format!("n_domains must be a whole number, got {value}")));
                }
                *n_domains = value as usize;
            }
            _ => return Err(CliError::Config("sweeping n_domains needs dataset=vecsprites".into())),
        },
        SweepAxis::Gamma => spec.trainer.gamma = value,
        SweepAxis::Alpha => spec.trainer.alpha = value,
    }
    Ok(spec)
}

/// Crosses `values` with `algos`, writing `sweep.csv` into the output directory.
pub fn sweep(
    base: &ExperimentSpec,
    axis: SweepAxis,
    values: &[f64],
    algos: &[Algo],
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() || algos.is_empty() {
        return Err(CliError::Config("a sweep needs at least one value and one algorithm".into()));
    }
    ensure_out_dir(&base.out)?;
    let mut rows = Vec::new();
    let mut csv = String::from("value,algo,mean_test_acc,std_test_acc\n");
    for &value in values {
        for &algo in algos {
            let spec = with_value(base, axis, value, algo)?;
            let runs = run_seeds(&spec, None)?;
            if spec.dump_params {
                for r in &runs {
                    if let Some(theta) = &r.theta {
                        let name = format!("params_{value}_{algo}_{}.txt", r.seed);
                        write_file(&base.out.join(name), &format_params(theta))?;
                    }
                }
            }
            let test: Vec<f64> = runs
                .iter()
                .map(|r| r.test_acc.ok_or_else(|| CliError::Config("sweeps need a test split".into())))
                .collect::<Result<_, _>>()?;
            let (mean, std) = mean_std(&test);
            csv.push_str(&format!("{value},{algo},{mean},{std}\n"));
            rows.push(SweepRow { value, algo, mean_test_acc: mean, std_test_acc: std });
        }
    }
    write_file(&base.out.join("sweep.csv"), &csv)?;
    Ok(rows)
}

/// Writes the train and test splits for seed `seed` as `train.txt` and `test.txt`.
pub fn generate(spec: &DatasetSpec, seed: u64, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    if let DatasetSpec::File { .. } = spec {
        return Err(CliError::Config("gen needs dataset=linear or dataset=vecsprites".into()));
    }
    ensure_out_dir(dir)?;
    let (tr, te) = load_data(spec, seed)?;
    let te = te.expect("generated datasets always have a test split");
    let (a, b) = (dir.join("train.txt"), dir.join("test.txt"));
    write_file(&a, &format_dataset(&tr))?;
    write_file(&b, &format_dataset(&te))?;
    Ok((a, b))
}
