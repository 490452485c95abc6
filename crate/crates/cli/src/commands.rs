use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use volterra_ident::fit::{fit_case, summarize, synthetic_data, FitResult, FitSummary};
use volterra_ident::loss::{write_history_csv, MeasurementSet};
use volterra_ident::prediction::{
    coverage_check, predict_band, truth_trajectories, ConfidenceBand, BAND_STREAM, TRUTH_STREAM,
};
use volterra_ident::simulator::{derive_seed, Trajectory};

use crate::config::{check_exists, ExperimentConfig};
use crate::manifest::RunManifest;

const ENSEMBLE: &str = "ensemble.csv";
const MEAN: &str = "mean.csv";
const MEASUREMENTS: &str = "measurements.csv";
const FIT: &str = "fit.json";
const HISTORY: &str = "history.csv";
const SUMMARY: &str = "summary.json";
const BAND: &str = "band.csv";
const COVERAGE: &str = "coverage.json";
const PLOT: &str = "plot.csv";
pub const SUMMARY_TABLE: &str = "summary.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    make_dir(&cfg.out)?;
    let mut manifest = RunManifest::open(cfg)?;
    let case = cfg.case_definition()?;
    let mut files = Vec::new();
    for &lambda in &cfg.lambdas {
        let dir = cfg.lambda_dir(lambda);
        make_dir(&dir)?;
        let (ens, data) = synthetic_data(&case, lambda, &cfg.data, cfg.seed)?;
        let paths = [dir.join(ENSEMBLE), dir.join(MEAN), dir.join(MEASUREMENTS)];
        let mut w = create(&paths[0])?;
        ens.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&paths[1])?;
        ens.mean.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&paths[2])?;
        data.write_csv(&mut w)?;
        w.flush()?;
        println!(
            "simulated {} lambda={lambda}: {} paths, {} measurements -> {}",
            cfg.case,
            ens.paths.len(),
            data.len(),
            dir.display()
        );
        files.extend(paths);
    }
    manifest.record("simulate", files, start.elapsed().as_secs_f64())
}

pub fn fit(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let case = cfg.case_definition()?;
    let mut files = Vec::new();
    for &lambda in &cfg.lambdas {
        let dir = cfg.lambda_dir(lambda);
        let input = dir.join(MEASUREMENTS);
        check_exists(&input, "simulate")?;
        let data = MeasurementSet::read_csv(open(&input)?).with_context(|| format!("reading {}", input.display()))?;
        let t = Instant::now();
        let result = fit_case(&case, &data, &cfg.fit)?;
        let summary = summarize(&result, &case, &data, lambda)?;

        let paths = [dir.join(FIT), dir.join(HISTORY), dir.join(SUMMARY)];
        write_json(&paths[0], &result)?;
        let mut w = create(&paths[1])?;
        write_history_csv(&mut w, &result.loss_history, &result.theta_history)?;
        w.flush()?;
        write_json(&paths[2], &summary)?;
        println!(
            "fit {} lambda={lambda}: theta_hat={:.6} rel_err={:+.4e} abs_err_sum={:.4} ({} iterations, {:?}, {:.1}s)",
            cfg.case,
            result.theta_hat,
            summary.relative_error,
            summary.abs_error_sum,
            result.iterations,
            result.termination,
            t.elapsed().as_secs_f64()
        );
        files.extend(paths);
    }
    let mut manifest = RunManifest::open(cfg)?;
    manifest.record("fit", files, start.elapsed().as_secs_f64())
}

/// Long-format `t,series,value` rows for the band and truth trajectories.
fn write_plot_csv<W: Write>(mut w: W, band: &ConfidenceBand, truth: &[Trajectory]) -> Result<()> {
    writeln!(w, "t,series,value")?;
    for (name, values) in [("lower", &band.lower), ("upper", &band.upper), ("mean", &band.mean)] {
        for (t, v) in band.grid.nodes().iter().zip(values.iter()) {
            writeln!(w, "{t},{name},{v}")?;
        }
    }
    let (h0, h1) = (band.grid.t0(), band.grid.t_end());
    let eps = 1e-9 * (1.0 + h1.abs());
    for (k, tr) in truth.iter().enumerate() {
        for (t, v) in tr.grid.nodes().iter().zip(&tr.values) {
            if *t >= h0 - eps && *t <= h1 + eps {
                writeln!(w, "{t},truth_{k},{v}")?;
            }
        }
    }
    Ok(())
}

pub fn predict(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let case = cfg.case_definition()?;
    let p = &cfg.prediction;
    let [h0, h1] = p.horizon;
    let mut files = Vec::new();
    for lambda in cfg.prediction_lambdas() {
        let dir = cfg.lambda_dir(lambda);
        let input = dir.join(FIT);
        check_exists(&input, "fit")?;
        let fit: FitResult = serde_json::from_reader(open(&input)?).with_context(|| format!("reading {}", input.display()))?;
        let band = predict_band(
            &case,
            fit.theta_hat,
            lambda,
            (h0, h1),
            p.band.n_paths,
            p.band.n_steps,
            p.band.level,
            derive_seed(cfg.seed, BAND_STREAM),
        )?;
        let truth = truth_trajectories(
            &case,
            lambda,
            h1,
            p.band.truth_paths,
            p.band.truth_steps,
            derive_seed(cfg.seed, TRUTH_STREAM),
        )?;
        let mut report = coverage_check(&band, &truth)?;
        if p.strict {
            report.passed = report.all_inside;
        }

        let paths = [dir.join(BAND), dir.join(COVERAGE), dir.join(PLOT)];
        let mut w = create(&paths[0])?;
        band.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&paths[1])?;
        report.write_json(&mut w)?;
        writeln!(w)?;
        w.flush()?;
        let mut w = create(&paths[2])?;
        write_plot_csv(&mut w, &band, &truth)?;
        w.flush()?;
        println!(
            "predict {} lambda={lambda} on [{h0}, {h1}] with theta_hat={:.6}: inside fraction {:.4} over {} trajectories -> {}",
            cfg.case,
            fit.theta_hat,
            report.overall,
            report.trajectories,
            if report.passed { "pass" } else { "fail" }
        );
        files.extend(paths);
    }
    let mut manifest = RunManifest::open(cfg)?;
    manifest.record("predict", files, start.elapsed().as_secs_f64())
}

fn read_summaries(cfg: &ExperimentConfig) -> Result<Vec<FitSummary>> {
    cfg.lambdas
        .iter()
        .map(|&lambda| {
            let path = cfg.lambda_dir(lambda).join(SUMMARY);
            check_exists(&path, "fit")?;
            serde_json::from_reader(open(&path)?).with_context(|| format!("reading {}", path.display()))
        })
        .collect()
}

pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let rows = read_summaries(cfg)?;
    let path: PathBuf = cfg.out.join(SUMMARY_TABLE);
    let mut w = create(&path)?;
    writeln!(w, "lambda,theta_true,theta_pred,relative_error,abs_error_sum,abs_error_mean")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.lambda, r.theta_true, r.theta_pred, r.relative_error, r.abs_error_sum, r.abs_error_mean
        )?;
    }
    w.flush()?;

    println!("{:>8} {:>10} {:>12} {:>14} {:>14} {:>14}", "lambda", "theta", "theta_hat", "rel. error", "sum |u err|", "mean |u err|");
    for r in &rows {
        println!(
            "{:>8} {:>10} {:>12.6} {:>14.4e} {:>14.4} {:>14.4}",
            r.lambda, r.theta_true, r.theta_pred, r.relative_error, r.abs_error_sum, r.abs_error_mean
        );
    }
    let mut manifest = RunManifest::open(cfg)?;
    manifest.record("report", vec![path], start.elapsed().as_secs_f64())
}
