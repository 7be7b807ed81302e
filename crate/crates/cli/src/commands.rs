use std::fs;
use std::path::{Path, PathBuf};

use adfilter_core::config::ExperimentConfig;
use adfilter_core::datagen::{build_dataset, read_dataset, write_dataset, Dataset, Split};
use adfilter_core::experiment::{
    build_model, gradcheck_family, write_curves, Checkpoint, Experiment, GradCheckRow, ToySystem,
};
use adfilter_core::filters::GainFamily;
use adfilter_core::learning::{FilterRun, ParameterSet};
use adfilter_core::metrics::{filter_rmse, write_analysis_csv, LoglikTrace};
use adfilter_core::{Error, Matrix, Result};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use crate::args::{ConfigArgs, EvaluateArgs, GradcheckArgs, RunArgs, TapergridArgs};

fn data_dir(dir: &Path) -> PathBuf {
    dir.join("data")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::validation("jobs", "need at least one job"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Resolved configuration for one job, based on the dataset when one exists.
fn job_config(cfg: &ConfigArgs, seed: Option<u64>, base: Option<&ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut c = cfg.resolve(base)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn print_config(c: &ExperimentConfig) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(c)?);
    Ok(())
}

/// Runs `f` on every job, in parallel when asked; the first error wins.
fn for_each_job<F>(cfg: &ConfigArgs, f: F) -> Result<bool>
where
    F: Fn(Option<u64>, &Path) -> Result<()> + Sync,
{
    let jobs = cfg.jobs()?;
    let results: Vec<Result<()>> = pool(cfg.jobs)?.install(|| jobs.par_iter().map(|(s, d)| f(*s, d)).collect());
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(true)
}

fn load_data(dir: &Path) -> Result<Dataset> {
    let d = data_dir(dir);
    if !d.join("meta.json").exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no dataset in {} (run `adfilter generate` first)", d.display()),
        )));
    }
    read_dataset(&d)
}

pub fn generate(a: &RunArgs) -> Result<bool> {
    if a.cfg.print_config {
        print_config(&a.cfg.resolve(None)?)?;
        return Ok(true);
    }
    for_each_job(&a.cfg, |seed, dir| {
        let c = job_config(&a.cfg, seed, None)?;
        let ds = build_dataset(&c)?;
        let out = data_dir(dir);
        fs::create_dir_all(&out)?;
        write_dataset(&ds, &out)?;
        let n = ds.train.len() + ds.val.len() + ds.test.len();
        println!("{}: {n} trajectories of {} steps ({} seed {})", out.display(), c.steps, c.system, c.seed);
        Ok(())
    })
}

pub fn train(a: &RunArgs) -> Result<bool> {
    if a.cfg.print_config {
        let (seed, dir) = a.cfg.jobs()?.remove(0);
        let base = load_data(&dir).ok().map(|d| d.config);
        print_config(&job_config(&a.cfg, seed, base.as_ref())?)?;
        return Ok(true);
    }
    for_each_job(&a.cfg, |seed, dir| {
        let ds = load_data(dir)?;
        let c = job_config(&a.cfg, seed, Some(&ds.config))?;
        let exp = Experiment::new(&c, ds)?;
        let result = exp.train()?;
        let ck = Checkpoint::new(&c, &result.params, &exp.fixed);
        ck.save(&dir.join("checkpoint.json"))?;
        write_curves(&dir.join("curves.csv"), &result)?;
        write_snapshots(&exp, &result.snapshots, &dir.join("snapshots.csv"))?;
        info!("{}: {} epochs", dir.display(), result.curves.len());
        if let Some(why) = result.diverged {
            return Err(Error::DivergedRun(why));
        }
        let last = result.curves.last();
        println!(
            "{}: {} {} trained {} epochs, final val loss {}",
            dir.display(),
            c.system,
            c.method,
            result.curves.len(),
            last.map_or(f64::NAN, |r| r.val_loss)
        );
        Ok(())
    })
}

/// Per-epoch forecast RMSE and parameter errors of the trained snapshots.
fn write_snapshots(exp: &Experiment, snapshots: &[ParameterSet], path: &Path) -> Result<()> {
    let states = exp.attractor_states()?;
    let keys: Vec<String> = exp.param_errors(&exp.init)?.into_keys().collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["epoch".to_string(), "forecast_rmse".to_string()];
    header.extend(keys.iter().map(|k| format!("mae_{k}")));
    w.write_record(&header).map_err(csv_io)?;
    let all = std::iter::once(&exp.init).chain(snapshots);
    for (epoch, p) in all.enumerate() {
        let errs = exp.param_errors(p)?;
        let mut row = vec![epoch.to_string(), exp.forecast_error(p, &states)?.rmse.to_string()];
        row.extend(keys.iter().map(|k| errs[k].to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_runs(dir: &Path, prefix: &str, exp: &Experiment, analyses: &[Vec<Matrix>]) -> Result<()> {
    for (i, (a, tr)) in analyses.iter().zip(&exp.dataset.test).enumerate() {
        write_analysis_csv(&dir.join(format!("{prefix}_test_{i:02}.csv")), a, &tr.truth[1..])?;
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<bool> {
    for_each_job(&a.cfg, |seed, dir| {
        let ds = load_data(dir)?;
        let path = a.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
        let ck = Checkpoint::load(&path)?;
        let c = job_config(&a.cfg, seed, Some(&ck.config))?;
        if a.cfg.print_config {
            return print_config(&c);
        }
        if (c.system, c.method) != (ck.system, ck.method) {
            return Err(Error::validation("method", format!("checkpoint holds {} {}", ck.system, ck.method)));
        }
        let mut exp = Experiment::new(&c, ds)?;
        exp.model = build_model(&c, &ck.fixed)?;
        exp.fixed = ck.fixed.clone();
        let params = ck.parameters()?;
        let ev = exp.evaluate(&params, &[])?;
        ev.report.write_json(&dir.join("report.json"))?;
        ev.trace.write_csv(&dir.join("trace.csv"))?;
        let analyses: Vec<Vec<Matrix>> = ev.runs.iter().map(|r: &FilterRun| r.analysis_means.clone()).collect();
        write_runs(dir, "analysis", &exp, &analyses)?;
        println!(
            "{}: forecast RMSE {:.6}, filter RMSE {:.6}, mean loglik {:.6}",
            dir.display(),
            ev.report.forecast_rmse,
            ev.report.filter_rmse,
            ev.report.mean_loglik
        );
        Ok(())
    })
}

pub fn oracle(a: &RunArgs) -> Result<bool> {
    for_each_job(&a.cfg, |seed, dir| {
        let ds = load_data(dir)?;
        let c = job_config(&a.cfg, seed, Some(&ds.config))?;
        if a.cfg.print_config {
            return print_config(&c);
        }
        let exp = Experiment::new(&c, ds)?;
        let kfs = exp.kalman_reference()?;
        let traces = kfs.iter().enumerate().map(|(i, kf)| exp.kalman_trace(kf, i)).collect::<Result<Vec<_>>>()?;
        let trace = LoglikTrace::average(&traces)?;
        trace.write_csv(&dir.join("oracle_trace.csv"))?;
        let analyses: Vec<Vec<Matrix>> = kfs.iter().map(|k| k.analyses.clone()).collect();
        write_runs(dir, "oracle_analysis", &exp, &analyses)?;
        let truth: Vec<Matrix> = exp.dataset.test.iter().flat_map(|t| t.truth[1..].iter().cloned()).collect();
        let flat: Vec<Matrix> = analyses.concat();
        let rmse = filter_rmse(&flat, &truth)?;
        let summary = json!({
            "system": c.system,
            "filter_rmse": rmse,
            "mean_loglik": trace.mean(),
            "loglik_total": kfs.iter().map(|k| k.loglik).collect::<Vec<_>>(),
            "steps": trace.len(),
            "p0_var": c.init_var(),
        });
        fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        println!("{}: Kalman filter RMSE {rmse:.6}, mean loglik {:.6}", dir.display(), trace.mean());
        Ok(())
    })
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    if a.steps == 0 || a.steps > 5 {
        return Err(Error::validation("T", format!("gradient checks run 1..=5 steps, got {}", a.steps)));
    }
    let cells: Vec<(GainFamily, ToySystem)> =
        GainFamily::ALL.iter().flat_map(|&f| ToySystem::ALL.iter().map(move |&s| (f, s))).collect();
    let rows: Vec<Result<GradCheckRow>> = pool(a.jobs)?.install(|| {
        cells.par_iter().map(|&(f, s)| gradcheck_family(f, s, a.seed, a.steps, a.corrupt, a.threshold)).collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    println!("{:<12} {:<8} {:>7} {:>12}  {:<12} status", "family", "system", "entries", "max_rel_err", "worst");
    for r in &rows {
        let status = if r.passed { "ok" } else { "FAIL" };
        println!(
            "{:<12} {:<8} {:>7} {:>12.3e}  {:<12} {status}",
            r.family.to_string(),
            r.system.label(),
            r.entries,
            r.max_rel_error,
            r.worst
        );
    }
    let ok = rows.iter().all(|r| r.passed);
    println!("{} (threshold {:e})", if ok { "all passed" } else { "gradient check FAILED" }, a.threshold);
    Ok(ok)
}

struct Cell {
    radius: f64,
    inflation: f64,
    val_nll: f64,
    val_rmse: f64,
    test_rmse: f64,
}

fn split_rmse(exp: &Experiment, runs: &[FilterRun], s: Split) -> Result<f64> {
    let mut a = Vec::new();
    let mut x = Vec::new();
    for (run, tr) in runs.iter().zip(exp.dataset.split(s)) {
        a.extend(run.analysis_means.iter().cloned());
        x.extend(tr.truth[1..].iter().cloned());
    }
    filter_rmse(&a, &x)
}

pub fn tapergrid(a: &TapergridArgs) -> Result<bool> {
    let (seed, dir) = a.cfg.jobs()?.remove(0);
    let ds = load_data(&dir)?;
    let base = job_config(&a.cfg, seed, Some(&ds.config))?;
    if a.cfg.print_config {
        print_config(&base)?;
        return Ok(true);
    }
    if !base.method.is_ensemble() {
        return Err(Error::validation("method", format!("taper grid needs an ensemble method, got {}", base.method)));
    }
    let grid: Vec<(f64, f64)> = a.radii.iter().flat_map(|&r| a.inflations.iter().map(move |&i| (r, i))).collect();
    let cells: Vec<Result<Cell>> = pool(a.cfg.jobs)?.install(|| {
        grid.par_iter()
            .map(|&(radius, inflation)| {
                let c = ExperimentConfig { taper_radius: Some(radius), inflation, ..base.clone() };
                c.validate()?;
                let exp = Experiment::new(&c, ds.clone())?;
                let val = exp.filter(&exp.init, Split::Val)?;
                let val_nll = val.iter().map(|r| r.nll() / r.steps() as f64).sum::<f64>() / val.len() as f64;
                let test = exp.filter(&exp.init, Split::Test)?;
                Ok(Cell {
                    radius,
                    inflation,
                    val_nll,
                    val_rmse: split_rmse(&exp, &val, Split::Val)?,
                    test_rmse: split_rmse(&exp, &test, Split::Test)?,
                })
            })
            .collect()
    });
    let mut cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    // best cell first
    cells.sort_by(|x, y| x.val_rmse.total_cmp(&y.val_rmse));
    let path = dir.join("heatmap.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_io)?;
    w.write_record(["taper_radius", "inflation", "val_nll", "val_filter_rmse", "test_filter_rmse"]).map_err(csv_io)?;
    for c in &cells {
        let row = [c.radius, c.inflation, c.val_nll, c.val_rmse, c.test_rmse].map(|v| v.to_string());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    if let Some(best) = cells.first() {
        println!(
            "{}: {} cells, best radius {} inflation {} (val filter RMSE {:.6})",
            path.display(),
            cells.len(),
            best.radius,
            best.inflation,
            best.val_rmse
        );
    }
    Ok(true)
}
