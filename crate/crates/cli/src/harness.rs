use std::io::Write;
use std::path::Path;
use std::time::Instant;

use drmksd::dgp::{child_seed, Dataset, DgpSpec};
use drmksd::estimator::{evaluate_grid, fit_dataset, rectangular_grid, Objective};
use drmksd::error::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn fold_seed(seed: u64) -> u64 {
    child_seed(seed, 1)
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    Ok(DgpSpec { kind: cfg.dgp.clone(), n: cfg.n, seed }.sample()?)
}

/// Result of `fit`, serialized as the command's JSON output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitOutput {
    pub theta_n: Vec<f64>,
    pub g_n: f64,
    pub ci: Option<Vec<[f64; 2]>>,
    pub gamma_condition_number: Option<f64>,
    pub variant: &'static str,
    pub converged: bool,
    pub warnings: Vec<String>,
}

pub fn fit(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<FitOutput, CliError> {
    let model = cfg.model()?;
    let kernel = cfg.kernel.build()?;
    let report = fit_dataset(dataset, model.as_ref(), &kernel, &cfg.fit_spec(fold_seed(seed)))?;
    Ok(FitOutput {
        theta_n: report.fit.theta,
        g_n: report.fit.objective,
        ci: report.ci,
        gamma_condition_number: report.gamma_condition_number,
        variant: cfg.variant.name(),
        converged: report.fit.converged,
        warnings: report.warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub rep: usize,
    pub seed: u64,
    pub status: &'static str,
    pub fit: Option<FitOutput>,
    pub ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub replications: usize,
    pub succeeded: usize,
    pub theta_star: Option<Vec<f64>>,
    pub mse: Option<Vec<f64>>,
    pub median_abs_error: Option<Vec<f64>>,
    /// Fraction of rows with intervals whose interval covers θ*, per coordinate.
    pub coverage: Option<Vec<f64>>,
    pub rows_with_ci: usize,
    pub level: f64,
    pub config: serde_json::Value,
}

pub fn replicate(cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, Summary), CliError> {
    let rows: Vec<ResultRow> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = child_seed(cfg.seed, rep as u64);
            let start = Instant::now();
            let outcome = simulate(cfg, seed).and_then(|ds| fit(cfg, &ds, seed));
            let ms = start.elapsed().as_millis();
            match outcome {
                Ok(out) => {
                    let status = if out.ci.is_some() { "ok" } else { "inference_unavailable" };
                    ResultRow { rep, seed, status, fit: Some(out), ms }
                }
                Err(e) => ResultRow { rep, seed, status: e.error, fit: None, ms },
            }
        })
        .collect();
    let summary = summarize(cfg, &rows);
    Ok((rows, summary))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

pub fn summarize(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Summary {
    let fits: Vec<&FitOutput> = rows.iter().filter_map(|r| r.fit.as_ref()).collect();
    let theta_star = Some(cfg.dgp.true_theta());
    let mut mse = None;
    let mut mae = None;
    let mut coverage = None;
    let with_ci: Vec<&FitOutput> = fits.iter().copied().filter(|f| f.ci.is_some()).collect();
    if let (Some(star), false) = (&theta_star, fits.is_empty()) {
        let p = star.len();
        mse = Some(
            (0..p)
                .map(|k| fits.iter().map(|f| (f.theta_n[k] - star[k]).powi(2)).sum::<f64>() / fits.len() as f64)
                .collect(),
        );
        mae = Some((0..p).map(|k| median(fits.iter().map(|f| (f.theta_n[k] - star[k]).abs()).collect())).collect());
        if !with_ci.is_empty() {
            coverage = Some(
                (0..p)
                    .map(|k| {
                        let hit = with_ci
                            .iter()
                            .filter(|f| {
                                let ci = f.ci.as_ref().unwrap()[k];
                                ci[0] <= star[k] && star[k] <= ci[1]
                            })
                            .count();
                        hit as f64 / with_ci.len() as f64
                    })
                    .collect(),
            );
        }
    }
    Summary {
        replications: rows.len(),
        succeeded: fits.len(),
        theta_star,
        mse,
        median_abs_error: mae,
        coverage,
        rows_with_ci: with_ci.len(),
        level: cfg.level,
        config: cfg.to_json(),
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn results_header(p: usize) -> String {
    let mut cols = vec!["rep".to_string(), "seed".into(), "status".into()];
    cols.extend((1..=p).map(|k| format!("theta_{k}")));
    cols.push("g_n".into());
    cols.extend((1..=p).map(|k| format!("ci_lo_{k}")));
    cols.extend((1..=p).map(|k| format!("ci_hi_{k}")));
    cols.push("converged".into());
    cols.push("ms".into());
    cols.join(",")
}

pub fn write_results<W: Write>(rows: &[ResultRow], p: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", results_header(p))?;
    for r in rows {
        let mut fields = vec![r.rep.to_string(), r.seed.to_string(), r.status.to_string()];
        match &r.fit {
            Some(f) => {
                fields.extend(f.theta_n.iter().map(|v| num(*v)));
                fields.push(num(f.g_n));
                match &f.ci {
                    Some(ci) => {
                        fields.extend(ci.iter().map(|c| num(c[0])));
                        fields.extend(ci.iter().map(|c| num(c[1])));
                    }
                    None => fields.extend(std::iter::repeat_n("NaN".to_string(), 2 * p)),
                }
                fields.push(f.converged.to_string());
            }
            None => fields.extend(std::iter::repeat_n(String::new(), 3 * p + 2)),
        }
        fields.push(r.ms.to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridScan {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub argmin: usize,
}

pub fn gridscan(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<GridScan, CliError> {
    let grid_spec = cfg.grid.as_ref().ok_or_else(|| CliError::usage("gridscan needs a `grid` section"))?;
    let axes: Vec<(f64, f64, f64)> = grid_spec.axes.iter().map(|a| (a[0], a[1], a[2])).collect();
    let points = rectangular_grid(&axes)?;
    let theta_box = drmksd::score::ThetaBox::new(cfg.theta_bound)?;
    if let Some(bad) = points.iter().find(|t| !theta_box.contains(t)) {
        return Err(CliError::usage(format!("grid point {bad:?} lies outside the Θ box")));
    }
    let model = cfg.model()?;
    let kernel = cfg.kernel.build()?;
    let spec = cfg.fit_spec(fold_seed(seed));
    let weights = spec.assemble(dataset)?;
    let objective = Objective::new(model.as_ref(), &kernel, &weights, cfg.variant, &dataset.y)?;
    let values = evaluate_grid(&objective, &points)?;
    let mut argmin = 0;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("g_n is not finite at {:?}", points[i])).into());
        }
        if *v < values[argmin] {
            argmin = i;
        }
    }
    Ok(GridScan { points, values, argmin })
}

pub fn write_grid<W: Write>(scan: &GridScan, mut out: W) -> std::io::Result<()> {
    let p = scan.points.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=p).map(|k| format!("theta_{k}")).collect();
    header.push("g_n".into());
    header.push("argmin".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, (t, v)) in scan.points.iter().zip(&scan.values).enumerate() {
        let mut fields: Vec<String> = t.iter().map(|x| num(*x)).collect();
        fields.push(num(*v));
        fields.push(if i == scan.argmin { "1" } else { "0" }.into());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Write to `path`, or stdout when absent.
pub fn with_output<F>(path: Option<&Path>, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match path {
        Some(p) => {
            let file = std::fs::File::create(p)
                .map_err(|e| CliError::usage(format!("cannot write {}: {e}", p.display())))?;
            let mut w = std::io::BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}
