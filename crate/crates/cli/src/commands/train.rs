use std::path::Path;

use boxrefine::toytrain::{generate_problem, train, TrainReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::fmt_f64;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Serialize)]
pub struct Summary {
    pub final_iou_per_layer: Vec<Option<f64>>,
    pub steps: usize,
    pub seed: u64,
    pub distill: bool,
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    status: &'static str,
    error: String,
    seed: u64,
    config: &'a RunConfig,
}

pub fn metrics_csv(report: &TrainReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io(format!("metrics: {e}"));
    w.write_record(["step", "layer", "mean_iou", "fgl", "ddf"]).map_err(fail)?;
    for r in &report.records {
        w.write_record([
            r.step.to_string(),
            r.layer.to_string(),
            r.mean_iou.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.fgl),
            fmt_f64(r.ddf),
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Io(format!("metrics: {e}")))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s.into_bytes()
}

/// Trains on the configured synthetic scene and writes results into `out_dir`.
pub fn run_train(config: &RunConfig, out_dir: &Path) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    write(out_dir, CONFIG_FILE, config.to_json().as_bytes())?;

    let d = &config.data;
    let problem = generate_problem(config.train.seed, d.num_queries, d.num_gt, d.scene_size, d.noise, config.layers)?;
    let report = match train(&problem, &config.train_config()) {
        Ok(r) => r,
        Err(e) => {
            let err = CliError::from(e);
            if matches!(err, CliError::Divergence(_)) {
                let diag = Diagnostics { status: "diverged", error: err.to_string(), seed: config.train.seed, config };
                write(out_dir, DIAGNOSTICS_FILE, &json(&diag))?;
            }
            return Err(err);
        }
    };
    eprintln!("trained {} steps in {:.3?}", config.train.steps, report.elapsed);

    write(out_dir, METRICS_FILE, &metrics_csv(&report)?)?;
    let summary = Summary {
        final_iou_per_layer: report.final_iou_per_layer.clone(),
        steps: config.train.steps,
        seed: config.train.seed,
        distill: config.train.distill,
    };
    write(out_dir, SUMMARY_FILE, &json(&summary))?;
    Ok(summary)
}
