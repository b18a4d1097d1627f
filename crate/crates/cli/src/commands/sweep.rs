//! `idcf sweep`: regenerate, train, and evaluate across a parameter grid.
//!
//! Each swept value gets its own subdirectory with per-seed datasets and
//! checkpoints; per-seed work may run in parallel (capped by
//! `IDCF_THREADS`), with results merged in seed order so the merged
//! reports are independent of the parallelism.

use std::path::PathBuf;

use idcf::data::{write_tsv, Dataset};
use idcf::error::{Error, Result};
use idcf::eval::MetricKind;
use idcf::synthgen::{generate, write_dataset};
use idcf::Method;

use super::{eval as eval_cmd, format_float, gen, train};
use crate::config::{eval_threads, RunConfig};

pub struct SweepArgs {
    /// `alpha=0.05,0.1,0.2` style specification.
    pub spec: String,
}

fn parse_spec(spec: &str) -> Result<(String, Vec<f64>)> {
    let Some((param, values)) = spec.split_once('=') else {
        return Err(Error::Config(format!(
            "sweep spec {spec:?} is not of the form param=v1,v2,..."
        )));
    };
    let param = param.trim().to_string();
    if !["alpha", "beta", "gamma"].contains(&param.as_str()) {
        return Err(Error::Config(format!(
            "sweep parameter must be alpha, beta, or gamma, got {param:?}"
        )));
    }
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("empty sweep value list".into()));
    }
    Ok((param, values))
}

/// One (value, seed) unit of work: generate data, train every method.
fn run_cell(config: &RunConfig, seed: u64, cell_dir: &PathBuf) -> Result<()> {
    let data_dir = cell_dir.join("data");
    let synth = gen::synth_config(config, seed);
    let (truth, bundle) = generate(&synth)?;
    write_dataset(&truth, &bundle, &data_dir)?;
    let data = Dataset::load_dir(&data_dir)?;
    for method in config.method_list() {
        let dir = cell_dir.join(method.name());
        train::train_one(config, &data, method, seed, &dir)?;
    }
    Ok(())
}

pub fn run(config: &RunConfig, args: &SweepArgs) -> Result<()> {
    let (param, values) = parse_spec(&args.spec)?;
    let mut sweep_metric_rows: Vec<String> = Vec::new();
    let mut sweep_mcc_rows: Vec<String> = Vec::new();

    for &value in &values {
        let mut cell_config = config.clone();
        cell_config.apply(&param, &format_float(value))?;
        let value_dir = config.out_dir.join(format!("{param}={}", format_float(value)));

        // Per-seed cells, in parallel waves; outputs land in per-seed dirs.
        let seeds = cell_config.seeds.clone();
        let wave = eval_threads().max(1);
        for chunk in seeds.chunks(wave) {
            let results: Vec<(u64, Result<()>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&seed| {
                        let cell_dir = value_dir.join(format!("seed{seed}"));
                        let cfg = &cell_config;
                        scope.spawn(move || (seed, run_cell(cfg, seed, &cell_dir)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for (_, result) in results {
                result?;
            }
        }

        // Evaluate each seed against its own dataset, merge in seed order.
        let mut metric_rows: Vec<(Method, u64, MetricKind, usize, f64)> = Vec::new();
        let mut mcc_rows: Vec<(Method, u64, f64)> = Vec::new();
        for &seed in &seeds {
            let cell_dir = value_dir.join(format!("seed{seed}"));
            let data = Dataset::load_dir(&cell_dir.join("data"))?;
            for method in cell_config.method_list() {
                let outcome = eval_cmd::evaluate_run(
                    &cell_config,
                    &data,
                    method,
                    seed,
                    &cell_dir.join(method.name()),
                )?;
                metric_rows.extend(outcome.metric_rows);
                mcc_rows.extend(outcome.mcc_rows);
            }
        }
        // Stable report order: method, then seed.
        metric_rows.sort_by_key(|(m, seed, kind, k, _)| {
            (
                Method::ALL.iter().position(|x| x == m).unwrap(),
                *seed,
                kind.name(),
                *k,
            )
        });
        mcc_rows.sort_by_key(|(m, seed, _)| {
            (Method::ALL.iter().position(|x| x == m).unwrap(), *seed)
        });
        eval_cmd::write_reports(&value_dir, cell_config.gamma, &metric_rows, &mcc_rows)?;

        for (m, seed, kind, k, v) in &metric_rows {
            sweep_metric_rows.push(format!(
                "{param}\t{}\t{}\t{seed}\t{}\t{k}\t{}",
                format_float(value),
                m.name(),
                kind.name(),
                format_float(*v)
            ));
        }
        for (m, seed, v) in &mcc_rows {
            sweep_mcc_rows.push(format!(
                "{}\t{}\t{seed}\t{}",
                m.name(),
                format_float(cell_config.gamma),
                format_float(*v)
            ));
        }
        println!("sweep: {param}={} done", format_float(value));
    }

    write_tsv(
        &config.out_dir.join("sweep_metrics.tsv"),
        "param\tvalue\tmethod\tseed\tmetric\tk\tvalue_metric",
        &sweep_metric_rows,
    )?;
    if !sweep_mcc_rows.is_empty() {
        write_tsv(
            &config.out_dir.join("mcc.tsv"),
            "method\tgamma\tseed\tmcc",
            &sweep_mcc_rows,
        )?;
    }
    Ok(())
}
