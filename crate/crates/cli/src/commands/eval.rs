//! `idcf eval`: metrics across seeds, Welch p-values between methods, and
//! MCC against the ground-truth confounders when a truth sidecar exists.

use std::collections::BTreeMap;
use std::path::Path;

use idcf::data::{write_tsv, Dataset, Split};
use idcf::error::Result;
use idcf::eval::{evaluate_model, mcc, welch_t_test, MetricKind};
use idcf::Method;

use super::{checkpoint_dir, format_float, load_dataset, load_model_pair};
use crate::config::{eval_threads, RunConfig};

pub struct EvalOutcome {
    /// (method, seed, metric, k, value)
    pub metric_rows: Vec<(Method, u64, MetricKind, usize, f64)>,
    /// (method, seed, mcc)
    pub mcc_rows: Vec<(Method, u64, f64)>,
}

/// Evaluates one (method, seed) checkpoint directory against a dataset.
pub fn evaluate_run(
    config: &RunConfig,
    data: &Dataset,
    method: Method,
    seed: u64,
    dir: &Path,
) -> Result<EvalOutcome> {
    let pair = load_model_pair(dir, method, data)?;
    let report = evaluate_model(
        &pair,
        data,
        &config.k_list,
        Split::Test,
        config.positive_threshold,
        eval_threads(),
    )?;
    let mut metric_rows = Vec::new();
    for (idx, &k) in config.k_list.iter().enumerate() {
        metric_rows.push((method, seed, MetricKind::Ndcg, k, report.mean_ndcg[idx]));
        metric_rows.push((method, seed, MetricKind::Recall, k, report.mean_recall[idx]));
    }
    let mut mcc_rows = Vec::new();
    if let (Some(truth), Some(posteriors)) = (&data.truth, &pair.posterior) {
        let learned: Vec<Vec<f64>> = posteriors.iter().map(|p| p.mean().to_vec()).collect();
        let report = mcc(&learned, &truth.z)?;
        mcc_rows.push((method, seed, report.mean));
    }
    Ok(EvalOutcome {
        metric_rows,
        mcc_rows,
    })
}

/// Writes metrics.tsv / pvalues.tsv / mcc.tsv from collected rows.
pub fn write_reports(
    out_dir: &Path,
    gamma: f64,
    metric_rows: &[(Method, u64, MetricKind, usize, f64)],
    mcc_rows: &[(Method, u64, f64)],
) -> Result<()> {
    let rows: Vec<String> = metric_rows
        .iter()
        .map(|(m, seed, kind, k, v)| {
            format!("{}\t{seed}\t{}\t{k}\t{}", m.name(), kind.name(), format_float(*v))
        })
        .collect();
    write_tsv(
        &out_dir.join("metrics.tsv"),
        "method\tseed\tmetric\tk\tvalue",
        &rows,
    )?;

    // Welch p-values between every ordered method pair, per (metric, k).
    let mut series: BTreeMap<(usize, &'static str, usize), Vec<f64>> = BTreeMap::new();
    for (m, _, kind, k, v) in metric_rows {
        let m_idx = Method::ALL.iter().position(|x| x == m).unwrap();
        series.entry((m_idx, kind.name(), *k)).or_default().push(*v);
    }
    let mut pvalue_rows = Vec::new();
    let methods: Vec<usize> = {
        let mut seen: Vec<usize> = series.keys().map(|(m, _, _)| *m).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    };
    for (i, &ma) in methods.iter().enumerate() {
        for &mb in &methods[i + 1..] {
            for kind in [MetricKind::Ndcg, MetricKind::Recall] {
                let ks: Vec<usize> = series
                    .keys()
                    .filter(|(m, kd, _)| *m == ma && *kd == kind.name())
                    .map(|(_, _, k)| *k)
                    .collect();
                for k in ks {
                    let a = &series[&(ma, kind.name(), k)];
                    let Some(b) = series.get(&(mb, kind.name(), k)) else {
                        continue;
                    };
                    if a.len() < 2 || b.len() < 2 {
                        continue;
                    }
                    let p = welch_t_test(a, b)?;
                    pvalue_rows.push(format!(
                        "{}\t{}\t{}\t{k}\t{}",
                        Method::ALL[ma].name(),
                        Method::ALL[mb].name(),
                        kind.name(),
                        format_float(p)
                    ));
                }
            }
        }
    }
    write_tsv(
        &out_dir.join("pvalues.tsv"),
        "method_a\tmethod_b\tmetric\tk\tp_value",
        &pvalue_rows,
    )?;

    if !mcc_rows.is_empty() {
        let rows: Vec<String> = mcc_rows
            .iter()
            .map(|(m, seed, v)| {
                format!("{}\t{}\t{seed}\t{}", m.name(), format_float(gamma), format_float(*v))
            })
            .collect();
        write_tsv(&out_dir.join("mcc.tsv"), "method\tgamma\tseed\tmcc", &rows)?;
    }
    Ok(())
}

pub fn run(config: &RunConfig) -> Result<()> {
    let data = load_dataset(config)?;
    let mut metric_rows = Vec::new();
    let mut mcc_rows = Vec::new();
    for method in config.method_list() {
        for &seed in &config.seeds {
            let dir = checkpoint_dir(config, method, seed);
            let outcome = evaluate_run(config, &data, method, seed, &dir)?;
            metric_rows.extend(outcome.metric_rows);
            mcc_rows.extend(outcome.mcc_rows);
        }
    }
    write_reports(&config.out_dir, config.gamma, &metric_rows, &mcc_rows)?;
    println!(
        "eval: wrote {} metric rows to {}",
        metric_rows.len(),
        config.out_dir.join("metrics.tsv").display()
    );
    Ok(())
}
