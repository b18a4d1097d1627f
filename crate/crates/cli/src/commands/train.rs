//! `idcf train`: two-stage training with grid search on validation scores.

use std::path::Path;

use idcf::confounder::{train_confounder, ConfounderModel, ConfounderTrainConfig, TrainLog};
use idcf::data::{write_tsv, Dataset};
use idcf::error::{Error, Result};
use idcf::feedback::{
    train_feedback_with_posteriors, user_posteriors, FeedbackModel, FeedbackTrainConfig,
};
use idcf::numerics::RngStream;
use idcf::Method;

use super::{checkpoint_dir, format_float, load_dataset};
use crate::config::RunConfig;

struct GridRow {
    stage: &'static str,
    learning_rate: f64,
    weight_decay: f64,
    score: f64,
    selected: bool,
}

/// Trains one (method, seed) pair into `dir`, grid-searching each stage and
/// keeping the best checkpoint by validation score.
pub fn train_one(config: &RunConfig, data: &Dataset, method: Method, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let exposure = data.exposure();
    let mut grid_rows: Vec<GridRow> = Vec::new();

    // Stage 1: latent-confounder model, selected on validation ELBO.
    let confounder = if method.uses_confounder() {
        let mut best: Option<(f64, ConfounderModel, TrainLog)> = None;
        for &lr in &config.lr_grid {
            for &wd in &config.wd_grid {
                let label = format!("train/{}/stage1/lr{lr}/wd{wd}", method.name());
                let rng = RngStream::new(seed, &label);
                let mut model = match method {
                    Method::Idcf => ConfounderModel::ivae(
                        data.log.num_items(),
                        data.proxies.dim(),
                        config.latent_dim,
                        &config.hidden,
                        &mut rng.substream("init"),
                    )?,
                    Method::IdcfW => ConfounderModel::vae(
                        data.log.num_items(),
                        config.latent_dim,
                        &config.hidden,
                        &mut rng.substream("init"),
                    )?,
                    _ => unreachable!(),
                };
                model.init_posterior_variance(config.init_posterior_variance);
                let tc = ConfounderTrainConfig {
                    epochs: config.epochs,
                    batch_size: config.batch_size,
                    learning_rate: lr,
                    weight_decay: wd,
                    patience: config.patience,
                    valid_fraction: config.valid_fraction,
                    kl_warmup_epochs: config.kl_warmup_epochs,
                };
                let log = train_confounder(
                    &mut model,
                    &exposure,
                    &data.proxies,
                    &tc,
                    &mut rng.substream("train"),
                )?;
                let score = log.epochs[log.best_epoch].valid_elbo;
                let better = best.as_ref().is_none_or(|(s, _, _)| score > *s);
                grid_rows.push(GridRow {
                    stage: "confounder",
                    learning_rate: lr,
                    weight_decay: wd,
                    score,
                    selected: false,
                });
                if better {
                    best = Some((score, model, log));
                }
            }
        }
        let (best_score, model, log) = best.unwrap();
        for row in grid_rows.iter_mut().filter(|r| r.stage == "confounder") {
            row.selected = row.score == best_score;
        }
        model.to_checkpoint().save(&dir.join("confounder.ckpt"))?;
        std::fs::write(dir.join("confounder_log.tsv"), log.to_tsv())
            .map_err(|e| Error::io(dir, e))?;
        Some(model)
    } else {
        None
    };

    // Stage 2: feedback model, selected on validation NDCG@K.
    let posteriors = confounder
        .as_ref()
        .map(|c| user_posteriors(c, data))
        .transpose()?;
    let mut best: Option<(f64, FeedbackModel)> = None;
    for &lr in &config.lr_grid {
        for &wd in &config.wd_grid {
            let label = format!("train/{}/stage2/lr{lr}/wd{wd}", method.name());
            let rng = RngStream::new(seed, &label);
            let mut model = FeedbackModel::new(
                method,
                data.log.num_users(),
                data.log.num_items(),
                config.embedding_dim,
                if method.uses_confounder() {
                    config.latent_dim
                } else {
                    0
                },
                Some(&data.proxies.encoded),
                &mut rng.substream("init"),
            )?;
            let tc = FeedbackTrainConfig {
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: lr,
                weight_decay: wd,
                patience: config.patience,
                validation_k: config.k_list[0],
                positive_threshold: config.positive_threshold,
            };
            let log = train_feedback_with_posteriors(
                &mut model,
                posteriors.as_deref(),
                data,
                &tc,
                &mut rng.substream("train"),
            )?;
            let score = log.best_valid_ndcg;
            let better = best.as_ref().is_none_or(|(s, _)| score > *s);
            grid_rows.push(GridRow {
                stage: "feedback",
                learning_rate: lr,
                weight_decay: wd,
                score,
                selected: false,
            });
            if better {
                best = Some((score, model));
            }
        }
    }
    let (best_score, model) = best.unwrap();
    for row in grid_rows.iter_mut().filter(|r| r.stage == "feedback") {
        row.selected = row.score == best_score;
    }
    model.to_checkpoint().save(&dir.join("feedback.ckpt"))?;

    let rows: Vec<String> = grid_rows
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\t{}",
                r.stage,
                format_float(r.learning_rate),
                format_float(r.weight_decay),
                format_float(r.score),
                r.selected as u8
            )
        })
        .collect();
    write_tsv(
        &dir.join("grid_report.tsv"),
        "stage\tlr\twd\tscore\tselected",
        &rows,
    )?;
    Ok(())
}

pub fn run(config: &RunConfig) -> Result<()> {
    let data = load_dataset(config)?;
    for &seed in &config.seeds {
        let dir = checkpoint_dir(config, config.method, seed);
        train_one(config, &data, config.method, seed, &dir)?;
        println!(
            "train: {} seed {seed} -> {}",
            config.method.name(),
            dir.display()
        );
    }
    Ok(())
}
