//! Subcommand implementations and shared pipeline helpers.

pub mod eval;
pub mod gen;
pub mod identify;
pub mod rank;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use idcf::confounder::ConfounderModel;
use idcf::data::{Checkpoint, Dataset};
use idcf::error::{Error, Result};
use idcf::feedback::{FeedbackModel, ModelPair};
use idcf::Method;

use crate::config::RunConfig;

pub fn checkpoint_dir(config: &RunConfig, method: Method, seed: u64) -> PathBuf {
    config.out_dir.join(method.name()).join(format!("seed{seed}"))
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    Dataset::load_dir(&config.data_dir)
}

/// Loads the checkpoint pair for one (method, seed) run directory.
pub fn load_model_pair(dir: &Path, method: Method, data: &Dataset) -> Result<ModelPair> {
    let feedback_path = dir.join("feedback.ckpt");
    if !feedback_path.exists() {
        return Err(Error::Data(format!(
            "missing checkpoint {}",
            feedback_path.display()
        )));
    }
    let feedback = FeedbackModel::from_checkpoint(Checkpoint::load(&feedback_path)?)?;
    let confounder = if method.uses_confounder() {
        let path = dir.join("confounder.ckpt");
        if !path.exists() {
            return Err(Error::Data(format!("missing checkpoint {}", path.display())));
        }
        Some(ConfounderModel::from_checkpoint(Checkpoint::load(&path)?)?)
    } else {
        None
    };
    ModelPair::assemble(feedback, confounder.as_ref(), data)
}

pub fn format_float(v: f64) -> String {
    format!("{v}")
}
