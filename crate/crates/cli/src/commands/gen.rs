//! `idcf gen`: write a synthetic dataset bundle.

use idcf::error::Result;
use idcf::synthgen::{generate, write_dataset, SynthConfig};

use crate::config::RunConfig;

pub fn synth_config(config: &RunConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        num_users: config.num_users,
        num_items: config.num_items,
        alpha: config.alpha,
        beta: config.beta,
        gamma: config.gamma,
        pref_dim: config.pref_dim,
        seed,
    }
}

pub fn run(config: &RunConfig) -> Result<()> {
    let seed = config.seeds[0];
    let synth = synth_config(config, seed);
    let (truth, bundle) = generate(&synth)?;
    write_dataset(&truth, &bundle, &config.data_dir)?;
    println!(
        "gen: wrote {} biased and {} unbiased interactions for {} users x {} items (seed {seed}) to {}",
        bundle.biased.len(),
        bundle.unbiased.len(),
        synth.num_users,
        synth.num_items,
        config.data_dir.display()
    );
    Ok(())
}
