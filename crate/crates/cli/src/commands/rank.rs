//! `idcf rank`: emit ranked items with scores for chosen users.

use idcf::error::{Error, Result};
use idcf::numerics::RngStream;

use super::{checkpoint_dir, format_float, load_dataset, load_model_pair};
use crate::config::RunConfig;

pub struct RankArgs {
    /// Raw user ids; empty means every user.
    pub users: Vec<u64>,
    /// Raw item ids; `None` means every item.
    pub items: Option<Vec<u64>>,
}

pub fn run(config: &RunConfig, args: &RankArgs) -> Result<()> {
    let data = load_dataset(config)?;
    let seed = config.seeds[0];
    let dir = checkpoint_dir(config, config.method, seed);
    let pair = load_model_pair(&dir, config.method, &data)?;

    let users: Vec<usize> = if args.users.is_empty() {
        (0..data.log.num_users()).collect()
    } else {
        args.users
            .iter()
            .map(|&raw| {
                data.log
                    .user_ids
                    .dense(raw)
                    .ok_or_else(|| Error::ColdStart(format!("unknown user id {raw}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let candidates: Vec<usize> = match &args.items {
        Some(raw_items) => raw_items
            .iter()
            .map(|&raw| {
                data.log
                    .item_ids
                    .dense(raw)
                    .ok_or_else(|| Error::ColdStart(format!("unknown item id {raw}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => (0..data.log.num_items()).collect(),
    };

    println!("user_id\titem_id\tscore\trank");
    for &user in &users {
        let ranked = pair.rank_items(user, &candidates)?;
        let raw_user = data.log.user_ids.raw(user);
        let mut mc_rng = RngStream::new(seed, &format!("rank/mc/{raw_user}"));
        for (position, &item) in ranked.iter().enumerate() {
            let score = if config.mc_samples > 0 {
                pair.predict_mc(user, item, config.mc_samples, &mut mc_rng)?
            } else {
                pair.predict(user, item)?
            };
            println!(
                "{raw_user}\t{}\t{}\t{}",
                data.log.item_ids.raw(item),
                format_float(score),
                position + 1
            );
        }
    }
    Ok(())
}
