//! Synthetic confounded dataset generator.
//!
//! Users carry a 2-d latent confounder z_u drawn from a five-component
//! Gaussian mixture whose component index is the categorical proxy
//! w_u ∈ {1..5}. Exposure is Bernoulli with probability
//! α·sigmoid(leaky(z M e_zi) + γ·ε), so the confounder drives *which*
//! items a user sees; feedback scores e_uᵀe_i + β·z_uᵀe_zi + noise are
//! quantile-binned to ratings 1..5, so the same confounder also drives
//! *how items are rated*. The biased split keeps only exposed pairs; the
//! unbiased split reads 15 random items per user from the counterfactual
//! feedback table.

use std::path::Path;

use crate::data::{write_tsv, Split};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, RngStream, LEAKY_SLOPE};

pub const CONFOUNDER_DIM: usize = 2;
pub const PROXY_LEVELS: usize = 5;
/// Mixture component means sit on a circle of this radius.
const MIXTURE_RADIUS: f64 = 2.0;
/// Per-dimension standard deviation within a component.
const MIXTURE_SIGMA: f64 = 0.5;
/// Feedback noise standard deviation.
const FEEDBACK_NOISE_SIGMA: f64 = 0.1;
/// Items per user in the unbiased split.
const UNBIASED_ITEMS_PER_USER: usize = 15;
/// Fraction of the unbiased split used for validation.
const VALIDATION_FRACTION: f64 = 0.30;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Exposure density weight α ∈ [0, 1].
    pub alpha: f64,
    /// Confounding weight β ≥ 0 on feedback.
    pub beta: f64,
    /// Exposure noise weight γ ≥ 0.
    pub gamma: f64,
    /// Dimension of the preference embeddings e_u, e_i.
    pub pref_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 2000,
            num_items: 300,
            alpha: 0.1,
            beta: 2.0,
            gamma: 0.0,
            pref_dim: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::Config("num_users and num_items must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha = {} not in [0, 1]", self.alpha)));
        }
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("beta and gamma must be >= 0".into()));
        }
        if self.pref_dim == 0 {
            return Err(Error::Config("pref_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the generator knows that a learner does not get to see.
#[derive(Debug, Clone)]
pub struct SynthGroundTruth {
    /// Per-user confounder z_u.
    pub confounders: Vec<[f64; CONFOUNDER_DIM]>,
    /// Per-user proxy level w_u ∈ {1..5}.
    pub proxy: Vec<usize>,
    /// 2×2 mixing matrix M.
    pub mixing: [[f64; CONFOUNDER_DIM]; CONFOUNDER_DIM],
    /// Per-item confounder embeddings e_zi.
    pub item_conf_emb: Vec<[f64; CONFOUNDER_DIM]>,
    /// Per-user preference embeddings e_u.
    pub user_pref: Vec<Vec<f64>>,
    /// Per-item preference embeddings e_i.
    pub item_pref: Vec<Vec<f64>>,
    /// Exposure matrix a_ui.
    pub exposure: Vec<Vec<bool>>,
    /// Counterfactual feedback table r_ui ∈ {1..5}.
    pub feedback: Vec<Vec<u8>>,
}

/// Mixture mean for proxy level w: radius-2 points on a circle.
pub fn mixture_mean(w: usize) -> [f64; CONFOUNDER_DIM] {
    let angle = 2.0 * std::f64::consts::PI * w as f64 / PROXY_LEVELS as f64;
    [MIXTURE_RADIUS * angle.cos(), MIXTURE_RADIUS * angle.sin()]
}

/// Draws (z_u, w_u): w uniform over {1..5}, z | w normal around the
/// component mean with σ = 0.5 per dimension.
pub fn sample_confounders(
    config: &SynthConfig,
    rng: &mut RngStream,
) -> (Vec<[f64; CONFOUNDER_DIM]>, Vec<usize>) {
    let mut confounders = Vec::with_capacity(config.num_users);
    let mut proxy = Vec::with_capacity(config.num_users);
    for _ in 0..config.num_users {
        let w = 1 + rng.below(PROXY_LEVELS);
        let mean = mixture_mean(w);
        let z = [
            mean[0] + MIXTURE_SIGMA * rng.standard_normal(),
            mean[1] + MIXTURE_SIGMA * rng.standard_normal(),
        ];
        confounders.push(z);
        proxy.push(w);
    }
    (confounders, proxy)
}

/// Draws the mixing matrix (entries uniform in (−1, 1)) and the item/user
/// embeddings (standard normal entries).
pub fn sample_structure(
    config: &SynthConfig,
    rng: &mut RngStream,
) -> (
    [[f64; CONFOUNDER_DIM]; CONFOUNDER_DIM],
    Vec<[f64; CONFOUNDER_DIM]>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
) {
    let mut mixing = [[0.0; CONFOUNDER_DIM]; CONFOUNDER_DIM];
    for row in mixing.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    let item_conf_emb = (0..config.num_items)
        .map(|_| [rng.standard_normal(), rng.standard_normal()])
        .collect();
    let user_pref = (0..config.num_users)
        .map(|_| (0..config.pref_dim).map(|_| rng.standard_normal()).collect())
        .collect();
    let item_pref = (0..config.num_items)
        .map(|_| (0..config.pref_dim).map(|_| rng.standard_normal()).collect())
        .collect();
    (mixing, item_conf_emb, user_pref, item_pref)
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// z M e_zi for one (user, item) pair.
fn confounder_logit(
    z: &[f64; CONFOUNDER_DIM],
    mixing: &[[f64; CONFOUNDER_DIM]; CONFOUNDER_DIM],
    e_zi: &[f64; CONFOUNDER_DIM],
) -> f64 {
    let zm = [
        z[0] * mixing[0][0] + z[1] * mixing[1][0],
        z[0] * mixing[0][1] + z[1] * mixing[1][1],
    ];
    zm[0] * e_zi[0] + zm[1] * e_zi[1]
}

/// Exposure probability g_i(z_u) for a given noise draw ε.
pub fn exposure_probability(
    config: &SynthConfig,
    z: &[f64; CONFOUNDER_DIM],
    mixing: &[[f64; CONFOUNDER_DIM]; CONFOUNDER_DIM],
    e_zi: &[f64; CONFOUNDER_DIM],
    noise: f64,
) -> f64 {
    config.alpha * sigmoid(leaky(confounder_logit(z, mixing, e_zi)) + config.gamma * noise)
}

/// Bernoulli exposure draws. Per pair, in row-major (user, item) order, one
/// standard-normal ε and one uniform threshold draw are consumed, so runs
/// that differ only in α or γ share all underlying noise.
pub fn sample_exposure(
    config: &SynthConfig,
    truth: &SynthGroundTruth,
    rng: &mut RngStream,
) -> Result<Vec<Vec<bool>>> {
    if truth.confounders.len() != config.num_users || truth.item_conf_emb.len() != config.num_items
    {
        return Err(Error::Dimension(
            "sample_exposure: confounders and item embeddings must be populated".into(),
        ));
    }
    let mut exposure = Vec::with_capacity(config.num_users);
    for u in 0..config.num_users {
        let mut row = Vec::with_capacity(config.num_items);
        for i in 0..config.num_items {
            let eps = rng.standard_normal();
            let p = exposure_probability(
                config,
                &truth.confounders[u],
                &truth.mixing,
                &truth.item_conf_emb[i],
                eps,
            );
            row.push(rng.uniform01() < p);
        }
        exposure.push(row);
    }
    Ok(exposure)
}

/// Maps scores to {1..bins} by global equal-mass quantile binning. Equal
/// scores share the bin of their median rank, so a fully constant score
/// population lands in the median bin.
pub fn quantile_bin(scores: &[f64], bins: usize) -> Vec<u8> {
    let total = scores.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ratings = vec![0u8; total];
    let mut start = 0;
    while start < total {
        let mut end = start + 1;
        while end < total && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let median_pos = (start + end - 1) / 2;
        let bin = 1 + (bins * median_pos) / total;
        for &orig in &order[start..end] {
            ratings[orig] = bin as u8;
        }
        start = end;
    }
    ratings
}

/// Counterfactual feedback table: score = e_uᵀe_i + β·z_uᵀe_zi + ε with
/// ε ~ N(0, 0.1²), then 5-bin quantile normalization.
pub fn sample_feedback(
    config: &SynthConfig,
    truth: &SynthGroundTruth,
    rng: &mut RngStream,
) -> Result<Vec<Vec<u8>>> {
    if truth.user_pref.len() != config.num_users || truth.item_pref.len() != config.num_items {
        return Err(Error::Dimension(
            "sample_feedback: preference embeddings must be populated".into(),
        ));
    }
    let mut scores = Vec::with_capacity(config.num_users * config.num_items);
    for u in 0..config.num_users {
        for i in 0..config.num_items {
            let pref: f64 = truth.user_pref[u]
                .iter()
                .zip(truth.item_pref[i].iter())
                .map(|(a, b)| a * b)
                .sum();
            let conf = truth.confounders[u][0] * truth.item_conf_emb[i][0]
                + truth.confounders[u][1] * truth.item_conf_emb[i][1];
            scores.push(pref + config.beta * conf + FEEDBACK_NOISE_SIGMA * rng.standard_normal());
        }
    }
    let flat = quantile_bin(&scores, PROXY_LEVELS);
    Ok(flat
        .chunks(config.num_items)
        .map(|chunk| chunk.to_vec())
        .collect())
}

/// Observed training interactions plus the randomized validation/test splits.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    /// (user, item, rating), split = train: only exposed pairs.
    pub biased: Vec<(usize, usize, u8)>,
    /// (user, item, rating, split): 15 random items per user, 30% valid.
    pub unbiased: Vec<(usize, usize, u8, Split)>,
}

/// Biased split from exposure; unbiased split of 15 items per user sampled
/// without replacement, 30% of it marked valid, the rest test.
pub fn make_splits(
    config: &SynthConfig,
    truth: &SynthGroundTruth,
    rng: &mut RngStream,
) -> Result<DatasetBundle> {
    if truth.exposure.len() != config.num_users || truth.feedback.len() != config.num_users {
        return Err(Error::Dimension(
            "make_splits: exposure and feedback must be populated".into(),
        ));
    }
    if config.num_items < UNBIASED_ITEMS_PER_USER {
        return Err(Error::Config(format!(
            "need at least {UNBIASED_ITEMS_PER_USER} items for the unbiased split, have {}",
            config.num_items
        )));
    }
    let mut biased = Vec::new();
    for u in 0..config.num_users {
        for i in 0..config.num_items {
            if truth.exposure[u][i] {
                biased.push((u, i, truth.feedback[u][i]));
            }
        }
    }

    let mut unbiased: Vec<(usize, usize, u8, Split)> = Vec::new();
    for u in 0..config.num_users {
        let mut items: Vec<usize> = (0..config.num_items).collect();
        rng.shuffle(&mut items);
        let mut chosen: Vec<usize> = items[..UNBIASED_ITEMS_PER_USER].to_vec();
        chosen.sort_unstable();
        for i in chosen {
            unbiased.push((u, i, truth.feedback[u][i], Split::Test));
        }
    }
    let n_valid = (VALIDATION_FRACTION * unbiased.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..unbiased.len()).collect();
    rng.shuffle(&mut order);
    for &idx in order.iter().take(n_valid) {
        unbiased[idx].3 = Split::Valid;
    }
    Ok(DatasetBundle { biased, unbiased })
}

/// Runs the full generation pipeline deterministically from the config.
pub fn generate(config: &SynthConfig) -> Result<(SynthGroundTruth, DatasetBundle)> {
    config.validate()?;
    let root = RngStream::new(config.seed, "synthgen");
    let (confounders, proxy) = sample_confounders(config, &mut root.substream("confounders"));
    let (mixing, item_conf_emb, user_pref, item_pref) =
        sample_structure(config, &mut root.substream("structure"));
    let mut truth = SynthGroundTruth {
        confounders,
        proxy,
        mixing,
        item_conf_emb,
        user_pref,
        item_pref,
        exposure: Vec::new(),
        feedback: Vec::new(),
    };
    truth.exposure = sample_exposure(config, &truth, &mut root.substream("exposure"))?;
    truth.feedback = sample_feedback(config, &truth, &mut root.substream("feedback"))?;
    let bundle = make_splits(config, &truth, &mut root.substream("splits"))?;
    Ok((truth, bundle))
}

/// Writes the four dataset files into `dir`.
pub fn write_dataset(truth: &SynthGroundTruth, bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let interaction_header = "user_id\titem_id\trating\tsplit";

    let biased_rows: Vec<String> = bundle
        .biased
        .iter()
        .map(|&(u, i, r)| format!("{u}\t{i}\t{r}\ttrain"))
        .collect();
    write_tsv(
        &dir.join("interactions_biased.tsv"),
        interaction_header,
        &biased_rows,
    )?;

    let unbiased_rows: Vec<String> = bundle
        .unbiased
        .iter()
        .map(|&(u, i, r, split)| format!("{u}\t{i}\t{r}\t{}", split.name()))
        .collect();
    write_tsv(
        &dir.join("interactions_unbiased.tsv"),
        interaction_header,
        &unbiased_rows,
    )?;

    let feature_rows: Vec<String> = truth
        .proxy
        .iter()
        .enumerate()
        .map(|(u, w)| format!("{u}\t{w}"))
        .collect();
    write_tsv(&dir.join("user_features.tsv"), "user_id\tw", &feature_rows)?;

    let truth_rows: Vec<String> = truth
        .confounders
        .iter()
        .enumerate()
        .map(|(u, z)| format!("{u}\t{}\t{}", z[0], z[1]))
        .collect();
    write_tsv(&dir.join("truth.tsv"), "user_id\tz1\tz2", &truth_rows)?;
    Ok(())
}
