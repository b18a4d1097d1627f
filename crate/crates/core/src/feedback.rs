//! Deconfounded feedback model and baselines.
//!
//! The score splits the user's intrinsic preference from the confounder
//! effect: f(u, i, ẑ) = e_uᵀe_i + b_u + b_i + ẑᵀc_i, with c_i a second,
//! confounder-loading item embedding. Training samples ẑ afresh from the
//! frozen stage-1 posterior at every visit of a pair; inference plugs in
//! the posterior mean. Dropping the confounder term gives plain MF; the
//! MF-WF baseline instead adds a learned proxy-feature embedding into the
//! score.

use crate::confounder::ConfounderModel;
use crate::data::{Checkpoint, Dataset, NamedTensor, Split};
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;
use crate::numerics::{
    adam_step, clamp_prob, sample_reparam, sigmoid, AdamHyper, AdamState, DiagonalGaussian,
    Matrix, RngStream,
};
use crate::Method;

#[derive(Debug, Clone)]
pub struct FeedbackModel {
    method: Method,
    user_emb: Matrix, // m × k
    item_emb: Matrix, // n × k
    /// Confounder-loading item embeddings c_i (n × d), idcf/idcf-w only.
    conf_emb: Option<Matrix>,
    /// Proxy-feature embedding table (p × k), mf-wf only.
    proxy_emb: Option<Matrix>,
    /// Encoded per-user proxy features (m × p), mf-wf only.
    user_proxy: Option<Matrix>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
}

const EMB_INIT_STD: f64 = 0.1;

impl FeedbackModel {
    pub fn new(
        method: Method,
        num_users: usize,
        num_items: usize,
        embedding_dim: usize,
        latent_dim: usize,
        proxy_encoded: Option<&[Vec<f64>]>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let gauss_matrix = |rows: usize, cols: usize, label: &str| {
            let mut m = Matrix::zeros(rows, cols);
            let mut r = rng.substream(label);
            for v in m.data_mut() {
                *v = EMB_INIT_STD * r.standard_normal();
            }
            m
        };
        let conf_emb = if method.uses_confounder() {
            if latent_dim == 0 {
                return Err(Error::Dimension(
                    "confounder-aware model needs latent_dim > 0".into(),
                ));
            }
            Some(gauss_matrix(num_items, latent_dim, "conf_emb"))
        } else {
            None
        };
        let (proxy_emb, user_proxy) = if method == Method::MfWf {
            let encoded = proxy_encoded.ok_or_else(|| {
                Error::Data("mf-wf needs proxy features for every user".into())
            })?;
            if encoded.len() != num_users {
                return Err(Error::Dimension(format!(
                    "proxy table has {} rows for {num_users} users",
                    encoded.len()
                )));
            }
            let p = encoded.first().map_or(0, |v| v.len());
            if p == 0 {
                return Err(Error::Data("empty proxy features".into()));
            }
            let mut table = Matrix::zeros(num_users, p);
            for (u, row) in encoded.iter().enumerate() {
                if row.len() != p {
                    return Err(Error::Dimension("ragged proxy features".into()));
                }
                table.row_mut(u).copy_from_slice(row);
            }
            (Some(gauss_matrix(p, embedding_dim, "proxy_emb")), Some(table))
        } else {
            (None, None)
        };
        Ok(FeedbackModel {
            method,
            user_emb: gauss_matrix(num_users, embedding_dim, "user_emb"),
            item_emb: gauss_matrix(num_items, embedding_dim, "item_emb"),
            conf_emb,
            proxy_emb,
            user_proxy,
            user_bias: vec![0.0; num_users],
            item_bias: vec![0.0; num_items],
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.conf_emb.as_ref().map_or(0, |c| c.cols())
    }

    fn check_ids(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.num_users() {
            return Err(Error::ColdStart(format!(
                "user {user} not in trained range 0..{}",
                self.num_users()
            )));
        }
        if item >= self.num_items() {
            return Err(Error::ColdStart(format!(
                "item {item} not in trained range 0..{}",
                self.num_items()
            )));
        }
        Ok(())
    }

    /// The mf-wf proxy contribution: (w_uᵀ P) · e_i.
    fn proxy_term(&self, user: usize, item: usize) -> f64 {
        match (&self.proxy_emb, &self.user_proxy) {
            (Some(table), Some(users)) => {
                let w = users.row(user);
                let e_i = self.item_emb.row(item);
                let mut acc = 0.0;
                for (p, &wp) in w.iter().enumerate() {
                    if wp != 0.0 {
                        let row = table.row(p);
                        for (c, &ei) in e_i.iter().enumerate() {
                            acc += wp * row[c] * ei;
                        }
                    }
                }
                acc
            }
            _ => 0.0,
        }
    }

    /// Raw training-time score f1(u,i) + f2(z,i); the logistic link is
    /// applied by the loss, not here.
    pub fn score_train(&self, user: usize, item: usize, z_sample: &[f64]) -> Result<f64> {
        self.check_ids(user, item)?;
        let mut s = self.user_bias[user] + self.item_bias[item];
        let e_u = self.user_emb.row(user);
        let e_i = self.item_emb.row(item);
        for (a, b) in e_u.iter().zip(e_i.iter()) {
            s += a * b;
        }
        if let Some(conf) = &self.conf_emb {
            if z_sample.len() != conf.cols() {
                return Err(Error::Dimension(format!(
                    "latent sample length {} != {}",
                    z_sample.len(),
                    conf.cols()
                )));
            }
            let c_i = conf.row(item);
            for (z, c) in z_sample.iter().zip(c_i.iter()) {
                s += z * c;
            }
        }
        s += self.proxy_term(user, item);
        Ok(s)
    }

    // --- flat parameter layout: user_emb, item_emb, conf_emb?, proxy_emb?,
    //     user_bias, item_bias (user_proxy is data, not a parameter) ---

    pub fn param_count(&self) -> usize {
        self.user_emb.data().len()
            + self.item_emb.data().len()
            + self.conf_emb.as_ref().map_or(0, |c| c.data().len())
            + self.proxy_emb.as_ref().map_or(0, |p| p.data().len())
            + self.user_bias.len()
            + self.item_bias.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.user_emb.data());
        out.extend_from_slice(self.item_emb.data());
        if let Some(c) = &self.conf_emb {
            out.extend_from_slice(c.data());
        }
        if let Some(p) = &self.proxy_emb {
            out.extend_from_slice(p.data());
        }
        out.extend_from_slice(&self.user_bias);
        out.extend_from_slice(&self.item_bias);
    }

    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if src.len() < need {
            return Err(Error::Dimension(format!(
                "feedback read_params: need {need}, got {}",
                src.len()
            )));
        }
        let mut offset = 0;
        let copy = |dst: &mut [f64], offset: &mut usize| {
            dst.copy_from_slice(&src[*offset..*offset + dst.len()]);
            *offset += dst.len();
        };
        copy(self.user_emb.data_mut(), &mut offset);
        copy(self.item_emb.data_mut(), &mut offset);
        if let Some(c) = self.conf_emb.as_mut() {
            copy(c.data_mut(), &mut offset);
        }
        if let Some(p) = self.proxy_emb.as_mut() {
            copy(p.data_mut(), &mut offset);
        }
        copy(&mut self.user_bias, &mut offset);
        copy(&mut self.item_bias, &mut offset);
        Ok(offset)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let method_code = Method::ALL
            .iter()
            .position(|&m| m == self.method)
            .unwrap() as f64;
        ckpt.push(NamedTensor::vector(
            "meta",
            vec![
                method_code,
                self.num_users() as f64,
                self.num_items() as f64,
                self.embedding_dim() as f64,
                self.latent_dim() as f64,
                self.user_proxy.as_ref().map_or(0, |p| p.cols()) as f64,
            ],
        ));
        let mut push_matrix = |name: &str, m: &Matrix| {
            ckpt.push(NamedTensor::matrix(
                name,
                m.rows(),
                m.cols(),
                m.data().to_vec(),
            ));
        };
        push_matrix("user_emb", &self.user_emb);
        push_matrix("item_emb", &self.item_emb);
        if let Some(c) = &self.conf_emb {
            push_matrix("conf_emb", c);
        }
        if let Some(p) = &self.proxy_emb {
            push_matrix("proxy_emb", p);
        }
        if let Some(up) = &self.user_proxy {
            push_matrix("user_proxy", up);
        }
        ckpt.push(NamedTensor::vector("user_bias", self.user_bias.clone()));
        ckpt.push(NamedTensor::vector("item_bias", self.item_bias.clone()));
        ckpt
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let meta = ckpt.take("meta")?;
        if meta.data.len() != 6 {
            return Err(Error::Checkpoint("meta tensor must have 6 values".into()));
        }
        let method = *Method::ALL
            .get(meta.data[0] as usize)
            .ok_or_else(|| Error::Checkpoint(format!("bad method code {}", meta.data[0])))?;
        let take_matrix = |ckpt: &mut Checkpoint, name: &str| -> Result<Matrix> {
            let t = ckpt.take(name)?;
            Matrix::from_vec(t.rows, t.cols, t.data)
        };
        let user_emb = take_matrix(&mut ckpt, "user_emb")?;
        let item_emb = take_matrix(&mut ckpt, "item_emb")?;
        let conf_emb = if method.uses_confounder() {
            Some(take_matrix(&mut ckpt, "conf_emb")?)
        } else {
            None
        };
        let (proxy_emb, user_proxy) = if method == Method::MfWf {
            (
                Some(take_matrix(&mut ckpt, "proxy_emb")?),
                Some(take_matrix(&mut ckpt, "user_proxy")?),
            )
        } else {
            (None, None)
        };
        let user_bias = ckpt.take("user_bias")?.data;
        let item_bias = ckpt.take("item_bias")?.data;
        if user_bias.len() != user_emb.rows() || item_bias.len() != item_emb.rows() {
            return Err(Error::Checkpoint("bias lengths contradict embeddings".into()));
        }
        Ok(FeedbackModel {
            method,
            user_emb,
            item_emb,
            conf_emb,
            proxy_emb,
            user_proxy,
            user_bias,
            item_bias,
        })
    }
}

/// A trained feedback model plus the per-user stage-1 posteriors it needs
/// at inference time (absent for the plain factorization baselines).
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub feedback: FeedbackModel,
    pub posterior: Option<Vec<DiagonalGaussian>>,
}

impl ModelPair {
    /// Computes per-user posteriors from the confounder model and dataset.
    pub fn assemble(
        feedback: FeedbackModel,
        confounder: Option<&ConfounderModel>,
        data: &Dataset,
    ) -> Result<ModelPair> {
        let posterior = match confounder {
            Some(model) => Some(user_posteriors(model, data)?),
            None => {
                if feedback.conf_emb.is_some() {
                    return Err(Error::Data(
                        "confounder-aware feedback model assembled without a confounder model"
                            .into(),
                    ));
                }
                None
            }
        };
        Ok(ModelPair {
            feedback,
            posterior,
        })
    }

    fn score_infer(&self, user: usize, item: usize) -> Result<f64> {
        let zbar_store;
        let zbar: &[f64] = match &self.posterior {
            Some(posteriors) => {
                zbar_store = posteriors[user].mean().to_vec();
                &zbar_store
            }
            None => &[],
        };
        self.feedback.score_train(user, item, zbar)
    }

    /// Adjusted prediction sigmoid(e_uᵀe_i + z̄_uᵀc_i + b_u + b_i), clamped
    /// strictly inside (0, 1).
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        Ok(clamp_prob(sigmoid(self.score_infer(user, item)?)))
    }

    /// Monte-Carlo variant: averages sigmoid(score) over posterior samples
    /// instead of plugging in the posterior mean.
    pub fn predict_mc(
        &self,
        user: usize,
        item: usize,
        samples: usize,
        rng: &mut RngStream,
    ) -> Result<f64> {
        let posteriors = match &self.posterior {
            Some(p) => p,
            None => return self.predict(user, item),
        };
        if samples == 0 {
            return self.predict(user, item);
        }
        let mut total = 0.0;
        for _ in 0..samples {
            let z = sample_reparam(&posteriors[user], rng);
            total += clamp_prob(sigmoid(self.feedback.score_train(user, item, &z)?));
        }
        Ok(total / samples as f64)
    }

    /// Candidates sorted by predicted score descending, ties broken by
    /// ascending item id.
    pub fn rank_items(&self, user: usize, candidates: &[usize]) -> Result<Vec<usize>> {
        if candidates.is_empty() {
            return Err(Error::Domain("rank_items: empty candidate list".into()));
        }
        let mut scored = Vec::with_capacity(candidates.len());
        for &item in candidates {
            scored.push((item, self.predict(user, item)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(scored.into_iter().map(|(item, _)| item).collect())
    }
}

/// q(ẑ | a_u, w_u) for every user in the dataset.
pub fn user_posteriors(
    model: &ConfounderModel,
    data: &Dataset,
) -> Result<Vec<DiagonalGaussian>> {
    let exposure = data.exposure();
    let mut posteriors = Vec::with_capacity(exposure.len());
    for (a, w) in exposure.iter().zip(data.proxies.encoded.iter()) {
        posteriors.push(model.encode(a, w)?);
    }
    Ok(posteriors)
}

#[derive(Debug, Clone)]
pub struct FeedbackTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Early-stop patience on validation NDCG@`validation_k`.
    pub patience: usize,
    pub validation_k: usize,
    /// Ratings at or above this count as positive feedback.
    pub positive_threshold: f64,
}

impl Default for FeedbackTrainConfig {
    fn default() -> Self {
        FeedbackTrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            patience: 10,
            validation_k: 5,
            positive_threshold: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeedbackTrainLog {
    /// (epoch, mean training BCE, validation NDCG@K).
    pub epochs: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
}

/// Trains against binarized feedback with BCE, drawing a fresh posterior
/// sample for ẑ_u at every visit of a pair. Early-stops on validation
/// NDCG@K and restores the best parameters.
pub fn train_feedback(
    model: &mut FeedbackModel,
    confounder: Option<&ConfounderModel>,
    data: &Dataset,
    config: &FeedbackTrainConfig,
    rng: &mut RngStream,
) -> Result<FeedbackTrainLog> {
    if model.conf_emb.is_some() && confounder.is_none() {
        return Err(Error::Data(
            "confounder-aware feedback model trained without a confounder checkpoint".into(),
        ));
    }
    let posteriors = confounder
        .map(|c| user_posteriors(c, data))
        .transpose()?;
    train_feedback_with_posteriors(model, posteriors.as_deref(), data, config, rng)
}

/// As [`train_feedback`] but with the stage-1 posteriors supplied directly.
pub fn train_feedback_with_posteriors(
    model: &mut FeedbackModel,
    posteriors: Option<&[DiagonalGaussian]>,
    data: &Dataset,
    config: &FeedbackTrainConfig,
    rng: &mut RngStream,
) -> Result<FeedbackTrainLog> {
    struct Pair {
        user: usize,
        item: usize,
        target: f64,
    }
    let pairs: Vec<Pair> = data
        .log
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| Pair {
            user: r.user,
            item: r.item,
            target: (r.rating >= config.positive_threshold) as u8 as f64,
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data("train_feedback: no training interactions".into()));
    }
    if let Some(p) = posteriors {
        if p.len() != model.num_users() {
            return Err(Error::Dimension(format!(
                "{} posteriors for {} users",
                p.len(),
                model.num_users()
            )));
        }
    }

    let latent_dim = model.latent_dim();
    let k = model.embedding_dim();

    // Flat layout offsets, matching write_params order.
    let off_user = 0;
    let off_item = off_user + model.user_emb.data().len();
    let off_conf = off_item + model.item_emb.data().len();
    let off_proxy = off_conf + model.conf_emb.as_ref().map_or(0, |c| c.data().len());
    let off_ubias = off_proxy + model.proxy_emb.as_ref().map_or(0, |p| p.data().len());
    let off_ibias = off_ubias + model.user_bias.len();

    let mut params = Vec::with_capacity(model.param_count());
    model.write_params(&mut params);
    let mut adam = AdamState::new(
        params.len(),
        AdamHyper::with_learning_rate(config.learning_rate),
    );
    let mut grads = vec![0.0; params.len()];

    let mut shuffle_rng = rng.substream("shuffle");
    let mut sample_rng = rng.substream("posterior-samples");

    let zbar: Option<Vec<Vec<f64>>> =
        posteriors.map(|ps| ps.iter().map(|p| p.mean().to_vec()).collect());
    let valid_items = data.log.user_split_items(Split::Valid);

    let mut log = FeedbackTrainLog::default();
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut since_best = 0;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &idx in batch {
                let pair = &pairs[idx];
                let (u, i) = (pair.user, pair.item);
                let z: Vec<f64> = match posteriors {
                    Some(ps) => sample_reparam(&ps[u], &mut sample_rng),
                    None => Vec::new(),
                };
                // Score recomputed inline from the flat parameter vector.
                let e_u = &params[off_user + u * k..off_user + (u + 1) * k];
                let e_i = &params[off_item + i * k..off_item + (i + 1) * k];
                let mut s = params[off_ubias + u] + params[off_ibias + i];
                for (a, b) in e_u.iter().zip(e_i.iter()) {
                    s += a * b;
                }
                if latent_dim > 0 {
                    let c_i = &params[off_conf + i * latent_dim..off_conf + (i + 1) * latent_dim];
                    for (zv, cv) in z.iter().zip(c_i.iter()) {
                        s += zv * cv;
                    }
                }
                let proxy_row = model.user_proxy.as_ref().map(|up| up.row(u));
                if let (Some(w), Some(pe)) = (proxy_row, model.proxy_emb.as_ref()) {
                    for (p, &wp) in w.iter().enumerate() {
                        if wp != 0.0 {
                            let t_row = &params[off_proxy + p * k..off_proxy + (p + 1) * k];
                            for (c, &ei) in e_i.iter().enumerate() {
                                s += wp * t_row[c] * ei;
                            }
                        }
                    }
                    debug_assert_eq!(pe.cols(), k);
                }

                let prob = sigmoid(s);
                let target = pair.target;
                epoch_loss -= if target == 1.0 {
                    prob.max(1e-12).ln()
                } else {
                    (1.0 - prob).max(1e-12).ln()
                };
                let g = (prob - target) * inv;

                // d s / d e_u = e_i (+ nothing else touches e_u).
                for c in 0..k {
                    grads[off_user + u * k + c] += g * e_i[c];
                }
                // d s / d e_i = e_u + proxy contribution.
                let mut ei_grad_base: Vec<f64> = e_u.to_vec();
                if let Some(w) = proxy_row {
                    for (p, &wp) in w.iter().enumerate() {
                        if wp != 0.0 {
                            let t_row = &params[off_proxy + p * k..off_proxy + (p + 1) * k];
                            for c in 0..k {
                                ei_grad_base[c] += wp * t_row[c];
                            }
                        }
                    }
                }
                for c in 0..k {
                    grads[off_item + i * k + c] += g * ei_grad_base[c];
                }
                if latent_dim > 0 {
                    for d in 0..latent_dim {
                        grads[off_conf + i * latent_dim + d] += g * z[d];
                    }
                }
                if let Some(w) = proxy_row {
                    for (p, &wp) in w.iter().enumerate() {
                        if wp != 0.0 {
                            for c in 0..k {
                                grads[off_proxy + p * k + c] += g * wp * e_i[c];
                            }
                        }
                    }
                }
                grads[off_ubias + u] += g;
                grads[off_ibias + i] += g;
            }
            if config.weight_decay != 0.0 {
                for (g, p) in grads.iter_mut().zip(params.iter()) {
                    *g += config.weight_decay * p;
                }
            }
            adam_step(&mut adam, &mut params, &grads)?;
        }
        model.read_params(&params)?;

        let valid_ndcg = validation_ndcg(
            model,
            zbar.as_deref(),
            &valid_items,
            config.validation_k,
            config.positive_threshold,
        )?;
        log.epochs
            .push((epoch, epoch_loss / pairs.len() as f64, valid_ndcg));

        if valid_ndcg > best {
            best = valid_ndcg;
            best_params.copy_from_slice(&params);
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    model.read_params(&best_params)?;
    log.best_valid_ndcg = best;
    Ok(log)
}

/// Mean NDCG@K over users with at least one positive validation item,
/// scoring with the posterior-mean plug-in.
fn validation_ndcg(
    model: &FeedbackModel,
    zbar: Option<&[Vec<f64>]>,
    valid_items: &[Vec<(usize, f64)>],
    k: usize,
    positive_threshold: f64,
) -> Result<f64> {
    let empty: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut users = 0;
    for (u, items) in valid_items.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let positives: std::collections::HashSet<usize> = items
            .iter()
            .filter(|(_, r)| *r >= positive_threshold)
            .map(|(i, _)| *i)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let z: &[f64] = match zbar {
            Some(zs) => &zs[u],
            None => &empty,
        };
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(items.len());
        for &(item, _) in items {
            scored.push((item, model.score_train(u, item, z)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let ranked: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
        total += ndcg_at_k(&ranked, &positives, k)?;
        users += 1;
    }
    if users == 0 {
        // No scorable validation users; treat as flat so early stopping
        // degenerates to the epoch budget.
        return Ok(0.0);
    }
    Ok(total / users as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, write_dataset, SynthConfig};

    fn zero_model(method: Method, m: usize, n: usize, k: usize, d: usize) -> FeedbackModel {
        let mut rng = RngStream::new(0, "fb-zero");
        let proxies: Option<Vec<Vec<f64>>> = (method == Method::MfWf)
            .then(|| (0..m).map(|u| vec![(u % 2) as f64, ((u + 1) % 2) as f64]).collect());
        let mut model =
            FeedbackModel::new(method, m, n, k, d, proxies.as_deref(), &mut rng).unwrap();
        let zeros = vec![0.0; model.param_count()];
        model.read_params(&zeros).unwrap();
        model
    }

    #[test]
    fn zero_parameters_score_zero() {
        let model = zero_model(Method::Idcf, 3, 4, 2, 2);
        assert_eq!(model.score_train(1, 2, &[0.5, -0.5]).unwrap(), 0.0);
    }

    #[test]
    fn zero_conf_embedding_reduces_to_mf() {
        let mut rng = RngStream::new(1, "fb-red");
        let mut model = FeedbackModel::new(Method::Idcf, 3, 4, 2, 2, None, &mut rng).unwrap();
        // Zero out only the confounder loadings.
        if let Some(c) = model.conf_emb.as_mut() {
            c.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let with_z = model.score_train(2, 1, &[3.0, -4.0]).unwrap();
        let without_z = model.score_train(2, 1, &[0.0, 0.0]).unwrap();
        assert_eq!(with_z, without_z);
    }

    #[test]
    fn score_matches_independent_dot_product() {
        let mut rng = RngStream::new(2, "fb-dot");
        let model = FeedbackModel::new(Method::Idcf, 5, 6, 3, 2, None, &mut rng).unwrap();
        let z = [0.3, -1.1];
        let s = model.score_train(4, 5, &z).unwrap();
        // Re-evaluation straight from the raw fields.
        let mut expected = model.user_bias[4] + model.item_bias[5];
        for c in 0..3 {
            expected += model.user_emb[(4, c)] * model.item_emb[(5, c)];
        }
        for d in 0..2 {
            expected += z[d] * model.conf_emb.as_ref().unwrap()[(5, d)];
        }
        assert!((s - expected).abs() <= 1e-12);
    }

    #[test]
    fn additivity_of_confounder_term() {
        let mut rng = RngStream::new(3, "fb-add");
        let model = FeedbackModel::new(Method::Idcf, 3, 3, 4, 2, None, &mut rng).unwrap();
        let z = [0.7, 0.2];
        let s_z = model.score_train(1, 2, &z).unwrap();
        let s_0 = model.score_train(1, 2, &[0.0, 0.0]).unwrap();
        let c_i = model.conf_emb.as_ref().unwrap().row(2);
        let expected = z[0] * c_i[0] + z[1] * c_i[1];
        assert!((s_z - s_0 - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_ids_are_cold_start_errors() {
        let model = zero_model(Method::Mf, 3, 4, 2, 0);
        assert!(matches!(
            model.score_train(3, 0, &[]),
            Err(Error::ColdStart(_))
        ));
        let pair = ModelPair {
            feedback: model,
            posterior: None,
        };
        assert!(matches!(pair.predict(0, 4), Err(Error::ColdStart(_))));
    }

    #[test]
    fn zero_model_predicts_half() {
        let pair = ModelPair {
            feedback: zero_model(Method::Mf, 2, 2, 2, 0),
            posterior: None,
        };
        assert_eq!(pair.predict(0, 1).unwrap(), 0.5);
    }

    #[test]
    fn prediction_stays_strictly_inside_unit_interval() {
        let mut rng = RngStream::new(4, "fb-unit");
        let mut model = FeedbackModel::new(Method::Mf, 2, 2, 2, 0, None, &mut rng).unwrap();
        model.user_bias[0] = 500.0;
        model.item_bias[1] = 500.0;
        let pair = ModelPair {
            feedback: model,
            posterior: None,
        };
        let p = pair.predict(0, 1).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn single_candidate_ranks_itself() {
        let pair = ModelPair {
            feedback: zero_model(Method::Mf, 2, 3, 2, 0),
            posterior: None,
        };
        assert_eq!(pair.rank_items(0, &[2]).unwrap(), vec![2]);
    }

    #[test]
    fn equal_scores_break_ties_by_item_id() {
        let pair = ModelPair {
            feedback: zero_model(Method::Mf, 2, 5, 2, 0),
            posterior: None,
        };
        assert_eq!(pair.rank_items(0, &[4, 1, 3]).unwrap(), vec![1, 3, 4]);
    }

    #[test]
    fn empty_candidates_error() {
        let pair = ModelPair {
            feedback: zero_model(Method::Mf, 2, 2, 2, 0),
            posterior: None,
        };
        assert!(pair.rank_items(0, &[]).is_err());
    }

    #[test]
    fn ranking_is_invariant_under_monotone_transforms() {
        // rank_items is an argsort of the scores, so applying any strictly
        // increasing transform to the model's scores must not change it.
        let mut rng = RngStream::new(5, "fb-mono");
        let model = FeedbackModel::new(Method::Mf, 4, 30, 3, 0, None, &mut rng).unwrap();
        let pair = ModelPair {
            feedback: model,
            posterior: None,
        };
        let candidates: Vec<usize> = (0..30).collect();
        let ranked = pair.rank_items(1, &candidates).unwrap();
        for transform in [|x: f64| 3.0 * x + 1.0, |x: f64| x.exp(), |x: f64| x.tanh()] {
            let mut scored: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&i| (i, transform(pair.predict(1, i).unwrap())))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let reranked: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
            assert_eq!(ranked, reranked);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = RngStream::new(6, "fb-ckpt");
        let proxies: Vec<Vec<f64>> = (0..4)
            .map(|u| vec![(u % 2) as f64, ((u + 1) % 2) as f64])
            .collect();
        let model =
            FeedbackModel::new(Method::MfWf, 4, 5, 3, 0, Some(&proxies), &mut rng).unwrap();
        let text = model.to_checkpoint().to_text();
        let restored = FeedbackModel::from_checkpoint(
            Checkpoint::from_text(&text, std::path::Path::new("mem")).unwrap(),
        )
        .unwrap();
        assert_eq!(restored.to_checkpoint().to_text(), text);
        assert_eq!(
            model.score_train(2, 3, &[]).unwrap(),
            restored.score_train(2, 3, &[]).unwrap()
        );
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        let config = SynthConfig {
            num_users: 50,
            num_items: 20,
            alpha: 0.3,
            beta: 2.0,
            gamma: 0.0,
            pref_dim: 4,
            seed,
        };
        let (truth, bundle) = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&truth, &bundle, dir.path()).unwrap();
        Dataset::load_dir(dir.path()).unwrap()
    }

    #[test]
    fn training_loss_decreases() {
        let data = tiny_dataset(21);
        let mut rng = RngStream::new(0, "fb-train");
        let mut model = FeedbackModel::new(
            Method::Mf,
            data.log.num_users(),
            data.log.num_items(),
            8,
            0,
            None,
            &mut rng.substream("init"),
        )
        .unwrap();
        let config = FeedbackTrainConfig {
            epochs: 10,
            batch_size: 64,
            patience: 100,
            ..Default::default()
        };
        let log = train_feedback_with_posteriors(
            &mut model,
            None,
            &data,
            &config,
            &mut rng.substream("train"),
        )
        .unwrap();
        let first = log.epochs.first().unwrap().1;
        let last = log.epochs.last().unwrap().1;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(22);
        let config = FeedbackTrainConfig {
            epochs: 4,
            batch_size: 32,
            ..Default::default()
        };
        let run = || {
            let mut rng = RngStream::new(9, "fb-det");
            let mut model = FeedbackModel::new(
                Method::Mf,
                data.log.num_users(),
                data.log.num_items(),
                4,
                0,
                None,
                &mut rng.substream("init"),
            )
            .unwrap();
            train_feedback_with_posteriors(
                &mut model,
                None,
                &data,
                &config,
                &mut rng.substream("train"),
            )
            .unwrap();
            model.to_checkpoint().to_text()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn near_degenerate_posterior_recovers_mf_loss() {
        // With the posterior frozen to N(0, 1e-10·I) the confounder term is
        // a no-op, so the final training loss must land within 2% of MF's.
        let data = tiny_dataset(23);
        let m = data.log.num_users();
        let n = data.log.num_items();
        let config = FeedbackTrainConfig {
            epochs: 30,
            batch_size: 64,
            patience: 100,
            ..Default::default()
        };

        let mut rng = RngStream::new(10, "fb-ablate");
        let posteriors: Vec<DiagonalGaussian> = (0..m)
            .map(|_| DiagonalGaussian::new(vec![0.0, 0.0], vec![1e-10, 1e-10]).unwrap())
            .collect();
        let mut idcf_model =
            FeedbackModel::new(Method::Idcf, m, n, 8, 2, None, &mut rng.substream("init")).unwrap();
        let idcf_log = train_feedback_with_posteriors(
            &mut idcf_model,
            Some(&posteriors),
            &data,
            &config,
            &mut rng.substream("train"),
        )
        .unwrap();

        let mut rng2 = RngStream::new(10, "fb-ablate");
        let mut mf_model =
            FeedbackModel::new(Method::Mf, m, n, 8, 0, None, &mut rng2.substream("init")).unwrap();
        let mf_log = train_feedback_with_posteriors(
            &mut mf_model,
            None,
            &data,
            &config,
            &mut rng2.substream("train"),
        )
        .unwrap();

        let idcf_loss = idcf_log.epochs.last().unwrap().1;
        let mf_loss = mf_log.epochs.last().unwrap().1;
        assert!(
            (idcf_loss - mf_loss).abs() / mf_loss < 0.02,
            "losses diverge: {idcf_loss} vs {mf_loss}"
        );
    }

    #[test]
    fn composite_loss_gradient_matches_finite_differences() {
        // Frozen posterior samples; exact BCE gradient over a small batch
        // checked against central differences on every parameter.
        let mut rng = RngStream::new(11, "fb-fd");
        let (m, n, k, d) = (3, 4, 2, 2);
        let mut model = FeedbackModel::new(Method::Idcf, m, n, k, d, None, &mut rng).unwrap();
        let pairs = [(0usize, 1usize, 1.0f64), (1, 2, 0.0), (2, 3, 1.0), (0, 0, 0.0)];
        let z_frozen: Vec<Vec<f64>> = (0..pairs.len())
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
            .collect();

        let loss = |model: &FeedbackModel| -> f64 {
            pairs
                .iter()
                .zip(z_frozen.iter())
                .map(|(&(u, i, t), z)| {
                    let p = sigmoid(model.score_train(u, i, z).unwrap());
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / pairs.len() as f64
        };

        // Analytic gradient accumulated the same way training does.
        let mut analytic = vec![0.0; model.param_count()];
        let off_item = m * k;
        let off_conf = off_item + n * k;
        let off_ubias = off_conf + n * d;
        let off_ibias = off_ubias + m;
        let inv = 1.0 / pairs.len() as f64;
        for (&(u, i, t), z) in pairs.iter().zip(z_frozen.iter()) {
            let g = (sigmoid(model.score_train(u, i, z).unwrap()) - t) * inv;
            for c in 0..k {
                analytic[u * k + c] += g * model.item_emb[(i, c)];
                analytic[off_item + i * k + c] += g * model.user_emb[(u, c)];
            }
            for dd in 0..d {
                analytic[off_conf + i * d + dd] += g * z[dd];
            }
            analytic[off_ubias + u] += g;
            analytic[off_ibias + i] += g;
        }

        let mut flat = Vec::new();
        model.write_params(&mut flat);
        let h = 1e-5;
        for idx in 0..flat.len() {
            let orig = flat[idx];
            flat[idx] = orig + h;
            model.read_params(&flat).unwrap();
            let plus = loss(&model);
            flat[idx] = orig - h;
            model.read_params(&flat).unwrap();
            let minus = loss(&model);
            flat[idx] = orig;
            model.read_params(&flat).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[idx];
            let ok = (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) || (a - fd).abs() <= 1e-7;
            assert!(ok, "param {idx}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn mean_plugin_agrees_with_monte_carlo_for_tight_posteriors() {
        let mut rng = RngStream::new(12, "fb-mc");
        let (m, n) = (1, 50);
        let model = FeedbackModel::new(Method::Idcf, m, n, 4, 2, None, &mut rng).unwrap();
        let posterior = vec![DiagonalGaussian::new(
            vec![rng.standard_normal(), rng.standard_normal()],
            vec![0.01, 0.01],
        )
        .unwrap()];
        let pair = ModelPair {
            feedback: model,
            posterior: Some(posterior),
        };
        let candidates: Vec<usize> = (0..n).collect();
        let plugin_ranking = pair.rank_items(0, &candidates).unwrap();

        let mut mc_rng = RngStream::new(13, "fb-mc-draws");
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&i| (i, pair.predict_mc(0, i, 10_000, &mut mc_rng).unwrap()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mc_ranking: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
        assert_eq!(plugin_ranking, mc_ranking);
    }
}
