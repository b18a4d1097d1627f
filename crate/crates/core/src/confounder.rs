//! Latent-confounder learning.
//!
//! An iVAE reconstructs each user's exposure vector from a latent ẑ_u
//! whose prior is conditioned on the proxy w_u; the proxy-free ablation
//! is a plain VAE with a standard-normal prior and an encoder that sees
//! only the exposure vector. Both expose the same interface, so the
//! feedback stage does not care which one produced its posteriors.

use std::time::Instant;

use crate::data::{Checkpoint, NamedTensor, ProxyTable};
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, bernoulli_log_likelihood_from_logits, clamp_prob, kl_diag_gaussians, sigmoid,
    AdamHyper, AdamState, DenseLayer, DiagonalGaussian, Mlp, MlpGrads, OutputHead, RngStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfounderKind {
    /// Conditional prior p(ẑ|w), encoder on (a, w).
    Ivae,
    /// Standard-normal prior, encoder on a alone.
    Vae,
}

#[derive(Debug, Clone)]
pub struct ConfounderModel {
    kind: ConfounderKind,
    prior_mean: Option<Mlp>,
    prior_var: Option<Mlp>,
    enc_mean: Mlp,
    enc_var: Mlp,
    decoder: Mlp,
    num_items: usize,
    proxy_dim: usize,
    latent_dim: usize,
}

/// Gradients for every net of a [`ConfounderModel`], in its parameter order.
#[derive(Debug, Clone)]
pub struct ConfounderGrads {
    pub prior_mean: Option<MlpGrads>,
    pub prior_var: Option<MlpGrads>,
    pub enc_mean: MlpGrads,
    pub enc_var: MlpGrads,
    pub decoder: MlpGrads,
}

/// One ELBO evaluation: the bound, its two terms, and the gradients of the
/// bound with respect to all model parameters.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub grads: ConfounderGrads,
}

fn net_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

impl ConfounderModel {
    /// iVAE: prior nets w → (μ, v), encoder (a, w) → (μ, v), decoder ẑ → a.
    pub fn ivae(
        num_items: usize,
        proxy_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if proxy_dim == 0 {
            return Err(Error::Dimension("ivae requires a proxy dimension > 0".into()));
        }
        Ok(ConfounderModel {
            kind: ConfounderKind::Ivae,
            prior_mean: Some(Mlp::new(
                &net_sizes(proxy_dim, hidden, latent_dim),
                OutputHead::Identity,
                &mut rng.substream("prior_mean"),
            )?),
            prior_var: Some(Mlp::new(
                &net_sizes(proxy_dim, hidden, latent_dim),
                OutputHead::Variance,
                &mut rng.substream("prior_var"),
            )?),
            enc_mean: Mlp::new(
                &net_sizes(num_items + proxy_dim, hidden, latent_dim),
                OutputHead::Identity,
                &mut rng.substream("enc_mean"),
            )?,
            enc_var: Mlp::new(
                &net_sizes(num_items + proxy_dim, hidden, latent_dim),
                OutputHead::Variance,
                &mut rng.substream("enc_var"),
            )?,
            decoder: Mlp::new(
                &net_sizes(latent_dim, hidden, num_items),
                OutputHead::Identity,
                &mut rng.substream("decoder"),
            )?,
            num_items,
            proxy_dim,
            latent_dim,
        })
    }

    /// VAE ablation: standard-normal prior, encoder input is the exposure
    /// vector only. The proxy argument of [`encode`](Self::encode) is ignored.
    pub fn vae(
        num_items: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(ConfounderModel {
            kind: ConfounderKind::Vae,
            prior_mean: None,
            prior_var: None,
            enc_mean: Mlp::new(
                &net_sizes(num_items, hidden, latent_dim),
                OutputHead::Identity,
                &mut rng.substream("enc_mean"),
            )?,
            enc_var: Mlp::new(
                &net_sizes(num_items, hidden, latent_dim),
                OutputHead::Variance,
                &mut rng.substream("enc_var"),
            )?,
            decoder: Mlp::new(
                &net_sizes(latent_dim, hidden, num_items),
                OutputHead::Identity,
                &mut rng.substream("decoder"),
            )?,
            num_items,
            proxy_dim: 0,
            latent_dim,
        })
    }

    /// Re-centers the encoder's variance head so fresh posteriors start at
    /// the given variance instead of 1.
    pub fn init_posterior_variance(&mut self, variance: f64) {
        self.enc_var.offset_output_biases(variance.ln());
    }

    /// Re-centers the conditional prior's variance head (no-op for the
    /// standard-normal prior).
    pub fn init_prior_variance(&mut self, variance: f64) {
        if let Some(pv) = self.prior_var.as_mut() {
            pv.offset_output_biases(variance.ln());
        }
    }

    pub fn kind(&self) -> ConfounderKind {
        self.kind
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn proxy_dim(&self) -> usize {
        self.proxy_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encoder_input(&self, exposure: &[f64], proxy: &[f64]) -> Result<Vec<f64>> {
        if exposure.len() != self.num_items {
            return Err(Error::Dimension(format!(
                "exposure length {} != item count {}",
                exposure.len(),
                self.num_items
            )));
        }
        if self.proxy_dim > 0 && proxy.len() != self.proxy_dim {
            return Err(Error::Dimension(format!(
                "proxy length {} != proxy dim {}",
                proxy.len(),
                self.proxy_dim
            )));
        }
        let mut input = Vec::with_capacity(self.num_items + self.proxy_dim);
        input.extend_from_slice(exposure);
        if self.proxy_dim > 0 {
            input.extend_from_slice(proxy);
        }
        Ok(input)
    }

    /// Approximate posterior q(ẑ | a, w).
    pub fn encode(&self, exposure: &[f64], proxy: &[f64]) -> Result<DiagonalGaussian> {
        let input = self.encoder_input(exposure, proxy)?;
        let mean = self.enc_mean.forward(&input)?;
        let var = self.enc_var.forward(&input)?;
        DiagonalGaussian::new(mean, var)
    }

    /// Prior p(ẑ | w) (standard normal for the VAE ablation).
    pub fn prior(&self, proxy: &[f64]) -> Result<DiagonalGaussian> {
        match (&self.prior_mean, &self.prior_var) {
            (Some(pm), Some(pv)) => {
                let mean = pm.forward(proxy)?;
                let var = pv.forward(proxy)?;
                DiagonalGaussian::new(mean, var)
            }
            _ => Ok(DiagonalGaussian::standard(self.latent_dim)),
        }
    }

    /// Per-item Bernoulli means, strictly inside (0, 1).
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .decoder
            .forward(latent)?
            .into_iter()
            .map(|l| clamp_prob(sigmoid(l)))
            .collect())
    }

    /// Posterior mean z̄_u, the plug-in used at inference time.
    pub fn posterior_mean(&self, exposure: &[f64], proxy: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(exposure, proxy)?.mean().to_vec())
    }

    /// Single-sample ELBO and its gradients; draws one reparameterized
    /// latent from the given stream.
    pub fn elbo(&self, exposure: &[f64], proxy: &[f64], rng: &mut RngStream) -> Result<ElboEval> {
        let noise: Vec<f64> = (0..self.latent_dim).map(|_| rng.standard_normal()).collect();
        self.elbo_with_noise(exposure, proxy, &noise)
    }

    /// ELBO for a fixed noise vector (deterministic; used for gradient
    /// checks and validation scoring).
    pub fn elbo_with_noise(
        &self,
        exposure: &[f64],
        proxy: &[f64],
        noise: &[f64],
    ) -> Result<ElboEval> {
        self.elbo_weighted(exposure, proxy, noise, 1.0)
    }

    /// ELBO with a down-weighted KL term in the *gradients* (KL warm-up
    /// against posterior collapse). The reported `elbo`, `kl`, and `recon`
    /// are always the unweighted quantities; only the gradients correspond
    /// to recon − kl_weight·KL.
    pub fn elbo_weighted(
        &self,
        exposure: &[f64],
        proxy: &[f64],
        noise: &[f64],
        kl_weight: f64,
    ) -> Result<ElboEval> {
        if noise.len() != self.latent_dim {
            return Err(Error::Dimension(format!(
                "noise length {} != latent dim {}",
                noise.len(),
                self.latent_dim
            )));
        }
        let input = self.encoder_input(exposure, proxy)?;
        let mu_q = self.enc_mean.forward(&input)?;
        let v_q = self.enc_var.forward(&input)?;
        let q = DiagonalGaussian::new(mu_q.clone(), v_q.clone())?;
        let p = self.prior(proxy)?;

        let latent: Vec<f64> = mu_q
            .iter()
            .zip(v_q.iter())
            .zip(noise.iter())
            .map(|((&m, &v), &e)| m + v.sqrt() * e)
            .collect();
        let logits = self.decoder.forward(&latent)?;
        let recon = bernoulli_log_likelihood_from_logits(&logits, exposure)?;
        let kl = kl_diag_gaussians(&q, &p)?;
        let elbo = recon - kl;
        if !elbo.is_finite() {
            return Err(Error::Numeric(format!("non-finite elbo {elbo}")));
        }

        // Backward pass, gradients of the ELBO itself.
        let d_logits: Vec<f64> = exposure
            .iter()
            .zip(logits.iter())
            .map(|(&a, &l)| a - sigmoid(l))
            .collect();
        let (dec_grads, d_latent) = self.decoder.backward(&latent, &d_logits)?;

        let mu_p = p.mean();
        let v_p = p.variance();
        let mut d_mu_q = vec![0.0; self.latent_dim];
        let mut d_v_q = vec![0.0; self.latent_dim];
        for d in 0..self.latent_dim {
            let dm = mu_q[d] - mu_p[d];
            d_mu_q[d] = d_latent[d] - kl_weight * dm / v_p[d];
            d_v_q[d] = d_latent[d] * noise[d] / (2.0 * v_q[d].sqrt())
                - kl_weight * 0.5 * (1.0 / v_p[d] - 1.0 / v_q[d]);
        }
        let (enc_mean_grads, _) = self.enc_mean.backward(&input, &d_mu_q)?;
        let (enc_var_grads, _) = self.enc_var.backward(&input, &d_v_q)?;

        let (prior_mean_grads, prior_var_grads) = match (&self.prior_mean, &self.prior_var) {
            (Some(pm), Some(pv)) => {
                let mut d_mu_p = vec![0.0; self.latent_dim];
                let mut d_v_p = vec![0.0; self.latent_dim];
                for d in 0..self.latent_dim {
                    let dm = mu_q[d] - mu_p[d];
                    d_mu_p[d] = kl_weight * dm / v_p[d];
                    d_v_p[d] = kl_weight
                        * 0.5
                        * (v_q[d] / (v_p[d] * v_p[d]) + dm * dm / (v_p[d] * v_p[d])
                            - 1.0 / v_p[d]);
                }
                let (pm_grads, _) = pm.backward(proxy, &d_mu_p)?;
                let (pv_grads, _) = pv.backward(proxy, &d_v_p)?;
                (Some(pm_grads), Some(pv_grads))
            }
            _ => (None, None),
        };

        Ok(ElboEval {
            elbo,
            kl,
            recon,
            grads: ConfounderGrads {
                prior_mean: prior_mean_grads,
                prior_var: prior_var_grads,
                enc_mean: enc_mean_grads,
                enc_var: enc_var_grads,
                decoder: dec_grads,
            },
        })
    }

    /// ELBO value only (no gradients), for validation scoring.
    pub fn elbo_value(&self, exposure: &[f64], proxy: &[f64], noise: &[f64]) -> Result<f64> {
        let input = self.encoder_input(exposure, proxy)?;
        let mu_q = self.enc_mean.forward(&input)?;
        let v_q = self.enc_var.forward(&input)?;
        let q = DiagonalGaussian::new(mu_q.clone(), v_q.clone())?;
        let p = self.prior(proxy)?;
        let latent: Vec<f64> = mu_q
            .iter()
            .zip(v_q.iter())
            .zip(noise.iter())
            .map(|((&m, &v), &e)| m + v.sqrt() * e)
            .collect();
        let logits = self.decoder.forward(&latent)?;
        let recon = bernoulli_log_likelihood_from_logits(&logits, exposure)?;
        Ok(recon - kl_diag_gaussians(&q, &p)?)
    }

    fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        let mut nets = Vec::new();
        if let (Some(pm), Some(pv)) = (&self.prior_mean, &self.prior_var) {
            nets.push(("prior_mean", pm));
            nets.push(("prior_var", pv));
        }
        nets.push(("enc_mean", &self.enc_mean));
        nets.push(("enc_var", &self.enc_var));
        nets.push(("decoder", &self.decoder));
        nets
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|(_, n)| n.param_count()).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (_, net) in self.nets() {
            net.write_params(out);
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let mut offset = 0;
        if let Some(pm) = self.prior_mean.as_mut() {
            offset += pm.read_params(&src[offset..])?;
        }
        if let Some(pv) = self.prior_var.as_mut() {
            offset += pv.read_params(&src[offset..])?;
        }
        offset += self.enc_mean.read_params(&src[offset..])?;
        offset += self.enc_var.read_params(&src[offset..])?;
        offset += self.decoder.read_params(&src[offset..])?;
        Ok(offset)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let kind = match self.kind {
            ConfounderKind::Ivae => 0.0,
            ConfounderKind::Vae => 1.0,
        };
        ckpt.push(NamedTensor::vector(
            "meta",
            vec![
                kind,
                self.latent_dim as f64,
                self.num_items as f64,
                self.proxy_dim as f64,
            ],
        ));
        for (name, net) in self.nets() {
            for (k, layer) in net.layers().iter().enumerate() {
                ckpt.push(NamedTensor::matrix(
                    &format!("{name}.w{k}"),
                    layer.weight.rows(),
                    layer.weight.cols(),
                    layer.weight.data().to_vec(),
                ));
                ckpt.push(NamedTensor::vector(
                    &format!("{name}.b{k}"),
                    layer.bias.clone(),
                ));
            }
        }
        ckpt
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let meta = ckpt.take("meta")?;
        if meta.data.len() != 4 {
            return Err(Error::Checkpoint("meta tensor must have 4 values".into()));
        }
        let kind = match meta.data[0] as i64 {
            0 => ConfounderKind::Ivae,
            1 => ConfounderKind::Vae,
            other => {
                return Err(Error::Checkpoint(format!("unknown confounder kind {other}")));
            }
        };
        let latent_dim = meta.data[1] as usize;
        let num_items = meta.data[2] as usize;
        let proxy_dim = meta.data[3] as usize;

        let mut read_net = |name: &str, head: OutputHead| -> Result<Mlp> {
            let mut layers = Vec::new();
            let mut k = 0;
            loop {
                let expect_w = format!("{name}.w{k}");
                let is_next = ckpt
                    .tensors
                    .first()
                    .is_some_and(|t| t.name == expect_w);
                if !is_next {
                    break;
                }
                let w = ckpt.take(&expect_w)?;
                let b = ckpt.take(&format!("{name}.b{k}"))?;
                layers.push(DenseLayer {
                    weight: crate::numerics::Matrix::from_vec(w.rows, w.cols, w.data)?,
                    bias: b.data,
                });
                k += 1;
            }
            if layers.is_empty() {
                return Err(Error::Checkpoint(format!("missing net {name:?}")));
            }
            Mlp::from_layers(layers, head)
        };

        let (prior_mean, prior_var) = match kind {
            ConfounderKind::Ivae => (
                Some(read_net("prior_mean", OutputHead::Identity)?),
                Some(read_net("prior_var", OutputHead::Variance)?),
            ),
            ConfounderKind::Vae => (None, None),
        };
        let enc_mean = read_net("enc_mean", OutputHead::Identity)?;
        let enc_var = read_net("enc_var", OutputHead::Variance)?;
        let decoder = read_net("decoder", OutputHead::Identity)?;

        let model = ConfounderModel {
            kind,
            prior_mean,
            prior_var,
            enc_mean,
            enc_var,
            decoder,
            num_items,
            proxy_dim,
            latent_dim,
        };
        if model.decoder.output_dim() != num_items || model.enc_mean.output_dim() != latent_dim {
            return Err(Error::Checkpoint("net shapes contradict meta".into()));
        }
        Ok(model)
    }
}

impl ConfounderGrads {
    pub fn write_params(&self, out: &mut Vec<f64>) {
        if let Some(pm) = &self.prior_mean {
            pm.write_params(out);
        }
        if let Some(pv) = &self.prior_var {
            pv.write_params(out);
        }
        self.enc_mean.write_params(out);
        self.enc_var.write_params(out);
        self.decoder.write_params(out);
    }

    pub fn add_scaled(&mut self, other: &ConfounderGrads, scale: f64) {
        if let (Some(a), Some(b)) = (self.prior_mean.as_mut(), other.prior_mean.as_ref()) {
            a.add_scaled(b, scale);
        }
        if let (Some(a), Some(b)) = (self.prior_var.as_mut(), other.prior_var.as_ref()) {
            a.add_scaled(b, scale);
        }
        self.enc_mean.add_scaled(&other.enc_mean, scale);
        self.enc_var.add_scaled(&other.enc_var, scale);
        self.decoder.add_scaled(&other.decoder, scale);
    }

    pub fn zeros_like(model: &ConfounderModel) -> Self {
        ConfounderGrads {
            prior_mean: model.prior_mean.as_ref().map(MlpGrads::zeros_like),
            prior_var: model.prior_var.as_ref().map(MlpGrads::zeros_like),
            enc_mean: MlpGrads::zeros_like(&model.enc_mean),
            enc_var: MlpGrads::zeros_like(&model.enc_var),
            decoder: MlpGrads::zeros_like(&model.decoder),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConfounderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Early-stop patience on validation ELBO.
    pub patience: usize,
    /// Fraction of users held out for validation ELBO.
    pub valid_fraction: f64,
    /// Epochs over which the KL gradient weight ramps 0 → 1 (0 disables
    /// warm-up). Counters posterior collapse on sparse exposure data.
    pub kl_warmup_epochs: usize,
}

impl Default for ConfounderTrainConfig {
    fn default() -> Self {
        ConfounderTrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            patience: 10,
            valid_fraction: 0.1,
            kl_warmup_epochs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub valid_elbo: f64,
    pub wall_secs: f64,
}

/// Per-epoch training record. The TSV form carries only the deterministic
/// columns, so logs from identical runs are byte-identical.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\telbo\tkl\trecon\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.elbo, e.kl, e.recon));
        }
        out
    }
}

/// Minibatch-Adam ELBO maximization with early stopping on held-out users'
/// validation ELBO (fixed validation noise, so the stopping rule is
/// deterministic). Restores the best parameters before returning.
pub fn train_confounder(
    model: &mut ConfounderModel,
    exposure: &[Vec<f64>],
    proxies: &ProxyTable,
    config: &ConfounderTrainConfig,
    rng: &mut RngStream,
) -> Result<TrainLog> {
    let num_users = exposure.len();
    if num_users == 0 {
        return Err(Error::Data("train_confounder: empty dataset".into()));
    }
    if proxies.encoded.len() != num_users {
        return Err(Error::Dimension(format!(
            "proxy table has {} rows for {} users",
            proxies.encoded.len(),
            num_users
        )));
    }

    // Deterministic validation holdout.
    let mut user_order: Vec<usize> = (0..num_users).collect();
    rng.substream("valid-split").shuffle(&mut user_order);
    let n_valid = ((config.valid_fraction * num_users as f64).round() as usize).min(num_users - 1);
    let valid_users: Vec<usize> = user_order[..n_valid].to_vec();
    let train_users: Vec<usize> = user_order[n_valid..].to_vec();
    // With no holdout, validation falls back to the training users.
    let valid_users = if valid_users.is_empty() {
        train_users.clone()
    } else {
        valid_users
    };

    let mut params = Vec::with_capacity(model.param_count());
    model.write_params(&mut params);
    let mut adam = AdamState::new(
        params.len(),
        AdamHyper::with_learning_rate(config.learning_rate),
    );

    let mut shuffle_rng = rng.substream("shuffle");
    let mut noise_rng = rng.substream("train-noise");

    // Validation ELBO averaged over a few fixed noise draws per user; the
    // draws are identical every epoch so epoch-to-epoch comparisons are
    // paired and the stopping rule is deterministic.
    const VALID_NOISE_DRAWS: usize = 8;
    let valid_elbo = |model: &ConfounderModel| -> Result<f64> {
        let mut vrng = rng.substream("valid-noise");
        let mut total = 0.0;
        for &u in &valid_users {
            for _ in 0..VALID_NOISE_DRAWS {
                let noise: Vec<f64> =
                    (0..model.latent_dim).map(|_| vrng.standard_normal()).collect();
                total += model.elbo_value(&exposure[u], &proxies.encoded[u], &noise)?;
            }
        }
        Ok(total / (valid_users.len() * VALID_NOISE_DRAWS) as f64)
    };

    let mut log = TrainLog::default();
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut flat_grads = Vec::with_capacity(params.len());

    let mut order = train_users.clone();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut epoch_elbo = 0.0;
        let mut epoch_kl = 0.0;
        let mut epoch_recon = 0.0;
        let kl_weight = if config.kl_warmup_epochs == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / config.kl_warmup_epochs as f64).min(1.0)
        };

        for batch in order.chunks(config.batch_size) {
            let mut batch_grads = ConfounderGrads::zeros_like(model);
            let inv = 1.0 / batch.len() as f64;
            for &u in batch {
                let noise: Vec<f64> = (0..model.latent_dim)
                    .map(|_| noise_rng.standard_normal())
                    .collect();
                let eval =
                    model.elbo_weighted(&exposure[u], &proxies.encoded[u], &noise, kl_weight)?;
                epoch_elbo += eval.elbo;
                epoch_kl += eval.kl;
                epoch_recon += eval.recon;
                // Minimize −ELBO.
                batch_grads.add_scaled(&eval.grads, -inv);
            }
            flat_grads.clear();
            batch_grads.write_params(&mut flat_grads);
            if config.weight_decay != 0.0 {
                for (g, p) in flat_grads.iter_mut().zip(params.iter()) {
                    *g += config.weight_decay * p;
                }
            }
            adam_step(&mut adam, &mut params, &flat_grads)?;
            model.read_params(&params)?;
        }

        let n = order.len().max(1) as f64;
        let ve = valid_elbo(model)?;
        log.epochs.push(EpochStats {
            epoch,
            elbo: epoch_elbo / n,
            kl: epoch_kl / n,
            recon: epoch_recon / n,
            valid_elbo: ve,
            wall_secs: started.elapsed().as_secs_f64(),
        });

        if ve > best {
            best = ve;
            best_params.copy_from_slice(&params);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    model.read_params(&best_params)?;
    log.best_epoch = best_epoch;
    Ok(log)
}
