//! Deterministic dense numerical core: matrices, MLPs with analytic
//! gradients, Adam, diagonal Gaussians, and seeded RNG streams.

mod adam;
mod gaussian;
mod likelihood;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gaussian::{
    apply_noise, kl_diag_gaussians, log_density, sample_reparam, sample_reparam_with_noise,
    DiagonalGaussian,
};
pub use likelihood::{
    bernoulli_log_likelihood, bernoulli_log_likelihood_from_logits, clamp_prob, sigmoid, softplus,
    PROB_CLAMP,
};
pub use matrix::Matrix;
pub use mlp::{DenseLayer, Mlp, MlpGrads, OutputHead, LEAKY_SLOPE, LOG_VAR_MAX, LOG_VAR_MIN};
pub use rng::RngStream;
