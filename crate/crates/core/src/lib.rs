//! Deconfounded recommendation with identifiable latent confounders.
//!
//! The pipeline has two learned stages plus exact arithmetic demos:
//!
//! - [`synthgen`] simulates confounded exposure/feedback data with known
//!   ground-truth confounders.
//! - [`identify`] works the binary example exactly: the feasible interval
//!   without a proxy and the unique proxy-based solution.
//! - [`confounder`] learns a latent confounder per user from exposure
//!   vectors, with (iVAE) or without (VAE ablation) proxy conditioning.
//! - [`feedback`] trains the deconfounded factorization model and serves
//!   adjusted predictions.
//! - [`eval`] scores rankings (NDCG@K, Recall@K), latent recovery (MCC),
//!   and method comparisons (Welch t-test).
//! - [`data`] handles the TSV dataset layout and text checkpoints.

pub mod confounder;
pub mod data;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod identify;
pub mod numerics;
pub mod synthgen;

pub use error::{Error, Result};

/// The trainable methods: the deconfounded model, its proxy-free ablation,
/// and the two factorization baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Idcf,
    IdcfW,
    Mf,
    MfWf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Idcf, Method::IdcfW, Method::Mf, Method::MfWf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Idcf => "idcf",
            Method::IdcfW => "idcf-w",
            Method::Mf => "mf",
            Method::MfWf => "mf-wf",
        }
    }

    /// Whether the method trains a latent-confounder model first.
    pub fn uses_confounder(self) -> bool {
        matches!(self, Method::Idcf | Method::IdcfW)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "idcf" => Ok(Method::Idcf),
            "idcf-w" => Ok(Method::IdcfW),
            "mf" => Ok(Method::Mf),
            "mf-wf" => Ok(Method::MfWf),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected idcf, idcf-w, mf, mf-wf)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
