//! Run configuration: a flat `key = value` file with flag overrides.
//!
//! Recognized keys (defaults in parentheses):
//!
//! - `data_dir` (`data`), `out_dir` (`out`)
//! - `method` (`idcf`): idcf | idcf-w | mf | mf-wf
//! - `methods`: comma list used by `eval`/`sweep` (defaults to `method`)
//! - `seeds` (`0`): comma list of seeds
//! - generator: `num_users` (2000), `num_items` (300), `alpha` (0.1),
//!   `beta` (2.0), `gamma` (0.0), `pref_dim` (4)
//! - model: `latent_dim` (2), `hidden` (`128,128`), `embedding_dim` (8)
//! - training: `lr_grid` (`1e-3,5e-4,1e-4,5e-5,1e-5`), `wd_grid`
//!   (`1e-5,1e-6`), `batch_size` (256), `epochs` (200), `patience` (10),
//!   `valid_fraction` (0.1), `init_posterior_variance` (0.1),
//!   `kl_warmup_epochs` (40)
//! - evaluation: `k_list` (`5`), `positive_threshold` (4.0),
//!   `mc_samples` (0)

use std::path::{Path, PathBuf};
use std::str::FromStr;

use idcf::error::{Error, Result};
use idcf::Method;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub method: Method,
    pub methods: Option<Vec<Method>>,
    pub seeds: Vec<u64>,

    pub num_users: usize,
    pub num_items: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pref_dim: usize,

    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,

    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub valid_fraction: f64,
    pub init_posterior_variance: f64,
    pub kl_warmup_epochs: usize,

    pub k_list: Vec<usize>,
    pub positive_threshold: f64,
    pub mc_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            method: Method::Idcf,
            methods: None,
            seeds: vec![0],
            num_users: 2000,
            num_items: 300,
            alpha: 0.1,
            beta: 2.0,
            gamma: 0.0,
            pref_dim: 4,
            latent_dim: 2,
            hidden: vec![128, 128],
            embedding_dim: 8,
            lr_grid: vec![1e-3, 5e-4, 1e-4, 5e-5, 1e-5],
            wd_grid: vec![1e-5, 1e-6],
            batch_size: 256,
            epochs: 200,
            patience: 10,
            valid_fraction: 0.1,
            init_posterior_variance: 0.1,
            kl_warmup_epochs: 40,
            k_list: vec![5],
            positive_threshold: 4.0,
            mc_samples: 0,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value {part:?} for key {key:?}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "method" => self.method = value.parse()?,
            "methods" => {
                self.methods = Some(
                    value
                        .split(',')
                        .map(|m| m.trim().parse())
                        .collect::<Result<Vec<Method>>>()?,
                )
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "num_users" => self.num_users = parse_one(key, value)?,
            "num_items" => self.num_items = parse_one(key, value)?,
            "alpha" => self.alpha = parse_one(key, value)?,
            "beta" => self.beta = parse_one(key, value)?,
            "gamma" => self.gamma = parse_one(key, value)?,
            "pref_dim" => self.pref_dim = parse_one(key, value)?,
            "latent_dim" => self.latent_dim = parse_one(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "embedding_dim" => self.embedding_dim = parse_one(key, value)?,
            "lr_grid" => self.lr_grid = parse_list(key, value)?,
            "wd_grid" => self.wd_grid = parse_list(key, value)?,
            "batch_size" => self.batch_size = parse_one(key, value)?,
            "epochs" => self.epochs = parse_one(key, value)?,
            "patience" => self.patience = parse_one(key, value)?,
            "valid_fraction" => self.valid_fraction = parse_one(key, value)?,
            "init_posterior_variance" => {
                self.init_posterior_variance = parse_one(key, value)?
            }
            "kl_warmup_epochs" => self.kl_warmup_epochs = parse_one(key, value)?,
            "k_list" => self.k_list = parse_list(key, value)?,
            "positive_threshold" => self.positive_threshold = parse_one(key, value)?,
            "mc_samples" => self.mc_samples = parse_one(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected 'key = value', got {line:?}",
                    path.display(),
                    idx + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Builds the effective config: file first, then `key=value` overrides.
    pub fn resolve(config_file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = config_file {
            config.load_file(path)?;
        }
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::Config(format!(
                    "override {item:?} is not of the form key=value"
                )));
            };
            config.apply(key.trim(), value.trim())?;
        }
        if config.seeds.is_empty() {
            return Err(Error::Config("seed list must be nonempty".into()));
        }
        if config.k_list.is_empty() {
            return Err(Error::Config("k_list must be nonempty".into()));
        }
        if config.lr_grid.is_empty() || config.wd_grid.is_empty() {
            return Err(Error::Config("hyperparameter grids must be nonempty".into()));
        }
        Ok(config)
    }

    /// Methods to evaluate/sweep: the explicit list, or just `method`.
    pub fn method_list(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| vec![self.method])
    }
}

/// Evaluation worker cap: `IDCF_THREADS`, else available parallelism (≤ 8).
pub fn eval_threads() -> usize {
    if let Ok(v) = std::env::var("IDCF_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_then_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment").unwrap();
        writeln!(f, "alpha = 0.2").unwrap();
        writeln!(f, "seeds = 1,2,3").unwrap();
        writeln!(f, "method = mf").unwrap();
        drop(f);
        let config =
            RunConfig::resolve(Some(&path), &["alpha=0.3".to_string()]).unwrap();
        assert_eq!(config.alpha, 0.3);
        assert_eq!(config.seeds, vec![1, 2, 3]);
        assert_eq!(config.method, Method::Mf);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let mut config = RunConfig::default();
        assert!(matches!(
            config.apply("nope", "1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_value_is_a_config_error() {
        let mut config = RunConfig::default();
        assert!(config.apply("alpha", "not-a-number").is_err());
        assert!(config.apply("method", "bogus").is_err());
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert!(RunConfig::resolve(None, &["seeds=".to_string()]).is_err());
    }
}
