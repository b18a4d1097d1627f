//! Scratch probe for desk-scale MCC direction (not part of the deliverable).

use idcf::confounder::{train_confounder, ConfounderModel, ConfounderTrainConfig};
use idcf::data::Dataset;
use idcf::eval::mcc;
use idcf::numerics::RngStream;
use idcf::synthgen::{generate, write_dataset, SynthConfig};

fn run(
    seed: u64,
    gamma: f64,
    kind: &str,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
) -> f64 {
    run_restart(seed, gamma, kind, hidden, epochs, batch_size, learning_rate, patience, 0).1
}

#[allow(clippy::too_many_arguments)]
fn run_restart(
    seed: u64,
    gamma: f64,
    kind: &str,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
    restart: u64,
) -> (f64, f64) {
    let config = SynthConfig {
        num_users: 500,
        num_items: 100,
        alpha: std::env::var("ALPHA").map(|s| s.parse().unwrap()).unwrap_or(0.1),
        beta: 2.0,
        gamma,
        pref_dim: 4,
        seed,
    };
    let (truth, bundle) = generate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&truth, &bundle, dir.path()).unwrap();
    let data = Dataset::load_dir(dir.path()).unwrap();
    let exposure = data.exposure();

    let mut rng = RngStream::new(seed, &format!("probe/{kind}/r{restart}"));
    let mut model = if kind == "ivae" {
        ConfounderModel::ivae(
            data.log.num_items(),
            data.proxies.dim(),
            2,
            hidden,
            &mut rng.substream("init"),
        )
        .unwrap()
    } else {
        ConfounderModel::vae(data.log.num_items(), 2, hidden, &mut rng.substream("init")).unwrap()
    };
    if let Ok(v) = std::env::var("PVAR") {
        model.init_posterior_variance(v.parse().unwrap());
    }
    if let Ok(v) = std::env::var("PRVAR") {
        model.init_prior_variance(v.parse().unwrap());
    }
    let tc = ConfounderTrainConfig {
        epochs,
        batch_size,
        learning_rate,
        weight_decay: std::env::var("WD").map(|s| s.parse().unwrap()).unwrap_or(1e-6),
        patience,
        valid_fraction: std::env::var("VF").map(|s| s.parse().unwrap()).unwrap_or(0.1),
        kl_warmup_epochs: std::env::var("WARMUP").map(|s| s.parse().unwrap()).unwrap_or(0),
    };
    let log = train_confounder(
        &mut model,
        &exposure,
        &data.proxies,
        &tc,
        &mut rng.substream("train"),
    )
    .unwrap();

    let learned: Vec<Vec<f64>> = exposure
        .iter()
        .zip(data.proxies.encoded.iter())
        .map(|(a, w)| model.posterior_mean(a, w).unwrap())
        .collect();
    let truth_z = data.truth.as_ref().unwrap().z.clone();
    let report = mcc(&learned, &truth_z).unwrap();
    let best_velbo = log.epochs[log.best_epoch].valid_elbo;
    let last = log.epochs.last().unwrap();
    eprintln!(
        "  seed {seed} gamma {gamma} {kind}: mcc {:.4} (epochs {}, best {}, kl {:.3}, recon {:.3}, velbo {:.3})",
        report.mean,
        log.epochs.len(),
        log.best_epoch,
        last.kl,
        last.recon,
        last.valid_elbo,
    );
    (best_velbo, report.mean)
}

fn main() {
    if std::env::var("RESTART_STUDY").is_ok() {
        for seed in 0..5u64 {
            for restart in 0..3u64 {
                for lr in [1e-3f64, 5e-4] {
                    let (velbo, m) = run_restart(seed, 0.0, "ivae", &[64, 64], 600, 32, lr, 80, restart);
                    println!("seed {seed} restart {restart} lr {lr}: velbo {velbo:.4} mcc {m:.4}");
                }
            }
        }
        return;
    }
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let patience: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(30);
    let hidden: Vec<usize> = std::env::var("HID").map(|s| s.split(",").map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![64, 64]);
    let t0 = std::time::Instant::now();
    for &gamma in &[0.0, 20.0] {
        let mut ivae_sum = 0.0;
        let mut vae_sum = 0.0;
        for seed in 0..seeds {
            ivae_sum += run(seed, gamma, "ivae", &hidden, epochs, batch, lr, patience);
            vae_sum += run(seed, gamma, "vae", &hidden, epochs, batch, lr, patience);
        }
        println!(
            "gamma {gamma}: ivae mean {:.4}, vae mean {:.4}",
            ivae_sum / seeds as f64,
            vae_sum / seeds as f64
        );
    }
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
}
