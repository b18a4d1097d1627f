//! Scratch probe for the desk-scale confounding sweep (not a deliverable).

use idcf::confounder::{train_confounder, ConfounderModel, ConfounderTrainConfig};
use idcf::data::{Dataset, Split};
use idcf::eval::evaluate_model;
use idcf::feedback::{
    train_feedback_with_posteriors, user_posteriors, FeedbackModel, FeedbackTrainConfig, ModelPair,
};
use idcf::numerics::RngStream;
use idcf::synthgen::{generate, write_dataset, SynthConfig};
use idcf::Method;

fn run(seed: u64, beta: f64) -> (f64, f64) {
    let config = SynthConfig {
        num_users: 500,
        num_items: 100,
        alpha: 0.1,
        beta,
        gamma: 0.0,
        pref_dim: 4,
        seed,
    };
    let (truth, bundle) = generate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&truth, &bundle, dir.path()).unwrap();
    let data = Dataset::load_dir(dir.path()).unwrap();
    let exposure = data.exposure();

    // Stage 1 for idcf.
    let mut rng = RngStream::new(seed, &format!("probe-ndcg/{beta}"));
    let skip_stage1 = std::env::var("ORACLE").is_ok();
    let mut ivae = ConfounderModel::ivae(
        data.log.num_items(),
        data.proxies.dim(),
        2,
        &[64, 64],
        &mut rng.substream("ivae-init"),
    )
    .unwrap();
    ivae.init_posterior_variance(0.1);
    ivae.init_prior_variance(0.25);
    let tc = ConfounderTrainConfig {
        epochs: 600,
        batch_size: 32,
        learning_rate: 1e-3,
        weight_decay: 1e-6,
        patience: 80,
        valid_fraction: 0.1,
        kl_warmup_epochs: 0,
    };
    if !skip_stage1 {
        train_confounder(
            &mut ivae,
            &exposure,
            &data.proxies,
            &tc,
            &mut rng.substream("ivae-train"),
        )
        .unwrap();
    }
    let posteriors = if std::env::var("ORACLE").is_ok() {
        // Corrupted-oracle posterior: mean = rho·z + sqrt(1-rho^2)·sigma_z·eps.
        let rho: f64 = std::env::var("ORACLE_RHO").map(|s| s.parse().unwrap()).unwrap_or(1.0);
        let pvar: f64 = std::env::var("ORACLE_VAR").map(|s| s.parse().unwrap()).unwrap_or(1e-4);
        let sigma_z = 1.5_f64;
        let mut orng = RngStream::new(seed, "oracle-noise");
        data.truth
            .as_ref()
            .unwrap()
            .z
            .iter()
            .map(|z| {
                let mean: Vec<f64> = z
                    .iter()
                    .map(|&v| rho * v + (1.0 - rho * rho).sqrt() * sigma_z * orng.standard_normal())
                    .collect();
                idcf::numerics::DiagonalGaussian::new(mean, vec![pvar, pvar]).unwrap()
            })
            .collect()
    } else {
        user_posteriors(&ivae, &data).unwrap()
    };
    if std::env::var("ORACLE").is_ok() {
        let learned: Vec<Vec<f64>> = posteriors.iter().map(|p| p.mean().to_vec()).collect();
        let r = idcf::eval::mcc(&learned, &data.truth.as_ref().unwrap().z).unwrap();
        eprintln!("    oracle mcc {:.3}", r.mean);
    }

    let fc = FeedbackTrainConfig {
        epochs: std::env::var("FB_EPOCHS").map(|s| s.parse().unwrap()).unwrap_or(200),
        batch_size: std::env::var("FB_BATCH").map(|s| s.parse().unwrap()).unwrap_or(256),
        learning_rate: std::env::var("FB_LR").map(|s| s.parse().unwrap()).unwrap_or(1e-3),
        weight_decay: 1e-6,
        patience: std::env::var("FB_PAT").map(|s| s.parse().unwrap()).unwrap_or(10),
        validation_k: 5,
        positive_threshold: 4.0,
    };
    let emb_dim = std::env::var("FB_K").map(|s| s.parse().unwrap()).unwrap_or(8);

    let mut idcf_model = FeedbackModel::new(
        Method::Idcf,
        data.log.num_users(),
        data.log.num_items(),
        emb_dim,
        2,
        None,
        &mut rng.substream("idcf-init"),
    )
    .unwrap();
    train_feedback_with_posteriors(
        &mut idcf_model,
        Some(&posteriors),
        &data,
        &fc,
        &mut rng.substream("idcf-train"),
    )
    .unwrap();
    let idcf_pair = ModelPair {
        feedback: idcf_model,
        posterior: Some(posteriors),
    };
    let idcf_report = evaluate_model(&idcf_pair, &data, &[5], Split::Test, 4.0, 4).unwrap();

    let mut mf_model = FeedbackModel::new(
        Method::Mf,
        data.log.num_users(),
        data.log.num_items(),
        emb_dim,
        0,
        None,
        &mut rng.substream("mf-init"),
    )
    .unwrap();
    train_feedback_with_posteriors(
        &mut mf_model,
        None,
        &data,
        &fc,
        &mut rng.substream("mf-train"),
    )
    .unwrap();
    let mf_pair = ModelPair {
        feedback: mf_model,
        posterior: None,
    };
    let mf_report = evaluate_model(&mf_pair, &data, &[5], Split::Test, 4.0, 4).unwrap();

    (idcf_report.mean_ndcg[0], mf_report.mean_ndcg[0])
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let t0 = std::time::Instant::now();
    let mut gaps = Vec::new();
    for &beta in &[1.0, 3.0] {
        let mut idcf_sum = 0.0;
        let mut mf_sum = 0.0;
        for seed in 0..seeds {
            let (idcf, mf) = run(seed, beta);
            eprintln!("  seed {seed} beta {beta}: idcf {idcf:.4} mf {mf:.4} gap {:+.4}", idcf - mf);
            idcf_sum += idcf;
            mf_sum += mf;
        }
        let gap = (idcf_sum - mf_sum) / seeds as f64;
        println!(
            "beta {beta}: idcf {:.4}, mf {:.4}, gap {gap:+.4}",
            idcf_sum / seeds as f64,
            mf_sum / seeds as f64
        );
        gaps.push(gap);
    }
    println!(
        "gap(beta=3) - gap(beta=1) = {:+.4}; elapsed {:.1}s",
        gaps[1] - gaps[0],
        t0.elapsed().as_secs_f64()
    );
}
