//! Ranking metrics, latent-recovery scoring, and method comparison.

use std::collections::HashSet;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::feedback::ModelPair;

/// NDCG@K with binary relevance: DCG = Σ_{p≤K} rel_p / log2(p+1), IDCG
/// over min(K, |positives|) ideal hits. Users with no positives score 0
/// (and are excluded from aggregate means by [`evaluate_model`]).
pub fn ndcg_at_k(ranked: &[usize], positives: &HashSet<usize>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("ndcg_at_k: k must be >= 1".into()));
    }
    check_no_duplicates(ranked)?;
    if positives.is_empty() {
        return Ok(0.0);
    }
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if positives.contains(item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_hits = k.min(positives.len());
    let idcg: f64 = (0..ideal_hits).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// |top-K ∩ positives| / |positives|.
pub fn recall_at_k(ranked: &[usize], positives: &HashSet<usize>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("recall_at_k: k must be >= 1".into()));
    }
    check_no_duplicates(ranked)?;
    if positives.is_empty() {
        return Ok(0.0);
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|item| positives.contains(item))
        .count();
    Ok(hits as f64 / positives.len() as f64)
}

fn check_no_duplicates(ranked: &[usize]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for &item in ranked {
        if !seen.insert(item) {
            return Err(Error::Domain(format!("duplicate item {item} in ranking")));
        }
    }
    Ok(())
}

/// Latent-recovery report: matched absolute Pearson correlations under the
/// best dimension permutation.
#[derive(Debug, Clone)]
pub struct MccReport {
    /// Mean of the matched absolute correlations.
    pub mean: f64,
    /// Matched |correlation| per ground-truth dimension.
    pub per_dim: Vec<f64>,
    /// permutation[t] = learned dimension matched to truth dimension t.
    pub permutation: Vec<usize>,
    /// Sign of the raw correlation for each matched pair.
    pub signs: Vec<f64>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..d).collect();
    fn heap(k: usize, xs: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(xs.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, xs, out);
            if k % 2 == 0 {
                xs.swap(i, k - 1);
            } else {
                xs.swap(0, k - 1);
            }
        }
    }
    heap(d, &mut current, &mut out);
    out
}

/// Mean correlation coefficient between learned and true latents: the
/// exhaustive best-permutation mean of absolute per-dimension Pearson
/// correlations (columns are dimensions, rows are users).
pub fn mcc(learned: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<MccReport> {
    let m = learned.len();
    if m != truth.len() || m < 2 {
        return Err(Error::Dimension(format!(
            "mcc: {m} learned rows vs {} truth rows",
            truth.len()
        )));
    }
    let d = learned[0].len();
    if d == 0 || truth[0].len() != d {
        return Err(Error::Dimension(format!(
            "mcc: learned dim {d} vs truth dim {}",
            truth[0].len()
        )));
    }
    if d > 6 {
        return Err(Error::Domain(format!(
            "mcc: exhaustive matching supports at most 6 dimensions, got {d}"
        )));
    }
    let column = |rows: &[Vec<f64>], c: usize| -> Vec<f64> {
        rows.iter().map(|r| r[c]).collect()
    };
    for c in 0..d {
        for (name, rows) in [("learned", learned), ("truth", truth)] {
            let col = column(rows, c);
            let mean = col.iter().sum::<f64>() / m as f64;
            if col.iter().all(|&v| (v - mean).abs() < 1e-300) {
                return Err(Error::Degenerate(format!(
                    "mcc: {name} dimension {c} has zero variance"
                )));
            }
        }
    }

    // d×d table of raw correlations corr[learned][truth].
    let mut corr = vec![vec![0.0; d]; d];
    for l in 0..d {
        let lcol = column(learned, l);
        for t in 0..d {
            corr[l][t] = pearson(&lcol, &column(truth, t));
        }
    }

    let mut best_mean = f64::NEG_INFINITY;
    let mut best_perm = Vec::new();
    for perm in permutations(d) {
        let mean: f64 =
            (0..d).map(|t| corr[perm[t]][t].abs()).sum::<f64>() / d as f64;
        if mean > best_mean {
            best_mean = mean;
            best_perm = perm;
        }
    }
    let per_dim: Vec<f64> = (0..d).map(|t| corr[best_perm[t]][t].abs()).collect();
    let signs: Vec<f64> = (0..d)
        .map(|t| if corr[best_perm[t]][t] >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    Ok(MccReport {
        mean: best_mean,
        per_dim,
        permutation: best_perm,
        signs,
    })
}

/// Two-sided Welch t-test p-value with Welch–Satterthwaite degrees of
/// freedom. Degenerate zero-variance pairs short-circuit to p = 1 (equal
/// means) or p = 0.
pub fn welch_t_test(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(Error::Domain(
            "welch_t_test: each sample needs at least 2 values".into(),
        ));
    }
    let stats = |xs: &[f64]| -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var, n)
    };
    let (ma, va, na) = stats(sample_a);
    let (mb, vb, nb) = stats(sample_b);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("t-distribution with df {df}: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Ndcg,
    Recall,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Recall => "recall",
        }
    }
}

#[derive(Debug, Clone)]
pub struct UserMetrics {
    pub user: usize,
    /// NDCG@K per requested K.
    pub ndcg: Vec<f64>,
    /// Recall@K per requested K.
    pub recall: Vec<f64>,
}

/// Ranking quality over one split, aggregated in ascending user order.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub per_user: Vec<UserMetrics>,
    pub mean_ndcg: Vec<f64>,
    pub mean_recall: Vec<f64>,
    pub users_evaluated: usize,
}

impl MetricReport {
    pub fn mean(&self, kind: MetricKind, k_index: usize) -> f64 {
        match kind {
            MetricKind::Ndcg => self.mean_ndcg[k_index],
            MetricKind::Recall => self.mean_recall[k_index],
        }
    }
}

/// Ranks each user's candidate items (their own records in `split`) and
/// averages NDCG@K / Recall@K over users that have at least one positive.
/// Per-user work may be spread over `threads` workers; the aggregation
/// order is fixed, so the report does not depend on the thread count.
pub fn evaluate_model(
    pair: &ModelPair,
    data: &Dataset,
    ks: &[usize],
    split: Split,
    positive_threshold: f64,
    threads: usize,
) -> Result<MetricReport> {
    if ks.is_empty() {
        return Err(Error::Config("evaluate_model: empty K list".into()));
    }
    let items = data.log.user_split_items(split);
    if items.iter().all(|v| v.is_empty()) {
        return Err(Error::Data(format!(
            "evaluate_model: no records in split {}",
            split.name()
        )));
    }

    let evaluate_user = |user: usize| -> Result<Option<UserMetrics>> {
        let records = &items[user];
        if records.is_empty() {
            return Ok(None);
        }
        let positives: HashSet<usize> = records
            .iter()
            .filter(|(_, r)| *r >= positive_threshold)
            .map(|(i, _)| *i)
            .collect();
        if positives.is_empty() {
            return Ok(None);
        }
        let candidates: Vec<usize> = records.iter().map(|(i, _)| *i).collect();
        let ranked = pair.rank_items(user, &candidates)?;
        let mut ndcg = Vec::with_capacity(ks.len());
        let mut recall = Vec::with_capacity(ks.len());
        for &k in ks {
            ndcg.push(ndcg_at_k(&ranked, &positives, k)?);
            recall.push(recall_at_k(&ranked, &positives, k)?);
        }
        Ok(Some(UserMetrics {
            user,
            ndcg,
            recall,
        }))
    };

    let num_users = items.len();
    let threads = threads.max(1).min(num_users.max(1));
    let mut rows: Vec<Option<UserMetrics>> = Vec::with_capacity(num_users);
    if threads == 1 {
        for user in 0..num_users {
            rows.push(evaluate_user(user)?);
        }
    } else {
        let chunk = num_users.div_ceil(threads);
        let results: Vec<Result<Vec<Option<UserMetrics>>>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..threads {
                let lo = worker * chunk;
                let hi = ((worker + 1) * chunk).min(num_users);
                let eval_ref = &evaluate_user;
                handles.push(scope.spawn(move || {
                    (lo..hi).map(eval_ref).collect::<Result<Vec<_>>>()
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for worker_rows in results {
            rows.extend(worker_rows?);
        }
    }

    let per_user: Vec<UserMetrics> = rows.into_iter().flatten().collect();
    let users_evaluated = per_user.len();
    if users_evaluated == 0 {
        return Err(Error::Data(
            "evaluate_model: no users with positive feedback in the split".into(),
        ));
    }
    let mut mean_ndcg = vec![0.0; ks.len()];
    let mut mean_recall = vec![0.0; ks.len()];
    for row in &per_user {
        for idx in 0..ks.len() {
            mean_ndcg[idx] += row.ndcg[idx];
            mean_recall[idx] += row.recall[idx];
        }
    }
    for idx in 0..ks.len() {
        mean_ndcg[idx] /= users_evaluated as f64;
        mean_recall[idx] /= users_evaluated as f64;
    }
    Ok(MetricReport {
        ks: ks.to_vec(),
        per_user,
        mean_ndcg,
        mean_recall,
        users_evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn set(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let ranked = vec![1, 2, 3, 4, 5, 6, 7];
        let positives = set(&[1, 2, 3, 4, 5]);
        assert_eq!(ndcg_at_k(&ranked, &positives, 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, &positives, 5).unwrap(), 1.0);
    }

    #[test]
    fn single_positive_second_place_fixture() {
        // DCG = 1/log2(3), IDCG = 1 ⇒ 0.63093.
        let ranked = vec![9, 4, 7, 1, 2];
        let positives = set(&[4]);
        let v = ndcg_at_k(&ranked, &positives, 5).unwrap();
        assert!((v - 0.63093).abs() < 1e-5, "got {v}");
        assert!((v - 1.0 / 3.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn recall_counts_hits_over_positives() {
        let ranked = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let positives = set(&[2, 5, 7, 8]);
        // Top-5 contains {2, 5}: 2 of 4.
        assert_eq!(recall_at_k(&ranked, &positives, 5).unwrap(), 0.5);
    }

    #[test]
    fn duplicates_are_rejected() {
        let positives = set(&[1]);
        assert!(ndcg_at_k(&[1, 2, 1], &positives, 3).is_err());
        assert!(recall_at_k(&[1, 2, 1], &positives, 3).is_err());
    }

    #[test]
    fn empty_positives_score_zero() {
        let ranked = vec![1, 2, 3];
        assert_eq!(ndcg_at_k(&ranked, &set(&[]), 3).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, &set(&[]), 3).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_matches_brute_force_on_random_permutations() {
        let mut rng = RngStream::new(1, "ndcg-brute");
        for _ in 0..200 {
            let n = 3 + rng.below(20);
            let mut ranked: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranked);
            let positives: HashSet<usize> =
                (0..n).filter(|_| rng.below(3) == 0).collect();
            if positives.is_empty() {
                continue;
            }
            let k = 1 + rng.below(n);
            let fast = ndcg_at_k(&ranked, &positives, k).unwrap();
            // Brute force from scratch.
            let mut dcg = 0.0;
            for p in 0..k.min(ranked.len()) {
                if positives.contains(&ranked[p]) {
                    dcg += 1.0 / ((p as f64) + 2.0).log2();
                }
            }
            let mut idcg = 0.0;
            for p in 0..k.min(positives.len()) {
                idcg += 1.0 / ((p as f64) + 2.0).log2();
            }
            assert!((fast - dcg / idcg).abs() <= 1e-12);
        }
    }

    #[test]
    fn swapping_a_negative_above_a_positive_never_raises_ndcg() {
        let mut rng = RngStream::new(2, "ndcg-mono");
        for _ in 0..200 {
            let n = 5 + rng.below(15);
            let mut ranked: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranked);
            let positives: HashSet<usize> = (0..n).filter(|_| rng.below(2) == 0).collect();
            if positives.is_empty() {
                continue;
            }
            let k = 1 + rng.below(n);
            let before = ndcg_at_k(&ranked, &positives, k).unwrap();
            // Find a positive with a negative directly above it and swap.
            for pos in 1..n {
                if positives.contains(&ranked[pos]) && !positives.contains(&ranked[pos - 1]) {
                    let mut worse = ranked.clone();
                    worse.swap(pos, pos - 1);
                    // The swap moves the positive *down*… no: swapping with
                    // the item above moves the positive up. Recheck both
                    // directions explicitly: moving a positive up cannot
                    // lower NDCG, moving it down cannot raise it.
                    let after = ndcg_at_k(&worse, &positives, k).unwrap();
                    assert!(after >= before - 1e-12);
                    break;
                }
            }
        }
    }

    #[test]
    fn mcc_identity_is_one() {
        let mut rng = RngStream::new(3, "mcc-id");
        let latents: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
            .collect();
        let report = mcc(&latents, &latents).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-12);
        assert_eq!(report.permutation, vec![0, 1]);
    }

    #[test]
    fn mcc_is_invariant_to_permutation_and_sign() {
        let mut rng = RngStream::new(4, "mcc-perm");
        let truth: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect();
        // Permute (2,0,1), negate dimension 0, rescale dimension 1.
        let learned: Vec<Vec<f64>> = truth
            .iter()
            .map(|z| vec![-z[2], 5.0 * z[0] + 3.0, z[1]])
            .collect();
        let report = mcc(&learned, &truth).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-12, "mean {}", report.mean);
        assert_eq!(report.permutation, vec![1, 2, 0]);
        assert_eq!(report.signs[0], 1.0);
    }

    #[test]
    fn mcc_of_independent_latents_is_small() {
        let mut rng = RngStream::new(5, "mcc-indep");
        let a: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
            .collect();
        let b: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
            .collect();
        let report = mcc(&a, &b).unwrap();
        assert!(report.mean < 0.1, "mean {}", report.mean);
    }

    #[test]
    fn mcc_rejects_zero_variance_columns() {
        let a = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let b = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(matches!(mcc(&a, &b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn welch_identical_samples_give_p_one() {
        let a = [0.4, 0.4, 0.4];
        assert_eq!(welch_t_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn welch_separated_samples_give_tiny_p() {
        let a = [0.0, 1e-9, -1e-9];
        let b = [1.0, 1.0 + 1e-9, 1.0 - 1e-9];
        let p = welch_t_test(&a, &b).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn welch_matches_hand_computed_fixtures() {
        // Both expected values frozen from an independent reference
        // implementation of Welch's statistic and the t CDF.
        let p = welch_t_test(&[3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0]).unwrap();
        assert!((p - 0.010076943347988853).abs() < 1e-10, "p = {p}");

        let a = [
            19.8, 20.4, 19.6, 17.8, 18.5, 18.9, 18.3, 18.9, 19.5, 22.0,
        ];
        let b = [
            28.2, 26.6, 20.1, 23.3, 25.2, 22.1, 17.7, 27.6, 20.6, 13.7, 23.2, 17.5, 20.6, 18.0,
            23.9, 21.6, 24.3, 20.4, 24.0, 13.2,
        ];
        let p = welch_t_test(&a, &b).unwrap();
        assert!((p - 0.03597227102979685).abs() < 1e-10, "p = {p}");
    }

    #[test]
    fn welch_degenerate_unequal_means_give_zero() {
        assert_eq!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn welch_needs_two_values_per_sample() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }
}
