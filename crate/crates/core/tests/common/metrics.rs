//! Ranking metrics against brute-force oracles.

use nbdebias::eval::{auc, ndcg_at_k};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 100;
const TOL: f64 = 1e-12;

/// Share of positive-negative pairs ordered correctly, ties worth one half.
fn auc_pairs(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut hits, mut pairs) = (0.0, 0.0);
    for (a, la) in scores.iter().zip(labels) {
        for (b, lb) in scores.iter().zip(labels) {
            if *la == 1.0 && *lb == 0.0 {
                pairs += 1.0;
                hits += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    hits / pairs
}

/// Position of each item is the count of items scored strictly higher.
fn ndcg_direct(scores: &[Vec<f64>], rels: &[Vec<f64>], k: usize) -> f64 {
    let mut total = 0.0;
    let mut users = 0;
    for (s, r) in scores.iter().zip(rels) {
        let mut dcg = 0.0;
        for (j, rel) in r.iter().enumerate() {
            let pos = s.iter().filter(|x| **x > s[j]).count();
            if pos < k {
                dcg += rel / ((pos + 2) as f64).log2();
            }
        }
        let mut ideal = r.clone();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(p, g)| g / ((p + 2) as f64).log2())
            .sum();
        if idcg > 0.0 {
            total += dcg / idcg;
            users += 1;
        }
    }
    total / users as f64
}

/// Largest deviation from the pair-count oracle; scores are coarse so ties occur.
pub fn auc_matches_pair_count() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..1.0f64) * 8.0).floor()).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let d = (auc(&scores, &labels).unwrap() - auc_pairs(&scores, &labels)).abs();
        worst = worst.max(d);
    }
    assert!(worst < TOL, "AUC deviates by {worst}");
    worst
}

/// Largest deviation from the direct formula over graded relevances and varied cut-offs.
pub fn ndcg_matches_direct_formula() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let users = rng.gen_range(1..8);
        let k = rng.gen_range(1..12);
        let mut scores = Vec::new();
        let mut rels = Vec::new();
        for _ in 0..users {
            let n = rng.gen_range(1..25);
            scores.push((0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>());
            rels.push((0..n).map(|_| rng.gen_range(0..4) as f64).collect::<Vec<f64>>());
        }
        rels[0][0] = 1.0;
        let d = (ndcg_at_k(&scores, &rels, k).unwrap() - ndcg_direct(&scores, &rels, k)).abs();
        worst = worst.max(d);
    }
    assert!(worst < TOL, "NDCG deviates by {worst}");
    worst
}
