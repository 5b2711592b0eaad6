#![allow(dead_code)]

use byzsgd::GradientVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gv(v: &[f64]) -> GradientVector {
    GradientVector::new(v.to_vec()).unwrap()
}

pub fn scalars(v: &[f64]) -> Vec<GradientVector> {
    v.iter().map(|&x| gv(&[x])).collect()
}

/// Exhaustive Krum: every unordered pair is scored once, the whole list is
/// sorted, and each point takes the first `m - q - 2` pairs it belongs to.
/// Returns the scores and the lowest-index minimizer.
pub fn brute_force_krum(points: &[Vec<f64>], q: usize) -> (Vec<f64>, usize) {
    let m = points.len();
    let k = m - q - 2;
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let mut d = 0.0;
            for (a, b) in points[i].iter().zip(&points[j]) {
                d += (a - b) * (a - b);
            }
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut scores = vec![0.0; m];
    let mut taken = vec![0usize; m];
    for &(d, i, j) in &pairs {
        for p in [i, j] {
            if taken[p] < k {
                scores[p] += d;
                taken[p] += 1;
            }
        }
    }
    let mut best = 0;
    for i in 1..m {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    (scores, best)
}

/// Random Krum instance with `m <= 8`, `d <= 3` and `m - 2q > 2`. Every
/// third instance uses small integer coordinates so that ties are common.
pub fn krum_case(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(3..=8usize);
    let q = rng.random_range(0..=(m - 3) / 2);
    let d = rng.random_range(1..=3usize);
    let tied = seed.is_multiple_of(3);
    let points = (0..m)
        .map(|_| {
            (0..d)
                .map(|_| if tied { rng.random_range(-2..=2i32) as f64 } else { rng.random_range(-5.0..5.0) })
                .collect()
        })
        .collect();
    (points, q)
}
