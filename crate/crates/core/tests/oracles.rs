mod common;

use byzsgd::aggregation::{krum, krum_scores};
use byzsgd::problem::{GaussianQuadratic, LogisticRegression, LogisticSpec};
use byzsgd::tolerance::{order_statistic_mean, order_statistic_means};
use byzsgd::{mean_of, GradientVector, Problem, Purpose, RngStream};
use common::{brute_force_krum, gv, krum_case};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn krum_matches_exhaustive_scorer() {
    let mut tied = 0;
    for seed in 0..1500 {
        let (points, q) = krum_case(seed);
        let inputs: Vec<GradientVector> = points.iter().map(|p| gv(p)).collect();
        let (scores, best) = brute_force_krum(&points, q);
        let out = krum(&inputs, q).unwrap();
        assert_eq!(out.selected_index, Some(best), "case {seed}: {points:?} q={q}");
        let got = out.scores.unwrap();
        for (a, b) in got.iter().zip(&scores) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "case {seed}");
        }
        if scores.iter().filter(|&&s| s == scores[best]).count() > 1 {
            tied += 1;
        }
    }
    assert!(tied > 50, "only {tied} tied cases");
}

#[test]
fn krum_scores_on_gaussian_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let points: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let inputs: Vec<GradientVector> = points.iter().map(|p| gv(p)).collect();
        let (expected, _) = brute_force_krum(&points, 1);
        let got = krum_scores(&inputs, 1).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn central_difference(p: &Problem, x: &GradientVector, h: f64) -> Vec<f64> {
    (0..x.dim())
        .map(|j| {
            let e = GradientVector::basis(x.dim(), j).unwrap();
            let up = p.loss(&x.add_scaled(h, &e).unwrap()).unwrap();
            let down = p.loss(&x.add_scaled(-h, &e).unwrap()).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let p = Problem::Logistic(LogisticRegression::generate(LogisticSpec::default(), 11).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = gv(&(0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let g = p.full_gradient(&x).unwrap();
        let fd = gv(&central_difference(&p, &x, 1e-5));
        let rel = g.sub(&fd).unwrap().l2_norm() / g.l2_norm();
        assert!(rel <= 1e-5, "relative error {rel}");
    }
}

#[test]
fn quadratic_gradient_is_unbiased_with_variance_sigma_sq_over_n() {
    let sigma = 0.7;
    let n = 8;
    let q = GaussianQuadratic::random(6, sigma, 3).unwrap();
    let p = Problem::Quadratic(q);
    let x = GradientVector::filled(6, 0.5).unwrap();
    let truth = p.full_gradient(&x).unwrap();
    let draws: Vec<GradientVector> = (0..10_000)
        .map(|t| p.sample_gradient(&x, n, &RngStream::new(1, Purpose::Test, 0, t)).unwrap())
        .collect();
    let mean = mean_of(&draws).unwrap();
    let expected_var = sigma * sigma / n as f64;
    let se = (expected_var / draws.len() as f64).sqrt();
    for j in 0..6 {
        assert!((mean[j] - truth[j]).abs() < 4.0 * se, "coordinate {j}");
        let var = draws.iter().map(|g| (g[j] - mean[j]).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var / expected_var - 1.0).abs() < 0.1, "coordinate {j}: {var}");
    }
}

#[test]
fn quadratic_gradient_mean_vanishes_at_minimizer() {
    let q = GaussianQuadratic::random(3, 1.0, 8).unwrap();
    let p = Problem::Quadratic(q);
    let x = p.minimizer().unwrap().clone();
    let draws: Vec<GradientVector> = (0..100_000)
        .map(|t| p.sample_gradient(&x, 1, &RngStream::new(2, Purpose::Test, 0, t)).unwrap())
        .collect();
    let mean = mean_of(&draws).unwrap();
    let se = 1.0 / (draws.len() as f64).sqrt();
    assert!(mean.max_abs() < 4.0 * se, "{mean:?}");
}

#[test]
fn order_statistics_of_normal_samples() {
    let two = order_statistic_mean(2, 0.0, 1.0, 1, 100_000, 4).unwrap();
    let exact = -1.0 / std::f64::consts::PI.sqrt();
    assert!((two.estimate - exact).abs() < 4.0 * two.standard_error, "{two:?}");

    let min13 = order_statistic_mean(13, 0.2, 1.0, 1, 20_000, 4).unwrap();
    assert!(min13.estimate + 4.0 * min13.standard_error < 0.0, "{min13:?}");

    let all = order_statistic_means(13, 0.0, 1.0, 20_000, 6).unwrap();
    for w in all.windows(2) {
        assert!(w[0].estimate < w[1].estimate + 4.0 * w[1].standard_error);
    }
    assert!((all[0].estimate + all[12].estimate).abs() < 4.0 * all[0].standard_error);
}
