//! Byzantine-tolerance analysis.
//!
//! An aggregation rule is tolerant at a point when the expected aggregate of
//! `m - q` correct gradients (mean `g`) plus `q` attacker gradients has a
//! non-negative inner product with `g`. Expectations are estimated by Monte
//! Carlo over the correct draws; the attack is a deterministic function of
//! them.

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::aggregation::{aggregate, krum, krum_scores, AggregationOutcome, AggregationRule};
use crate::attack::{craft, AttackSpec, OmniscientView};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::vector::{compensated_sum, mean_of, GradientVector};

/// Upper 1% quantile of the standard normal.
pub const ONE_SIDED_Z_99: f64 = 2.326_347_874_040_840_8;

/// Isotropic Gaussian gradient model `N(g, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDistribution {
    pub mean: GradientVector,
    pub sigma: f64,
}

impl GradientDistribution {
    fn draw(&self, rng: &mut impl rand::Rng) -> Result<GradientVector> {
        let v = self
            .mean
            .as_slice()
            .iter()
            .map(|&g| g + self.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        GradientVector::new(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceQuery {
    pub rule: AggregationRule,
    pub attack: AttackSpec,
    pub distribution: GradientDistribution,
    pub m: usize,
    pub q: usize,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceVerdict {
    pub estimated_expected_aggregate: GradientVector,
    pub inner_product_with_g: f64,
    pub standard_error: f64,
    pub trials: u64,
    /// `inner_product_with_g + z_99 * standard_error`.
    pub upper_confidence_bound: f64,
    /// False only when the inner product is negative at 99% one-sided
    /// confidence.
    pub tolerant: bool,
}

/// One Monte-Carlo draw of `V ∪ U` in the order `V` then `U`.
fn trial_inputs(query: &ToleranceQuery, trial: u64) -> Result<Vec<GradientVector>> {
    let mut rng = RngStream::new(query.seed, Purpose::ToleranceTrial, 0, trial).rng();
    let honest_count = match query.attack {
        AttackSpec::None => query.m,
        AttackSpec::ScaledNegativeMean { .. } => query.m - query.q,
    };
    let mut inputs = (0..honest_count)
        .map(|_| query.distribution.draw(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    if let AttackSpec::ScaledNegativeMean { start_iteration, .. } = query.attack {
        let view = OmniscientView { correct_gradients: &inputs, iteration: start_iteration };
        if let Some(forged) = craft(&query.attack, &view, query.q)? {
            inputs.extend(forged);
        }
    }
    Ok(inputs)
}

/// Monte-Carlo estimate of `<g, E[Aggr(V ∪ U)]>` with a one-sided 99% test.
/// The attack is evaluated in its active phase.
pub fn check_tolerance(query: &ToleranceQuery) -> Result<ToleranceVerdict> {
    query.rule.validate(query.m, query.q)?;
    if query.trials < 100 {
        return Err(Error::config(format!("at least 100 trials required, got {}", query.trials)));
    }
    if !(query.distribution.sigma.is_finite() && query.distribution.sigma >= 0.0) {
        return Err(Error::config("sigma must be finite and >= 0"));
    }
    let g = &query.distribution.mean;
    let aggregates: Vec<GradientVector> = (0..query.trials)
        .into_par_iter()
        .map(|t| aggregate(query.rule, &trial_inputs(query, t)?).map(|o| o.aggregate))
        .collect::<Result<_>>()?;

    let expected = mean_of(&aggregates)?;
    let ips = aggregates.iter().map(|a| g.inner_product(a)).collect::<Result<Vec<_>>>()?;
    let n = ips.len() as f64;
    let mean_ip = compensated_sum(ips.iter().copied()) / n;
    let var = compensated_sum(ips.iter().map(|v| (v - mean_ip) * (v - mean_ip))) / (n - 1.0);
    let standard_error = (var / n).sqrt();
    let inner = g.inner_product(&expected)?;
    let upper = inner + ONE_SIDED_Z_99 * standard_error;
    Ok(ToleranceVerdict {
        estimated_expected_aggregate: expected,
        inner_product_with_g: inner,
        standard_error,
        trials: query.trials,
        upper_confidence_bound: upper,
        tolerant: upper >= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Check {
    pub holds: bool,
    /// `sigma / sqrt(m - q - 1)`.
    pub threshold: f64,
    /// `threshold - max_j |g_j|`; positive when the condition holds.
    pub margin: f64,
}

/// Sufficient condition for the median attack:
/// `max_j |g_j| < sigma / sqrt(m - q - 1)`.
///
/// `sigma` must be a lower bound on every coordinate's standard deviation.
pub fn theorem1_condition(g: &GradientVector, sigma: f64, m: usize, q: usize) -> Result<Theorem1Check> {
    if m < q + 2 {
        return Err(Error::config(format!("need m - q >= 2, got m={m}, q={q}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config(format!("sigma must be > 0, got {sigma}")));
    }
    let threshold = sigma / ((m - q - 1) as f64).sqrt();
    let margin = threshold - g.max_abs();
    Ok(Theorem1Check { holds: margin > 0.0, threshold, margin })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Condition {
    pub holds: bool,
    /// `2 (eps + 2)^2 / eps^2 + 2`; `m - q` must exceed it.
    pub threshold: f64,
    pub minimal_correct: usize,
}

/// Size condition for the Krum attack: `m - q > 2 (eps + 2)^2 / eps^2 + 2`.
pub fn theorem2_condition(m: usize, q: usize, epsilon: f64) -> Result<Theorem2Condition> {
    if epsilon == 0.0 || !epsilon.is_finite() {
        return Err(Error::config(format!("epsilon must be finite and non-zero, got {epsilon}")));
    }
    let threshold = 2.0 * (epsilon + 2.0).powi(2) / (epsilon * epsilon) + 2.0;
    let minimal_correct = threshold.floor() as usize + 1;
    let correct = m.saturating_sub(q);
    Ok(Theorem2Condition { holds: (correct as f64) > threshold, threshold, minimal_correct })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub mean_correct: GradientVector,
    /// Minimum squared pairwise distance among the correct gradients.
    pub beta_sq: f64,
    pub radius_ok: bool,
    pub distinct_ok: bool,
    pub epsilon_ok: bool,
    pub size_ok: bool,
    /// min over correct KR minus max over Byzantine KR.
    pub krum_score_gap: f64,
}

impl Theorem2Report {
    pub fn all_assumptions_hold(&self) -> bool {
        self.radius_ok && self.distinct_ok && self.epsilon_ok && self.size_ok
    }
}

/// Checks the Krum-attack assumptions directly on a concrete `V` and `U`
/// and measures the resulting KR-score gap on `V ++ U`.
pub fn theorem2_report(correct: &[GradientVector], byzantine: &[GradientVector], epsilon: f64) -> Result<Theorem2Report> {
    let q = byzantine.len();
    let m = correct.len() + q;
    let mean_correct = mean_of(correct)?;
    let norm_sq = mean_correct.l2_norm_sq();
    let mut beta_sq = f64::INFINITY;
    for (i, a) in correct.iter().enumerate() {
        for b in &correct[i + 1..] {
            beta_sq = beta_sq.min(a.distance_sq(b)?);
        }
    }
    let radius_ok = correct
        .iter()
        .map(|v| v.distance_sq(&mean_correct))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .all(|r| r <= norm_sq);
    let distinct_ok = correct.len() >= 2 && beta_sq > 0.0;
    let epsilon_ok = epsilon > 0.0 && epsilon * epsilon * norm_sq <= beta_sq;
    let size_ok = theorem2_condition(m, q, epsilon)?.holds;

    let inputs: Vec<GradientVector> = correct.iter().chain(byzantine).cloned().collect();
    let scores = krum_scores(&inputs, q)?;
    let (honest_scores, byz_scores) = scores.split_at(correct.len());
    let min_honest = honest_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max_byz = byz_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Theorem2Report {
        mean_correct,
        beta_sq,
        radius_ok,
        distinct_ok,
        epsilon_ok,
        size_ok,
        krum_score_gap: min_honest - max_byz,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Instance {
    pub correct: Vec<GradientVector>,
    pub byzantine: Vec<GradientVector>,
    pub epsilon: f64,
    pub report: Theorem2Report,
}

impl Theorem2Instance {
    /// `V ++ U`; Byzantine indices are `correct.len()..`.
    pub fn inputs(&self) -> Vec<GradientVector> {
        self.correct.iter().chain(&self.byzantine).cloned().collect()
    }

    pub fn is_byzantine_index(&self, i: usize) -> bool {
        i >= self.correct.len()
    }

    pub fn krum(&self) -> Result<AggregationOutcome> {
        krum(&self.inputs(), self.byzantine.len())
    }
}

const MAX_LATTICE_BOX: usize = 5_000_000;

/// Integer vector of dimension `d` with squared norm exactly `target`, if one
/// exists. Prefers large leading coordinates.
fn integer_vector_with_norm_sq(d: usize, target: u64) -> Option<Vec<i64>> {
    fn go(d: usize, remaining: u64, cap: i64, out: &mut Vec<i64>) -> bool {
        if out.len() == d {
            return remaining == 0;
        }
        let max = ((remaining as f64).sqrt().floor() as i64).min(cap);
        for c in (0..=max).rev() {
            out.push(c);
            if go(d, remaining - (c * c) as u64, c, out) {
                return true;
            }
            out.pop();
        }
        false
    }
    let mut out = Vec::with_capacity(d);
    go(d, target, i64::MAX, &mut out).then_some(out)
}

/// Points of the checkerboard lattice `D_d` (integer vectors with even
/// coordinate sum) with squared norm at most `limit`, sorted by norm then
/// lexicographically. Stops growing once `wanted` points are found.
fn checkerboard_points(d: usize, limit: u64, wanted: usize) -> Result<Vec<Vec<i64>>> {
    // the box [-c, c]^d holds every point of squared norm <= c^2
    let mut c: i64 = 1;
    loop {
        let side = (2 * c + 1) as usize;
        let total = side.checked_pow(d as u32).filter(|&t| t <= MAX_LATTICE_BOX).ok_or_else(|| {
            Error::Infeasible(format!("lattice enumeration too large for d={d}, radius^2={limit}"))
        })?;
        let bound = limit.min((c * c) as u64);
        let mut pts = Vec::new();
        let mut z = vec![0i64; d];
        for idx in 0..total {
            let mut rem = idx;
            for zj in z.iter_mut() {
                *zj = (rem % side) as i64 - c;
                rem /= side;
            }
            let sum: i64 = z.iter().sum();
            let norm: u64 = z.iter().map(|v| (v * v) as u64).sum();
            if sum % 2 == 0 && norm <= bound {
                pts.push(z.clone());
            }
        }
        if pts.len() >= wanted || (c * c) as u64 >= limit {
            pts.sort_by(|a, b| {
                let na: i64 = a.iter().map(|v| v * v).sum();
                let nb: i64 = b.iter().map(|v| v * v).sum();
                na.cmp(&nb).then_with(|| b.cmp(a))
            });
            return Ok(pts);
        }
        c += 1;
    }
}

/// Builds correct gradients `v_i = v̄ + z_i` with `z_i` drawn from the
/// `D_d` lattice (min squared spacing 2) inside the ball `|z| <= |v̄|`, and
/// `q` copies of `-epsilon * v̄`. All coordinates are small integers, so the
/// mean and every distance are computed exactly.
///
/// Requires `m - 2q = 3`, `epsilon > 0` and the size condition. The seed
/// applies a signed coordinate permutation to the perturbations and shuffles
/// the correct gradients.
pub fn build_theorem2_instance(m: usize, q: usize, epsilon: f64, d: usize, seed: u64) -> Result<Theorem2Instance> {
    use rand::seq::SliceRandom;
    use rand::Rng;

    if m != 2 * q + 3 {
        return Err(Error::config(format!("instance requires m - 2q = 3, got m={m}, q={q}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
    }
    if d == 0 {
        return Err(Error::config("dimension must be >= 1"));
    }
    let cond = theorem2_condition(m, q, epsilon)?;
    if !cond.holds {
        return Err(Error::ConditionViolated(format!(
            "m - q = {} but the Krum attack needs m - q > {:.4} (at least {})",
            m - q,
            cond.threshold,
            cond.minimal_correct
        )));
    }
    let correct_count = m - q;

    // Largest |v̄|^2 with eps^2 |v̄|^2 <= 2 (the lattice spacing).
    let mut norm_sq = (2.0 / (epsilon * epsilon)).floor() as u64;
    while norm_sq > 0 && epsilon * epsilon * norm_sq as f64 > 2.0 {
        norm_sq -= 1;
    }
    let mean_int = loop {
        if norm_sq < 2 {
            return Err(Error::Infeasible(format!(
                "epsilon = {epsilon} leaves no room for separated points inside the ball"
            )));
        }
        if let Some(v) = integer_vector_with_norm_sq(d, norm_sq) {
            break v;
        }
        norm_sq -= 1;
    };

    let candidates = checkerboard_points(d, norm_sq, correct_count)?;
    let positive: Vec<&Vec<i64>> = candidates
        .iter()
        .filter(|z| z.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0))
        .collect();
    let pairs_needed = correct_count / 2;
    if positive.len() < pairs_needed {
        return Err(Error::Infeasible(format!(
            "only {} separated points fit in dimension {d}; need {correct_count}",
            1 + 2 * positive.len()
        )));
    }
    let mut perturbations: Vec<Vec<i64>> = Vec::with_capacity(correct_count);
    if correct_count % 2 == 1 {
        perturbations.push(vec![0; d]);
    }
    for z in &positive[..pairs_needed] {
        perturbations.push((*z).clone());
        perturbations.push(z.iter().map(|v| -v).collect());
    }

    let mut rng = RngStream::new(seed, Purpose::InstanceJitter, 0, 0).rng();
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let signs: Vec<i64> = (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    perturbations.shuffle(&mut rng);

    let correct = perturbations
        .iter()
        .map(|z| {
            let v = (0..d).map(|j| (mean_int[j] + signs[j] * z[perm[j]]) as f64).collect();
            GradientVector::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_of(&correct)?;
    let u = mean.scale(-epsilon)?;
    let byzantine = vec![u; q];
    let report = theorem2_report(&correct, &byzantine, epsilon)?;
    Ok(Theorem2Instance { correct, byzantine, epsilon, report })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderStatisticEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Monte-Carlo estimates of `E[X_(i:n)]` for every `i` in `1..=n`, with
/// `X ~ N(mean, std^2)`.
pub fn order_statistic_means(n: usize, mean: f64, std: f64, trials: u64, seed: u64) -> Result<Vec<OrderStatisticEstimate>> {
    if n == 0 {
        return Err(Error::config("need at least one sample"));
    }
    if trials < 1000 {
        return Err(Error::config(format!("at least 1000 trials required, got {trials}")));
    }
    let normal = Normal::new(mean, std).map_err(|e| Error::config(format!("bad distribution: {e}")))?;
    let sorted: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, Purpose::OrderStatistic, n as u64, t).rng();
            let mut xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            xs.sort_by(f64::total_cmp);
            xs
        })
        .collect();
    let k = trials as f64;
    Ok((0..n)
        .map(|i| {
            let est = compensated_sum(sorted.iter().map(|s| s[i])) / k;
            let var = compensated_sum(sorted.iter().map(|s| (s[i] - est) * (s[i] - est))) / (k - 1.0);
            OrderStatisticEstimate { estimate: est, standard_error: (var / k).sqrt() }
        })
        .collect())
}

/// `E[X_(which:n)]`, `which` counted from 1 (smallest).
pub fn order_statistic_mean(n: usize, mean: f64, std: f64, which: usize, trials: u64, seed: u64) -> Result<OrderStatisticEstimate> {
    if which == 0 || which > n {
        return Err(Error::config(format!("order statistic index {which} outside 1..={n}")));
    }
    Ok(order_statistic_means(n, mean, std, trials, seed)?[which - 1])
}
