//! Aggregation rules applied by the parameter server: averaging,
//! coordinate-wise median and Krum.
//!
//! Inputs are an ordered list indexed by worker id. Krum breaks both
//! nearest-neighbour ties and argmin ties by ascending index.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{common_dim, mean_of, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationRule {
    Mean,
    #[serde(rename = "median")]
    CoordinateWiseMedian,
    /// Krum with `byzantine` declared faulty workers.
    Krum { byzantine: usize },
}

impl AggregationRule {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::Mean => "mean",
            AggregationRule::CoordinateWiseMedian => "median",
            AggregationRule::Krum { .. } => "krum",
        }
    }

    /// Configuration-level requirements for a cluster of `m` workers of
    /// which `q` are Byzantine.
    pub fn validate(&self, m: usize, q: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if 2 * q >= m {
            return Err(Error::config(format!("2q < m required, got m={m}, q={q}")));
        }
        if let AggregationRule::Krum { byzantine } = *self {
            if m <= 2 * byzantine + 2 {
                return Err(Error::config(format!(
                    "Krum requires m - 2q > 2, got m={m}, q={byzantine}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub aggregate: GradientVector,
    /// Index chosen by Krum; `None` for the other rules.
    pub selected_index: Option<usize>,
    /// Per-input KR scores; Krum only.
    pub scores: Option<Vec<f64>>,
}

pub fn aggregate(rule: AggregationRule, inputs: &[GradientVector]) -> Result<AggregationOutcome> {
    match rule {
        AggregationRule::Mean => Ok(AggregationOutcome {
            aggregate: mean_of(inputs)?,
            selected_index: None,
            scores: None,
        }),
        AggregationRule::CoordinateWiseMedian => Ok(AggregationOutcome {
            aggregate: coordinate_median(inputs)?,
            selected_index: None,
            scores: None,
        }),
        AggregationRule::Krum { byzantine } => krum(inputs, byzantine),
    }
}

/// One-dimensional median. Even lengths average the two middle order
/// statistics.
pub fn median(values: &mut [f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of empty list"));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        Ok(values[n / 2])
    } else {
        Ok(0.5 * (values[n / 2 - 1] + values[n / 2]))
    }
}

pub fn coordinate_median(inputs: &[GradientVector]) -> Result<GradientVector> {
    let dim = common_dim(inputs)?;
    let mut column = Vec::with_capacity(inputs.len());
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(inputs.iter().map(|v| v[j]));
        out.push(median(&mut column)?);
    }
    GradientVector::new(out)
}

fn neighbour_count(m: usize, q: usize) -> Result<usize> {
    match m.checked_sub(q + 2) {
        Some(k) if k >= 1 => Ok(k),
        _ => Err(Error::config(format!(
            "Krum needs m - q - 2 >= 1 neighbours, got m={m}, q={q}"
        ))),
    }
}

fn distance_matrix(inputs: &[GradientVector]) -> Result<Vec<Vec<f64>>> {
    common_dim(inputs)?;
    inputs
        .par_iter()
        .map(|a| inputs.iter().map(|b| a.distance_sq(b)).collect())
        .collect()
}

fn score_from_row(row: &[f64], i: usize, k: usize) -> f64 {
    let mut others: Vec<(f64, usize)> =
        row.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &d)| (d, j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others[..k].iter().map(|(d, _)| d).sum()
}

/// KR score of input `i`: the sum of squared distances to its `m - q - 2`
/// nearest other inputs.
pub fn krum_score(i: usize, inputs: &[GradientVector], q: usize) -> Result<f64> {
    let m = inputs.len();
    let k = neighbour_count(m, q)?;
    if i >= m {
        return Err(Error::config(format!("index {i} out of range for {m} inputs")));
    }
    common_dim(inputs)?;
    let row = inputs.iter().map(|b| inputs[i].distance_sq(b)).collect::<Result<Vec<_>>>()?;
    Ok(score_from_row(&row, i, k))
}

/// All KR scores, in input order.
pub fn krum_scores(inputs: &[GradientVector], q: usize) -> Result<Vec<f64>> {
    let k = neighbour_count(inputs.len(), q)?;
    let dist = distance_matrix(inputs)?;
    Ok(dist.iter().enumerate().map(|(i, row)| score_from_row(row, i, k)).collect())
}

pub fn krum(inputs: &[GradientVector], q: usize) -> Result<AggregationOutcome> {
    let scores = krum_scores(inputs, q)?;
    let selected = argmin_lowest(&scores);
    Ok(AggregationOutcome {
        aggregate: inputs[selected].clone(),
        selected_index: Some(selected),
        scores: Some(scores),
    })
}

fn argmin_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.total_cmp(&scores[best]) == Ordering::Less {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<GradientVector> {
        v.iter().map(|&x| GradientVector::new(vec![x]).unwrap()).collect()
    }

    const KRUM_TOY: [f64; 9] = [-0.1, -0.1, -0.1, 0.0, 0.02, 0.14, 0.26, 0.38, 0.5];

    #[test]
    fn median_toy() {
        let out = coordinate_median(&scalars(&[-0.1, 0.1, 0.3, -4.0, -2.0])).unwrap();
        assert_eq!(out[0], -0.1);
        assert_eq!(coordinate_median(&scalars(&[1.0, 2.0, 3.0])).unwrap()[0], 2.0);
    }

    #[test]
    fn median_even_count() {
        let inputs: Vec<_> = [(1.0, 10.0), (2.0, 20.0), (3.0, 30.0), (4.0, 40.0)]
            .iter()
            .map(|&(a, b)| GradientVector::new(vec![a, b]).unwrap())
            .collect();
        let out = coordinate_median(&inputs).unwrap();
        assert_eq!(out.as_slice(), &[2.5, 25.0]);
    }

    #[test]
    fn krum_toy_scores() {
        let inputs = scalars(&KRUM_TOY);
        let expected = [0.0244, 0.0244, 0.0244, 0.0304, 0.0436, 0.1060, 0.1440, 0.2160, 0.4320];
        let scores = krum_scores(&inputs, 3).unwrap();
        for (i, (s, e)) in scores.iter().zip(expected).enumerate() {
            assert!((s - e).abs() < 1e-12, "KR[{i}] = {s}, expected {e}");
            assert!((krum_score(i, &inputs, 3).unwrap() - s).abs() == 0.0);
        }
        let out = krum(&inputs, 3).unwrap();
        assert_eq!(out.selected_index, Some(0));
        assert_eq!(out.aggregate[0], -0.1);
    }

    #[test]
    fn identical_inputs() {
        let v = GradientVector::new(vec![0.5, -2.0]).unwrap();
        let inputs = vec![v.clone(); 7];
        let out = krum(&inputs, 2).unwrap();
        assert_eq!(out.selected_index, Some(0));
        assert_eq!(out.aggregate, v);
        assert!(out.scores.unwrap().iter().all(|&s| s == 0.0));
        for rule in [AggregationRule::Mean, AggregationRule::CoordinateWiseMedian] {
            let a = aggregate(rule, &inputs).unwrap().aggregate;
            for j in 0..2 {
                assert!((a[j] - v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dispatch() {
        let mean = aggregate(AggregationRule::Mean, &scalars(&[-0.1, 0.1, 0.3])).unwrap();
        assert!((mean.aggregate[0] - 0.1).abs() < 1e-15);
        assert!(mean.selected_index.is_none() && mean.scores.is_none());
        let k = aggregate(AggregationRule::Krum { byzantine: 3 }, &scalars(&KRUM_TOY)).unwrap();
        assert_eq!(k.aggregate[0], -0.1);
    }

    #[test]
    fn precondition_errors_are_config_errors() {
        let err = krum(&scalars(&[1.0, 2.0, 3.0]), 1).unwrap_err();
        assert!(err.is_config());
        assert!(krum_score(5, &scalars(&[1.0, 2.0, 3.0, 4.0]), 0).unwrap_err().is_config());
        assert!(!coordinate_median(&[]).unwrap_err().is_config());
        let mixed = vec![
            GradientVector::new(vec![1.0]).unwrap(),
            GradientVector::new(vec![1.0, 2.0]).unwrap(),
        ];
        assert!(matches!(coordinate_median(&mixed), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rule_validation() {
        assert!(AggregationRule::CoordinateWiseMedian.validate(25, 12).is_ok());
        assert!(AggregationRule::CoordinateWiseMedian.validate(25, 13).is_err());
        assert!(AggregationRule::Krum { byzantine: 11 }.validate(25, 11).is_ok());
        assert!(AggregationRule::Krum { byzantine: 12 }.validate(25, 12).is_err());
    }
}
