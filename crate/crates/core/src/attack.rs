//! Omniscient Byzantine attacks.
//!
//! The attacker sees every correct gradient of the current iteration and
//! emits the gradients of the workers it controls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{common_dim, mean_of, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    None,
    /// Every Byzantine worker sends `-epsilon * mean(correct gradients)`
    /// from `start_iteration` on.
    ScaledNegativeMean { epsilon: f64, start_iteration: u64 },
}

impl AttackSpec {
    pub fn is_active(&self, iteration: u64) -> bool {
        match *self {
            AttackSpec::None => false,
            AttackSpec::ScaledNegativeMean { start_iteration, .. } => iteration >= start_iteration,
        }
    }
}

/// What the colluding attackers observe in one iteration.
#[derive(Debug, Clone, Copy)]
pub struct OmniscientView<'a> {
    pub correct_gradients: &'a [GradientVector],
    pub iteration: u64,
}

/// Byzantine gradients for this iteration, or `None` when the attack is not
/// active and the workers behave honestly.
pub fn craft(attack: &AttackSpec, view: &OmniscientView<'_>, q: usize) -> Result<Option<Vec<GradientVector>>> {
    if view.correct_gradients.is_empty() {
        return Err(Error::Empty("attacker view has no correct gradients"));
    }
    match *attack {
        AttackSpec::None => Ok(None),
        AttackSpec::ScaledNegativeMean { epsilon, .. } => {
            if !epsilon.is_finite() {
                return Err(Error::config("attack epsilon must be finite"));
            }
            if !attack.is_active(view.iteration) {
                return Ok(None);
            }
            let u = mean_of(view.correct_gradients)?.scale(-epsilon)?;
            Ok(Some(vec![u; q]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Byzantine values must sit below the smallest correct value.
    Below,
    /// Byzantine values must sit above the largest correct value.
    Above,
    /// Zero correct mean; neither side is favoured.
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinatePlacement {
    pub mean: f64,
    pub side: Side,
    /// min (for `Below`) or max (for `Above`) of the correct values;
    /// `None` when neutral.
    pub threshold: Option<f64>,
}

impl CoordinatePlacement {
    pub fn is_cleared_by(&self, value: f64) -> bool {
        match (self.side, self.threshold) {
            (Side::Below, Some(t)) => value < t,
            (Side::Above, Some(t)) => value > t,
            _ => false,
        }
    }
}

/// One-sided placement that defeats the coordinate-wise median: in each
/// coordinate, the Byzantine values go to the side opposite the sign of the
/// correct mean, beyond every correct value.
pub fn median_attack_recipe(view: &OmniscientView<'_>) -> Result<Vec<CoordinatePlacement>> {
    let dim = common_dim(view.correct_gradients)?;
    let mean = mean_of(view.correct_gradients)?;
    Ok((0..dim)
        .map(|j| {
            let column = view.correct_gradients.iter().map(|v| v[j]);
            let mu = mean[j];
            if mu > 0.0 {
                let min = column.fold(f64::INFINITY, f64::min);
                CoordinatePlacement { mean: mu, side: Side::Below, threshold: Some(min) }
            } else if mu < 0.0 {
                let max = column.fold(f64::NEG_INFINITY, f64::max);
                CoordinatePlacement { mean: mu, side: Side::Above, threshold: Some(max) }
            } else {
                CoordinatePlacement { mean: mu, side: Side::Neutral, threshold: None }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<GradientVector> {
        v.iter().map(|&x| GradientVector::new(vec![x]).unwrap()).collect()
    }

    fn snm(epsilon: f64) -> AttackSpec {
        AttackSpec::ScaledNegativeMean { epsilon, start_iteration: 0 }
    }

    #[test]
    fn scaled_negative_mean() {
        let v = scalars(&[0.1, 0.3, -0.1]);
        let view = OmniscientView { correct_gradients: &v, iteration: 0 };
        let out = craft(&snm(10.0), &view, 2).unwrap().unwrap();
        assert_eq!(out.len(), 2);
        for u in &out {
            assert!((u[0] + 1.0).abs() < 1e-12);
        }
        let zero = craft(&snm(0.0), &view, 3).unwrap().unwrap();
        assert_eq!(zero.len(), 3);
        assert!(zero.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn reproduces_krum_toy_byzantine_set() {
        let v = scalars(&[0.0, 0.02, 0.14, 0.26, 0.38, 0.5]);
        // mean is 1.3/6, so epsilon = 0.1 / (1.3/6)
        let epsilon: f64 = 0.1 / (1.3 / 6.0);
        assert!((epsilon - 0.4615).abs() < 1e-4);
        let view = OmniscientView { correct_gradients: &v, iteration: 0 };
        let out = craft(&snm(epsilon), &view, 3).unwrap().unwrap();
        for u in out {
            assert!((u[0] + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn gating_and_none() {
        let v = scalars(&[1.0]);
        let late = AttackSpec::ScaledNegativeMean { epsilon: 1.0, start_iteration: 5 };
        assert!(craft(&late, &OmniscientView { correct_gradients: &v, iteration: 4 }, 1).unwrap().is_none());
        assert!(craft(&late, &OmniscientView { correct_gradients: &v, iteration: 5 }, 1).unwrap().is_some());
        assert!(craft(&AttackSpec::None, &OmniscientView { correct_gradients: &v, iteration: 9 }, 1)
            .unwrap()
            .is_none());
    }

    #[test]
    fn craft_errors() {
        let empty: Vec<GradientVector> = vec![];
        assert!(craft(&snm(1.0), &OmniscientView { correct_gradients: &empty, iteration: 0 }, 1).is_err());
        let v = scalars(&[1.0]);
        assert!(craft(&snm(f64::NAN), &OmniscientView { correct_gradients: &v, iteration: 0 }, 1).is_err());
    }

    #[test]
    fn recipe_matches_median_toy() {
        let v = scalars(&[-0.1, 0.1, 0.3]);
        let recipe = median_attack_recipe(&OmniscientView { correct_gradients: &v, iteration: 0 }).unwrap();
        assert_eq!(recipe[0].side, Side::Below);
        assert_eq!(recipe[0].threshold, Some(-0.1));
        assert!(recipe[0].is_cleared_by(-4.0) && recipe[0].is_cleared_by(-2.0));
        assert!(!recipe[0].is_cleared_by(-0.1));

        let z = scalars(&[0.0]);
        let recipe = median_attack_recipe(&OmniscientView { correct_gradients: &z, iteration: 0 }).unwrap();
        assert_eq!(recipe[0].side, Side::Neutral);
        assert_eq!(recipe[0].threshold, None);
        assert!(!recipe[0].is_cleared_by(-1.0));
    }
}
