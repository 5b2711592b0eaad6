//! TOML experiment files.
//!
//! ```toml
//! [problem]
//! kind = "quadratic"     # or "logistic"
//! d = 10
//! sigma = 1.0
//!
//! [cluster]
//! m = 25
//! q = 12
//! n = 50
//!
//! [rule]
//! kind = "median"        # "mean" | "median" | "krum"
//!
//! [attack]
//! kind = "scaled_negative_mean"
//! epsilon = 10.0
//! start_iteration = 100
//!
//! [run]
//! T = 300
//! gamma = 0.1
//! seed = 7
//! ```
//!
//! Unknown keys are rejected. `[check]` is read only by `byzsgd check`.

use serde::Deserialize;

use crate::aggregation::AggregationRule;
use crate::attack::AttackSpec;
use crate::error::Error;
use crate::problem::{GaussianQuadratic, LogisticRegression, LogisticSpec, Problem, Sampling};
use crate::simulator::{DivergenceGuard, ExperimentConfig, InitialPoint, LearningRate, StepDecay};
use crate::vector::GradientVector;

use super::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    pub cluster: ClusterSection,
    pub rule: RuleSection,
    #[serde(default)]
    pub attack: AttackSection,
    pub run: RunSection,
    pub check: Option<CheckSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: String,
    pub d: usize,
    pub sigma: Option<f64>,
    pub samples: Option<usize>,
    pub lambda: Option<f64>,
    pub label_noise: Option<f64>,
    pub sampling: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub m: usize,
    pub q: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub kind: String,
    /// Krum's declared Byzantine count; defaults to `cluster.q`.
    pub q: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: String,
    pub epsilon: Option<f64>,
    pub start_iteration: Option<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { kind: "none".into(), epsilon: None, start_iteration: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub iterations: u64,
    pub gamma: Option<f64>,
    /// Multiplicative step decay factor, applied every `gamma_decay_every`.
    pub gamma_decay: Option<f64>,
    pub gamma_decay_every: Option<u64>,
    pub seed: Option<u64>,
    pub x0: Option<Vec<f64>>,
    pub x0_scale: Option<f64>,
    pub parallel: Option<bool>,
    pub iterations_per_epoch: Option<u64>,
    pub max_loss: Option<f64>,
    pub max_norm: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    /// Expected correct gradient; a scalar is broadcast to `problem.d`.
    pub g: Option<GradientSpec>,
    pub sigma: Option<f64>,
    pub trials: Option<u64>,
    /// Also build and report the Krum-attack instance.
    pub instance: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GradientSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// 1-based line of `key` inside `[section]`, if present.
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            in_section = trimmed == header;
            continue;
        }
        if in_section {
            let name = trimmed.split('=').next().unwrap_or("").trim();
            if name == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn invalid(text: &str, section: &str, key: &str, message: impl Into<String>) -> CliError {
    CliError::Config { key: format!("{section}.{key}"), line: locate_key(text, section, key), message: message.into() }
}

fn required<T>(value: Option<T>, section: &str, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config {
        key: format!("{section}.{key}"),
        line: None,
        message: "missing required key".into(),
    })
}

pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

impl ConfigFile {
    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    pub fn build_problem(&self, text: &str) -> Result<Problem, CliError> {
        let p = &self.problem;
        let seed = self.seed();
        if p.d == 0 {
            return Err(invalid(text, "problem", "d", "dimension must be >= 1"));
        }
        match p.kind.as_str() {
            "quadratic" => {
                let sigma = required(p.sigma, "problem", "sigma")?;
                GaussianQuadratic::random(p.d, sigma, seed)
                    .map(Problem::Quadratic)
                    .map_err(|e| invalid(text, "problem", "sigma", e.to_string()))
            }
            "logistic" => {
                let defaults = LogisticSpec::default();
                let spec = LogisticSpec {
                    dim: p.d,
                    samples: p.samples.unwrap_or(defaults.samples),
                    lambda: p.lambda.unwrap_or(defaults.lambda),
                    label_noise: p.label_noise.unwrap_or(defaults.label_noise),
                };
                let sampling = match p.sampling.as_deref() {
                    None | Some("with_replacement") => Sampling::WithReplacement,
                    Some("without_replacement") => Sampling::WithoutReplacement,
                    Some(other) => {
                        return Err(invalid(text, "problem", "sampling", format!("unknown sampling mode `{other}`")))
                    }
                };
                LogisticRegression::generate(spec, seed)
                    .map(|l| Problem::Logistic(l.with_sampling(sampling)))
                    .map_err(|e| invalid(text, "problem", "kind", e.to_string()))
            }
            other => Err(invalid(text, "problem", "kind", format!("unknown problem kind `{other}`"))),
        }
    }

    pub fn build_rule(&self, text: &str) -> Result<AggregationRule, CliError> {
        match self.rule.kind.as_str() {
            "mean" => Ok(AggregationRule::Mean),
            "median" => Ok(AggregationRule::CoordinateWiseMedian),
            "krum" => Ok(AggregationRule::Krum { byzantine: self.rule.q.unwrap_or(self.cluster.q) }),
            other => Err(invalid(text, "rule", "kind", format!("unknown rule `{other}`"))),
        }
    }

    pub fn build_attack(&self, text: &str) -> Result<AttackSpec, CliError> {
        let a = &self.attack;
        match a.kind.as_str() {
            "none" => Ok(AttackSpec::None),
            "scaled_negative_mean" => {
                let epsilon = required(a.epsilon, "attack", "epsilon")?;
                if !epsilon.is_finite() {
                    return Err(invalid(text, "attack", "epsilon", "must be finite"));
                }
                Ok(AttackSpec::ScaledNegativeMean { epsilon, start_iteration: a.start_iteration.unwrap_or(0) })
            }
            other => Err(invalid(text, "attack", "kind", format!("unknown attack `{other}`"))),
        }
    }

    /// Full experiment description; every invariant is re-validated and a
    /// failure is reported against the key that caused it.
    pub fn to_experiment(&self, text: &str) -> Result<ExperimentConfig, CliError> {
        let (m, q) = (self.cluster.m, self.cluster.q);
        if 2 * q >= m {
            return Err(invalid(text, "cluster", "q", format!("2q < m required, got m={m}, q={q}")));
        }
        let rule = self.build_rule(text)?;
        if let AggregationRule::Krum { byzantine } = rule {
            if m <= 2 * byzantine + 2 {
                let key = if self.rule.q.is_some() { ("rule", "q") } else { ("cluster", "q") };
                return Err(invalid(text, key.0, key.1, format!("Krum requires m - 2q > 2, got m={m}, q={byzantine}")));
            }
        }
        let problem = self.build_problem(text)?;
        let r = &self.run;
        let decay = match (r.gamma_decay, r.gamma_decay_every) {
            (None, None) => None,
            (Some(factor), every) => Some(StepDecay { factor, every: every.unwrap_or(1) }),
            (None, Some(_)) => return Err(invalid(text, "run", "gamma_decay_every", "set without run.gamma_decay")),
        };
        let x0 = match &r.x0 {
            Some(v) => InitialPoint::Explicit(
                GradientVector::new(v.clone()).map_err(|e| invalid(text, "run", "x0", e.to_string()))?,
            ),
            None => InitialPoint::Random { scale: r.x0_scale.unwrap_or(1.0) },
        };
        let defaults = DivergenceGuard::default();
        let config = ExperimentConfig {
            m,
            q,
            n: self.cluster.n,
            iterations: r.iterations,
            learning_rate: LearningRate { initial: r.gamma.unwrap_or(0.1), decay },
            rule,
            attack: self.build_attack(text)?,
            problem,
            seed: self.seed(),
            x0,
            guard: DivergenceGuard {
                max_loss: r.max_loss.unwrap_or(defaults.max_loss),
                max_norm: r.max_norm.unwrap_or(defaults.max_norm),
            },
            parallel: r.parallel.unwrap_or(false),
            iterations_per_epoch: r.iterations_per_epoch.unwrap_or(1),
        };
        config.validate().map_err(|e| attribute(text, e))?;
        Ok(config)
    }
}

/// Best-effort mapping of a library validation error to the offending key.
fn attribute(text: &str, err: Error) -> CliError {
    let msg = err.to_string();
    let (section, key) = if msg.contains("T must") {
        ("run", "T")
    } else if msg.contains("minibatch") {
        ("cluster", "n")
    } else if msg.contains("gamma decay") {
        ("run", "gamma_decay")
    } else if msg.contains("gamma") {
        ("run", "gamma")
    } else if msg.contains("x0") {
        ("run", "x0")
    } else if msg.contains("iterations_per_epoch") {
        ("run", "iterations_per_epoch")
    } else {
        ("cluster", "q")
    };
    invalid(text, section, key, msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
kind = "quadratic"
d = 3
sigma = 0.5

[cluster]
m = 7
q = 2
n = 5

[rule]
kind = "krum"

[attack]
kind = "scaled_negative_mean"
epsilon = 0.1
start_iteration = 4

[run]
T = 20
gamma = 0.2
seed = 9
"#;

    #[test]
    fn parses_full_config() {
        let cfg = parse_config(BASE).unwrap();
        let exp = cfg.to_experiment(BASE).unwrap();
        assert_eq!(exp.m, 7);
        assert_eq!(exp.rule, AggregationRule::Krum { byzantine: 2 });
        assert_eq!(exp.attack, AttackSpec::ScaledNegativeMean { epsilon: 0.1, start_iteration: 4 });
        assert_eq!(exp.learning_rate.initial, 0.2);
        assert_eq!(exp.seed, 9);
        assert_eq!(exp.problem.dim(), 3);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = BASE.replace("n = 5", "n = 5\nbatch = 3");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("batch"), "{msg}");
        assert!(msg.contains("line 11"), "{msg}");
    }

    #[test]
    fn majority_byzantine_is_rejected() {
        let text = BASE.replace("m = 7", "m = 25").replace("q = 2", "q = 13").replace("\"krum\"", "\"median\"");
        let err = parse_config(&text).unwrap().to_experiment(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cluster.q") && msg.contains("2q < m"), "{msg}");
        assert!(msg.contains("line 9"), "{msg}");
    }

    #[test]
    fn krum_requirement_names_key() {
        let text = BASE.replace("[rule]\nkind = \"krum\"", "[rule]\nkind = \"krum\"\nq = 3");
        let err = parse_config(&text).unwrap().to_experiment(&text).unwrap_err();
        assert!(err.to_string().contains("rule.q"), "{err}");
    }

    #[test]
    fn bad_values_name_their_key() {
        let text = BASE.replace("gamma = 0.2", "gamma = -1.0");
        let err = parse_config(&text).unwrap().to_experiment(&text).unwrap_err();
        assert!(err.to_string().contains("run.gamma"), "{err}");
        let text = BASE.replace("\"krum\"", "\"bulyan\"");
        let err = parse_config(&text).unwrap().to_experiment(&text).unwrap_err();
        assert!(err.to_string().contains("rule.kind"), "{err}");
    }
}
