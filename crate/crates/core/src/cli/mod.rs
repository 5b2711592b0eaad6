//! Command implementations behind the `byzsgd` binary.

pub mod config;
pub mod csv;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::aggregation::{coordinate_median, krum, AggregationRule};
use crate::attack::AttackSpec;
use crate::error::Error;
use crate::simulator::run_experiment;
use crate::tolerance::{
    build_theorem2_instance, check_tolerance, theorem1_condition, theorem2_condition, GradientDistribution,
    ToleranceQuery,
};
use crate::vector::GradientVector;

use config::{parse_config, ConfigFile, GradientSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config error at {key}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { key: String, line: Option<usize>, message: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Library(#[from] Error),
}

const DEFAULT_CHECK_TRIALS: u64 = 10_000;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load(path: &Path, seed: Option<u64>) -> Result<(String, ConfigFile), CliError> {
    let text = read(path)?;
    let mut cfg = parse_config(&text)?;
    if seed.is_some() {
        cfg.run.seed = seed;
    }
    Ok((text, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rows: usize,
    pub diverged: bool,
}

/// Runs the configured experiment and writes its metrics CSV to `out`.
pub fn cmd_run(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<RunSummary, CliError> {
    let (text, cfg) = load(config_path, seed)?;
    let experiment = cfg.to_experiment(&text)?;
    let trace = run_experiment(&experiment)?;
    std::fs::write(out, csv::render(&trace)).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    Ok(RunSummary { rows: trace.metrics.len(), diverged: trace.diverged() })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Tolerance verdict and condition checks for the configured point, as
/// `key: value` lines.
pub fn cmd_check(config_path: &Path, trials: Option<u64>, seed: Option<u64>) -> Result<String, CliError> {
    let (text, cfg) = load(config_path, seed)?;
    let rule = cfg.build_rule(&text)?;
    let attack = cfg.build_attack(&text)?;
    let (m, q) = (cfg.cluster.m, cfg.cluster.q);
    rule.validate(m, q).map_err(|e| CliError::Config {
        key: "cluster.q".into(),
        line: config::locate_key(&text, "cluster", "q"),
        message: e.to_string(),
    })?;
    let check = cfg.check.clone().unwrap_or(config::CheckSection { g: None, sigma: None, trials: None, instance: None });
    let d = cfg.problem.d;

    let g = match &check.g {
        Some(GradientSpec::Scalar(v)) => GradientVector::new(vec![*v; d])?,
        Some(GradientSpec::Vector(v)) => GradientVector::new(v.clone())?,
        None => {
            let experiment = cfg.to_experiment(&text)?;
            experiment.problem.full_gradient(&experiment.initial_point()?)?
        }
    };
    let sigma = match check.sigma {
        Some(s) => s,
        None => match (cfg.problem.kind.as_str(), cfg.problem.sigma) {
            ("quadratic", Some(s)) => s / (cfg.cluster.n.max(1) as f64).sqrt(),
            _ => {
                return Err(CliError::Config {
                    key: "check.sigma".into(),
                    line: None,
                    message: "required unless the problem is quadratic".into(),
                })
            }
        },
    };
    let trials = trials.or(check.trials).unwrap_or(DEFAULT_CHECK_TRIALS);

    let query = ToleranceQuery {
        rule,
        attack,
        distribution: GradientDistribution { mean: g.clone(), sigma },
        m,
        q,
        trials,
        seed: cfg.seed(),
    };
    let verdict = check_tolerance(&query)?;

    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}: {v}");
    };
    kv("rule", rule.name().into());
    kv("m", m.to_string());
    kv("q", q.to_string());
    kv("d", g.dim().to_string());
    kv("sigma", sigma.to_string());
    kv("g_norm", g.l2_norm().to_string());
    match attack {
        AttackSpec::None => kv("attack", "none".into()),
        AttackSpec::ScaledNegativeMean { epsilon, .. } => {
            kv("attack", "scaled_negative_mean".into());
            kv("epsilon", epsilon.to_string());
        }
    }
    kv("trials", verdict.trials.to_string());
    kv("inner_product", format!("{:.10e}", verdict.inner_product_with_g));
    kv("standard_error", format!("{:.10e}", verdict.standard_error));
    kv("upper_bound_99", format!("{:.10e}", verdict.upper_confidence_bound));
    kv("tolerant", yes_no(verdict.tolerant).into());

    if sigma > 0.0 && m >= q + 2 {
        let t1 = theorem1_condition(&g, sigma, m, q)?;
        kv("theorem1_condition", yes_no(t1.holds).into());
        kv("theorem1_threshold", format!("{:.10e}", t1.threshold));
        kv("theorem1_margin", format!("{:.10e}", t1.margin));
    }

    if let (AggregationRule::Krum { .. }, AttackSpec::ScaledNegativeMean { epsilon, .. }) = (rule, attack) {
        if epsilon != 0.0 {
            let t2 = theorem2_condition(m, q, epsilon)?;
            kv("theorem2_condition", yes_no(t2.holds).into());
            kv("theorem2_threshold", format!("{:.10e}", t2.threshold));
            kv("theorem2_minimal_correct", t2.minimal_correct.to_string());
        }
        if check.instance.unwrap_or(false) {
            let inst = build_theorem2_instance(m, q, epsilon, d, cfg.seed())?;
            let r = &inst.report;
            let outcome = inst.krum()?;
            let selected = outcome.selected_index.unwrap_or(0);
            kv("instance_radius_ok", yes_no(r.radius_ok).into());
            kv("instance_distinct_ok", yes_no(r.distinct_ok).into());
            kv("instance_epsilon_ok", yes_no(r.epsilon_ok).into());
            kv("instance_size_ok", yes_no(r.size_ok).into());
            kv("instance_beta_sq", r.beta_sq.to_string());
            kv("instance_krum_score_gap", r.krum_score_gap.to_string());
            kv("selected", if inst.is_byzantine_index(selected) { "byzantine" } else { "correct" }.into());
            kv(
                "instance_inner_product",
                r.mean_correct.inner_product(&outcome.aggregate)?.to_string(),
            );
        }
    }
    Ok(out)
}

pub const MEDIAN_TOY_INPUTS: [f64; 5] = [-0.1, 0.1, 0.3, -4.0, -2.0];
pub const MEDIAN_TOY_EXPECTED: f64 = -0.1;
pub const KRUM_TOY_INPUTS: [f64; 9] = [-0.1, -0.1, -0.1, 0.0, 0.02, 0.14, 0.26, 0.38, 0.5];
pub const KRUM_TOY_Q: usize = 3;
pub const KRUM_TOY_SCORES: [f64; 9] = [0.0244, 0.0244, 0.0244, 0.0304, 0.0436, 0.1060, 0.1440, 0.2160, 0.4320];
pub const KRUM_TOY_EXPECTED: f64 = -0.1;
const TOY_TOLERANCE: f64 = 1e-12;

fn list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("{{{}}}", parts.join(","))
}

/// Reproduces the one-dimensional median and Krum counterexamples. Returns
/// the printed report and whether every value matched.
pub fn cmd_toy() -> Result<(String, bool), CliError> {
    let scalars = |v: &[f64]| v.iter().map(|&x| GradientVector::new(vec![x])).collect::<Result<Vec<_>, _>>();
    let mut out = String::new();
    let mut ok = true;

    let med = coordinate_median(&scalars(&MEDIAN_TOY_INPUTS)?)?[0];
    let med_ok = (med - MEDIAN_TOY_EXPECTED).abs() <= TOY_TOLERANCE;
    ok &= med_ok;
    let _ = writeln!(out, "Median = {med} (expected {MEDIAN_TOY_EXPECTED})");

    let outcome = krum(&scalars(&KRUM_TOY_INPUTS)?, KRUM_TOY_Q)?;
    let scores = outcome.scores.clone().unwrap_or_default();
    let worst = scores.iter().zip(KRUM_TOY_SCORES).map(|(s, e)| (s - e).abs()).fold(0.0, f64::max);
    let scores_ok = scores.len() == KRUM_TOY_SCORES.len() && worst <= TOY_TOLERANCE;
    ok &= scores_ok;
    let _ = writeln!(out, "KR = {} (expected {})", list(&scores), list(&KRUM_TOY_SCORES));
    let _ = writeln!(out, "KR max abs diff = {worst:e}");
    let chosen = outcome.aggregate[0];
    let krum_ok = (chosen - KRUM_TOY_EXPECTED).abs() <= TOY_TOLERANCE;
    ok &= krum_ok;
    let _ = writeln!(out, "Krum = {chosen} (expected {KRUM_TOY_EXPECTED})");

    for (name, passed) in [("median", med_ok), ("krum scores", scores_ok), ("krum", krum_ok)] {
        if !passed {
            let _ = writeln!(out, "MISMATCH: {name}");
        }
    }
    let _ = writeln!(out, "toy: {}", if ok { "ok" } else { "FAILED" });
    Ok((out, ok))
}
