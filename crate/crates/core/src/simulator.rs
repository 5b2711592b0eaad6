//! Parameter-server loop for distributed synchronous SGD.
//!
//! Each iteration every worker draws a minibatch gradient on its own keyed
//! stream, a fresh random subset of `q` workers is handed to the attacker,
//! the server aggregates the `m` submitted gradients and takes a step.
//! Worker draws never depend on which workers are Byzantine, so a run whose
//! attack has not started is bit-identical to a run with no attack at all.

use rand::seq::index;
use rayon::prelude::*;

use crate::aggregation::{aggregate, AggregationOutcome, AggregationRule};
use crate::attack::{craft, AttackSpec, OmniscientView};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::{Purpose, RngStream};
use crate::vector::{mean_of, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub factor: f64,
    pub every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub initial: f64,
    pub decay: Option<StepDecay>,
}

impl LearningRate {
    pub fn constant(gamma: f64) -> Self {
        Self { initial: gamma, decay: None }
    }

    pub fn at(&self, iteration: u64) -> f64 {
        match self.decay {
            None => self.initial,
            Some(StepDecay { factor, every }) => self.initial * factor.powi((iteration / every) as i32),
        }
    }
}

impl Default for LearningRate {
    fn default() -> Self {
        Self::constant(0.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    Explicit(GradientVector),
    /// Each coordinate drawn from `N(0, scale^2)`.
    Random { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceGuard {
    pub max_loss: f64,
    pub max_norm: f64,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self { max_loss: 1e12, max_norm: 1e9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub m: usize,
    pub q: usize,
    pub n: usize,
    pub iterations: u64,
    pub learning_rate: LearningRate,
    pub rule: AggregationRule,
    pub attack: AttackSpec,
    pub problem: Problem,
    pub seed: u64,
    pub x0: InitialPoint,
    pub guard: DivergenceGuard,
    /// Evaluate worker gradients on the rayon pool.
    pub parallel: bool,
    /// Reporting only.
    pub iterations_per_epoch: u64,
}

impl ExperimentConfig {
    pub fn new(m: usize, q: usize, n: usize, iterations: u64, rule: AggregationRule, problem: Problem) -> Self {
        Self {
            m,
            q,
            n,
            iterations,
            learning_rate: LearningRate::default(),
            rule,
            attack: AttackSpec::None,
            problem,
            seed: 0,
            x0: InitialPoint::Random { scale: 1.0 },
            guard: DivergenceGuard::default(),
            parallel: false,
            iterations_per_epoch: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate(self.m, self.q)?;
        if self.iterations == 0 {
            return Err(Error::config("T must be >= 1"));
        }
        if self.n == 0 {
            return Err(Error::config("minibatch size n must be >= 1"));
        }
        let lr = self.learning_rate;
        if !(lr.initial.is_finite() && lr.initial > 0.0) {
            return Err(Error::config(format!("gamma must be > 0, got {}", lr.initial)));
        }
        if let Some(decay) = lr.decay {
            if !(decay.factor > 0.0 && decay.factor <= 1.0) || decay.every == 0 {
                return Err(Error::config("gamma decay needs factor in (0, 1] and interval >= 1"));
            }
        }
        if let AttackSpec::ScaledNegativeMean { epsilon, .. } = self.attack {
            if !epsilon.is_finite() {
                return Err(Error::config("attack epsilon must be finite"));
            }
        }
        match &self.x0 {
            InitialPoint::Explicit(x) if x.dim() != self.problem.dim() => {
                return Err(Error::config(format!(
                    "x0 has dimension {}, problem has {}",
                    x.dim(),
                    self.problem.dim()
                )));
            }
            InitialPoint::Random { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                return Err(Error::config("x0 scale must be finite and >= 0"));
            }
            _ => {}
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::config("iterations_per_epoch must be >= 1"));
        }
        Ok(())
    }

    pub fn initial_point(&self) -> Result<GradientVector> {
        match &self.x0 {
            InitialPoint::Explicit(x) => Ok(x.clone()),
            InitialPoint::Random { scale } => {
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = RngStream::new(self.seed, Purpose::Initialization, 0, 0).rng();
                let v = (0..self.problem.dim())
                    .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                GradientVector::new(v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub loss: f64,
    /// `|g_t|` with `g_t` the exact gradient at `x^t`.
    pub grad_norm: f64,
    /// `<g_t, aggregate>`; negative means the step ascends.
    pub inner_product: f64,
    pub aggregate_norm: f64,
    /// `<g_t, mean of the honest gradients that were actually submitted>`.
    pub honest_mean_inner_product: f64,
    pub byzantine_indices: Vec<usize>,
    pub selected_index: Option<usize>,
    pub selected_is_byzantine: Option<bool>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: ExperimentConfig,
    pub metrics: Vec<IterationMetrics>,
    pub final_x: GradientVector,
}

impl RunTrace {
    pub fn diverged(&self) -> bool {
        self.metrics.last().is_some_and(|m| m.diverged)
    }

    pub fn epoch_of(&self, iteration: u64) -> u64 {
        iteration / self.config.iterations_per_epoch
    }
}

/// Everything the server saw in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// The `m` honest draws, one per worker.
    pub honest: Vec<GradientVector>,
    /// What the server received, in worker order.
    pub submitted: Vec<GradientVector>,
    pub byzantine_indices: Vec<usize>,
    pub outcome: AggregationOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: GradientVector,
    pub iteration: u64,
}

/// Uniform size-`q` subset of `0..m`, sorted ascending.
pub fn select_byzantine_indices(m: usize, q: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if 2 * q >= m {
        return Err(Error::config(format!("2q < m required, got m={m}, q={q}")));
    }
    let mut rng = stream.rng();
    let mut picked = index::sample(&mut rng, m, q).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub struct Simulator {
    config: ExperimentConfig,
}

impl Simulator {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn initial_state(&self) -> Result<State> {
        Ok(State { x: self.config.initial_point()?, iteration: 0 })
    }

    fn honest_gradients(&self, x: &GradientVector, t: u64) -> Result<Vec<GradientVector>> {
        let cfg = &self.config;
        let draw = |i: usize| {
            let stream = RngStream::new(cfg.seed, Purpose::WorkerGradient, i as u64, t);
            cfg.problem.sample_gradient(x, cfg.n, &stream)
        };
        if cfg.parallel {
            (0..cfg.m).into_par_iter().map(draw).collect()
        } else {
            (0..cfg.m).map(draw).collect()
        }
    }

    pub fn round(&self, x: &GradientVector, t: u64) -> Result<Round> {
        let cfg = &self.config;
        let honest = self.honest_gradients(x, t)?;
        let mut submitted = honest.clone();
        let mut byzantine_indices = Vec::new();
        if cfg.q > 0 && cfg.attack.is_active(t) {
            let stream = RngStream::new(cfg.seed, Purpose::ByzantineSelection, 0, t);
            let selected = select_byzantine_indices(cfg.m, cfg.q, &stream)?;
            let correct: Vec<GradientVector> = honest
                .iter()
                .enumerate()
                .filter(|(i, _)| selected.binary_search(i).is_err())
                .map(|(_, v)| v.clone())
                .collect();
            let view = OmniscientView { correct_gradients: &correct, iteration: t };
            if let Some(forged) = craft(&cfg.attack, &view, cfg.q)? {
                for (&i, u) in selected.iter().zip(forged) {
                    submitted[i] = u;
                }
                byzantine_indices = selected;
            }
        }
        let outcome = aggregate(cfg.rule, &submitted)?;
        Ok(Round { honest, submitted, byzantine_indices, outcome })
    }

    /// One server iteration. Returns the next state, or `None` when the
    /// update diverged (the metrics row is then marked `diverged`).
    pub fn step(&self, state: &State) -> Result<(Option<State>, IterationMetrics)> {
        let cfg = &self.config;
        let t = state.iteration;
        let x = &state.x;
        let loss = cfg.problem.loss(x)?;
        let g = cfg.problem.full_gradient(x)?;
        let round = self.round(x, t)?;
        let agg = &round.outcome.aggregate;

        let honest_submitted: Vec<GradientVector> = round
            .submitted
            .iter()
            .enumerate()
            .filter(|(i, _)| round.byzantine_indices.binary_search(i).is_err())
            .map(|(_, v)| v.clone())
            .collect();
        let honest_mean = mean_of(&honest_submitted)?;

        let selected_index = round.outcome.selected_index;
        let mut metrics = IterationMetrics {
            iteration: t,
            loss,
            grad_norm: g.l2_norm(),
            inner_product: g.inner_product(agg)?,
            aggregate_norm: agg.l2_norm(),
            honest_mean_inner_product: g.inner_product(&honest_mean)?,
            selected_is_byzantine: selected_index.map(|k| round.byzantine_indices.binary_search(&k).is_ok()),
            byzantine_indices: round.byzantine_indices,
            selected_index,
            diverged: false,
        };

        let gamma = cfg.learning_rate.at(t);
        let next = match x.add_scaled(-gamma, agg) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => {
                metrics.diverged = true;
                return Ok((None, metrics));
            }
            Err(e) => return Err(e),
        };
        let next_loss = cfg.problem.loss(&next);
        let blew_up = match next_loss {
            Ok(l) => l.abs() > cfg.guard.max_loss,
            Err(Error::NonFinite(_)) => true,
            Err(e) => return Err(e),
        };
        if blew_up || next.l2_norm() > cfg.guard.max_norm {
            metrics.diverged = true;
            return Ok((None, metrics));
        }
        Ok((Some(State { x: next, iteration: t + 1 }), metrics))
    }
}

/// Runs `config.iterations` steps, stopping early on divergence. The final
/// point is the last finite iterate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunTrace> {
    let sim = Simulator::new(config.clone())?;
    let mut state = sim.initial_state()?;
    let mut metrics = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        let (next, row) = sim.step(&state)?;
        metrics.push(row);
        match next {
            Some(s) => state = s,
            None => break,
        }
    }
    Ok(RunTrace { config: config.clone(), metrics, final_x: state.x })
}
