//! Stochastic objectives the workers train on.
//!
//! * [`GaussianQuadratic`]: `f(x; z) = 0.5 * |x - z|^2` with
//!   `z ~ N(x*, sigma^2 I)`, so `grad F(x) = x - x*` exactly and a minibatch
//!   gradient of size `n` has per-coordinate variance `sigma^2 / n`.
//! * [`LogisticRegression`]: ridge-regularized cross-entropy over a fixed
//!   synthetic dataset drawn from a random separator with label noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::vector::GradientVector;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianQuadratic {
    minimizer: GradientVector,
    sigma: f64,
}

impl GaussianQuadratic {
    pub fn new(minimizer: GradientVector, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { minimizer, sigma })
    }

    /// Minimizer drawn from `N(0, I)` on the `ProblemSetup` stream.
    pub fn random(dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, Purpose::ProblemSetup, 0, 0).rng();
        let x_star = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::new(GradientVector::new(x_star)?, sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticSpec {
    pub dim: usize,
    pub samples: usize,
    pub lambda: f64,
    /// Probability of flipping each label.
    pub label_noise: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self { dim: 20, samples: 2000, lambda: 1e-3, label_noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    dim: usize,
    /// Row-major `samples x dim`.
    features: Vec<f64>,
    /// Labels in `{-1, +1}`.
    labels: Vec<f64>,
    lambda: f64,
    sampling: Sampling,
    minimizer: GradientVector,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn generate(spec: LogisticSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.samples == 0 {
            return Err(Error::config("logistic problem needs dim >= 1 and samples >= 1"));
        }
        if !(spec.lambda.is_finite() && spec.lambda > 0.0) {
            return Err(Error::config(format!("lambda must be > 0, got {}", spec.lambda)));
        }
        if !(0.0..0.5).contains(&spec.label_noise) {
            return Err(Error::config(format!("label_noise must be in [0, 0.5), got {}", spec.label_noise)));
        }
        let mut rng = RngStream::new(seed, Purpose::Dataset, 0, 0).rng();
        let separator: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut features = Vec::with_capacity(spec.samples * spec.dim);
        let mut labels = Vec::with_capacity(spec.samples);
        for _ in 0..spec.samples {
            let row: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let margin: f64 = row.iter().zip(&separator).map(|(a, w)| a * w).sum();
            let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < spec.label_noise {
                y = -y;
            }
            features.extend(row);
            labels.push(y);
        }
        let mut problem = Self {
            dim: spec.dim,
            features,
            labels,
            lambda: spec.lambda,
            sampling: Sampling::WithReplacement,
            minimizer: GradientVector::zeros(spec.dim)?,
        };
        problem.minimizer = problem.solve_minimizer()?;
        Ok(problem)
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn data_loss(&self, x: &[f64]) -> f64 {
        let total: f64 = (0..self.samples())
            .map(|i| {
                let z: f64 = self.row(i).iter().zip(x).map(|(a, w)| a * w).sum();
                softplus(-self.labels[i] * z)
            })
            .sum();
        total / self.samples() as f64
    }

    /// Averaged data gradient over `indices` (in the order given) plus the
    /// ridge term.
    fn gradient_over(&self, x: &[f64], indices: impl Iterator<Item = usize>) -> Result<GradientVector> {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for i in indices {
            let a = self.row(i);
            let y = self.labels[i];
            let z: f64 = a.iter().zip(x).map(|(a, w)| a * w).sum();
            let coef = -y * sigmoid(-y * z);
            for (g, aj) in acc.iter_mut().zip(a) {
                *g += coef * aj;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        let out = acc.iter().zip(x).map(|(g, w)| g * inv + self.lambda * w).collect();
        GradientVector::new(out)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut h = DMatrix::<f64>::zeros(d, d);
        for i in 0..self.samples() {
            let a = self.row(i);
            let z: f64 = a.iter().zip(x).map(|(a, w)| a * w).sum();
            let s = sigmoid(z);
            let w = s * (1.0 - s);
            for r in 0..d {
                for c in 0..d {
                    h[(r, c)] += w * a[r] * a[c];
                }
            }
        }
        h /= self.samples() as f64;
        for r in 0..d {
            h[(r, r)] += self.lambda;
        }
        h
    }

    /// Damped Newton iteration from the origin.
    fn solve_minimizer(&self) -> Result<GradientVector> {
        let mut x = vec![0.0; self.dim];
        for _ in 0..100 {
            let g = self.gradient_over(&x, 0..self.samples())?;
            if g.l2_norm() < 1e-13 {
                break;
            }
            let h = self.hessian(&x);
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::Infeasible("logistic Hessian is not positive definite".into()))?;
            let step = chol.solve(&DVector::from_column_slice(g.as_slice()));
            let f0 = self.objective(&x);
            let mut t = 1.0;
            if g.l2_norm() < 1e-6 {
                x.iter_mut().zip(step.iter()).for_each(|(xi, si)| *xi -= si);
                continue;
            }
            loop {
                let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi - t * si).collect();
                if self.objective(&cand) <= f0 || t < 1e-10 {
                    x = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        GradientVector::new(x)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let reg: f64 = x.iter().map(|w| w * w).sum();
        self.data_loss(x) + 0.5 * self.lambda * reg
    }

    /// Dataset as CSV with columns `x0..x{d-1},label`; labels are `-1`/`1`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for i in 0..self.samples() {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{},{}", row.join(","), self.labels[i] as i64)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Quadratic(GaussianQuadratic),
    Logistic(LogisticRegression),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(p) => p.minimizer.dim(),
            Problem::Logistic(p) => p.dim,
        }
    }

    pub fn minimizer(&self) -> Option<&GradientVector> {
        match self {
            Problem::Quadratic(p) => Some(&p.minimizer),
            Problem::Logistic(p) => Some(&p.minimizer),
        }
    }

    fn check(&self, x: &GradientVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.dim() });
        }
        Ok(())
    }

    /// Minibatch gradient `(1/n) sum_j grad f(x; z_j)` over `n` fresh samples
    /// drawn from `stream`.
    pub fn sample_gradient(&self, x: &GradientVector, n: usize, stream: &RngStream) -> Result<GradientVector> {
        self.check(x)?;
        if n == 0 {
            return Err(Error::config("minibatch size must be >= 1"));
        }
        let mut rng = stream.rng();
        match self {
            Problem::Quadratic(p) => {
                let d = x.dim();
                let mut noise = vec![0.0; d];
                for _ in 0..n {
                    for e in noise.iter_mut() {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        *e += xi;
                    }
                }
                // x - mean(z) with mean(z) = x* + sigma * mean(xi)
                let inv = 1.0 / n as f64;
                let out = (0..d)
                    .map(|j| x[j] - (p.minimizer[j] + p.sigma * (noise[j] * inv)))
                    .collect();
                GradientVector::new(out)
            }
            Problem::Logistic(p) => match p.sampling {
                Sampling::WithReplacement => {
                    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..p.samples())).collect();
                    p.gradient_over(x.as_slice(), picks.into_iter())
                }
                Sampling::WithoutReplacement => {
                    if n > p.samples() {
                        return Err(Error::config(format!(
                            "minibatch {n} exceeds dataset size {} without replacement",
                            p.samples()
                        )));
                    }
                    let mut picks = index::sample(&mut rng, p.samples(), n).into_vec();
                    picks.sort_unstable();
                    p.gradient_over(x.as_slice(), picks.into_iter())
                }
            },
        }
    }

    pub fn full_gradient(&self, x: &GradientVector) -> Result<GradientVector> {
        self.check(x)?;
        match self {
            Problem::Quadratic(p) => x.sub(&p.minimizer),
            Problem::Logistic(p) => p.gradient_over(x.as_slice(), 0..p.samples()),
        }
    }

    /// Population objective. The quadratic includes the irreducible
    /// `(d/2) sigma^2` term.
    pub fn loss(&self, x: &GradientVector) -> Result<f64> {
        self.check(x)?;
        let value = match self {
            Problem::Quadratic(p) => {
                0.5 * x.distance_sq(&p.minimizer)? + 0.5 * x.dim() as f64 * p.sigma * p.sigma
            }
            Problem::Logistic(p) => p.objective(x.as_slice()),
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(value)
    }

    /// `loss(x) - loss(x*)`.
    pub fn excess_loss(&self, x: &GradientVector) -> Result<f64> {
        match self {
            Problem::Quadratic(p) => Ok(0.5 * x.distance_sq(&p.minimizer)?),
            Problem::Logistic(p) => Ok(self.loss(x)? - p.objective(p.minimizer.as_slice())),
        }
    }

    /// Declared per-coordinate noise scale, when the problem has one.
    pub fn sigma(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(p) => Some(p.sigma),
            Problem::Logistic(_) => None,
        }
    }
}
