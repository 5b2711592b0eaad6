//! Simulator and analysis toolkit for Byzantine-tolerant distributed
//! synchronous SGD.
//!
//! * [`aggregation`]: mean, coordinate-wise median and Krum.
//! * [`attack`]: the scaled-negative-mean inner-product-manipulation attack.
//! * [`problem`]: synthetic quadratic and logistic-regression objectives.
//! * [`simulator`]: the parameter-server training loop.
//! * [`tolerance`]: Monte-Carlo tolerance verdicts, attack-condition
//!   checkers and the Krum counterexample constructor.
//! * [`cli`]: the `byzsgd` command implementations.

pub mod aggregation;
pub mod attack;
pub mod cli;
pub mod error;
pub mod problem;
pub mod rng;
pub mod simulator;
pub mod tolerance;
pub mod vector;

pub use aggregation::{aggregate, AggregationOutcome, AggregationRule};
pub use attack::{craft, AttackSpec, OmniscientView};
pub use error::{Error, Result};
pub use problem::Problem;
pub use rng::{Purpose, RngStream};
pub use simulator::{run_experiment, ExperimentConfig, IterationMetrics, RunTrace};
pub use vector::{mean_of, GradientVector};
