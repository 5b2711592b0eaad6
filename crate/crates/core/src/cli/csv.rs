//! Per-iteration metrics CSV.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;

use crate::simulator::{IterationMetrics, RunTrace};

use super::CliError;

pub const HEADER: &str = "iteration,loss,grad_norm,inner_product,aggregate_norm,byzantine_count,selected_index,selected_is_byzantine,diverged";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub inner_product: f64,
    pub aggregate_norm: f64,
    pub byzantine_count: usize,
    /// `-1` when the rule selects nothing.
    pub selected_index: i64,
    /// `1`, `0`, or `-1` when not applicable.
    pub selected_is_byzantine: i8,
    pub diverged: bool,
}

impl From<&IterationMetrics> for MetricsRow {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iteration: m.iteration,
            loss: m.loss,
            grad_norm: m.grad_norm,
            inner_product: m.inner_product,
            aggregate_norm: m.aggregate_norm,
            byzantine_count: m.byzantine_indices.len(),
            selected_index: m.selected_index.map_or(-1, |i| i as i64),
            selected_is_byzantine: match m.selected_is_byzantine {
                Some(true) => 1,
                Some(false) => 0,
                None => -1,
            },
            diverged: m.diverged,
        }
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render(trace: &RunTrace) -> String {
    render_rows(trace.metrics.iter().map(MetricsRow::from))
}

pub fn render_rows(rows: impl IntoIterator<Item = MetricsRow>) -> String {
    let mut out = String::with_capacity(4096);
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            float(r.loss),
            float(r.grad_norm),
            float(r.inner_product),
            float(r.aggregate_norm),
            r.byzantine_count,
            r.selected_index,
            r.selected_is_byzantine,
            u8::from(r.diverged)
        );
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => return Err(CliError::Csv(format!("unexpected header: {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| CliError::Csv(format!("row {}: bad {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("field count"));
            }
            let num = |j: usize, name: &str| f[j].parse::<f64>().map_err(|_| bad(name));
            Ok(MetricsRow {
                iteration: f[0].parse().map_err(|_| bad("iteration"))?,
                loss: num(1, "loss")?,
                grad_norm: num(2, "grad_norm")?,
                inner_product: num(3, "inner_product")?,
                aggregate_norm: num(4, "aggregate_norm")?,
                byzantine_count: f[5].parse().map_err(|_| bad("byzantine_count"))?,
                selected_index: f[6].parse().map_err(|_| bad("selected_index"))?,
                selected_is_byzantine: f[7].parse().map_err(|_| bad("selected_is_byzantine"))?,
                diverged: match f[8] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("diverged")),
                },
            })
        })
        .collect()
}
