use serde::{Deserialize, Serialize};

use super::trials::AggregateMetrics;
use super::HarnessError;

/// Fewer samples than this make the binomial slack meaningless.
pub const MIN_TRACE_SAMPLES: usize = 1000;

/// Absolute slack added to every three-sigma band.
const ABS_SLACK: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub t: usize,
    pub color: u32,
    pub node: u32,
    pub degree_before: usize,
    pub samples: usize,
    pub empirical: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub checks: Vec<MarginalCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegDepCheck {
    pub t: usize,
    pub color: u32,
    pub nodes: Vec<u32>,
    pub samples: usize,
    pub joint: f64,
    /// Product of the empirical marginals.
    pub product: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegDepReport {
    pub checks: Vec<NegDepCheck>,
    pub pass: bool,
}

fn three_sigma(p: f64, m: usize) -> f64 {
    3.0 * (p * (1.0 - p) / m as f64).sqrt()
}

fn ensure_samples(metrics: &AggregateMetrics, min_samples: usize) -> Result<(), HarnessError> {
    if metrics.traces.is_empty() {
        return Err(HarnessError::MissingTrace);
    }
    for (index, s) in metrics.traces.iter().enumerate() {
        if s.samples < min_samples {
            return Err(HarnessError::InsufficientSamples {
                index,
                got: s.samples,
                needed: min_samples,
            });
        }
    }
    Ok(())
}

/// Each traced `Pr[Z = 1]` against `(Δ - d + q) / (Δ + q)`, within
/// `3 sqrt(p(1-p)/M) + 0.005`.
pub fn check_marginals(
    metrics: &AggregateMetrics,
    delta: usize,
    q: usize,
    min_samples: usize,
) -> Result<MarginalReport, HarnessError> {
    ensure_samples(metrics, min_samples)?;
    let palette = (delta + q) as f64;
    let mut checks = Vec::new();
    for s in &metrics.traces {
        for (k, &node) in s.nodes.iter().enumerate() {
            let d = s.degrees_before[k];
            let target = if palette == 0.0 {
                0.0
            } else {
                (delta + q).saturating_sub(d) as f64 / palette
            };
            let empirical = s.ones[k] as f64 / s.samples as f64;
            let tolerance = three_sigma(target, s.samples) + ABS_SLACK;
            checks.push(MarginalCheck {
                t: s.t,
                color: s.color,
                node,
                degree_before: d,
                samples: s.samples,
                empirical,
                target,
                tolerance,
                pass: (empirical - target).abs() <= tolerance,
            });
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(MarginalReport { checks, pass })
}

/// Joint `Pr[all Z = 1]` against the product of the empirical marginals,
/// one-sided, with slack `3 sqrt(p(1-p)/M) + 0.005` where `p` is the product.
pub fn check_negative_dependence(
    metrics: &AggregateMetrics,
    min_samples: usize,
) -> Result<NegDepReport, HarnessError> {
    ensure_samples(metrics, min_samples)?;
    let checks: Vec<NegDepCheck> = metrics
        .traces
        .iter()
        .map(|s| {
            let m = s.samples as f64;
            let product: f64 = s.ones.iter().map(|&o| o as f64 / m).product();
            let joint = s.joint_ones as f64 / m;
            let slack = three_sigma(product, s.samples) + ABS_SLACK;
            NegDepCheck {
                t: s.t,
                color: s.color,
                nodes: s.nodes.clone(),
                samples: s.samples,
                joint,
                product,
                slack,
                pass: joint <= product + slack,
            }
        })
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    Ok(NegDepReport { checks, pass })
}
