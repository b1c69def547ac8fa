//! Rules for choosing the color surplus `q`. Logarithms are natural.

use serde::{Deserialize, Serialize};

/// Slack for `ceil`/`floor` so that exact integers computed through `cbrt`
/// are not pushed across a boundary by rounding error.
const ROUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QChoice {
    pub q: usize,
    /// The recommended surplus exceeds Δ, i.e. Δ < 81 ln n.
    pub exceeds_delta: bool,
}

/// `⌈3 Δ^(2/3) (ln n)^(1/3)⌉`; warns when the result exceeds Δ.
pub fn default_q(delta: usize, n: usize) -> QChoice {
    default_q_ln(delta, (n.max(2) as f64).ln())
}

/// [`default_q`] with `ln n` given directly.
pub fn default_q_ln(delta: usize, ln_n: f64) -> QChoice {
    let d = delta as f64;
    let raw = 3.0 * (d * d * ln_n).cbrt();
    let q = (raw - ROUND_SLACK).ceil().max(0.0) as usize;
    let exceeds_delta = q > delta;
    if exceeds_delta {
        log::warn!(
            "recommended q = {q} exceeds delta = {delta}; greedy with 2*delta-1 colors is no worse here"
        );
    }
    QChoice { q, exceeds_delta }
}

/// `⌊Δ^(2/3) (ln n)^(1/3) / (6 r^(1/3))⌋`, the surplus of the gadget family.
pub fn appendix_q(delta: usize, n: usize, r: u32) -> usize {
    appendix_q_ln(delta, (n.max(1) as f64).ln(), r)
}

pub fn appendix_q_ln(delta: usize, ln_n: f64, r: u32) -> usize {
    let d = delta as f64;
    let raw = (d * d * ln_n / r as f64).cbrt() / 6.0;
    (raw + ROUND_SLACK).floor().max(0.0) as usize
}
