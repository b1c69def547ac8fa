use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{greedy_color, run_paper_algorithm_with, RunOptions, TracePoint};
use crate::instance::OnlineInstance;

use super::config::{Algorithm, ExperimentConfig, QPolicy};
use super::params::{appendix_q, default_q};
use super::{load_instance, HarnessError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    /// Base of the logarithm in the q rules.
    pub log_base: String,
    pub rng: String,
}

impl Default for Meta {
    fn default() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            log_base: "e".to_string(),
            rng: "chacha8, seed = base + trial index".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub num_offline: usize,
    pub num_arrivals: usize,
    pub n: usize,
    pub delta: usize,
    /// `None` for the greedy baseline.
    pub q: Option<usize>,
    pub palette_size: usize,
    pub q_exceeds_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub failure_arrivals: usize,
    pub failure_entries: usize,
    pub colors_used: usize,
    pub valid: bool,
    pub drift_fallbacks: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorsUsedSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub histogram: BTreeMap<usize, usize>,
}

/// Counts of `Z = 1` for one trace point across trials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub t: usize,
    pub color: u32,
    pub nodes: Vec<u32>,
    /// `d_t(v)` for each node.
    pub degrees_before: Vec<usize>,
    pub samples: usize,
    pub ones: Vec<usize>,
    /// Trials where every node had the color unused.
    pub joint_ones: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub trials: usize,
    pub completed: usize,
    pub errored: usize,
    pub trials_with_failure: usize,
    pub clean_trials: usize,
    pub failure_mode_entry_rate: f64,
    pub invalid_trials: usize,
    pub invalid_rate: f64,
    /// Trials that entered failure mode and ended with an improper coloring.
    pub invalid_after_failure: usize,
    pub failure_arrivals_total: usize,
    pub failure_entries_total: usize,
    pub drift_fallbacks: usize,
    pub colors_used: Option<ColorsUsedSummary>,
    pub delta: usize,
    pub q: Option<usize>,
    pub traces: Vec<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: Meta,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub aggregate: AggregateMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<Vec<TrialRecord>>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn resolve_q(policy: QPolicy, instance: &OnlineInstance) -> (usize, bool) {
    match policy {
        QPolicy::Explicit(q) => (q, false),
        QPolicy::Recommended => {
            let choice = default_q(instance.delta(), instance.n());
            (choice.q, choice.exceeds_delta)
        }
        QPolicy::Appendix { r } => (appendix_q(instance.delta(), instance.n(), r), false),
    }
}

pub fn run_trials(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let instance = load_instance(&config.instance)?;
    run_trials_on(config, &instance)
}

/// Runs `config.trials` independent trials on an already loaded instance.
/// Trial `i` uses seed `config.seed + i`, so results do not depend on how
/// trials are scheduled across workers.
pub fn run_trials_on(
    config: &ExperimentConfig,
    instance: &OnlineInstance,
) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    for (i, p) in config.trace.iter().enumerate() {
        if p.t > instance.num_arrivals()
            || p.nodes.is_empty()
            || p.nodes.iter().any(|&v| v as usize >= instance.num_offline())
        {
            return Err(HarnessError::Config(format!(
                "trace point {i} ({}:{}:{:?}) is outside the instance",
                p.t, p.color, p.nodes
            )));
        }
    }
    let (q, q_exceeds_delta) = match config.algorithm {
        Algorithm::Paper => {
            let (q, warn) = resolve_q(config.q, instance);
            (Some(q), warn)
        }
        Algorithm::Greedy => (None, false),
    };
    let palette_size = match q {
        Some(q) => instance.delta() + q,
        None => (2 * instance.delta()).saturating_sub(1).max(1),
    };
    let options = RunOptions {
        trace: config.trace.clone(),
        discard_colors: true,
    };

    let outcomes: Vec<(TrialRecord, Vec<Vec<bool>>)> = (0..config.trials)
        .into_par_iter()
        .map(|index| {
            let seed = config.seed.wrapping_add(index as u64);
            let result = match q {
                Some(q) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    run_paper_algorithm_with(instance, q, &mut rng, &options)
                        .map_err(|e| e.to_string())
                }
                None => {
                    let mut rec = greedy_color(instance);
                    rec.trace = trace_from_coloring(instance, &rec.edge_colors, &options.trace);
                    rec.edge_colors.clear();
                    Ok(rec)
                }
            };
            match result {
                Ok(rec) => (
                    TrialRecord {
                        index,
                        seed,
                        failure_arrivals: rec.failure_arrivals,
                        failure_entries: rec.failure_mode_entries.len(),
                        colors_used: rec.colors_used,
                        valid: rec.valid,
                        drift_fallbacks: rec.drift_fallbacks,
                        error: None,
                    },
                    rec.trace,
                ),
                Err(error) => (
                    TrialRecord {
                        index,
                        seed,
                        failure_arrivals: 0,
                        failure_entries: 0,
                        colors_used: 0,
                        valid: false,
                        drift_fallbacks: 0,
                        error: Some(error),
                    },
                    Vec::new(),
                ),
            }
        })
        .collect();

    let aggregate = aggregate(instance, &config.trace, &outcomes, q);
    let records: Vec<TrialRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    Ok(ExperimentReport {
        meta: Meta::default(),
        config: config.clone(),
        resolved: Resolved {
            num_offline: instance.num_offline(),
            num_arrivals: instance.num_arrivals(),
            n: instance.n(),
            delta: instance.delta(),
            q,
            palette_size,
            q_exceeds_delta,
        },
        aggregate,
        trials: config.per_trial.then_some(records),
    })
}

fn aggregate(
    instance: &OnlineInstance,
    trace: &[TracePoint],
    outcomes: &[(TrialRecord, Vec<Vec<bool>>)],
    q: Option<usize>,
) -> AggregateMetrics {
    let trials = outcomes.len();
    let done: Vec<&(TrialRecord, Vec<Vec<bool>>)> =
        outcomes.iter().filter(|(r, _)| r.error.is_none()).collect();
    let completed = done.len();
    let rate = |k: usize| if completed == 0 { 0.0 } else { k as f64 / completed as f64 };
    let trials_with_failure = done.iter().filter(|(r, _)| r.failure_arrivals > 0).count();
    let invalid_trials = done.iter().filter(|(r, _)| !r.valid).count();
    let invalid_after_failure = done
        .iter()
        .filter(|(r, _)| r.failure_arrivals > 0 && !r.valid)
        .count();

    let colors_used = (completed > 0).then(|| {
        let mut histogram = BTreeMap::new();
        let mut sum = 0usize;
        for (r, _) in &done {
            *histogram.entry(r.colors_used).or_insert(0) += 1;
            sum += r.colors_used;
        }
        ColorsUsedSummary {
            min: *histogram.keys().next().expect("non-empty"),
            max: *histogram.keys().next_back().expect("non-empty"),
            mean: sum as f64 / completed as f64,
            histogram,
        }
    });

    let traces = trace
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut ones = vec![0usize; p.nodes.len()];
            let mut joint_ones = 0;
            for (_, obs) in &done {
                let z = &obs[i];
                for (k, &bit) in z.iter().enumerate() {
                    ones[k] += bit as usize;
                }
                joint_ones += z.iter().all(|&b| b) as usize;
            }
            TraceSummary {
                t: p.t,
                color: p.color,
                nodes: p.nodes.clone(),
                degrees_before: p.nodes.iter().map(|&v| instance.degree_before(v, p.t)).collect(),
                samples: completed,
                ones,
                joint_ones,
            }
        })
        .collect();

    AggregateMetrics {
        trials,
        completed,
        errored: trials - completed,
        trials_with_failure,
        clean_trials: completed - trials_with_failure,
        failure_mode_entry_rate: rate(trials_with_failure),
        invalid_trials,
        invalid_rate: rate(invalid_trials),
        invalid_after_failure,
        failure_arrivals_total: done.iter().map(|(r, _)| r.failure_arrivals).sum(),
        failure_entries_total: done.iter().map(|(r, _)| r.failure_entries).sum(),
        drift_fallbacks: done.iter().map(|(r, _)| r.drift_fallbacks).sum(),
        colors_used,
        delta: instance.delta(),
        q,
        traces,
    }
}

/// Replays a finished coloring to read the `Z` indicators at each point.
fn trace_from_coloring(
    instance: &OnlineInstance,
    edge_colors: &[Vec<(u32, u32)>],
    trace: &[TracePoint],
) -> Vec<Vec<bool>> {
    trace
        .iter()
        .map(|p| {
            p.nodes
                .iter()
                .map(|&v| {
                    !edge_colors[..p.t.min(instance.num_arrivals())]
                        .iter()
                        .flatten()
                        .any(|&(u, c)| u == v && c == p.color)
                })
                .collect()
        })
        .collect()
}

/// Flat per-trial CSV: `trial,seed,failures,failure_entries,colors_used,valid,drift_fallbacks`.
pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,seed,failures,failure_entries,colors_used,valid,drift_fallbacks\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index, r.seed, r.failure_arrivals, r.failure_entries, r.colors_used, r.valid, r.drift_fallbacks
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{GeneratorSpec, InstanceSource};

    fn config(spec: &str, algorithm: Algorithm, q: QPolicy, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            algorithm,
            q,
            trials,
            seed: 11,
            per_trial: true,
            ..ExperimentConfig::new(InstanceSource::Generate(spec.parse::<GeneratorSpec>().unwrap()))
        }
    }

    #[test]
    fn greedy_trials_are_always_valid() {
        let cfg = config("regular:40:6:1", Algorithm::Greedy, QPolicy::Recommended, 10);
        let rep = run_trials(&cfg).unwrap();
        let agg = &rep.aggregate;
        assert_eq!(agg.invalid_rate, 0.0);
        assert!(agg.colors_used.as_ref().unwrap().max <= 11);
        assert_eq!(rep.resolved.q, None);
    }

    #[test]
    fn large_q_never_enters_failure_mode() {
        let cfg = config("regular:30:5:2", Algorithm::Paper, QPolicy::Explicit(25), 10);
        let rep = run_trials(&cfg).unwrap();
        assert_eq!(rep.aggregate.failure_mode_entry_rate, 0.0);
        assert_eq!(rep.aggregate.invalid_trials, 0);
    }

    #[test]
    fn bookkeeping_is_conserved() {
        let cfg = config("gadget:3:6", Algorithm::Paper, QPolicy::Explicit(1), 20);
        let rep = run_trials(&cfg).unwrap();
        let a = &rep.aggregate;
        assert_eq!(a.trials_with_failure + a.clean_trials + a.errored, a.trials);
        assert!(a.invalid_after_failure <= a.trials_with_failure);
        let recs = rep.trials.as_ref().unwrap();
        assert_eq!(recs.len(), 20);
        assert_eq!(recs[3].seed, 14);
        let csv = trials_csv(recs);
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn identical_config_gives_identical_report() {
        let mut cfg = config("regular:24:6:5", Algorithm::Paper, QPolicy::Explicit(2), 12);
        cfg.trace = vec![TracePoint {
            t: 10,
            color: 1,
            nodes: vec![0, 1],
        }];
        let a = run_trials(&cfg).unwrap().to_json();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_trials(&cfg).unwrap().to_json());
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_traces_replay_the_coloring() {
        let inst = OnlineInstance::new(1, vec![vec![0], vec![0]], 2).unwrap();
        let mut cfg = config("gadget:3:3", Algorithm::Greedy, QPolicy::Recommended, 1);
        cfg.trace = vec![
            TracePoint { t: 1, color: 0, nodes: vec![0] },
            TracePoint { t: 1, color: 1, nodes: vec![0] },
        ];
        let rep = run_trials_on(&cfg, &inst).unwrap();
        assert_eq!(rep.aggregate.traces[0].ones, vec![0]);
        assert_eq!(rep.aggregate.traces[1].ones, vec![1]);
    }

    #[test]
    fn trace_points_outside_the_instance_are_rejected() {
        let inst = OnlineInstance::new(1, vec![vec![0]], 1).unwrap();
        let mut cfg = config("gadget:3:3", Algorithm::Paper, QPolicy::Explicit(1), 1);
        cfg.trace = vec![TracePoint { t: 0, color: 0, nodes: vec![4] }];
        assert!(run_trials_on(&cfg, &inst).is_err());
    }
}
