//! Experiment harness: parameter rules, seeded batched trials, invariant
//! checks over traced indicators, and JSON/CSV reports.

mod checks;
mod config;
mod params;
mod trials;

use std::path::Path;

use thiserror::Error;

use crate::generators::{gen_gadget_instance, gen_random_regular, GeneratorError};
use crate::instance::{InstanceError, OnlineInstance};

pub use checks::{
    check_marginals, check_negative_dependence, MarginalCheck, MarginalReport, NegDepCheck,
    NegDepReport, MIN_TRACE_SAMPLES,
};
pub use config::{
    parse_trace_point, Algorithm, ExperimentConfig, GeneratorSpec, InstanceSource, QPolicy,
};
pub use params::{appendix_q, appendix_q_ln, default_q, default_q_ln, QChoice};
pub use trials::{
    resolve_q, run_trials, run_trials_on, trials_csv, AggregateMetrics, ColorsUsedSummary,
    ExperimentReport, Meta, Resolved, TraceSummary, TrialRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("trace point {index} has {got} samples, need at least {needed}")]
    InsufficientSamples {
        index: usize,
        got: usize,
        needed: usize,
    },
    #[error("no traced points to check")]
    MissingTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn generate_instance(spec: &GeneratorSpec) -> Result<OnlineInstance, HarnessError> {
    use rand::SeedableRng;
    match *spec {
        GeneratorSpec::Regular { side, delta, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Ok(gen_random_regular(side, side, delta, &mut rng)?)
        }
        GeneratorSpec::Gadget(params) => Ok(gen_gadget_instance(params)?),
    }
}

pub fn load_instance(source: &InstanceSource) -> Result<OnlineInstance, HarnessError> {
    match source {
        InstanceSource::File(path) => read_instance_file(path),
        InstanceSource::Generate(spec) => generate_instance(spec),
    }
}

pub fn read_instance_file(path: &Path) -> Result<OnlineInstance, HarnessError> {
    let file = std::fs::File::open(path)?;
    Ok(OnlineInstance::read(std::io::BufReader::new(file))?)
}
