//! Online edge coloring over an arrival stream.
//!
//! [`ArrivalProcessor`] colors the edges of one arriving node against the
//! current [`PaletteState`]: it builds the uniform fractional point over each
//! neighbor's unused colors, gates on the color column sums, and either
//! rounds that point to a matching or falls back to independent uniform
//! choices (failure mode). [`run_paper_algorithm`] drives it over a whole
//! instance; [`greedy_color`] is the first-fit baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::OnlineInstance;
use crate::rounding::{DependentRounding, FractionalMatching, RoundingError, UniformRows};

/// Column sums up to `1 + GATE_TOL` pass the gate.
pub const GATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("offline node {node} already has degree {degree} = delta {delta}")]
    DegreeOverflow {
        node: u32,
        degree: usize,
        delta: usize,
    },
    #[error("offline node {node} out of range ({num_offline} offline nodes)")]
    NodeOutOfRange { node: u32, num_offline: usize },
    #[error("neighbors must be distinct and sorted; {node} repeats or is out of order")]
    NeighborOrder { node: u32 },
    #[error("palette discipline broken at offline node {node}")]
    PaletteDiscipline { node: u32 },
    #[error(transparent)]
    Rounding(#[from] RoundingError),
}

/// Which colors each offline node has used so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteState {
    delta: usize,
    q: usize,
    palette_size: usize,
    words: usize,
    degree: Vec<u32>,
    used: Vec<u64>,
}

impl PaletteState {
    pub fn new(num_offline: usize, delta: usize, q: usize) -> Self {
        let palette_size = delta + q;
        let words = palette_size.div_ceil(64);
        Self {
            delta,
            q,
            palette_size,
            words,
            degree: vec![0; num_offline],
            used: vec![0; num_offline * words],
        }
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `Δ + q`.
    pub fn palette_size(&self) -> usize {
        self.palette_size
    }

    pub fn num_offline(&self) -> usize {
        self.degree.len()
    }

    pub fn degree(&self, v: u32) -> usize {
        self.degree[v as usize] as usize
    }

    pub fn is_used(&self, v: u32, c: u32) -> bool {
        let row = self.row(v);
        row[c as usize / 64] >> (c % 64) & 1 == 1
    }

    /// `Δ - d(v) + q`.
    pub fn unused_count(&self, v: u32) -> usize {
        self.palette_size - self.degree(v)
    }

    pub fn unused_colors(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        let palette = self.palette_size as u32;
        self.row(v).iter().enumerate().flat_map(move |(i, &word)| {
            let mut free = !word;
            std::iter::from_fn(move || {
                if free == 0 {
                    return None;
                }
                let bit = free.trailing_zeros();
                free &= free - 1;
                Some(i as u32 * 64 + bit)
            })
            .take_while(move |&c| c < palette)
        })
    }

    /// The `k`-th unused color of `v` in increasing order.
    pub fn nth_unused(&self, v: u32, mut k: usize) -> Option<u32> {
        for (i, &word) in self.row(v).iter().enumerate() {
            let mut free = !word;
            if i + 1 == self.words && !self.palette_size.is_multiple_of(64) {
                free &= (1u64 << (self.palette_size % 64)) - 1;
            }
            let ones = free.count_ones() as usize;
            if k >= ones {
                k -= ones;
                continue;
            }
            for _ in 0..k {
                free &= free - 1;
            }
            return Some(i as u32 * 64 + free.trailing_zeros());
        }
        None
    }

    /// `|used(v)| == d(v)`.
    pub fn discipline_holds(&self, v: u32) -> bool {
        let used: u32 = self.row(v).iter().map(|w| w.count_ones()).sum();
        used == self.degree[v as usize] && self.degree[v as usize] as usize <= self.delta
    }

    /// Records color `c` on a new edge of `v`; `c` must be unused at `v`.
    fn assign(&mut self, v: u32, c: u32) {
        let w = self.words;
        let word = &mut self.used[v as usize * w + c as usize / 64];
        *word |= 1u64 << (c % 64);
        self.degree[v as usize] += 1;
    }

    fn row(&self, v: u32) -> &[u64] {
        let start = v as usize * self.words;
        &self.used[start..start + self.words]
    }

    /// Marks `c` used at `v` and bumps its degree, for building hand-made
    /// states in tests and experiments.
    pub fn record_edge(&mut self, v: u32, c: u32) -> Result<(), EngineError> {
        if v as usize >= self.degree.len() {
            return Err(EngineError::NodeOutOfRange {
                node: v,
                num_offline: self.degree.len(),
            });
        }
        if self.degree(v) >= self.delta {
            return Err(EngineError::DegreeOverflow {
                node: v,
                degree: self.degree(v),
                delta: self.delta,
            });
        }
        if c as usize >= self.palette_size || self.is_used(v, c) {
            return Err(EngineError::PaletteDiscipline { node: v });
        }
        self.assign(v, c);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Matched,
    FailureMode,
}

/// A color whose column sum broke the gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub t: usize,
    pub color: u32,
    pub column_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalOutcome {
    /// `(offline node, color)` in neighbor order.
    pub colors: Vec<(u32, u32)>,
    pub mode: Mode,
    pub max_column_sum: f64,
    /// `(color, column sum)` for every color above the gate.
    pub offending: Vec<(u32, f64)>,
    pub drift_fallbacks: usize,
    /// Drift fallbacks that found no color free of sibling edges.
    pub drift_collisions: usize,
}

/// Per-arrival scratch: the fractional point, column sums and the sampler.
#[derive(Debug, Clone, Default)]
pub struct ArrivalProcessor {
    sampler: DependentRounding,
    taken: Vec<bool>,
}

impl ArrivalProcessor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn process<R: Rng + ?Sized>(
        &mut self,
        state: &mut PaletteState,
        neighbors: &[u32],
        rng: &mut R,
    ) -> Result<ArrivalOutcome, EngineError> {
        let palette = state.palette_size;
        for (i, &v) in neighbors.iter().enumerate() {
            if v as usize >= state.num_offline() {
                return Err(EngineError::NodeOutOfRange {
                    node: v,
                    num_offline: state.num_offline(),
                });
            }
            if i > 0 && neighbors[i - 1] >= v {
                return Err(EngineError::NeighborOrder { node: v });
            }
            if state.degree(v) >= state.delta {
                return Err(EngineError::DegreeOverflow {
                    node: v,
                    degree: state.degree(v),
                    delta: state.delta,
                });
            }
        }

        let rows = UnusedRows { state, neighbors };
        let col = self.sampler.load_uniform(palette, &rows)?;
        let mut max_column_sum = 0.0f64;
        let mut offending = Vec::new();
        for (c, &s) in col.iter().enumerate() {
            max_column_sum = max_column_sum.max(s);
            if s > 1.0 + GATE_TOL {
                offending.push((c as u32, s));
            }
        }

        let mut colors = Vec::with_capacity(neighbors.len());
        let mut drift_fallbacks = 0;
        let mut drift_collisions = 0;
        let mode = if offending.is_empty() {
            let outcome = self.sampler.round_uniform(&rows, rng)?;
            let mut chosen: Vec<Option<u32>> = vec![None; neighbors.len()];
            for &(c, j) in outcome.matching.pairs() {
                chosen[j as usize] = Some(c);
            }
            self.taken.clear();
            self.taken.resize(palette, false);
            for c in chosen.iter().flatten() {
                self.taken[*c as usize] = true;
            }
            for (j, &v) in neighbors.iter().enumerate() {
                let c = match chosen[j] {
                    Some(c) => c,
                    None => {
                        drift_fallbacks += 1;
                        let free: Vec<u32> = state
                            .unused_colors(v)
                            .filter(|&c| !self.taken[c as usize])
                            .collect();
                        let c = if free.is_empty() {
                            drift_collisions += 1;
                            let k = rng.gen_range(0..state.unused_count(v));
                            state.nth_unused(v, k).expect("unused color exists")
                        } else {
                            free[rng.gen_range(0..free.len())]
                        };
                        self.taken[c as usize] = true;
                        c
                    }
                };
                colors.push((v, c));
            }
            Mode::Matched
        } else {
            for &v in neighbors {
                let k = rng.gen_range(0..state.unused_count(v));
                let c = state.nth_unused(v, k).expect("unused color exists");
                colors.push((v, c));
            }
            Mode::FailureMode
        };

        for &(v, c) in &colors {
            debug_assert!(!state.is_used(v, c));
            state.assign(v, c);
        }
        for &v in neighbors {
            if !state.discipline_holds(v) {
                return Err(EngineError::PaletteDiscipline { node: v });
            }
        }
        Ok(ArrivalOutcome {
            colors,
            mode,
            max_column_sum,
            offending,
            drift_fallbacks,
            drift_collisions,
        })
    }
}

/// Row `j` is uniform over the unused colors of `neighbors[j]`.
struct UnusedRows<'a> {
    state: &'a PaletteState,
    neighbors: &'a [u32],
}

impl UniformRows for UnusedRows<'_> {
    fn len(&self) -> usize {
        self.neighbors.len()
    }

    fn words(&self) -> usize {
        self.state.words
    }

    fn weight(&self, j: usize) -> f64 {
        1.0 / self.state.unused_count(self.neighbors[j]) as f64
    }

    fn word(&self, j: usize, i: usize) -> u64 {
        let free = !self.state.row(self.neighbors[j])[i];
        if i + 1 == self.state.words {
            free & palette_tail(self.state.palette_size)
        } else {
            free
        }
    }
}

fn palette_tail(palette: usize) -> u64 {
    match palette % 64 {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// The fractional point of one arrival: `x[c][j] = 1 / (Δ - d(v_j) + q)` for
/// every color `c` unused at `v_j`.
pub fn fractional_point(state: &PaletteState, neighbors: &[u32]) -> FractionalMatching {
    let mut x = FractionalMatching::new(state.palette_size, neighbors.len());
    for (j, &v) in neighbors.iter().enumerate() {
        let weight = 1.0 / state.unused_count(v) as f64;
        for c in state.unused_colors(v) {
            x.push(c, j as u32, weight);
        }
    }
    x
}

/// Colors the edges of one arrival; see [`ArrivalProcessor::process`].
pub fn process_arrival<R: Rng + ?Sized>(
    state: &mut PaletteState,
    neighbors: &[u32],
    rng: &mut R,
) -> Result<ArrivalOutcome, EngineError> {
    ArrivalProcessor::new().process(state, neighbors, rng)
}

/// Records the indicator "color `color` unused at `node`" just before
/// arrival `t`, for every node in `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub color: u32,
    pub nodes: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: Vec<TracePoint>,
    /// Drop per-edge colors after verification to save memory.
    pub discard_colors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Per arrival, `(offline node, color)` pairs. Empty when discarded.
    pub edge_colors: Vec<Vec<(u32, u32)>>,
    pub failure_mode_entries: Vec<FailureEntry>,
    /// Arrivals that went through failure mode.
    pub failure_arrivals: usize,
    pub valid: bool,
    pub colors_used: usize,
    pub palette_size: usize,
    pub drift_fallbacks: usize,
    /// Indicators per trace point, one per traced node.
    pub trace: Vec<Vec<bool>>,
}

impl RunRecord {
    pub fn entered_failure_mode(&self) -> bool {
        self.failure_arrivals > 0
    }
}

pub fn run_paper_algorithm<R: Rng + ?Sized>(
    instance: &OnlineInstance,
    q: usize,
    rng: &mut R,
) -> Result<RunRecord, EngineError> {
    run_paper_algorithm_with(instance, q, rng, &RunOptions::default())
}

pub fn run_paper_algorithm_with<R: Rng + ?Sized>(
    instance: &OnlineInstance,
    q: usize,
    rng: &mut R,
    options: &RunOptions,
) -> Result<RunRecord, EngineError> {
    let delta = instance.delta();
    let mut state = PaletteState::new(instance.num_offline(), delta, q);
    let mut processor = ArrivalProcessor::new();

    let mut trace_order: Vec<usize> = (0..options.trace.len()).collect();
    trace_order.sort_by_key(|&i| options.trace[i].t);
    let mut trace = vec![Vec::new(); options.trace.len()];
    let mut next_trace = 0;
    let mut observe = |state: &PaletteState, t: usize, next: &mut usize| {
        while *next < trace_order.len() && options.trace[trace_order[*next]].t <= t {
            let i = trace_order[*next];
            let point = &options.trace[i];
            trace[i] = point
                .nodes
                .iter()
                .map(|&v| !state.is_used(v, point.color))
                .collect();
            *next += 1;
        }
    };

    let mut edge_colors = Vec::with_capacity(instance.num_arrivals());
    let mut failure_mode_entries = Vec::new();
    let mut failure_arrivals = 0;
    let mut drift_fallbacks = 0;
    for (t, neighbors) in instance.arrivals().iter().enumerate() {
        observe(&state, t, &mut next_trace);
        let out = processor.process(&mut state, neighbors, rng)?;
        if out.mode == Mode::FailureMode {
            failure_arrivals += 1;
            failure_mode_entries.extend(out.offending.iter().map(|&(color, column_sum)| {
                FailureEntry {
                    t,
                    color,
                    column_sum,
                }
            }));
        }
        drift_fallbacks += out.drift_fallbacks;
        edge_colors.push(out.colors);
    }
    observe(&state, usize::MAX, &mut next_trace);

    let verdict = verify_coloring(instance, &edge_colors);
    Ok(RunRecord {
        edge_colors: if options.discard_colors {
            Vec::new()
        } else {
            edge_colors
        },
        failure_mode_entries,
        failure_arrivals,
        valid: verdict.is_proper(),
        colors_used: verdict.distinct_colors,
        palette_size: state.palette_size(),
        drift_fallbacks,
        trace,
    })
}

/// First-fit: each edge `{v, w_t}` takes the lowest color free at both ends.
pub fn greedy_color(instance: &OnlineInstance) -> RunRecord {
    let delta = instance.delta();
    let palette = (2 * delta).saturating_sub(1).max(1);
    let words = palette.div_ceil(64);
    let mut offline = vec![0u64; instance.num_offline() * words];
    let mut online = vec![0u64; words];
    let mut edge_colors = Vec::with_capacity(instance.num_arrivals());
    for neighbors in instance.arrivals() {
        online.iter_mut().for_each(|w| *w = 0);
        let mut colors = Vec::with_capacity(neighbors.len());
        for &v in neighbors {
            let row = &mut offline[v as usize * words..(v as usize + 1) * words];
            let c = row
                .iter()
                .zip(&online)
                .enumerate()
                .find_map(|(i, (a, b))| {
                    let free = !(a | b);
                    (free != 0).then(|| i * 64 + free.trailing_zeros() as usize)
                })
                .expect("2Δ-1 colors always leave one free");
            row[c / 64] |= 1 << (c % 64);
            online[c / 64] |= 1 << (c % 64);
            colors.push((v, c as u32));
        }
        edge_colors.push(colors);
    }
    let verdict = verify_coloring(instance, &edge_colors);
    RunRecord {
        edge_colors,
        failure_mode_entries: Vec::new(),
        failure_arrivals: 0,
        valid: verdict.is_proper(),
        colors_used: verdict.distinct_colors,
        palette_size: palette,
        drift_fallbacks: 0,
        trace: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColoringIssue {
    OfflineClash { node: u32, color: u32 },
    OnlineClash { arrival: usize, color: u32 },
    /// Colored edges of an arrival differ from its neighbor list.
    EdgeMismatch { arrival: usize },
    MissingArrival { arrival: usize },
    ExtraArrival { arrival: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub issues: Vec<ColoringIssue>,
    pub distinct_colors: usize,
}

impl Verdict {
    pub fn is_proper(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks that no two edges sharing an endpoint have the same color.
pub fn verify_coloring(instance: &OnlineInstance, edge_colors: &[Vec<(u32, u32)>]) -> Verdict {
    let mut issues = Vec::new();
    let mut offline_pairs: Vec<(u32, u32)> = Vec::with_capacity(instance.num_edges());
    let mut all_colors = Vec::new();
    for (t, colored) in edge_colors.iter().enumerate() {
        let Some(neighbors) = instance.arrivals().get(t) else {
            issues.push(ColoringIssue::ExtraArrival { arrival: t });
            continue;
        };
        let mut nodes: Vec<u32> = colored.iter().map(|p| p.0).collect();
        nodes.sort_unstable();
        if nodes != *neighbors {
            issues.push(ColoringIssue::EdgeMismatch { arrival: t });
        }
        let mut cs: Vec<u32> = colored.iter().map(|p| p.1).collect();
        cs.sort_unstable();
        let mut last = None;
        for w in cs.windows(2) {
            if w[0] == w[1] && last != Some(w[0]) {
                issues.push(ColoringIssue::OnlineClash {
                    arrival: t,
                    color: w[0],
                });
                last = Some(w[0]);
            }
        }
        cs.dedup();
        all_colors.extend_from_slice(&cs);
        offline_pairs.extend_from_slice(colored);
    }
    for t in edge_colors.len()..instance.num_arrivals() {
        issues.push(ColoringIssue::MissingArrival { arrival: t });
    }
    offline_pairs.sort_unstable();
    let mut last_clash = None;
    for w in offline_pairs.windows(2) {
        if w[0] == w[1] && last_clash != Some(w[0]) {
            issues.push(ColoringIssue::OfflineClash {
                node: w[0].0,
                color: w[0].1,
            });
            last_clash = Some(w[0]);
        }
    }
    all_colors.sort_unstable();
    all_colors.dedup();
    Verdict {
        issues,
        distinct_colors: all_colors.len(),
    }
}
