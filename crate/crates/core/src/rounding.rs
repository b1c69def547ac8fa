//! Dependent rounding of fractional bipartite matchings.
//!
//! The left side holds colors and the right side holds the neighbors of the
//! arriving node. Given a point of the bipartite matching polytope, the
//! sampler returns an integral matching in which every pair `(c, v)` appears
//! with probability exactly `x[c][v]`.
//!
//! Every move is a martingale step inside the polytope: the expected value
//! of every entry is unchanged and the step leaves at least one entry, or one
//! column slack, at a bound. Per-entry marginals are therefore exact. Two
//! kinds of step are used. A *collapse* moves the mass of a group of entries
//! in one row onto a single member drawn with probability proportional to its
//! weight. A *pipage step* splits an alternating path or cycle into two
//! classes and shifts `+α/-α` or `-β/+β` with probabilities `β/(α+β)` and
//! `α/(α+β)`.
//!
//! Rounding runs in stages over the same point:
//!
//! 1. *Row collapses* with caps growing from `chunk_cap / 16` to
//!    `chunk_cap`. A group is formed only when every member column can absorb
//!    the whole group. For uniform rows the first stage works on bitsets.
//! 2. *Column merges*: two entries of one color are merged along a cycle
//!    through an entry of each row in a column with unused capacity. Row
//!    collapses cannot touch entries of full columns; this can.
//! 3. *Row slack sweep*: pipage on `slack(a) - a - v - b - slack(b)`.
//! 4. *Path and cycle rounding* of what is left, on the support graph
//!    extended by two hub nodes that hold the unused capacity of every color
//!    and every right node. Walk prefixes are reused across steps.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weights within this distance of 0 or 1 are snapped; also the slack allowed
/// on row and column sums.
pub const SNAP_EPS: f64 = 1e-9;

const NONE: u32 = u32::MAX;

/// Consolidation passes; pass `p` caps groups at
/// `chunk_cap / CAP_GROWTH^(passes - 1 - p)`. Small early chunks spread over
/// many columns instead of filling a few.
const CONSOLIDATION_PASSES: usize = 3;
const CAP_GROWTH: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum RoundingError {
    #[error("entry ({color}, {right}) out of range for a {left_size}x{right_size} point")]
    IndexOutOfRange {
        color: u32,
        right: u32,
        left_size: usize,
        right_size: usize,
    },
    #[error("entry ({color}, {right}) has weight {weight} outside [0, 1]")]
    WeightOutOfRange { color: u32, right: u32, weight: f64 },
    #[error("entry ({color}, {right}) appears more than once")]
    DuplicateEntry { color: u32, right: u32 },
    #[error("right node {right} has row sum {sum} > 1")]
    RowOverfull { right: u32, sum: f64 },
    #[error("color {color} has column sum {sum} > 1")]
    ColumnOverfull { color: u32, sum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub color: u32,
    pub right: u32,
    pub weight: f64,
}

/// Sparse nonnegative weights on `(color, right)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FractionalMatching {
    left_size: usize,
    right_size: usize,
    entries: Vec<Entry>,
}

impl FractionalMatching {
    pub fn new(left_size: usize, right_size: usize) -> Self {
        Self {
            left_size,
            right_size,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(
        left_size: usize,
        right_size: usize,
        entries: impl IntoIterator<Item = (u32, u32, f64)>,
    ) -> Self {
        let mut x = Self::new(left_size, right_size);
        for (color, right, weight) in entries {
            x.push(color, right, weight);
        }
        x
    }

    /// Empties the point and resizes it, keeping the allocation.
    pub fn reset(&mut self, left_size: usize, right_size: usize) {
        self.left_size = left_size;
        self.right_size = right_size;
        self.entries.clear();
    }

    pub fn push(&mut self, color: u32, right: u32, weight: f64) {
        self.entries.push(Entry {
            color,
            right,
            weight,
        });
    }

    pub fn left_size(&self) -> usize {
        self.left_size
    }

    pub fn right_size(&self) -> usize {
        self.right_size
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        column_sums(self)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.right_size];
        for e in &self.entries {
            if let Some(s) = sums.get_mut(e.right as usize) {
                *s += e.weight;
            }
        }
        sums
    }
}

/// Per-color weight totals, accumulated in entry order.
pub fn column_sums(x: &FractionalMatching) -> Vec<f64> {
    let mut sums = vec![0.0; x.left_size];
    for e in &x.entries {
        if let Some(s) = sums.get_mut(e.color as usize) {
            *s += e.weight;
        }
    }
    sums
}

/// An integral matching between colors and right nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pairs: Vec<(u32, u32)>,
}

impl Matching {
    pub fn new(pairs: Vec<(u32, u32)>) -> Self {
        Self { pairs }
    }

    /// `(color, right)` pairs in right-node order.
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, color: u32, right: u32) -> bool {
        self.pairs.contains(&(color, right))
    }

    pub fn color_of(&self, right: u32) -> Option<u32> {
        self.pairs
            .iter()
            .find(|&&(_, r)| r == right)
            .map(|&(c, _)| c)
    }

    /// No color and no right node repeats.
    pub fn is_valid(&self) -> bool {
        let mut colors: Vec<u32> = self.pairs.iter().map(|p| p.0).collect();
        let mut rights: Vec<u32> = self.pairs.iter().map(|p| p.1).collect();
        colors.sort_unstable();
        rights.sort_unstable();
        colors.windows(2).all(|w| w[0] != w[1]) && rights.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundingStats {
    /// Strictly fractional entries after snapping the input.
    pub fractional_entries: usize,
    pub consolidation_steps: usize,
    pub pipage_steps: usize,
    /// Fractional entries left for path/cycle rounding.
    pub residual_entries: usize,
}

impl RoundingStats {
    pub fn total_steps(&self) -> usize {
        self.consolidation_steps + self.pipage_steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub matching: Matching,
    /// Right nodes with row sum 1 that ended unmatched. Only floating-point
    /// drift can produce these.
    pub uncovered_rows: Vec<u32>,
    /// Entries that rounded to 1 but collided with an already matched color
    /// or right node. Also drift only.
    pub drift_conflicts: usize,
    pub stats: RoundingStats,
}

/// A point whose right node `j` spreads `weight(j)` evenly over the set bits
/// of its color words. Bits at or beyond the left size must be clear.
pub trait UniformRows {
    /// Number of right nodes.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Words per row; `left_size.div_ceil(64)`.
    fn words(&self) -> usize;
    fn weight(&self, j: usize) -> f64;
    fn word(&self, j: usize, i: usize) -> u64;
}

/// Reusable dependent-rounding sampler. Scratch buffers are kept between
/// calls, so one instance per worker avoids reallocating on every arrival.
#[derive(Debug, Clone)]
pub struct DependentRounding {
    chunk_cap: f64,
    consolidate: bool,
    order: Vec<u32>,
    colors: Vec<u32>,
    rights: Vec<u32>,
    weights: Vec<f64>,
    col_sums: Vec<f64>,
    row_sums: Vec<f64>,
    row_weight: Vec<f64>,
    safe: Vec<u64>,
    group: Vec<u32>,
    row_start: Vec<u32>,
    col_start: Vec<u32>,
    col_idx: Vec<u32>,
    carry: Vec<u32>,
    left: usize,
    right: usize,
    graph: ResidualGraph,
}

impl Default for DependentRounding {
    fn default() -> Self {
        Self::new()
    }
}

impl DependentRounding {
    pub fn new() -> Self {
        Self {
            chunk_cap: 0.5,
            consolidate: true,
            order: Vec::new(),
            colors: Vec::new(),
            rights: Vec::new(),
            weights: Vec::new(),
            col_sums: Vec::new(),
            row_sums: Vec::new(),
            row_weight: Vec::new(),
            safe: Vec::new(),
            group: Vec::new(),
            row_start: Vec::new(),
            col_start: Vec::new(),
            col_idx: Vec::new(),
            carry: Vec::new(),
            left: 0,
            right: 0,
            graph: ResidualGraph::default(),
        }
    }

    /// Path and cycle rounding only, without the consolidation sweep.
    pub fn pipage_only() -> Self {
        Self {
            consolidate: false,
            ..Self::new()
        }
    }

    /// Largest mass a consolidated chunk may reach, in `(0, 1]`.
    pub fn with_chunk_cap(mut self, cap: f64) -> Self {
        assert!(cap > 0.0 && cap <= 1.0, "chunk cap must be in (0, 1]");
        self.chunk_cap = cap;
        self
    }

    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        x: &FractionalMatching,
        rng: &mut R,
    ) -> Result<SampleOutcome, RoundingError> {
        self.load(x)?;
        let mut stats = RoundingStats {
            fractional_entries: self.weights.iter().filter(|&&w| is_fractional(w)).count(),
            ..RoundingStats::default()
        };
        if self.consolidate {
            stats.consolidation_steps = self.consolidate_rows(0, rng);
        }
        Ok(self.finish(stats, rng))
    }

    /// Validates a point given as uniform rows and returns its column sums.
    /// Column sums above one are reported, not rejected, so a caller can
    /// gate on them before calling [`Self::round_uniform`].
    pub fn load_uniform<U: UniformRows + ?Sized>(
        &mut self,
        left_size: usize,
        rows: &U,
    ) -> Result<&[f64], RoundingError> {
        let words = left_size.div_ceil(64);
        assert_eq!(rows.words(), words, "row words must cover the left side");
        let tail = tail_mask(left_size);
        self.left = left_size;
        self.right = rows.len();
        self.col_sums.clear();
        // padded to whole words for the masked updates
        self.col_sums.resize(words * 64, 0.0);
        self.row_sums.clear();
        self.row_sums.resize(rows.len(), 0.0);
        self.row_weight.clear();
        for j in 0..rows.len() {
            let right = j as u32;
            let mut count = 0usize;
            let mut first = NONE;
            for i in 0..words {
                let word = rows.word(j, i);
                if i + 1 == words && word & !tail != 0 {
                    return Err(RoundingError::IndexOutOfRange {
                        color: (i * 64) as u32 + (word & !tail).trailing_zeros(),
                        right,
                        left_size,
                        right_size: rows.len(),
                    });
                }
                if first == NONE && word != 0 {
                    first = (i * 64) as u32 + word.trailing_zeros();
                }
                count += word.count_ones() as usize;
            }
            let w = rows.weight(j);
            if count == 0 {
                self.row_weight.push(0.0);
                continue;
            }
            if !(-SNAP_EPS..=1.0 + SNAP_EPS).contains(&w) {
                return Err(RoundingError::WeightOutOfRange {
                    color: first,
                    right,
                    weight: w,
                });
            }
            let w = snap(w);
            let sum = count as f64 * w;
            if sum > 1.0 + SNAP_EPS {
                return Err(RoundingError::RowOverfull { right, sum });
            }
            self.row_sums[j] = sum;
            self.row_weight.push(w);
            if w == 0.0 {
                continue;
            }
            for i in 0..words {
                add_masked(&mut self.col_sums, rows.word(j, i), i, w);
            }
        }
        Ok(&self.col_sums[..left_size])
    }

    /// Rounds the point last passed to [`Self::load_uniform`]; `rows` must be
    /// the same rows.
    ///
    /// The first collapse stage runs on the bitsets without listing the
    /// support: each row's colors in safe columns (those that can absorb a
    /// first-stage group) are cut into runs of equal size and every run
    /// collapses onto a uniform member. Column sums stay exact throughout.
    pub fn round_uniform<U: UniformRows + ?Sized, R: Rng + ?Sized>(
        &mut self,
        rows: &U,
        rng: &mut R,
    ) -> Result<SampleOutcome, RoundingError> {
        assert_eq!(rows.len(), self.right, "rows differ from the loaded point");
        if let Some((c, &sum)) = self
            .col_sums
            .iter()
            .enumerate()
            .find(|(_, &s)| s > 1.0 + SNAP_EPS)
        {
            return Err(RoundingError::ColumnOverfull {
                color: c as u32,
                sum,
            });
        }
        let words = self.left.div_ceil(64);
        let cap0 = if self.consolidate { self.pass_cap(0) } else { 0.0 };
        let threshold = 1.0 + SNAP_EPS - cap0;
        self.safe.clear();
        self.safe.resize(words, 0);
        for (c, &s) in self.col_sums.iter().enumerate() {
            if s <= threshold {
                self.safe[c / 64] |= 1 << (c % 64);
            }
        }
        self.colors.clear();
        self.rights.clear();
        self.weights.clear();
        let mut stats = RoundingStats::default();
        for j in 0..rows.len() {
            let w = self.row_weight[j];
            if w == 0.0 {
                continue;
            }
            let right = j as u32;
            let g = ((cap0 + SNAP_EPS) / w).floor() as usize;
            if w < 1.0 {
                stats.fractional_entries += (self.row_sums[j] / w).round() as usize;
            }
            if g < 2 {
                for i in 0..words {
                    for_each_bit(rows.word(j, i), i, |c| {
                        self.colors.push(c as u32);
                        self.rights.push(right);
                        self.weights.push(w);
                    });
                }
                continue;
            }
            let mut safe_left: usize = (0..words)
                .map(|i| (rows.word(j, i) & self.safe[i]).count_ones() as usize)
                .sum();
            let mut group_left = 0;
            let mut group_size = 0;
            let mut pick = 0;
            let mut winner = NONE;
            for i in 0..words {
                let word = rows.word(j, i);
                let safe = self.safe[i];
                for_each_bit(word & !safe, i, |c| {
                    self.colors.push(c as u32);
                    self.rights.push(right);
                    self.weights.push(w);
                });
                let mut bits = word & safe;
                // Every member leaves its column; the winner regains the
                // group mass when the group closes.
                add_masked(&mut self.col_sums, bits, i, -w);
                while bits != 0 {
                    if group_left == 0 {
                        group_size = g.min(safe_left);
                        group_left = group_size;
                        pick = rng.gen_range(0..group_size);
                        winner = NONE;
                    }
                    let n = bits.count_ones() as usize;
                    let take = group_left.min(n);
                    if winner == NONE {
                        if pick < take {
                            winner = (i * 64) as u32 + nth_bit(bits, pick);
                        } else {
                            pick -= take;
                        }
                    }
                    bits = if take == n {
                        0
                    } else {
                        bits & (!0u64 << nth_bit(bits, take))
                    };
                    group_left -= take;
                    safe_left -= take;
                    if group_left == 0 {
                        let mass = group_size as f64 * w;
                        self.colors.push(winner);
                        self.rights.push(right);
                        self.weights.push(snap(mass));
                        stats.consolidation_steps += group_size - 1;
                        let col = &mut self.col_sums[winner as usize];
                        *col += mass;
                        if *col > threshold {
                            self.safe[winner as usize / 64] &= !(1 << (winner % 64));
                        }
                    }
                }
            }
        }
        self.drop_dominated();
        if self.consolidate {
            stats.consolidation_steps += self.consolidate_rows(1, rng);
        }
        Ok(self.finish(stats, rng))
    }

    /// [`Self::load_uniform`] followed by [`Self::round_uniform`].
    pub fn sample_uniform<U: UniformRows + ?Sized, R: Rng + ?Sized>(
        &mut self,
        left_size: usize,
        rows: &U,
        rng: &mut R,
    ) -> Result<SampleOutcome, RoundingError> {
        self.load_uniform(left_size, rows)?;
        self.round_uniform(rows, rng)
    }

    fn pass_cap(&self, pass: usize) -> f64 {
        self.chunk_cap / CAP_GROWTH.powi((CONSOLIDATION_PASSES - 1 - pass) as i32)
    }

    fn finish<R: Rng + ?Sized>(&mut self, mut stats: RoundingStats, rng: &mut R) -> SampleOutcome {
        stats.residual_entries = self.weights.iter().filter(|&&w| is_fractional(w)).count();
        if stats.residual_entries > 0 {
            stats.pipage_steps = self.graph.round(
                self.left,
                self.right,
                &self.colors,
                &self.rights,
                &mut self.weights,
                rng,
            );
        }
        self.collect(stats)
    }

    /// Copies the point into sorted struct-of-arrays scratch, validating it.
    fn load(&mut self, x: &FractionalMatching) -> Result<(), RoundingError> {
        let entries = &x.entries;
        self.left = x.left_size;
        self.right = x.right_size;
        self.col_sums.clear();
        self.col_sums.resize(x.left_size, 0.0);
        self.row_sums.clear();
        self.row_sums.resize(x.right_size, 0.0);
        let mut sorted = true;
        let mut prev: Option<(u32, u32)> = None;
        for e in entries {
            if e.color as usize >= x.left_size || e.right as usize >= x.right_size {
                return Err(RoundingError::IndexOutOfRange {
                    color: e.color,
                    right: e.right,
                    left_size: x.left_size,
                    right_size: x.right_size,
                });
            }
            if !(e.weight >= -SNAP_EPS && e.weight <= 1.0 + SNAP_EPS) {
                return Err(RoundingError::WeightOutOfRange {
                    color: e.color,
                    right: e.right,
                    weight: e.weight,
                });
            }
            self.col_sums[e.color as usize] += e.weight;
            self.row_sums[e.right as usize] += e.weight;
            let key = (e.right, e.color);
            if let Some(p) = prev {
                if key <= p {
                    sorted = false;
                }
            }
            prev = Some(key);
        }
        if let Some((r, &sum)) = self
            .row_sums
            .iter()
            .enumerate()
            .find(|(_, &s)| s > 1.0 + SNAP_EPS)
        {
            return Err(RoundingError::RowOverfull {
                right: r as u32,
                sum,
            });
        }
        if let Some((c, &sum)) = self
            .col_sums
            .iter()
            .enumerate()
            .find(|(_, &s)| s > 1.0 + SNAP_EPS)
        {
            return Err(RoundingError::ColumnOverfull {
                color: c as u32,
                sum,
            });
        }

        self.colors.clear();
        self.rights.clear();
        self.weights.clear();
        if sorted {
            for e in entries {
                self.colors.push(e.color);
                self.rights.push(e.right);
                self.weights.push(snap(e.weight));
            }
        } else {
            self.order.clear();
            self.order.extend(0..entries.len() as u32);
            self.order
                .sort_unstable_by_key(|&i| (entries[i as usize].right, entries[i as usize].color));
            for w in self.order.windows(2) {
                let (a, b) = (&entries[w[0] as usize], &entries[w[1] as usize]);
                if a.right == b.right && a.color == b.color {
                    return Err(RoundingError::DuplicateEntry {
                        color: a.color,
                        right: a.right,
                    });
                }
            }
            for &i in &self.order {
                let e = &entries[i as usize];
                self.colors.push(e.color);
                self.rights.push(e.right);
                self.weights.push(snap(e.weight));
            }
        }

        self.drop_dominated();
        Ok(())
    }

    /// A node already holding an integral entry keeps nothing else.
    fn drop_dominated(&mut self) {
        let mut color_full = vec![false; self.left];
        let mut right_full = vec![false; self.right];
        for i in 0..self.weights.len() {
            if self.weights[i] == 1.0 {
                color_full[self.colors[i] as usize] = true;
                right_full[self.rights[i] as usize] = true;
            }
        }
        for i in 0..self.weights.len() {
            let w = self.weights[i];
            if is_fractional(w)
                && (color_full[self.colors[i] as usize] || right_full[self.rights[i] as usize])
            {
                self.col_sums[self.colors[i] as usize] -= w;
                self.weights[i] = 0.0;
            }
        }
    }

    /// Sweeps each right node's fractional entries into consecutive groups
    /// and collapses every group onto one member, drawn with probability
    /// proportional to its weight. A group of mass `G` is formed only when
    /// every member's column can absorb `G`, so each outcome stays inside
    /// the polytope. Runs passes `first..`, with the column merge before the
    /// last one and the slack sweep after it; returns the step count.
    fn consolidate_rows<R: Rng + ?Sized>(&mut self, first: usize, rng: &mut R) -> usize {
        let mut zeroed = 0;
        for pass in first..CONSOLIDATION_PASSES {
            zeroed += self.consolidation_pass(self.pass_cap(pass), rng);
            self.compact();
            if pass + 2 == CONSOLIDATION_PASSES {
                zeroed += self.column_pass(rng);
                self.compact();
            }
        }
        zeroed += self.slack_pass(rng);
        self.compact();
        zeroed
    }

    /// One sweep per right node of pipage steps on the path
    /// `slack(a) - a - v - b - slack(b)`, where `slack(c)` is the unused
    /// capacity of column `c`. Each step makes an entry integral or fills a
    /// column; a full column no longer takes part. Returns the step count.
    fn slack_pass<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let colors = &self.colors;
        let rights = &self.rights;
        let weights = &mut self.weights;
        let col = &mut self.col_sums;
        let slack = |col: &[f64], c: u32| (1.0 - col[c as usize]).max(0.0);
        let mut steps = 0;
        let mut carry = usize::MAX;
        let mut right = NONE;
        for i in 0..weights.len() {
            let y = weights[i];
            if !is_fractional(y) {
                continue;
            }
            if rights[i] != right || carry == usize::MAX {
                right = rights[i];
                carry = i;
                continue;
            }
            let m = weights[carry];
            let (a, b) = (colors[carry], colors[i]);
            let (sa, sb) = (slack(col, a), slack(col, b));
            let alpha = y.min(1.0 - m).min(sa);
            let beta = m.min(1.0 - y).min(sb);
            if alpha + beta <= 0.0 {
                carry = i;
                continue;
            }
            steps += 1;
            let d = if rng.gen::<f64>() * (alpha + beta) < beta {
                alpha
            } else {
                -beta
            };
            weights[carry] = snap(m + d);
            weights[i] = snap(y - d);
            col[a as usize] += d;
            col[b as usize] -= d;
            let (fa, fb) = (is_fractional(weights[carry]), is_fractional(weights[i]));
            carry = match (fa, fb) {
                (true, true) => {
                    if slack(col, b) > slack(col, a) {
                        i
                    } else {
                        carry
                    }
                }
                (true, false) => carry,
                (false, true) => i,
                (false, false) => usize::MAX,
            };
        }
        steps
    }

    /// One sweep per color of steps on the cycle
    /// `c - v1 - a1 - hub - a2 - v2 - c`, where `a1` and `a2` are carries:
    /// entries of `v1` and `v2` in columns with unused capacity (through the
    /// hub only when `a1 != a2`). Column `c` keeps its sum, so this merges
    /// entries of full columns, which row sweeps cannot touch. Returns the
    /// step count.
    fn column_pass<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let n = self.weights.len();
        let left = self.left;
        self.row_start.clear();
        self.row_start.resize(self.right + 1, 0);
        self.col_start.clear();
        self.col_start.resize(left + 1, 0);
        for i in 0..n {
            self.row_start[self.rights[i] as usize + 1] += 1;
            self.col_start[self.colors[i] as usize + 1] += 1;
        }
        for r in 0..self.right {
            self.row_start[r + 1] += self.row_start[r];
        }
        for c in 0..left {
            self.col_start[c + 1] += self.col_start[c];
        }
        self.col_idx.clear();
        self.col_idx.resize(n, 0);
        self.group.clear();
        self.group.extend_from_slice(&self.col_start[..left]);
        for i in 0..n {
            let c = self.colors[i] as usize;
            self.col_idx[self.group[c] as usize] = i as u32;
            self.group[c] += 1;
        }
        self.carry.clear();
        self.carry.resize(self.right, NONE);
        let mut steps = 0;
        for c in 0..left {
            let mut pending = NONE;
            for k in self.col_start[c]..self.col_start[c + 1] {
                let i = self.col_idx[k as usize];
                if !is_fractional(self.weights[i as usize]) || self.carry_of(i) == NONE {
                    continue;
                }
                if pending == NONE {
                    pending = i;
                    continue;
                }
                loop {
                    steps += 1;
                    self.cycle_step(pending, i, rng);
                    let p_ok = is_fractional(self.weights[pending as usize])
                        && self.carry_of(pending) != NONE;
                    let i_ok =
                        is_fractional(self.weights[i as usize]) && self.carry_of(i) != NONE;
                    match (p_ok, i_ok) {
                        (true, true) => continue,
                        (true, false) => {}
                        (false, true) => pending = i,
                        (false, false) => pending = NONE,
                    }
                    break;
                }
            }
        }
        steps
    }

    /// Carry of the row of entry `i`, refreshed when stale; never `i` itself
    /// nor in the column of `i`.
    fn carry_of(&mut self, i: u32) -> u32 {
        let r = self.rights[i as usize] as usize;
        let c = self.colors[i as usize];
        let valid = |s: &Self, k: u32| {
            k < NONE - 1
                && is_fractional(s.weights[k as usize])
                && s.col_sums[s.colors[k as usize] as usize] < 1.0 - SNAP_EPS
        };
        let k = self.carry[r];
        if k == NONE - 1 {
            return NONE;
        }
        if !valid(self, k) || self.colors[k as usize] == c {
            // first usable entry after the old carry, cyclically
            let (lo, hi) = (self.row_start[r], self.row_start[r + 1]);
            let from = if k < NONE - 1 { k + 1 } else { lo };
            let mut best = NONE;
            for k in (from..hi).chain(lo..from) {
                if self.colors[k as usize] != c && valid(self, k) {
                    best = k;
                    break;
                }
            }
            if best == NONE {
                // only this column's entry may hold the carry; keep it open
                let own = (self.row_start[r]..self.row_start[r + 1]).any(|k| {
                    self.colors[k as usize] == c && valid(self, k)
                });
                self.carry[r] = if own { NONE } else { NONE - 1 };
                return NONE;
            }
            self.carry[r] = best;
        }
        self.carry[r]
    }

    /// Step on `c - v1 - a1 (- hub - a2) - v2 - c` for entries `p` and `i`
    /// of color `c`, with the current carries of their rows.
    fn cycle_step<R: Rng + ?Sized>(&mut self, p: u32, i: u32, rng: &mut R) {
        let (p, i) = (p as usize, i as usize);
        let k1 = self.carry[self.rights[p] as usize] as usize;
        let k2 = self.carry[self.rights[i] as usize] as usize;
        let w = &self.weights;
        let (a1, a2) = (self.colors[k1] as usize, self.colors[k2] as usize);
        let room = |a: usize| (1.0 - self.col_sums[a]).max(0.0);
        // up: p and k2 gain, i and k1 lose
        let mut up = (1.0 - w[p]).min(w[i]).min(w[k1]).min(1.0 - w[k2]);
        let mut down = w[p].min(1.0 - w[i]).min(1.0 - w[k1]).min(w[k2]);
        if a1 != a2 {
            up = up.min(room(a2));
            down = down.min(room(a1));
        }
        if up + down <= 0.0 {
            return;
        }
        let d = if rng.gen::<f64>() * (up + down) < down {
            up
        } else {
            -down
        };
        let w = &mut self.weights;
        w[p] = snap(w[p] + d);
        w[i] = snap(w[i] - d);
        w[k1] = snap(w[k1] - d);
        w[k2] = snap(w[k2] + d);
        self.col_sums[a1] -= d;
        self.col_sums[a2] += d;
    }

    /// Drops zero entries, keeping order.
    fn compact(&mut self) {
        let mut k = 0;
        for i in 0..self.weights.len() {
            if self.weights[i] > 0.0 {
                self.colors[k] = self.colors[i];
                self.rights[k] = self.rights[i];
                self.weights[k] = self.weights[i];
                k += 1;
            }
        }
        self.colors.truncate(k);
        self.rights.truncate(k);
        self.weights.truncate(k);
    }

    fn consolidation_pass<R: Rng + ?Sized>(&mut self, cap: f64, rng: &mut R) -> usize {
        let cap = cap + SNAP_EPS;
        let limit = 1.0 + SNAP_EPS;
        let colors = &self.colors;
        let rights = &self.rights;
        let weights = &mut self.weights;
        let col = &mut self.col_sums;
        let group = &mut self.group;
        group.clear();
        let mut zeroed = 0;
        let mut mass = 0.0;
        let mut room = f64::INFINITY;
        let mut right = NONE;
        for i in 0..weights.len() {
            let y = weights[i];
            if !is_fractional(y) {
                continue;
            }
            let h = limit - col[colors[i] as usize] + y;
            if rights[i] != right || mass + y > room.min(h).min(cap) {
                zeroed += collapse(group, mass, colors, weights, col, rng);
                group.clear();
                right = rights[i];
                mass = 0.0;
                room = f64::INFINITY;
            }
            group.push(i as u32);
            mass += y;
            room = room.min(h);
        }
        zeroed + collapse(group, mass, colors, weights, col, rng)
    }

    fn collect(&self, stats: RoundingStats) -> SampleOutcome {
        let mut color_taken = vec![false; self.left];
        let mut right_taken = vec![false; self.right];
        let mut pairs = Vec::new();
        let mut drift_conflicts = 0;
        for i in 0..self.weights.len() {
            if self.weights[i] < 1.0 - SNAP_EPS {
                continue;
            }
            let (c, r) = (self.colors[i], self.rights[i]);
            if color_taken[c as usize] || right_taken[r as usize] {
                drift_conflicts += 1;
                continue;
            }
            color_taken[c as usize] = true;
            right_taken[r as usize] = true;
            pairs.push((c, r));
        }
        let uncovered_rows = self
            .row_sums
            .iter()
            .enumerate()
            .filter(|&(r, &s)| s >= 1.0 - SNAP_EPS && !right_taken[r])
            .map(|(r, _)| r as u32)
            .collect();
        SampleOutcome {
            matching: Matching { pairs },
            uncovered_rows,
            drift_conflicts,
            stats,
        }
    }
}

/// Samples an integral matching whose per-pair marginals equal `x`.
pub fn sample_matching<R: Rng + ?Sized>(
    x: &FractionalMatching,
    rng: &mut R,
) -> Result<SampleOutcome, RoundingError> {
    DependentRounding::new().sample(x, rng)
}

fn tail_mask(left_size: usize) -> u64 {
    match left_size % 64 {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// Calls `f` with the color of every set bit of word `i`.
#[inline]
fn for_each_bit(mut bits: u64, i: usize, mut f: impl FnMut(usize)) {
    while bits != 0 {
        f(i * 64 + bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
}

/// Lane masks for the eight bits of a byte.
static BYTE_MASKS: [[u64; 8]; 256] = {
    let mut t = [[0u64; 8]; 256];
    let mut b = 0;
    while b < 256 {
        let mut k = 0;
        while k < 8 {
            if b >> k & 1 == 1 {
                t[b][k] = !0;
            }
            k += 1;
        }
        b += 1;
    }
    t
};

/// Adds `w` to `col[64 i + b]` for every set bit `b` of `bits`, without
/// branching per bit. `col` must cover the whole word.
#[inline]
fn add_masked(col: &mut [f64], bits: u64, i: usize, w: f64) {
    if bits == 0 {
        return;
    }
    let wb = w.to_bits();
    let lanes = &mut col[i * 64..i * 64 + 64];
    for (byte, chunk) in bits.to_le_bytes().into_iter().zip(lanes.chunks_exact_mut(8)) {
        let m = &BYTE_MASKS[byte as usize];
        for k in 0..8 {
            chunk[k] += f64::from_bits(wb & m[k]);
        }
    }
}

/// Position of the `k`-th set bit, counting from zero; `k` must be below
/// the popcount.
#[inline]
fn nth_bit(mut bits: u64, mut k: usize) -> u32 {
    let mut pos = 0;
    for shift in [32u32, 16, 8, 4, 2, 1] {
        let low = (bits & ((1u64 << shift) - 1)).count_ones() as usize;
        if k >= low {
            k -= low;
            bits >>= shift;
            pos += shift;
        }
    }
    pos
}

/// Moves the whole mass of `group` onto one member picked with probability
/// proportional to its weight. Returns the number of entries zeroed.
fn collapse<R: Rng + ?Sized>(
    group: &[u32],
    mass: f64,
    colors: &[u32],
    weights: &mut [f64],
    col: &mut [f64],
    rng: &mut R,
) -> usize {
    if group.len() < 2 {
        return 0;
    }
    let mut r = rng.gen::<f64>() * mass;
    let mut winner = group[group.len() - 1];
    for &i in group {
        r -= weights[i as usize];
        if r < 0.0 {
            winner = i;
            break;
        }
    }
    for &i in group {
        let i = i as usize;
        col[colors[i] as usize] -= weights[i];
        weights[i] = 0.0;
    }
    let w = winner as usize;
    weights[w] = snap(mass);
    col[colors[w] as usize] += mass;
    group.len() - 1
}

#[inline]
fn snap(w: f64) -> f64 {
    if w < SNAP_EPS {
        0.0
    } else if w > 1.0 - SNAP_EPS {
        1.0
    } else {
        w
    }
}

#[inline]
fn is_fractional(w: f64) -> bool {
    w > 0.0 && w < 1.0
}

/// Support graph of the fractional entries, with the walk used to find
/// maximal paths and cycles. Colors are nodes `0..left`, right node `r` is
/// node `left + r`. Two hub nodes carry the unused capacity: `hub_colors`
/// joins every color with sum below one and `hub_rights` every right node
/// with sum below one, each by an edge of weight `1 - sum`. With them every
/// other node is exactly full, so cycles may close through a hub and a step
/// never needs a degree-one endpoint. Edge weights are copied in and written
/// back at the end.
#[derive(Debug, Clone, Default)]
struct ResidualGraph {
    /// Entry index of each residual edge; `NONE` for hub edges.
    edge_entry: Vec<u32>,
    /// `a ^ b` for an edge between `a` and `b`.
    edge_xor: Vec<u32>,
    edge_w: Vec<f64>,
    /// Hub edge of each node, or `NONE`.
    hub_edge: Vec<u32>,
    sums: Vec<f64>,
    frac: Vec<u32>,
    adj_start: Vec<u32>,
    /// Live adjacency length per node; dead edges are swapped out lazily.
    adj_len: Vec<u32>,
    adj: Vec<u32>,
    pos: Vec<u32>,
    stack_nodes: Vec<u32>,
    stack_edges: Vec<u32>,
    class_buf: Vec<u32>,
    hubs: [u32; 2],
}

impl ResidualGraph {
    fn round<R: Rng + ?Sized>(
        &mut self,
        left: usize,
        right: usize,
        colors: &[u32],
        rights: &[u32],
        weights: &mut [f64],
        rng: &mut R,
    ) -> usize {
        self.build(left, right, colors, rights, weights);
        let mut steps = 0;
        let mut next_start = 0usize;
        let mut bottom_dead = false;
        loop {
            if self.stack_nodes.is_empty() {
                let hub = self
                    .hubs
                    .into_iter()
                    .find(|&h| self.next_edge(h, NONE).is_some());
                let start = match hub {
                    Some(h) => h,
                    None => {
                        while next_start < self.edge_w.len()
                            && !is_fractional(self.edge_w[next_start])
                        {
                            next_start += 1;
                        }
                        if next_start == self.edge_w.len() {
                            break;
                        }
                        left as u32 + rights[self.edge_entry[next_start] as usize]
                    }
                };
                self.push_node(start);
                bottom_dead = false;
            }
            let top = *self.stack_nodes.last().expect("non-empty stack");
            let incoming = self.stack_edges.last().copied().unwrap_or(NONE);
            match self.next_edge(top, incoming) {
                Some(e) => {
                    let other = self.edge_xor[e as usize] ^ top;
                    let at = self.pos[other as usize];
                    if at == NONE {
                        self.stack_edges.push(e);
                        self.push_node(other);
                        continue;
                    }
                    // cycle: stack_edges[at..] then e back to `other`
                    let at = at as usize;
                    self.class_buf.clear();
                    self.class_buf.extend_from_slice(&self.stack_edges[at..]);
                    self.class_buf.push(e);
                    self.round_alternating(rng);
                    steps += 1;
                    let cut = (at..self.stack_edges.len())
                        .find(|&k| !is_fractional(self.edge_w[self.stack_edges[k] as usize]));
                    if let Some(k) = cut {
                        self.truncate(k);
                    }
                }
                None => {
                    if bottom_dead || self.stack_edges.is_empty() {
                        self.class_buf.clear();
                        self.class_buf.extend_from_slice(&self.stack_edges);
                        if !self.class_buf.is_empty() {
                            self.round_alternating(rng);
                            steps += 1;
                        }
                        self.truncate(0);
                        self.pop_all();
                    } else {
                        self.stack_nodes.reverse();
                        self.stack_edges.reverse();
                        for (k, &n) in self.stack_nodes.iter().enumerate() {
                            self.pos[n as usize] = k as u32;
                        }
                        bottom_dead = true;
                    }
                }
            }
        }
        for (e, &i) in self.edge_entry.iter().enumerate() {
            if i != NONE {
                weights[i as usize] = self.edge_w[e];
            }
        }
        steps
    }

    fn build(&mut self, left: usize, right: usize, colors: &[u32], rights: &[u32], weights: &[f64]) {
        let real = left + right;
        let nodes = real + 2;
        self.hubs = [real as u32, real as u32 + 1];
        self.sums.clear();
        self.sums.resize(real, 0.0);
        self.frac.clear();
        self.frac.resize(real, 0);
        self.edge_entry.clear();
        self.edge_xor.clear();
        self.edge_w.clear();
        self.adj_start.clear();
        self.adj_start.resize(nodes + 1, 0);
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let c = colors[i] as usize;
            let r = left + rights[i] as usize;
            self.sums[c] += w;
            self.sums[r] += w;
            if is_fractional(w) {
                self.frac[c] += 1;
                self.frac[r] += 1;
                self.edge_entry.push(i as u32);
                self.edge_xor.push((c ^ r) as u32);
                self.edge_w.push(w);
                self.adj_start[c + 1] += 1;
                self.adj_start[r + 1] += 1;
            }
        }
        self.hub_edge.clear();
        self.hub_edge.resize(nodes, NONE);
        for n in 0..real {
            let slack = snap(1.0 - self.sums[n]);
            if self.frac[n] == 0 || !is_fractional(slack) {
                continue;
            }
            // colors hang off the right-side hub and vice versa
            let hub = self.hubs[usize::from(n < left)];
            self.hub_edge[n] = self.edge_w.len() as u32;
            self.edge_entry.push(NONE);
            self.edge_xor.push(n as u32 ^ hub);
            self.edge_w.push(slack);
            self.adj_start[n + 1] += 1;
            self.adj_start[hub as usize + 1] += 1;
        }
        for n in 0..nodes {
            self.adj_start[n + 1] += self.adj_start[n];
        }
        self.adj.clear();
        self.adj.resize(self.adj_start[nodes] as usize, 0);
        self.adj_len.clear();
        self.adj_len.resize(nodes, 0);
        let ends = |e: usize, n: u32| -> [u32; 2] {
            match self.edge_entry[e] {
                NONE => [n, self.hubs[usize::from((n as usize) < left)]],
                i => [colors[i as usize], left as u32 + rights[i as usize]],
            }
        };
        let fill = |adj_len: &mut [u32], adj: &mut [u32], e: usize, n: u32| {
            for m in ends(e, n) {
                let len = &mut adj_len[m as usize];
                adj[(self.adj_start[m as usize] + *len) as usize] = e as u32;
                *len += 1;
            }
        };
        let mut adj_len = std::mem::take(&mut self.adj_len);
        let mut adj = std::mem::take(&mut self.adj);
        for (e, &i) in self.edge_entry.iter().enumerate() {
            if i != NONE {
                fill(&mut adj_len, &mut adj, e, NONE);
            }
        }
        for (n, &e) in self.hub_edge.iter().enumerate() {
            if e != NONE {
                fill(&mut adj_len, &mut adj, e as usize, n as u32);
            }
        }
        self.adj_len = adj_len;
        self.adj = adj;
        self.pos.clear();
        self.pos.resize(nodes, NONE);
        self.stack_nodes.clear();
        self.stack_edges.clear();
    }

    fn push_node(&mut self, n: u32) {
        self.pos[n as usize] = self.stack_nodes.len() as u32;
        self.stack_nodes.push(n);
    }

    /// Keeps nodes `0..=k` and edges `0..k`.
    fn truncate(&mut self, k: usize) {
        for &n in &self.stack_nodes[k + 1..] {
            self.pos[n as usize] = NONE;
        }
        self.stack_nodes.truncate(k + 1);
        self.stack_edges.truncate(k);
    }

    fn pop_all(&mut self) {
        for &n in &self.stack_nodes {
            self.pos[n as usize] = NONE;
        }
        self.stack_nodes.clear();
        self.stack_edges.clear();
    }

    fn has_slack(&self, n: u32) -> bool {
        let e = self.hub_edge[n as usize];
        e != NONE && is_fractional(self.edge_w[e as usize])
    }

    /// Next fractional edge at `n` other than `skip`. Preference: the edge
    /// closing the shortest cycle with the stack, then one leading to a node
    /// with slack (which closes through a hub next), then the first live one.
    /// A hub just yields its first live edge.
    fn next_edge(&mut self, n: u32, skip: u32) -> Option<u32> {
        let start = self.adj_start[n as usize] as usize;
        let mut len = self.adj_len[n as usize] as usize;
        let is_hub = self.hubs.contains(&n);
        let mut first = None;
        let mut slack = None;
        let mut closing = None;
        let mut closing_at = 0;
        let mut k = 0;
        while k < len {
            let e = self.adj[start + k];
            if !is_fractional(self.edge_w[e as usize]) {
                len -= 1;
                self.adj[start + k] = self.adj[start + len];
                continue;
            }
            k += 1;
            if e == skip {
                continue;
            }
            if is_hub {
                first = Some(e);
                break;
            }
            first.get_or_insert(e);
            let other = self.edge_xor[e as usize] ^ n;
            let at = self.pos[other as usize];
            if at != NONE {
                if closing.is_none() || at > closing_at {
                    closing = Some(e);
                    closing_at = at;
                }
            } else if slack.is_none() && self.has_slack(other) {
                slack = Some(e);
            }
        }
        self.adj_len[n as usize] = len as u32;
        closing.or(slack).or(first)
    }

    /// Pipage step on the edges in `class_buf`; even positions form one
    /// class, odd positions the other.
    fn round_alternating<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut alpha = f64::INFINITY;
        let mut beta = f64::INFINITY;
        for (k, &e) in self.class_buf.iter().enumerate() {
            let w = self.edge_w[e as usize];
            if k % 2 == 0 {
                alpha = alpha.min(1.0 - w);
                beta = beta.min(w);
            } else {
                alpha = alpha.min(w);
                beta = beta.min(1.0 - w);
            }
        }
        let delta = if rng.gen::<f64>() * (alpha + beta) < beta {
            alpha
        } else {
            -beta
        };
        for (k, &e) in self.class_buf.iter().enumerate() {
            let w = &mut self.edge_w[e as usize];
            *w = if k % 2 == 0 {
                snap(*w + delta)
            } else {
                snap(*w - delta)
            };
        }
    }
}
