//! Online bipartite instances with one-sided vertex arrivals.
//!
//! The offline side is known upfront as `0..num_offline`; online nodes arrive
//! one at a time, each carrying its full neighbor list. The maximum degree is
//! declared in the file header and checked against the actual graph.
//!
//! File format (ASCII, line oriented):
//!
//! ```text
//! # comment lines start with '#'
//! <num_offline> <num_arrivals> <delta>
//! <neighbors of arrival 0, space separated>
//! <neighbors of arrival 1>
//! ...
//! ```
//!
//! An empty arrival line is an isolated online node.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A bipartite graph revealed through an ordered stream of online nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineInstance {
    num_offline: usize,
    arrivals: Vec<Vec<u32>>,
    declared_delta: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    NeighborOutOfRange {
        arrival: usize,
        neighbor: u32,
    },
    DuplicateNeighbor {
        arrival: usize,
        neighbor: u32,
    },
    /// Neighbor lists are stored sorted; unsorted input is a construction bug.
    UnsortedArrival {
        arrival: usize,
    },
    DegreeMismatch {
        declared: usize,
        actual: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NeighborOutOfRange { arrival, neighbor } => {
                write!(f, "arrival {arrival}: neighbor {neighbor} out of range")
            }
            Violation::DuplicateNeighbor { arrival, neighbor } => {
                write!(f, "arrival {arrival}: duplicate neighbor {neighbor}")
            }
            Violation::UnsortedArrival { arrival } => {
                write!(f, "arrival {arrival}: neighbor list not sorted")
            }
            Violation::DegreeMismatch { declared, actual } => {
                write!(f, "degree mismatch: declared {declared}, actual {actual}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl OnlineInstance {
    /// Builds an instance, sorting each neighbor list and rejecting anything
    /// that fails [`validate`](Self::validate).
    pub fn new(
        num_offline: usize,
        mut arrivals: Vec<Vec<u32>>,
        declared_delta: usize,
    ) -> Result<Self, InstanceError> {
        for nbrs in &mut arrivals {
            nbrs.sort_unstable();
        }
        let instance = Self::new_unchecked(num_offline, arrivals, declared_delta);
        let report = instance.validate();
        if report.is_ok() {
            Ok(instance)
        } else {
            Err(InstanceError::Invalid(report))
        }
    }

    /// No checks at all; pair with [`validate`](Self::validate).
    pub fn new_unchecked(num_offline: usize, arrivals: Vec<Vec<u32>>, declared_delta: usize) -> Self {
        Self {
            num_offline,
            arrivals,
            declared_delta,
        }
    }

    pub fn num_offline(&self) -> usize {
        self.num_offline
    }

    pub fn num_arrivals(&self) -> usize {
        self.arrivals.len()
    }

    pub fn arrivals(&self) -> &[Vec<u32>] {
        &self.arrivals
    }

    pub fn arrival(&self, t: usize) -> &[u32] {
        &self.arrivals[t]
    }

    pub fn delta(&self) -> usize {
        self.declared_delta
    }

    /// Total node count `n`.
    pub fn n(&self) -> usize {
        self.num_offline + self.arrivals.len()
    }

    pub fn num_edges(&self) -> usize {
        self.arrivals.iter().map(Vec::len).sum()
    }

    /// Final degree of every offline node.
    pub fn offline_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_offline];
        for nbrs in &self.arrivals {
            for &v in nbrs {
                if let Some(d) = deg.get_mut(v as usize) {
                    *d += 1;
                }
            }
        }
        deg
    }

    /// Degree of offline node `v` just before arrival `t` is processed.
    pub fn degree_before(&self, v: u32, t: usize) -> usize {
        self.arrivals[..t.min(self.arrivals.len())]
            .iter()
            .filter(|nbrs| nbrs.binary_search(&v).is_ok())
            .count()
    }

    /// True maximum degree over both sides.
    pub fn max_degree(&self) -> usize {
        let online = self.arrivals.iter().map(Vec::len).max().unwrap_or(0);
        let offline = self.offline_degrees().into_iter().max().unwrap_or(0);
        online.max(offline)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (t, nbrs) in self.arrivals.iter().enumerate() {
            for &v in nbrs {
                if v as usize >= self.num_offline {
                    violations.push(Violation::NeighborOutOfRange {
                        arrival: t,
                        neighbor: v,
                    });
                }
            }
            let mut sorted = true;
            for w in nbrs.windows(2) {
                if w[0] == w[1] {
                    violations.push(Violation::DuplicateNeighbor {
                        arrival: t,
                        neighbor: w[0],
                    });
                } else if w[0] > w[1] {
                    sorted = false;
                }
            }
            if !sorted {
                let mut copy = nbrs.clone();
                copy.sort_unstable();
                for w in copy.windows(2) {
                    if w[0] == w[1] {
                        violations.push(Violation::DuplicateNeighbor {
                            arrival: t,
                            neighbor: w[0],
                        });
                    }
                }
                violations.push(Violation::UnsortedArrival { arrival: t });
            }
        }
        let actual = self.max_degree();
        if actual != self.declared_delta {
            violations.push(Violation::DegreeMismatch {
                declared: self.declared_delta,
                actual,
            });
        }
        ValidationReport { violations }
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, InstanceError> {
        let mut header: Option<(usize, usize, usize)> = None;
        let mut arrivals = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.starts_with('#') {
                continue;
            }
            let Some((num_offline, num_arrivals, _)) = header else {
                if line.trim().is_empty() {
                    continue;
                }
                header = Some(parse_header(line, lineno)?);
                continue;
            };
            if arrivals.len() == num_arrivals {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(parse_err(
                    lineno,
                    format!("unexpected line after {num_arrivals} arrivals"),
                ));
            }
            let mut nbrs = Vec::new();
            for tok in line.split_whitespace() {
                let v: u32 = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad neighbor index {tok:?}")))?;
                if v as usize >= num_offline {
                    return Err(parse_err(
                        lineno,
                        format!("neighbor {v} out of range (num_offline = {num_offline})"),
                    ));
                }
                nbrs.push(v);
            }
            nbrs.sort_unstable();
            if let Some(w) = nbrs.windows(2).find(|w| w[0] == w[1]) {
                return Err(parse_err(lineno, format!("duplicate neighbor {}", w[0])));
            }
            arrivals.push(nbrs);
        }
        let Some((num_offline, num_arrivals, delta)) = header else {
            return Err(parse_err(1, "missing header".to_string()));
        };
        if arrivals.len() != num_arrivals {
            return Err(parse_err(
                0,
                format!(
                    "expected {num_arrivals} arrival lines, found {}",
                    arrivals.len()
                ),
            ));
        }
        let instance = Self::new_unchecked(num_offline, arrivals, delta);
        let report = instance.validate();
        if !report.is_ok() {
            return Err(InstanceError::Invalid(report));
        }
        Ok(instance)
    }

    pub fn read_str(text: &str) -> Result<Self, InstanceError> {
        Self::read(text.as_bytes())
    }

    /// Canonical form: header, then one sorted neighbor line per arrival.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{} {} {}",
            self.num_offline,
            self.arrivals.len(),
            self.declared_delta
        )?;
        let mut line = String::new();
        for nbrs in &self.arrivals {
            line.clear();
            for (i, v) in nbrs.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }
}

fn parse_err(line: usize, message: String) -> InstanceError {
    InstanceError::Parse { line, message }
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize, usize), InstanceError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(
            lineno,
            format!(
                "header needs `<num_offline> <num_arrivals> <delta>`, got {} fields",
                fields.len()
            ),
        ));
    }
    let num = |s: &str, what: &str| -> Result<usize, InstanceError> {
        s.parse()
            .map_err(|_| parse_err(lineno, format!("bad {what} {s:?}")))
    };
    let num_offline = num(fields[0], "num_offline")?;
    let num_arrivals = num(fields[1], "num_arrivals")?;
    let delta = num(fields[2], "delta")?;
    if num_offline > u32::MAX as usize {
        return Err(parse_err(lineno, "num_offline too large".to_string()));
    }
    Ok((num_offline, num_arrivals, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_with_one_arrival_passes() {
        let inst = OnlineInstance::new_unchecked(2, vec![vec![0, 1]], 2);
        assert!(inst.validate().is_ok());
        // a single arrival with two neighbors has online degree 2
        let bad = OnlineInstance::new_unchecked(2, vec![vec![0, 1]], 1);
        assert_eq!(
            bad.validate().violations,
            vec![Violation::DegreeMismatch {
                declared: 1,
                actual: 2
            }]
        );
    }

    #[test]
    fn duplicate_neighbor_is_a_violation() {
        let inst = OnlineInstance::new_unchecked(2, vec![vec![0, 0]], 2);
        let report = inst.validate();
        assert!(report
            .violations
            .contains(&Violation::DuplicateNeighbor {
                arrival: 0,
                neighbor: 0
            }));
    }

    #[test]
    fn degree_mismatch_recomputed_by_counting() {
        // offline 0 has degree 2 (arrivals 0 and 1), online max is 2
        let arrivals = vec![vec![0, 1], vec![0], vec![2]];
        let inst = OnlineInstance::new_unchecked(3, arrivals.clone(), 3);
        let mut counts = vec![0usize; 3];
        for a in &arrivals {
            for &v in a {
                counts[v as usize] += 1;
            }
        }
        let brute = counts
            .into_iter()
            .chain(arrivals.iter().map(Vec::len))
            .max()
            .unwrap();
        assert_eq!(brute, 2);
        assert_eq!(
            inst.validate().violations,
            vec![Violation::DegreeMismatch {
                declared: 3,
                actual: 2
            }]
        );
    }

    #[test]
    fn out_of_range_neighbor() {
        let inst = OnlineInstance::new_unchecked(2, vec![vec![0, 5]], 2);
        assert!(inst
            .validate()
            .violations
            .contains(&Violation::NeighborOutOfRange {
                arrival: 0,
                neighbor: 5
            }));
    }

    #[test]
    fn reads_header_and_arrival() {
        // two offline nodes, one arrival adjacent to both: max degree is 2
        let inst = OnlineInstance::read_str("2 1 2\n0 1\n").unwrap();
        assert_eq!(inst.num_offline(), 2);
        assert_eq!(inst.arrivals(), &[vec![0, 1]]);
        assert_eq!(inst.n(), 3);
    }

    #[test]
    fn header_with_mismatched_delta_is_rejected() {
        let err = OnlineInstance::read_str("2 1 1\n0 1\n").unwrap_err();
        assert!(matches!(err, InstanceError::Invalid(_)));
    }

    #[test]
    fn empty_arrival_line_is_isolated_node() {
        let inst = OnlineInstance::read_str("1 2 1\n\n0\n").unwrap();
        assert_eq!(inst.arrivals(), &[vec![], vec![0]]);
        assert_eq!(inst.to_text(), "1 2 1\n\n0\n");
    }

    #[test]
    fn comments_are_skipped_and_lists_sorted() {
        let text = "# generated\n3 2 2\n# first\n2 0\n0 1\n";
        let inst = OnlineInstance::read_str(text).unwrap();
        assert_eq!(inst.to_text(), "3 2 2\n0 2\n0 1\n");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match OnlineInstance::read_str("2 1 1\n0 x\n") {
            Err(InstanceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match OnlineInstance::read_str("2 1 1\n0 0\n") {
            Err(InstanceError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match OnlineInstance::read_str("2 2\n") {
            Err(InstanceError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(OnlineInstance::read_str("2 1 1\n0\n1\n").is_err());
        assert!(OnlineInstance::read_str("2 3 1\n0\n").is_err());
    }

    #[test]
    fn degree_before_counts_prior_arrivals() {
        let inst = OnlineInstance::new(2, vec![vec![0], vec![0, 1], vec![1]], 2).unwrap();
        assert_eq!(inst.degree_before(0, 0), 0);
        assert_eq!(inst.degree_before(0, 1), 1);
        assert_eq!(inst.degree_before(0, 3), 2);
        assert_eq!(inst.degree_before(1, 2), 1);
    }
}
