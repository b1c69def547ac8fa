//! Instance families: exactly regular random streams and the adversarial
//! gadget family that stresses the gate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::OnlineInstance;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeneratorError {
    #[error("gadget parameters need r >= 3 and k >= 2 (got r={r}, k={k})")]
    GadgetParams { r: u32, k: usize },
    #[error("gadget instance too large for r={r}, k={k}")]
    GadgetTooLarge { r: u32, k: usize },
    #[error("regular generator needs equal sides (got {num_offline} offline, {num_online} online)")]
    UnequalSides { num_offline: usize, num_online: usize },
    #[error("degree {delta} exceeds side size {side}")]
    DegreeTooLarge { delta: usize, side: usize },
    #[error("gave up after {attempts} permutation attempts")]
    BudgetExhausted { attempts: usize },
}

/// Parameters of the gadget family: `Δ = k - 1` and
/// `max(k, ⌊k^(r-2)⌋)` disjoint gadgets of `Δ² + 1` nodes each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetParams {
    pub r: u32,
    pub k: usize,
}

impl GadgetParams {
    pub fn new(r: u32, k: usize) -> Result<Self, GeneratorError> {
        if r < 3 || k < 2 {
            return Err(GeneratorError::GadgetParams { r, k });
        }
        let params = Self { r, k };
        params.checked_n()?;
        Ok(params)
    }

    pub fn delta(&self) -> usize {
        self.k - 1
    }

    pub fn gadget_count(&self) -> usize {
        self.checked_count().unwrap_or(usize::MAX)
    }

    /// `Δ² + 1`: Δ offline nodes, `Δ(Δ-1)` fillers and one probe.
    pub fn gadget_size(&self) -> usize {
        self.delta() * self.delta() + 1
    }

    pub fn n(&self) -> usize {
        self.checked_n().unwrap_or(usize::MAX)
    }

    fn checked_count(&self) -> Result<usize, GeneratorError> {
        let pow = (self.k as u64)
            .checked_pow(self.r - 2)
            .ok_or(GeneratorError::GadgetTooLarge {
                r: self.r,
                k: self.k,
            })?;
        Ok((self.k as u64).max(pow) as usize)
    }

    fn checked_n(&self) -> Result<usize, GeneratorError> {
        self.checked_count()?
            .checked_mul(self.gadget_size())
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or(GeneratorError::GadgetTooLarge {
                r: self.r,
                k: self.k,
            })
    }
}

/// Disjoint gadgets in gadget-major order: for each offline node of a
/// gadget, `Δ-1` degree-one filler arrivals, then the probe arrival adjacent
/// to all `Δ` offline nodes of that gadget.
pub fn gen_gadget_instance(params: GadgetParams) -> Result<OnlineInstance, GeneratorError> {
    let params = GadgetParams::new(params.r, params.k)?;
    let delta = params.delta();
    let count = params.gadget_count();
    let mut arrivals = Vec::with_capacity(count * (delta * (delta - 1) + 1));
    for g in 0..count {
        let base = (g * delta) as u32;
        let offline = base..base + delta as u32;
        for v in offline.clone() {
            for _ in 0..delta - 1 {
                arrivals.push(vec![v]);
            }
        }
        arrivals.push(offline.collect());
    }
    Ok(OnlineInstance::new_unchecked(count * delta, arrivals, delta))
}

/// Index of each probe arrival in a gadget instance, in gadget order.
pub fn gadget_probe_arrivals(params: GadgetParams) -> Vec<usize> {
    let per_gadget = params.delta() * (params.delta() - 1) + 1;
    (0..params.gadget_count())
        .map(|g| g * per_gadget + per_gadget - 1)
        .collect()
}

/// A `delta`-regular bipartite stream built as the union of `delta` random
/// perfect matchings between the two sides. Each permutation is drawn one
/// online node at a time; a step that would repeat an edge is resampled, and a
/// permutation that cannot be completed is redrawn. At most `10 * delta`
/// permutation draws are made in total.
pub fn gen_random_regular<R: Rng + ?Sized>(
    num_offline: usize,
    num_online: usize,
    delta: usize,
    rng: &mut R,
) -> Result<OnlineInstance, GeneratorError> {
    if num_offline != num_online {
        return Err(GeneratorError::UnequalSides {
            num_offline,
            num_online,
        });
    }
    let n = num_offline;
    if delta > n {
        return Err(GeneratorError::DegreeTooLarge { delta, side: n });
    }
    let words = n.div_ceil(64);
    let mut adj = vec![0u64; n * words];
    let is_adj = |adj: &[u64], w: usize, v: usize| adj[w * words + v / 64] >> (v % 64) & 1 == 1;
    let budget = 10 * delta.max(1);
    let mut attempts = 0;
    let mut perm = vec![0u32; n];
    let mut pool: Vec<u32> = Vec::with_capacity(n);
    let mut placed = 0;
    while placed < delta {
        if attempts == budget {
            return Err(GeneratorError::BudgetExhausted { attempts });
        }
        attempts += 1;
        pool.clear();
        pool.extend(0..n as u32);
        pool.shuffle(rng);
        let mut ok = true;
        for w in 0..n {
            if let Some(slot) = pick_free(&pool, |v| !is_adj(&adj, w, v as usize), rng) {
                perm[w] = pool.swap_remove(slot);
                continue;
            }
            // Repair: hand an earlier node's partner to w and give that node
            // a pool entry it can take instead.
            let start = rng.gen_range(0..w.max(1));
            let repaired = (0..w).map(|i| (start + i) % w).find_map(|j| {
                let u = perm[j];
                if is_adj(&adj, w, u as usize) {
                    return None;
                }
                pool.iter()
                    .position(|&p| !is_adj(&adj, j, p as usize))
                    .map(|slot| (j, slot))
            });
            match repaired {
                Some((j, slot)) => {
                    perm[w] = perm[j];
                    perm[j] = pool.swap_remove(slot);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        for (w, &v) in perm.iter().enumerate() {
            adj[w * words + v as usize / 64] |= 1 << (v % 64);
        }
        placed += 1;
    }
    let arrivals = (0..n)
        .map(|w| {
            adj[w * words..(w + 1) * words]
                .iter()
                .enumerate()
                .flat_map(|(i, &word)| {
                    (0..64u32)
                        .filter(move |b| word >> b & 1 == 1)
                        .map(move |b| i as u32 * 64 + b)
                })
                .collect()
        })
        .collect();
    Ok(OnlineInstance::new_unchecked(n, arrivals, delta))
}

/// Uniform pick among pool slots satisfying `ok`: a few random probes, then
/// a full scan.
fn pick_free<R: Rng + ?Sized>(
    pool: &[u32],
    ok: impl Fn(u32) -> bool,
    rng: &mut R,
) -> Option<usize> {
    if pool.is_empty() {
        return None;
    }
    for _ in 0..8 {
        let slot = rng.gen_range(0..pool.len());
        if ok(pool[slot]) {
            return Some(slot);
        }
    }
    let free: Vec<usize> = (0..pool.len()).filter(|&s| ok(pool[s])).collect();
    if free.is_empty() {
        None
    } else {
        Some(free[rng.gen_range(0..free.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gadget_counts() {
        let p = GadgetParams::new(3, 5).unwrap();
        assert_eq!(p.delta(), 4);
        assert_eq!(p.gadget_count(), 5);
        assert_eq!(p.gadget_size(), 17);
        assert_eq!(p.n(), 85);

        // Δ = 2, max(3, 3^1) = 3 gadgets of 2² + 1 = 5 nodes
        let p = GadgetParams::new(3, 3).unwrap();
        assert_eq!((p.delta(), p.gadget_count(), p.gadget_size(), p.n()), (2, 3, 5, 15));

        let p = GadgetParams::new(3, 64).unwrap();
        assert_eq!((p.delta(), p.gadget_count(), p.n()), (63, 64, 254_080));

        let p = GadgetParams::new(4, 3).unwrap();
        assert_eq!(p.gadget_count(), 9);
    }

    #[test]
    fn gadget_parameter_errors() {
        assert!(GadgetParams::new(2, 5).is_err());
        assert!(GadgetParams::new(3, 1).is_err());
        assert!(matches!(
            GadgetParams::new(40, 1000),
            Err(GeneratorError::GadgetTooLarge { .. })
        ));
    }

    #[test]
    fn gadget_structure() {
        let p = GadgetParams::new(3, 5).unwrap();
        let inst = gen_gadget_instance(p).unwrap();
        assert!(inst.validate().is_ok());
        assert_eq!(inst.n(), p.n());
        assert_eq!(inst.delta(), 4);
        let probes = gadget_probe_arrivals(p);
        assert_eq!(probes.len(), 5);
        let mut probe_edges = vec![0usize; inst.num_offline()];
        for &t in &probes {
            assert_eq!(inst.arrival(t).len(), 4);
            for &v in inst.arrival(t) {
                probe_edges[v as usize] += 1;
                assert_eq!(inst.degree_before(v, t), 3);
            }
        }
        assert!(probe_edges.iter().all(|&c| c == 1));
        assert!(inst.offline_degrees().iter().all(|&d| d == 4));
    }

    #[test]
    fn perfect_matching_for_delta_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = gen_random_regular(4, 4, 1, &mut rng).unwrap();
        assert!(inst.validate().is_ok());
        assert!(inst.arrivals().iter().all(|a| a.len() == 1));
        let mut seen: Vec<u32> = inst.arrivals().iter().map(|a| a[0]).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn regular_by_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = gen_random_regular(256, 256, 16, &mut rng).unwrap();
        assert!(inst.validate().is_ok());
        assert!(inst.arrivals().iter().all(|a| a.len() == 16));
        assert!(inst.offline_degrees().iter().all(|&d| d == 16));
        for a in inst.arrivals() {
            assert!(a.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn dense_regular_completes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = gen_random_regular(20, 20, 20, &mut rng).unwrap();
        assert!(inst.arrivals().iter().all(|a| a.len() == 20));
        let inst = gen_random_regular(64, 64, 40, &mut rng).unwrap();
        assert!(inst.validate().is_ok());
    }

    #[test]
    fn regular_parameter_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            gen_random_regular(4, 4, 5, &mut rng).unwrap_err(),
            GeneratorError::DegreeTooLarge { delta: 5, side: 4 }
        );
        assert!(matches!(
            gen_random_regular(4, 5, 1, &mut rng),
            Err(GeneratorError::UnequalSides { .. })
        ));
    }
}
