//! Constrained maximum-coverage selection of discriminative patches.
//!
//! A bipartite utility graph connects each candidate patch to the
//! positive-image members of its neighborhood; the covering function
//! `F(S) = |Γ(S)|` is monotone and submodular. A separate conflict graph
//! joins candidates whose neighborhoods overlap prohibitively, and selection
//! is restricted to its independent sets. The greedy algorithm picks the
//! candidate of maximum marginal gain and deletes its conflict neighbors;
//! it guarantees `F(S_g) >= F(S*) / (Δ+2)` where `Δ` is the maximum conflict
//! degree (`Δ+1` when the neighborhoods are pairwise disjoint).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, Neighborhood, PatchId};
use crate::geom;

/// Exhaustive search guard for [`brute_force_select`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Bipartite utility graph: candidates V mapped to the covered patches Γ(b).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverGraph {
    gamma: BTreeMap<PatchId, BTreeSet<PatchId>>,
}

impl CoverGraph {
    pub fn from_adjacency(gamma: BTreeMap<PatchId, BTreeSet<PatchId>>) -> Self {
        CoverGraph { gamma }
    }

    /// Candidate ids, ascending.
    pub fn candidates(&self) -> impl Iterator<Item = PatchId> + '_ {
        self.gamma.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self, b: PatchId) -> Result<&BTreeSet<PatchId>> {
        self.gamma.get(&b).ok_or(Error::UnknownPatch(b.0))
    }
}

/// Conflict graph over the candidate set; selections must be independent sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintGraph {
    adjacency: BTreeMap<PatchId, BTreeSet<PatchId>>,
}

impl ConstraintGraph {
    /// Build from undirected edges; self-loops are rejected by debug assert.
    pub fn from_edges(nodes: impl IntoIterator<Item = PatchId>, edges: &[(PatchId, PatchId)]) -> Self {
        let mut adjacency: BTreeMap<PatchId, BTreeSet<PatchId>> =
            nodes.into_iter().map(|n| (n, BTreeSet::new())).collect();
        for &(a, b) in edges {
            debug_assert_ne!(a, b, "self-loop in constraint graph");
            adjacency.entry(a).or_default().insert(b);
            adjacency.entry(b).or_default().insert(a);
        }
        ConstraintGraph { adjacency }
    }

    pub fn neighbors(&self, b: PatchId) -> impl Iterator<Item = PatchId> + '_ {
        self.adjacency.get(&b).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: PatchId, b: PatchId) -> bool {
        self.adjacency.get(&a).map_or(false, |s| s.contains(&b))
    }

    /// Maximum node degree Δ.
    pub fn max_degree(&self) -> usize {
        self.adjacency.values().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn is_independent(&self, set: &[PatchId]) -> bool {
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                if self.has_edge(a, b) {
                    return false;
                }
            }
        }
        true
    }
}

/// Ordered greedy (or exhaustive) pick with its achieved coverage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen candidate ids, in selection order.
    pub chosen: Vec<PatchId>,
    /// `F(chosen)`.
    pub coverage: usize,
    /// Marginal gain of each pick, aligned with `chosen`.
    pub gains: Vec<usize>,
}

/// Clusters file written after selection: one entry per chosen candidate with
/// its covered members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub clusters: Vec<ClusterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub rep_patch_id: PatchId,
    pub members: Vec<PatchId>,
    pub gain: usize,
}

impl ClustersFile {
    pub fn from_selection(sel: &Selection, g: &CoverGraph) -> Result<Self> {
        let clusters = sel
            .chosen
            .iter()
            .zip(&sel.gains)
            .map(|(&rep, &gain)| {
                let mut members = vec![rep];
                members.extend(g.gamma(rep)?.iter().copied());
                Ok(ClusterEntry {
                    rep_patch_id: rep,
                    members,
                    gain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClustersFile { clusters })
    }
}

/// Connect every positive-image patch to the positive-image members of its
/// neighborhood; matches into negative images are dropped.
pub fn build_cover_graph(
    neighborhoods: &BTreeMap<PatchId, Neighborhood>,
    d: &Dataset,
) -> CoverGraph {
    let gamma = neighborhoods
        .iter()
        .map(|(&b, hood)| {
            let covered: BTreeSet<PatchId> = hood
                .neighbors
                .iter()
                .filter(|n| d.is_positive(n.image_id))
                .map(|n| n.patch_id)
                .collect();
            (b, covered)
        })
        .collect();
    CoverGraph { gamma }
}

/// Number of distinct patches covered by `S`.
pub fn coverage(g: &CoverGraph, s: &[PatchId]) -> Result<usize> {
    let mut covered: BTreeSet<PatchId> = BTreeSet::new();
    for &b in s {
        covered.extend(g.gamma(b)?.iter().copied());
    }
    Ok(covered.len())
}

/// Connect two candidates when more than `theta` members of one neighborhood
/// have an IoU >= `iou_min` partner in the same image inside the other
/// neighborhood. The count is symmetrized by taking the larger of the two
/// directed counts.
pub fn build_constraint_graph(
    neighborhoods: &BTreeMap<PatchId, Neighborhood>,
    d: &Dataset,
    theta: usize,
    iou_min: f64,
) -> ConstraintGraph {
    // Positive-image members per candidate, grouped by image for the
    // same-image IoU test.
    struct Members {
        id: PatchId,
        by_image: BTreeMap<u64, Vec<PatchId>>,
    }
    let members: Vec<Members> = neighborhoods
        .iter()
        .map(|(&b, hood)| {
            let mut by_image: BTreeMap<u64, Vec<PatchId>> = BTreeMap::new();
            for n in &hood.neighbors {
                if d.is_positive(n.image_id) {
                    by_image.entry(n.image_id.0).or_default().push(n.patch_id);
                }
            }
            Members { id: b, by_image }
        })
        .collect();

    let directed = |from: &Members, to: &Members| -> usize {
        let mut count = 0;
        for (image, patches) in &from.by_image {
            let Some(others) = to.by_image.get(image) else {
                continue;
            };
            for &u in patches {
                let ub = &d.patch(u).expect("member patch").bbox;
                let overlaps = others.iter().any(|&v| {
                    let vb = &d.patch(v).expect("member patch").bbox;
                    geom::iou(ub, vb) >= iou_min
                });
                if overlaps {
                    count += 1;
                }
            }
        }
        count
    };

    let edges: Vec<(PatchId, PatchId)> = (0..members.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mi = &members[i];
            members[i + 1..].iter().filter_map(move |mj| {
                let count = directed(mi, mj).max(directed(mj, mi));
                (count > theta).then_some((mi.id, mj.id))
            })
        })
        .collect();

    ConstraintGraph::from_edges(members.iter().map(|m| m.id), &edges)
}

/// Lazy greedy maximization of `F` over independent sets of the conflict
/// graph. Stale heap priorities are valid upper bounds because marginal gains
/// only shrink as the covered set grows; an entry is accepted only when its
/// gain was recomputed in the current iteration. Ties break on the smaller
/// patch id. Stops on exhaustion, `max_clusters`, or a zero best gain.
pub fn greedy_select(
    g: &CoverGraph,
    c: &ConstraintGraph,
    max_clusters: Option<usize>,
) -> Selection {
    let limit = max_clusters.unwrap_or(usize::MAX);
    let mut covered: BTreeSet<PatchId> = BTreeSet::new();
    let mut active: BTreeSet<PatchId> = g.candidates().collect();
    let mut chosen = Vec::new();
    let mut gains = Vec::new();

    // (gain, Reverse(id), stamp); max-heap pops highest gain, then lowest id.
    let mut heap: BinaryHeap<(usize, Reverse<PatchId>, u64)> = BinaryHeap::new();
    let mut stamp: u64 = 0;
    let mut current: HashMap<PatchId, (usize, u64)> = HashMap::new();
    for b in g.candidates() {
        let gain = g.gamma(b).expect("candidate").len();
        heap.push((gain, Reverse(b), stamp));
        current.insert(b, (gain, stamp));
    }

    while chosen.len() < limit {
        let Some((gain, Reverse(b), entry_stamp)) = heap.pop() else {
            break;
        };
        if !active.contains(&b) {
            continue;
        }
        let &(cur_gain, cur_stamp) = current.get(&b).expect("active entry");
        if gain != cur_gain || entry_stamp != cur_stamp {
            continue; // superseded by a fresher entry
        }
        if entry_stamp == stamp {
            if gain == 0 {
                break;
            }
            chosen.push(b);
            gains.push(gain);
            covered.extend(g.gamma(b).expect("candidate").iter().copied());
            active.remove(&b);
            for nb in c.neighbors(b) {
                active.remove(&nb);
            }
            stamp += 1;
        } else {
            let fresh = g
                .gamma(b)
                .expect("candidate")
                .iter()
                .filter(|u| !covered.contains(u))
                .count();
            current.insert(b, (fresh, stamp));
            heap.push((fresh, Reverse(b), stamp));
        }
    }

    Selection {
        coverage: covered.len(),
        chosen,
        gains,
    }
}

/// Reference greedy that rescans every active candidate each iteration.
/// Must agree with [`greedy_select`] exactly.
pub fn greedy_select_naive(
    g: &CoverGraph,
    c: &ConstraintGraph,
    max_clusters: Option<usize>,
) -> Selection {
    let limit = max_clusters.unwrap_or(usize::MAX);
    let mut covered: BTreeSet<PatchId> = BTreeSet::new();
    let mut active: BTreeSet<PatchId> = g.candidates().collect();
    let mut chosen = Vec::new();
    let mut gains = Vec::new();

    while chosen.len() < limit && !active.is_empty() {
        let mut best: Option<(usize, PatchId)> = None;
        for &b in &active {
            let gain = g
                .gamma(b)
                .expect("candidate")
                .iter()
                .filter(|u| !covered.contains(u))
                .count();
            let better = match best {
                None => true,
                Some((bg, bid)) => gain > bg || (gain == bg && b < bid),
            };
            if better {
                best = Some((gain, b));
            }
        }
        let (gain, b) = best.expect("nonempty active set");
        if gain == 0 {
            break;
        }
        chosen.push(b);
        gains.push(gain);
        covered.extend(g.gamma(b).expect("candidate").iter().copied());
        active.remove(&b);
        for nb in c.neighbors(b) {
            active.remove(&nb);
        }
    }

    Selection {
        coverage: covered.len(),
        chosen,
        gains,
    }
}

/// Exact maximizer of `F` over all independent sets, by exhaustive
/// enumeration. Guarded to [`BRUTE_FORCE_LIMIT`] candidates. Ties prefer the
/// lexicographically smallest id sequence.
pub fn brute_force_select(g: &CoverGraph, c: &ConstraintGraph) -> Result<Selection> {
    let nodes: Vec<PatchId> = g.candidates().collect();
    let n = nodes.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    // Bitset of covered patches per candidate.
    let mut universe: BTreeSet<PatchId> = BTreeSet::new();
    for b in &nodes {
        universe.extend(g.gamma(*b)?.iter().copied());
    }
    let index: HashMap<PatchId, usize> =
        universe.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let blocks = universe.len().div_ceil(64).max(1);
    let masks: Vec<Vec<u64>> = nodes
        .iter()
        .map(|&b| {
            let mut mask = vec![0u64; blocks];
            for u in g.gamma(b).expect("candidate") {
                let i = index[u];
                mask[i / 64] |= 1 << (i % 64);
            }
            mask
        })
        .collect();
    // Conflict adjacency as a node-index bitmask.
    let conflict: Vec<u32> = nodes
        .iter()
        .map(|&a| {
            let mut m = 0u32;
            for (j, &b) in nodes.iter().enumerate() {
                if c.has_edge(a, b) {
                    m |= 1 << j;
                }
            }
            m
        })
        .collect();

    let mut best_f = 0usize;
    let mut best_subset: Option<Vec<PatchId>> = None;
    let mut union = vec![0u64; blocks];
    for subset in 0u32..(1u32 << n) {
        let mut ok = true;
        for j in 0..n {
            if subset & (1 << j) != 0 && conflict[j] & subset != 0 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        union.iter_mut().for_each(|b| *b = 0);
        for j in 0..n {
            if subset & (1 << j) != 0 {
                for (acc, m) in union.iter_mut().zip(&masks[j]) {
                    *acc |= m;
                }
            }
        }
        let f: usize = union.iter().map(|b| b.count_ones() as usize).sum();
        let ids: Vec<PatchId> = (0..n)
            .filter(|j| subset & (1 << j) != 0)
            .map(|j| nodes[j])
            .collect();
        let better = match (&best_subset, f.cmp(&best_f)) {
            (None, _) => true,
            (_, std::cmp::Ordering::Greater) => true,
            (Some(cur), std::cmp::Ordering::Equal) => ids < *cur,
            _ => false,
        };
        if better {
            best_f = f;
            best_subset = Some(ids);
        }
    }

    let chosen = best_subset.unwrap_or_default();
    let mut covered: BTreeSet<PatchId> = BTreeSet::new();
    let mut gains = Vec::with_capacity(chosen.len());
    for &b in &chosen {
        let before = covered.len();
        covered.extend(g.gamma(b)?.iter().copied());
        gains.push(covered.len() - before);
    }
    Ok(Selection {
        chosen,
        coverage: best_f,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(entries: &[(u64, &[u64])]) -> CoverGraph {
        let gamma = entries
            .iter()
            .map(|&(b, us)| {
                (
                    PatchId(b),
                    us.iter().map(|&u| PatchId(u)).collect::<BTreeSet<_>>(),
                )
            })
            .collect();
        CoverGraph::from_adjacency(gamma)
    }

    fn constraints(nodes: &[u64], edges: &[(u64, u64)]) -> ConstraintGraph {
        let e: Vec<(PatchId, PatchId)> = edges
            .iter()
            .map(|&(a, b)| (PatchId(a), PatchId(b)))
            .collect();
        ConstraintGraph::from_edges(nodes.iter().map(|&n| PatchId(n)), &e)
    }

    fn ids(v: &[u64]) -> Vec<PatchId> {
        v.iter().map(|&x| PatchId(x)).collect()
    }

    #[test]
    fn coverage_empty_and_union() {
        let g = graph(&[(1, &[101, 102]), (2, &[102, 103]), (3, &[104])]);
        assert_eq!(coverage(&g, &[]).unwrap(), 0);
        assert_eq!(coverage(&g, &ids(&[1, 2])).unwrap(), 3);
        assert_eq!(coverage(&g, &ids(&[1])).unwrap(), 2);
        assert!(matches!(
            coverage(&g, &ids(&[9])),
            Err(Error::UnknownPatch(9))
        ));
    }

    #[test]
    fn greedy_respects_constraint_edge() {
        let g = graph(&[(1, &[101, 102]), (2, &[102, 103]), (3, &[104])]);
        let c = constraints(&[1, 2, 3], &[(1, 2)]);
        let sel = greedy_select(&g, &c, None);
        assert_eq!(sel.chosen, ids(&[1, 3]));
        assert_eq!(sel.coverage, 3);
        assert_eq!(sel.gains, vec![2, 1]);
        // exhaustive enumeration confirms 3 is optimal here
        let exact = brute_force_select(&g, &c).unwrap();
        assert_eq!(exact.coverage, 3);
    }

    #[test]
    fn star_instance_shows_bound_gap() {
        let g = graph(&[
            (1, &[101, 102, 103]),
            (2, &[101, 104]),
            (3, &[102, 105]),
            (4, &[103, 106]),
        ]);
        let c = constraints(&[1, 2, 3, 4], &[(1, 2), (1, 3), (1, 4)]);
        let sel = greedy_select(&g, &c, None);
        assert_eq!(sel.chosen, ids(&[1]));
        assert_eq!(sel.coverage, 3);
        let exact = brute_force_select(&g, &c).unwrap();
        assert_eq!(exact.coverage, 6);
        assert_eq!(exact.chosen, ids(&[2, 3, 4]));
        // Δ = 3, so greedy must keep at least F*/(Δ+2) = 1.2
        assert_eq!(c.max_degree(), 3);
        assert!(sel.coverage as f64 >= exact.coverage as f64 / 5.0);
    }

    #[test]
    fn unconstrained_budgeted_greedy() {
        let g = graph(&[(1, &[101, 102]), (2, &[102, 103]), (3, &[104])]);
        let c = constraints(&[1, 2, 3], &[]);
        let sel = greedy_select(&g, &c, Some(2));
        assert_eq!(sel.chosen, ids(&[1, 2]));
        assert_eq!(sel.coverage, 3);
        assert_eq!(sel.gains, vec![2, 1]);
    }

    #[test]
    fn zero_gain_candidates_are_not_selected() {
        let g = graph(&[(1, &[101]), (2, &[101]), (3, &[])]);
        let c = constraints(&[1, 2, 3], &[]);
        let sel = greedy_select(&g, &c, None);
        assert_eq!(sel.chosen, ids(&[1]));
        assert_eq!(sel.coverage, 1);
    }

    #[test]
    fn brute_force_trivial_cases() {
        let g = graph(&[(1, &[101]), (2, &[102])]);
        let c = constraints(&[1, 2], &[]);
        let exact = brute_force_select(&g, &c).unwrap();
        assert_eq!(exact.chosen, ids(&[1, 2]));
        assert_eq!(exact.coverage, 2);

        let single = graph(&[(1, &[101, 102])]);
        let sc = constraints(&[1], &[]);
        let exact = brute_force_select(&single, &sc).unwrap();
        assert_eq!(exact.chosen, ids(&[1]));
    }

    #[test]
    fn brute_force_size_guard() {
        let entries: Vec<(u64, Vec<u64>)> = (0..21).map(|i| (i, vec![100 + i])).collect();
        let gamma = entries
            .iter()
            .map(|(b, us)| {
                (
                    PatchId(*b),
                    us.iter().map(|&u| PatchId(u)).collect::<BTreeSet<_>>(),
                )
            })
            .collect();
        let g = CoverGraph::from_adjacency(gamma);
        let c = constraints(&(0..21).collect::<Vec<_>>(), &[]);
        assert!(matches!(
            brute_force_select(&g, &c),
            Err(Error::SizeGuard { size: 21, .. })
        ));
    }

    #[test]
    fn lazy_matches_naive_on_dense_ties() {
        // Many equal-gain candidates force heavy tie-breaking.
        let g = graph(&[
            (5, &[101, 102]),
            (1, &[103, 104]),
            (3, &[101, 103]),
            (2, &[104, 102]),
            (4, &[105]),
        ]);
        let c = constraints(&[1, 2, 3, 4, 5], &[(1, 3), (2, 5)]);
        assert_eq!(greedy_select(&g, &c, None), greedy_select_naive(&g, &c, None));
    }

    #[test]
    fn selection_gains_non_increasing() {
        let g = graph(&[
            (1, &[101, 102, 103]),
            (2, &[103, 104]),
            (3, &[105, 106, 107, 108]),
            (4, &[101]),
        ]);
        let c = constraints(&[1, 2, 3, 4], &[]);
        let sel = greedy_select(&g, &c, None);
        for w in sel.gains.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }
}
