//! Conductance-based choice of the number of centers in a component.
//!
//! Edges carry weight `exp(-d)`. The volume of a vertex set is the total
//! weight of edges incident to its vertices, and the conductance of a cut is
//! the crossing weight divided by the smaller of the two volumes.

use serde::Serialize;

use crate::dataset::MixedDataset;
use crate::error::{CpfError, Result};
use crate::neighbors::{knn_search_subset, KnnBackend, KnnLists, NeighborGraph, UnionFind};
use crate::peaks::{assign, PeakStats};

/// Weighted undirected graph on the positions `0..n` of a component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl LocalGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Adds `{a, b}` with weight `exp(-distance)`.
    pub fn add_edge(&mut self, a: usize, b: usize, distance: f64) {
        let w = (-distance).exp();
        self.adjacency[a].push((b, w));
        self.adjacency[b].push((a, w));
    }

    /// The subgraph of `graph` induced by `members` (ascending point ids).
    pub fn induced(graph: &NeighborGraph, members: &[usize]) -> Self {
        let mut local = Self::new(members.len());
        for (a, &p) in members.iter().enumerate() {
            for &(q, d) in graph.adjacent(p) {
                if let Ok(b) = members.binary_search(&q) {
                    if a < b {
                        local.add_edge(a, b, d);
                    }
                }
            }
        }
        local
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }
}

/// Conductance of the cut `(S, C \ S)` where `in_s[i]` marks membership of S.
/// Zero-volume cuts get `+inf`.
pub fn cut_conductance(graph: &LocalGraph, in_s: &[bool]) -> Result<f64> {
    if in_s.len() != graph.len() {
        return Err(CpfError::LengthMismatch {
            left: in_s.len(),
            right: graph.len(),
        });
    }
    if !in_s.iter().any(|&s| s) || in_s.iter().all(|&s| s) {
        return Err(CpfError::EmptySet);
    }
    let (mut crossing, mut vol_s, mut vol_rest) = (0.0, 0.0, 0.0);
    for (i, adj) in graph.adjacency.iter().enumerate() {
        for &(j, w) in adj {
            if in_s[i] {
                vol_s += w;
            } else {
                vol_rest += w;
            }
            if i < j && in_s[i] != in_s[j] {
                crossing += w;
            }
        }
    }
    Ok(ratio(crossing, f64::min(vol_s, vol_rest)))
}

fn ratio(crossing: f64, volume: f64) -> f64 {
    if volume > 0.0 {
        crossing / volume
    } else {
        f64::INFINITY
    }
}

/// Conductance of `(S_t, C \ S_t)` for every cluster `t` of a labeling with
/// `clusters` labels, in one pass over the edges.
pub fn cut_profile(graph: &LocalGraph, labels: &[usize], clusters: usize) -> Vec<f64> {
    let mut crossing = vec![0.0; clusters];
    let mut volume = vec![0.0; clusters];
    for (i, adj) in graph.adjacency.iter().enumerate() {
        let li = labels[i];
        for &(j, w) in adj {
            volume[li] += w;
            if labels[j] != li {
                crossing[li] += w;
            }
        }
    }
    (0..clusters)
        .map(|t| {
            let rest: f64 = volume
                .iter()
                .enumerate()
                .filter(|&(u, _)| u != t)
                .map(|(_, v)| v)
                .sum();
            ratio(crossing[t], f64::min(volume[t], rest))
        })
        .collect()
}

/// Mutual-edge birth ranks: edge `{a, b}` exists in the mutual k-NN graph
/// for every `k >= birth`. Only edges with both ranks inside the lists are
/// returned, sorted by birth.
fn edge_births(lists: &KnnLists) -> Vec<(usize, usize, usize, f64)> {
    let k = lists.k();
    let mut out = Vec::new();
    for a in 0..lists.len() {
        for (r, (&b, &sq)) in lists.neighbors(a).iter().zip(lists.sq_distances(a)).enumerate() {
            if a >= b {
                continue;
            }
            if let Some(rb) = lists.neighbors(b).iter().position(|&x| x == a) {
                out.push((r.max(rb) + 1, a, b, sq.sqrt()));
            }
        }
        debug_assert!(lists.neighbors(a).len() == k);
    }
    out.sort_by_key(|e| e.0);
    out
}

/// Mutual k-NN graph on a component built from width-`k` prefixes of `lists`.
pub fn mutual_graph_at(lists: &KnnLists, k: usize) -> LocalGraph {
    let mut g = LocalGraph::new(lists.len());
    for (birth, a, b, d) in edge_births(lists) {
        if birth > k {
            break;
        }
        g.add_edge(a, b, d);
    }
    g
}

/// Smallest `k` at which the mutual k-NN graph of the component, restricted
/// to each side of the split, is connected on both sides. Returns `k` and
/// neighbor lists wide enough to also build the graph at `k + 1` (when
/// `k + 1 < |C|`).
pub fn minimal_connectivity_k(
    data: &MixedDataset,
    members: &[usize],
    in_s1: &[bool],
    backend: KnnBackend,
) -> Result<(usize, KnnLists)> {
    let m = members.len();
    if m < 2 || in_s1.len() != m {
        return Err(CpfError::TooFewPoints { needed: 2, got: m });
    }
    if in_s1.iter().all(|&s| s) || !in_s1.iter().any(|&s| s) {
        return Err(CpfError::EmptySet);
    }
    let mut width = (m - 1).min(16);
    loop {
        let lists = knn_search_subset(data, members, width, backend)?;
        let mut uf = UnionFind::new(m);
        let mut found = if uf.set_count() == 2 { Some(1) } else { None };
        if found.is_none() {
            for (birth, a, b, _) in edge_births(&lists) {
                if in_s1[a] == in_s1[b] {
                    uf.union(a, b);
                    if uf.set_count() == 2 {
                        found = Some(birth);
                        break;
                    }
                }
            }
        }
        match found {
            Some(k) if k < width || width == m - 1 => return Ok((k, lists)),
            _ if width == m - 1 => {
                return Err(CpfError::Invariant("complete graph left a side disconnected"))
            }
            _ => width = (width * 2).min(m - 1),
        }
    }
}

/// Record of the center-selection decisions for one component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutTrace {
    /// Candidate centers (point ids), by descending gamma.
    pub candidates: Vec<usize>,
    /// `Phi_2, Phi_3, ...` on the component's base graph; `+inf` serializes
    /// as `null`.
    pub phi: Vec<f64>,
    pub beta_star: usize,
    pub k_tilde: Option<usize>,
    pub k_hat: Option<usize>,
    pub phi_k_tilde: Option<f64>,
    pub phi_k_hat: Option<f64>,
    /// Whether the second candidate survived the two-center test.
    pub second_center_accepted: bool,
}

impl CutTrace {
    fn single(candidates: Vec<usize>) -> Self {
        Self {
            candidates,
            phi: Vec::new(),
            beta_star: 1,
            k_tilde: None,
            k_hat: None,
            phi_k_tilde: None,
            phi_k_hat: None,
            second_center_accepted: false,
        }
    }
}

/// Position of the smallest value; the earliest wins ties.
pub fn first_argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Chooses how many of the gamma-ordered `candidates` (positions in
/// `members`) become centers.
///
/// The second candidate is kept only if the two-way split does not get worse
/// when the neighborhood grows from the minimal connecting `k` to `k + 1`.
/// After that, `Phi_j` (the worst conductance among the `j` clusters) is
/// computed for every `j` up to `beta` and the smallest `j` minimizing it wins.
pub fn select_centers(
    data: &MixedDataset,
    members: &[usize],
    stats: &PeakStats,
    candidates: &[usize],
    base: &LocalGraph,
    beta: usize,
    backend: KnnBackend,
) -> Result<(Vec<usize>, CutTrace)> {
    if candidates.is_empty() {
        return Err(CpfError::EmptySet);
    }
    let m = members.len();
    let ids: Vec<usize> = candidates.iter().map(|&c| members[c]).collect();
    let limit = beta.min(candidates.len());
    if limit < 2 || m < 3 {
        return Ok((candidates[..1].to_vec(), CutTrace::single(ids)));
    }

    let labels = assign(stats, &candidates[..2])?;
    let in_s1: Vec<bool> = labels.iter().map(|&l| l == 0).collect();
    let (k_tilde, lists) = minimal_connectivity_k(data, members, &in_s1, backend)?;
    let k_hat = (k_tilde + 1).min(m - 1);
    let phi_tilde = cut_conductance(&mutual_graph_at(&lists, k_tilde), &in_s1)?;
    let phi_hat = cut_conductance(&mutual_graph_at(&lists, k_hat), &in_s1)?;
    let mut trace = CutTrace {
        candidates: ids,
        phi: Vec::new(),
        beta_star: 1,
        k_tilde: Some(k_tilde),
        k_hat: Some(k_hat),
        phi_k_tilde: Some(phi_tilde),
        phi_k_hat: Some(phi_hat),
        second_center_accepted: false,
    };
    if phi_hat > phi_tilde {
        return Ok((candidates[..1].to_vec(), trace));
    }
    trace.second_center_accepted = true;
    trace.phi.push(cut_conductance(base, &in_s1)?);

    for j in 3..=limit {
        let labels = assign(stats, &candidates[..j])?;
        let worst = cut_profile(base, &labels, j)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        trace.phi.push(worst);
    }
    let best = first_argmin(&trace.phi).expect("at least Phi_2 is recorded");
    trace.beta_star = best + 2;
    Ok((candidates[..trace.beta_star].to_vec(), trace))
}
