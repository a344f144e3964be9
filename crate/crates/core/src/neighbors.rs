//! k-nearest-neighbor search, the mutual k-NN graph and its connected
//! components.
//!
//! Neighbor lists are ordered by ascending squared distance with ties broken
//! by ascending point index, so the exact backends are fully deterministic and
//! agree with a brute-force full sort.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MixedDataset;
use crate::error::{CpfError, Result};
use crate::metric::{squared_distance, squared_distance_rows};

/// Subsets up to this size use brute force under [`KnnBackend::Exact`].
pub const BRUTE_FORCE_LIMIT: usize = 512;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnBackend {
    /// Brute force below [`BRUTE_FORCE_LIMIT`] points, k-d tree above.
    #[default]
    Exact,
    BruteForce,
    KdTree,
    /// Seeded NN-descent; not exact.
    Approximate { seed: u64 },
}

/// Fixed-width neighbor lists over a point set, indexed by position in the
/// set ("local" indices).
#[derive(Clone, Debug, PartialEq)]
pub struct KnnLists {
    k: usize,
    indices: Vec<usize>,
    sq_dists: Vec<f64>,
}

impl KnnLists {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn sq_distances(&self, i: usize) -> &[f64] {
        &self.sq_dists[i * self.k..(i + 1) * self.k]
    }

    /// The first `k` entries of every list.
    pub fn truncate(&self, k: usize) -> KnnLists {
        assert!(k <= self.k, "cannot widen neighbor lists");
        let n = self.len();
        let mut indices = Vec::with_capacity(n * k);
        let mut sq_dists = Vec::with_capacity(n * k);
        for i in 0..n {
            indices.extend_from_slice(&self.neighbors(i)[..k]);
            sq_dists.extend_from_slice(&self.sq_distances(i)[..k]);
        }
        KnnLists {
            k,
            indices,
            sq_dists,
        }
    }

    fn from_rows(k: usize, rows: Vec<Vec<Neighbor>>) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * k);
        let mut sq_dists = Vec::with_capacity(rows.len() * k);
        for row in rows {
            debug_assert_eq!(row.len(), k);
            for nb in row {
                indices.push(nb.index);
                sq_dists.push(nb.sq);
            }
        }
        KnnLists {
            k,
            indices,
            sq_dists,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    sq: f64,
    index: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq
            .total_cmp(&other.sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// k nearest neighbors of every point in the dataset.
pub fn knn_search(data: &MixedDataset, k: usize, backend: KnnBackend) -> Result<KnnLists> {
    let all: Vec<usize> = (0..data.len()).collect();
    knn_search_subset(data, &all, k, backend)
}

/// k nearest neighbors of every member of `points`, searched among `points`
/// only. Returned indices are positions in `points`.
pub fn knn_search_subset(
    data: &MixedDataset,
    points: &[usize],
    k: usize,
    backend: KnnBackend,
) -> Result<KnnLists> {
    let m = points.len();
    if k == 0 {
        return Err(CpfError::InvalidParam("k must be at least 1".into()));
    }
    if k >= m {
        return Err(CpfError::KTooLarge { k, n: m });
    }
    let rows = match backend {
        KnnBackend::BruteForce => brute_force(data, points, k),
        KnnBackend::Exact if m <= BRUTE_FORCE_LIMIT => brute_force(data, points, k),
        KnnBackend::Exact | KnnBackend::KdTree => KdTree::build(data, points).knn_all(k),
        KnnBackend::Approximate { seed } => {
            if m <= 4 * (k + 1) {
                brute_force(data, points, k)
            } else {
                nn_descent(data, points, k, seed)
            }
        }
    };
    Ok(KnnLists::from_rows(k, rows))
}

fn brute_force(data: &MixedDataset, points: &[usize], k: usize) -> Vec<Vec<Neighbor>> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut all: Vec<Neighbor> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &pj)| Neighbor {
                    sq: squared_distance(data, points[i], pj),
                    index: j,
                })
                .collect();
            all.select_nth_unstable(k - 1);
            all.truncate(k);
            all.sort_unstable();
            all
        })
        .collect()
}

struct KdNode {
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// k-d tree over the Euclidean embedding of a point subset. Bounding boxes in
/// the embedding only prune; candidate distances come from the mixed metric.
/// Rows are copied in leaf order so a leaf scan reads contiguous memory.
struct KdTree<'a> {
    data: &'a MixedDataset,
    dims: usize,
    /// Embedding per local point.
    coords: Vec<f64>,
    /// Local point at each tree position.
    order: Vec<usize>,
    nodes: Vec<KdNode>,
    /// `lo` then `hi` corner of every node box, `2 * dims` values per node.
    bounds: Vec<f64>,
    numeric: Vec<f64>,
    categorical: Vec<u32>,
}

impl<'a> KdTree<'a> {
    fn build(data: &'a MixedDataset, points: &[usize]) -> Self {
        let dims = data.embedding_dims();
        let mut coords = vec![0.0; points.len() * dims];
        coords
            .par_chunks_mut(dims.max(1))
            .zip(points.par_iter())
            .for_each(|(row, &p)| data.embed_into(p, row));
        let mut tree = KdTree {
            data,
            dims,
            coords,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
            numeric: Vec::new(),
            categorical: Vec::new(),
        };
        tree.build_node(0, points.len());
        let (p_num, p_cat) = (data.numeric_dims(), data.categorical_dims());
        tree.numeric = Vec::with_capacity(points.len() * p_num);
        tree.categorical = Vec::with_capacity(points.len() * p_cat);
        for &local in &tree.order {
            tree.numeric.extend_from_slice(data.numeric_row(points[local]));
            tree.categorical.extend_from_slice(data.categorical_row(points[local]));
        }
        tree
    }

    fn coord(&self, local: usize, d: usize) -> f64 {
        self.coords[local * self.dims + d]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let dims = self.dims;
        let mut lo = vec![f64::INFINITY; dims];
        let mut hi = vec![f64::NEG_INFINITY; dims];
        for &p in &self.order[start..end] {
            for d in 0..dims {
                let v = self.coord(p, d);
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let id = self.nodes.len();
        let split = (0..dims)
            .map(|d| (d, hi[d] - lo[d]))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        self.nodes.push(KdNode {
            start,
            end,
            children: None,
        });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);
        let Some((dim, spread)) = split else {
            return id;
        };
        if end - start <= LEAF_SIZE || spread <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dims + dim]
                .total_cmp(&coords[b * dims + dim])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn box_sq_dist(&self, node: usize, query: &[f64]) -> f64 {
        let b = &self.bounds[2 * self.dims * node..2 * self.dims * (node + 1)];
        let (lo, hi) = b.split_at(self.dims);
        let mut sum = 0.0;
        for ((&v, &l), &h) in query.iter().zip(lo).zip(hi) {
            let gap = if v < l {
                l - v
            } else if v > h {
                v - h
            } else {
                0.0
            };
            sum += gap * gap;
        }
        sum
    }

    fn knn_all(&self, k: usize) -> Vec<Vec<Neighbor>> {
        // queries in leaf order keep consecutive searches on the same paths
        let found: Vec<Vec<Neighbor>> = (0..self.order.len())
            .into_par_iter()
            .map(|pos| self.knn_one(pos, k))
            .collect();
        let mut rows = vec![Vec::new(); self.order.len()];
        for (&q, row) in self.order.iter().zip(found) {
            rows[q] = row;
        }
        rows
    }

    /// Neighbors of the point at tree position `qpos`.
    fn knn_one(&self, qpos: usize, k: usize) -> Vec<Neighbor> {
        let (p_num, p_cat) = (self.data.numeric_dims(), self.data.categorical_dims());
        let half_terms = self.data.half_terms();
        let query = self.order[qpos];
        let qcoords = &self.coords[query * self.dims..(query + 1) * self.dims];
        let qnum = &self.numeric[qpos * p_num..(qpos + 1) * p_num];
        let qcat = &self.categorical[qpos * p_cat..(qpos + 1) * p_cat];
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((id, bound)) = stack.pop() {
            if heap.len() == k && pruned(bound, heap.peek().unwrap().sq) {
                continue;
            }
            let node = &self.nodes[id];
            match node.children {
                None => {
                    for pos in node.start..node.end {
                        if pos == qpos {
                            continue;
                        }
                        let cand = Neighbor {
                            sq: squared_distance_rows(
                                half_terms,
                                qnum,
                                qcat,
                                &self.numeric[pos * p_num..(pos + 1) * p_num],
                                &self.categorical[pos * p_cat..(pos + 1) * p_cat],
                            ),
                            index: self.order[pos],
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().unwrap() {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
                Some((l, r)) => {
                    let bl = self.box_sq_dist(l, qcoords);
                    let br = self.box_sq_dist(r, qcoords);
                    // push the farther child first so the nearer is expanded next
                    if bl <= br {
                        stack.push((r, br));
                        stack.push((l, bl));
                    } else {
                        stack.push((l, bl));
                        stack.push((r, br));
                    }
                }
            }
        }
        heap.into_sorted_vec()
    }
}

/// Box lower bounds come from the embedding, so allow for rounding before
/// discarding a subtree that might hold an exact tie.
#[inline]
fn pruned(bound: f64, worst: f64) -> bool {
    bound > worst * (1.0 + 1e-9) + 1e-12
}

fn try_insert(list: &mut Vec<(Neighbor, bool)>, cand: Neighbor, k: usize) -> bool {
    if list.len() == k && cand >= list[k - 1].0 {
        return false;
    }
    if list.iter().any(|(nb, _)| nb.index == cand.index) {
        return false;
    }
    let pos = list.partition_point(|(nb, _)| *nb < cand);
    list.insert(pos, (cand, true));
    list.truncate(k);
    true
}

/// NN-descent: start from random lists and repeatedly compare neighbors of
/// neighbors until few lists change.
fn nn_descent(data: &MixedDataset, points: &[usize], k: usize, seed: u64) -> Vec<Vec<Neighbor>> {
    let m = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |a: usize, b: usize| squared_distance(data, points[a], points[b]);
    let mut lists: Vec<Vec<(Neighbor, bool)>> = (0..m)
        .map(|i| {
            let mut row: Vec<(Neighbor, bool)> = Vec::with_capacity(k);
            for j in sample(&mut rng, m - 1, k).into_iter() {
                let j = if j >= i { j + 1 } else { j };
                try_insert(&mut row, Neighbor { sq: dist(i, j), index: j }, k);
            }
            row
        })
        .collect();

    for _ in 0..20 {
        let mut fresh: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut old: Vec<Vec<usize>> = vec![Vec::new(); m];
        for i in 0..m {
            for (nb, is_new) in lists[i].iter_mut() {
                if *is_new {
                    fresh[i].push(nb.index);
                    fresh[nb.index].push(i);
                    *is_new = false;
                } else {
                    old[i].push(nb.index);
                    old[nb.index].push(i);
                }
            }
        }
        let mut updates = 0usize;
        for i in 0..m {
            let mut new_set = std::mem::take(&mut fresh[i]);
            new_set.sort_unstable();
            new_set.dedup();
            new_set.truncate(2 * k);
            let mut old_set = std::mem::take(&mut old[i]);
            old_set.sort_unstable();
            old_set.dedup();
            old_set.truncate(2 * k);
            for (x, &a) in new_set.iter().enumerate() {
                for &b in new_set[x + 1..].iter().chain(old_set.iter()) {
                    if a == b {
                        continue;
                    }
                    let sq = dist(a, b);
                    updates += try_insert(&mut lists[a], Neighbor { sq, index: b }, k) as usize;
                    updates += try_insert(&mut lists[b], Neighbor { sq, index: a }, k) as usize;
                }
            }
        }
        if (updates as f64) < 0.001 * (m * k) as f64 {
            break;
        }
    }
    lists
        .into_iter()
        .map(|row| row.into_iter().map(|(nb, _)| nb).collect())
        .collect()
}

/// Undirected mutual k-NN graph. Edge `{i, j}` exists iff each endpoint is in
/// the other's k-NN list.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    knn: KnnLists,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.knn.k()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn knn(&self) -> &KnnLists {
        &self.knn
    }

    /// Mutual neighbors of `i` with their distances, in k-NN order.
    pub fn adjacent(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(i, j, distance)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, adj)| {
            adj.iter()
                .filter(move |&&(j, _)| i < j)
                .map(move |&(j, d)| (i, j, d))
        })
    }
}

pub fn build_mutual_graph(knn: KnnLists) -> NeighborGraph {
    let n = knn.len();
    let sorted: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = knn.neighbors(i).to_vec();
            row.sort_unstable();
            row
        })
        .collect();
    let adjacency = (0..n)
        .into_par_iter()
        .map(|i| {
            knn.neighbors(i)
                .iter()
                .zip(knn.sq_distances(i))
                .filter(|&(&j, _)| j != i && sorted[j].binary_search(&i).is_ok())
                .map(|(&j, &sq)| (j, sq.sqrt()))
                .collect()
        })
        .collect();
    NeighborGraph { knn, adjacency }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    sets: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when two different sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

/// Component sets of the mutual graph plus the degree-zero outliers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentPartition {
    /// Component id per point; `None` for degree-zero outliers.
    pub component_of: Vec<Option<usize>>,
    /// Members of each component in ascending order, components ordered by
    /// their smallest member.
    pub components: Vec<Vec<usize>>,
    pub outliers: Vec<usize>,
}

pub fn components(graph: &NeighborGraph) -> ComponentPartition {
    let n = graph.len();
    let mut uf = UnionFind::new(n);
    for (i, j, _) in graph.edges() {
        uf.union(i, j);
    }
    let mut root_to_id = vec![usize::MAX; n];
    let mut component_of = vec![None; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut outliers = Vec::new();
    for i in 0..n {
        if graph.degree(i) == 0 {
            outliers.push(i);
            continue;
        }
        let r = uf.find(i);
        if root_to_id[r] == usize::MAX {
            root_to_id[r] = comps.len();
            comps.push(Vec::new());
        }
        component_of[i] = Some(root_to_id[r]);
        comps[root_to_id[r]].push(i);
    }
    ComponentPartition {
        component_of,
        components: comps,
        outliers,
    }
}

/// Writes `i,j,distance` rows for every edge.
pub fn write_edges_csv<W: Write>(graph: &NeighborGraph, mut out: W) -> std::io::Result<()> {
    writeln!(out, "i,j,distance")?;
    for (i, j, d) in graph.edges() {
        writeln!(out, "{i},{j},{}", crate::format_float(d))?;
    }
    Ok(())
}
