//! Randomized oracle and invariant checks shared by the integration tests
//! and the acceptance runner. Each check returns a description of the first
//! violation it finds.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use cpf::dataset::{encode, fit_encoding, MixedDataset, RawTable, WeightScheme};
use cpf::metric::squared_distance;
use cpf::neighbors::{build_mutual_graph, components, knn_search, knn_search_subset, KnnBackend};
use cpf::peaks::{big_brother, big_brother_scan, denser, local_density, PeakStats};
use cpf::pipeline::{cluster, sweep, ClusteringResult, CpfParams};
use cpf::selection::{cut_conductance, LocalGraph};
use cpf::validation::{external_indices, ExternalIndices, OutlierPolicy};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{mixed_table, rng};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Random mixed dataset for oracle runs. Numeric values are rounded in some
/// datasets so that exact distance ties are common.
pub fn random_dataset(seed: u64, max_n: usize) -> MixedDataset {
    let mut r = rng(seed);
    let n = r.random_range(12..=max_n);
    let p_num = r.random_range(0..=3);
    let p_cat = if p_num == 0 { r.random_range(1..=3) } else { r.random_range(0..=3) };
    let levels: Vec<usize> = (0..p_cat).map(|_| r.random_range(2..=6)).collect();
    let mut table = mixed_table(&mut r, n, p_num, &levels);
    if r.random_bool(0.4) {
        for col in &mut table.numeric {
            col.iter_mut().for_each(|v| *v = v.round());
        }
    }
    let scheme = if r.random_bool(0.5) { WeightScheme::W1 } else { WeightScheme::W2 };
    let model = fit_encoding(&table, scheme).expect("random table encodes");
    encode(&table, &model).expect("training table re-encodes")
}

/// Full sort of every other point by `(squared distance, index)`.
pub fn reference_knn(data: &MixedDataset, points: &[usize], k: usize) -> Vec<Vec<(f64, usize)>> {
    (0..points.len())
        .map(|a| {
            let mut all: Vec<(f64, usize)> = (0..points.len())
                .filter(|&b| b != a)
                .map(|b| (squared_distance(data, points[a], points[b]), b))
                .collect();
            all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            all.truncate(k);
            all
        })
        .collect()
}

pub fn knn_matches_brute_force(seed: u64) -> Check {
    let data = random_dataset(seed, 200);
    let n = data.len();
    let mut r = rng(seed ^ 0x5eed);
    let k = r.random_range(1..n.min(25));
    let all: Vec<usize> = (0..n).collect();
    let expected = reference_knn(&data, &all, k);
    for backend in [KnnBackend::Exact, KnnBackend::BruteForce, KnnBackend::KdTree] {
        let lists = knn_search(&data, k, backend).map_err(|e| e.to_string())?;
        for (i, want) in expected.iter().enumerate() {
            let got: Vec<(f64, usize)> = lists
                .sq_distances(i)
                .iter()
                .copied()
                .zip(lists.neighbors(i).iter().copied())
                .collect();
            ensure!(
                &got == want,
                "seed {seed}, {backend:?}, n {n}, k {k}: point {i} got {got:?}, want {want:?}"
            );
        }
    }
    // a random subset, in local indices
    let mut subset: Vec<usize> = all.clone();
    subset.shuffle(&mut r);
    subset.truncate(r.random_range(k + 1..=n));
    subset.sort_unstable();
    let expected = reference_knn(&data, &subset, k);
    let lists = knn_search_subset(&data, &subset, k, KnnBackend::KdTree).map_err(|e| e.to_string())?;
    for (i, want) in expected.iter().enumerate() {
        let got: Vec<usize> = lists.neighbors(i).to_vec();
        let want: Vec<usize> = want.iter().map(|w| w.1).collect();
        ensure!(got == want, "seed {seed}: subset point {i} got {got:?}, want {want:?}");
    }
    Ok(())
}

/// Dense symmetric weight matrix of the mutual k-NN graph restricted to
/// `members`, built from the reference neighbor lists.
fn reference_weights(data: &MixedDataset, members: &[usize], k: usize) -> Vec<Vec<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let lists = reference_knn(data, &all, k);
    let sets: Vec<HashSet<usize>> = lists
        .iter()
        .map(|l| l.iter().map(|e| e.1).collect())
        .collect();
    let m = members.len();
    let mut w = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            let (i, j) = (members[a], members[b]);
            if a != b && sets[i].contains(&j) && sets[j].contains(&i) {
                w[a][b] = (-squared_distance(data, i, j).sqrt()).exp();
            }
        }
    }
    w
}

fn reference_conductance(w: &[Vec<f64>], in_s: &[bool]) -> f64 {
    let (mut crossing, mut vol_s, mut vol_rest) = (0.0, 0.0, 0.0);
    for a in 0..w.len() {
        for b in 0..w.len() {
            if in_s[a] {
                vol_s += w[a][b];
                if !in_s[b] {
                    crossing += w[a][b];
                }
            } else {
                vol_rest += w[a][b];
            }
        }
    }
    let vol = f64::min(vol_s, vol_rest);
    if vol == 0.0 {
        f64::INFINITY
    } else {
        crossing / vol
    }
}

pub fn conductance_matches_brute_force(seed: u64) -> Check {
    let data = random_dataset(seed, 300);
    let mut r = rng(seed ^ 0xc0ffee);
    let k = r.random_range(2..=8.min(data.len() - 1));
    let graph = build_mutual_graph(knn_search(&data, k, KnnBackend::Exact).map_err(|e| e.to_string())?);
    let partition = components(&graph);
    let Some(members) = partition.components.iter().max_by_key(|c| c.len()) else {
        return Ok(());
    };
    if members.len() < 2 {
        return Ok(());
    }
    let local = LocalGraph::induced(&graph, members);
    let w = reference_weights(&data, members, k);
    for _ in 0..5 {
        let mut in_s: Vec<bool> = (0..members.len()).map(|_| r.random_bool(0.5)).collect();
        if in_s.iter().all(|&s| s) {
            in_s[0] = false;
        }
        if !in_s.iter().any(|&s| s) {
            in_s[0] = true;
        }
        let got = cut_conductance(&local, &in_s).map_err(|e| e.to_string())?;
        let want = reference_conductance(&w, &in_s);
        let close = (got.is_infinite() && want.is_infinite()) || (got - want).abs() <= 1e-12;
        ensure!(close, "seed {seed}: conductance {got}, reference {want}");
        let flipped: Vec<bool> = in_s.iter().map(|s| !s).collect();
        let other = cut_conductance(&local, &flipped).map_err(|e| e.to_string())?;
        ensure!(
            other.to_bits() == got.to_bits(),
            "seed {seed}: conductance not symmetric ({got} vs {other})"
        );
    }
    Ok(())
}

/// Nearest strictly denser member by `(distance, position)`, found by a
/// plain loop.
fn reference_big_brothers(data: &MixedDataset, members: &[usize], phi: &[f64]) -> Vec<Option<usize>> {
    (0..members.len())
        .map(|i| {
            (0..members.len())
                .filter(|&j| denser(phi, j, i))
                .map(|j| (squared_distance(data, members[i], members[j]), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, j)| j)
        })
        .collect()
}

pub fn big_brother_fast_path_matches_scan(seed: u64) -> Check {
    let data = random_dataset(seed, 500);
    let mut r = rng(seed ^ 0xb16);
    let mut members: Vec<usize> = (0..data.len()).collect();
    members.shuffle(&mut r);
    members.truncate(r.random_range(2..=data.len()));
    members.sort_unstable();
    let density_k = r.random_range(1..=40);
    let (phi, lists) = local_density(&data, &members, density_k, 100, KnnBackend::Exact)
        .map_err(|e| e.to_string())?;
    let fast = big_brother(&data, &members, phi.clone(), lists.as_ref());
    let scan = big_brother_scan(&data, &members, phi.clone());
    ensure!(fast == scan, "seed {seed}: fast path and scan disagree");
    let want = reference_big_brothers(&data, &members, &phi);
    ensure!(fast.big_brother == want, "seed {seed}: big brothers differ from the reference loop");
    Ok(())
}

/// Mutuality, symmetry and completeness of the graph, nested edge sets
/// across `k`, and the outlier accounting of the partition.
pub fn graph_invariants(seed: u64) -> Check {
    let data = random_dataset(seed, 200);
    let n = data.len();
    let k_top = (n - 1).min(12);
    let wide = knn_search(&data, k_top, KnnBackend::Exact).map_err(|e| e.to_string())?;
    let mut previous: Option<BTreeSet<(usize, usize)>> = None;
    let mut previous_partition: Option<cpf::neighbors::ComponentPartition> = None;
    for k in 1..=k_top {
        let graph = build_mutual_graph(wide.truncate(k));
        let lists = graph.knn();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for &(j, d) in graph.adjacent(i) {
                ensure!(i != j, "self loop at {i}");
                ensure!(
                    lists.neighbors(i).contains(&j) && lists.neighbors(j).contains(&i),
                    "edge {i}-{j} at k {k} is not mutual"
                );
                let back = graph.adjacent(j).iter().find(|e| e.0 == i);
                ensure!(back.map(|e| e.1) == Some(d), "edge {i}-{j} is not symmetric");
                edges.insert((i.min(j), i.max(j)));
            }
        }
        for i in 0..n {
            for &j in lists.neighbors(i) {
                if lists.neighbors(j).contains(&i) {
                    ensure!(edges.contains(&(i.min(j), i.max(j))), "mutual pair {i}-{j} missing");
                }
            }
        }
        ensure!(edges.len() == graph.edge_count(), "edge count mismatch at k {k}");
        if let Some(prev) = &previous {
            ensure!(prev.is_subset(&edges), "seed {seed}: an edge disappeared going to k {k}");
        }
        let partition = components(&graph);
        let covered: usize = partition.components.iter().map(Vec::len).sum();
        ensure!(covered + partition.outliers.len() == n, "partition does not cover all points");
        for &o in &partition.outliers {
            ensure!(graph.degree(o) == 0, "outlier {o} has edges");
        }
        if let Some(prev) = &previous_partition {
            for comp in &prev.components {
                let target = partition.component_of[comp[0]];
                ensure!(
                    target.is_some() && comp.iter().all(|&p| partition.component_of[p] == target),
                    "seed {seed}: a component split going to k {k}"
                );
            }
        }
        previous_partition = Some(partition);
        previous = Some(edges);
    }
    Ok(())
}

fn random_params(seed: u64, n: usize) -> CpfParams {
    let mut r = rng(seed ^ 0xfa7);
    let mut params = CpfParams::new(r.random_range(2..=10.min(n - 1)))
        .with_density_k(r.random_range(3..=30));
    params.beta = r.random_range(2..=12);
    if r.random_bool(0.3) {
        params.omega_quantile = Some(0.9);
        params.phi_quantile = Some(0.3);
    }
    params
}

/// Checks a finished clustering: labels match the partition, the big-brother
/// pointers form one tree per component, labels are constant along the
/// chains and each component uses a contiguous block of cluster ids.
pub fn result_invariants(data: &MixedDataset, result: &ClusteringResult) -> Check {
    let n = data.len();
    ensure!(result.labels.len() == n, "label count");
    for &o in &result.partition.outliers {
        ensure!(result.labels[o] == -1, "outlier {o} has a cluster label");
    }
    let mut owner: BTreeMap<i64, usize> = BTreeMap::new();
    for (i, &l) in result.labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let comp = result.partition.component_of[i].ok_or(format!("point {i} labeled outside any component"))?;
        if let Some(&c) = owner.get(&l) {
            ensure!(c == comp, "cluster {l} spans components {c} and {comp}");
        }
        owner.insert(l, comp);
    }
    ensure!(owner.len() == result.cluster_count, "cluster ids are not contiguous");
    let total: usize = result.components.iter().map(|c| c.clusters).sum();
    ensure!(total == result.cluster_count, "per-component cluster counts do not add up");

    for (report, peaks) in result.components.iter().zip(&result.peaks) {
        let stats: &PeakStats = &peaks.stats;
        let m = stats.len();
        let roots: Vec<usize> = (0..m).filter(|&i| stats.big_brother[i].is_none()).collect();
        ensure!(roots.len() == 1, "component {} has {} roots", report.id, roots.len());
        for start in 0..m {
            let mut at = start;
            let mut steps = 0;
            while let Some(parent) = stats.big_brother[at] {
                ensure!(denser(&stats.phi, parent, at), "pointer to a sparser point");
                at = parent;
                steps += 1;
                ensure!(steps <= m, "cycle through {start}");
            }
        }
        let centers: HashSet<usize> = report.trace.candidates[..report.clusters].iter().copied().collect();
        ensure!(report.clusters >= 1, "component without a center");
        ensure!(
            report.clusters <= report.trace.candidates.len(),
            "more centers than candidates"
        );
        for (i, &p) in peaks.members.iter().enumerate() {
            if centers.contains(&p) {
                continue;
            }
            let parent = stats.big_brother[i].ok_or("root is not a center")?;
            ensure!(
                result.labels[p] == result.labels[peaks.members[parent]],
                "label changes along a big-brother chain at point {p}"
            );
        }
        let removed: HashSet<usize> = result.partition.components[report.id]
            .iter()
            .copied()
            .filter(|p| !peaks.members.contains(p))
            .collect();
        ensure!(removed.len() == report.decision_outliers, "decision outlier count");
        for p in removed {
            ensure!(result.labels[p] == -1, "removed point {p} kept a label");
        }
    }
    Ok(())
}

pub fn pipeline_invariants(seed: u64) -> Check {
    let data = random_dataset(seed, 300);
    let params = random_params(seed, data.len());
    let result = cluster(&data, &params).map_err(|e| e.to_string())?;
    result_invariants(&data, &result).map_err(|e| format!("seed {seed}: {e}"))
}

pub fn deterministic_across_threads(seed: u64) -> Check {
    let data = random_dataset(seed, 300);
    let base = random_params(seed, data.len());
    let mut outputs = Vec::new();
    for threads in [1, 2, 4] {
        let params = CpfParams {
            threads: Some(threads),
            ..base.clone()
        };
        let r = cluster(&data, &params).map_err(|e| e.to_string())?;
        outputs.push((r.labels, r.peaks, r.components));
    }
    ensure!(
        outputs.windows(2).all(|w| w[0] == w[1]),
        "seed {seed}: results differ across thread counts"
    );
    Ok(())
}

fn close_indices(a: &ExternalIndices, b: &ExternalIndices) -> bool {
    [
        (a.ari, b.ari),
        (a.nmi, b.nmi),
        (a.purity, b.purity),
        (a.f1, b.f1),
        (a.ca, b.ca),
    ]
    .iter()
    .all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Relabeling either side or permuting the points leaves every index
/// unchanged.
pub fn indices_permutation_invariant(seed: u64) -> Check {
    let mut r = rng(seed ^ 0x1dc);
    let n = r.random_range(2..200);
    let pred: Vec<i64> = (0..n).map(|_| r.random_range(-1..6)).collect();
    let truth: Vec<u32> = (0..n).map(|_| r.random_range(0..4)).collect();
    for policy in [OutlierPolicy::OwnCluster, OutlierPolicy::Exclude] {
        let Ok(base) = external_indices(&pred, &truth, policy) else {
            continue;
        };
        let mut ids: Vec<i64> = (0..6).collect();
        ids.shuffle(&mut r);
        let relabeled: Vec<i64> = pred
            .iter()
            .map(|&p| if p < 0 { -1 } else { 10 + ids[p as usize] })
            .collect();
        let renamed: Vec<u32> = truth.iter().map(|t| 7 * (3 - t)).collect();
        let a = external_indices(&relabeled, &renamed, policy).map_err(|e| e.to_string())?;
        ensure!(close_indices(&base, &a), "seed {seed}: relabeling changed {base:?} to {a:?}");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let p2: Vec<i64> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<u32> = order.iter().map(|&i| truth[i]).collect();
        let b = external_indices(&p2, &t2, policy).map_err(|e| e.to_string())?;
        ensure!(close_indices(&base, &b), "seed {seed}: permuting points changed the indices");
        ensure!((-1.0..=1.0).contains(&base.ari), "ARI out of range");
        for v in [base.nmi, base.purity, base.f1, base.ca] {
            ensure!((0.0..=1.0 + 1e-12).contains(&v), "index out of [0, 1]: {base:?}");
        }
    }
    Ok(())
}

/// Every sweep row equals a direct run with the same parameters.
pub fn sweep_matches_direct_runs(seed: u64) -> Check {
    let data = random_dataset(seed, 150);
    let n = data.len();
    let mut r = rng(seed ^ 0x5ee);
    let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let ks: Vec<usize> = (2..=6.min(n - 1)).collect();
    let density_ks = [5, 9, 14];
    let base = CpfParams::new(2);
    let result = sweep(&data, &ks, &density_ks, &base, &truth, OutlierPolicy::OwnCluster)
        .map_err(|e| e.to_string())?;
    ensure!(result.rows.len() == ks.len() * density_ks.len(), "row count");
    for row in &result.rows {
        let params = CpfParams::new(row.k).with_density_k(row.density_k);
        let direct = cluster(&data, &params).map_err(|e| e.to_string())?;
        let indices = external_indices(&direct.labels, &truth, OutlierPolicy::OwnCluster)
            .map_err(|e| e.to_string())?;
        ensure!(
            direct.cluster_count == row.clusters && direct.outlier_count == row.outliers,
            "seed {seed}: sweep row (k {}, K {}) differs from a direct run",
            row.k,
            row.density_k
        );
        ensure!(indices == row.indices, "seed {seed}: sweep indices differ");
    }
    Ok(())
}

pub fn table_round_trip(table: &RawTable, scheme: WeightScheme) -> Check {
    let model = fit_encoding(table, scheme).map_err(|e| e.to_string())?;
    let back = cpf::dataset::EncodingModel::from_json(&model.to_json().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(back == model, "model JSON round trip changed the model");
    encode(table, &back).map_err(|e| e.to_string())?;
    Ok(())
}

/// Runs `check` for every seed in `seeds` and returns the first failure.
pub fn all_seeds(seeds: std::ops::Range<u64>, check: impl Fn(u64) -> Check) -> Check {
    seeds.into_iter().try_for_each(check)
}
