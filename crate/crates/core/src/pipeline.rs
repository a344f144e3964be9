//! End-to-end clustering and the parameter sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::MixedDataset;
use crate::error::{CpfError, Result};
use crate::neighbors::{
    build_mutual_graph, components, knn_search, ComponentPartition, KnnBackend, KnnLists,
    NeighborGraph,
};
use crate::peaks::{
    assign, big_brother, candidate_centers, component_neighbors, decision_outliers,
    density_from_lists, effective_k, PeakStats, DEFAULT_K_CAP,
};
use crate::selection::{select_centers, CutTrace, LocalGraph};
use crate::validation::{external_indices, ExternalIndices, OutlierPolicy};

pub const DEFAULT_BETA: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpfParams {
    /// Neighbors per point in the mutual graph.
    pub k: usize,
    /// Density neighbors `K`; `None` means `ceil(sqrt(n))`.
    pub density_k: Option<usize>,
    pub k_cap: usize,
    pub beta: usize,
    pub omega_quantile: Option<f64>,
    pub phi_quantile: Option<f64>,
    pub backend: KnnBackend,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl CpfParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            density_k: None,
            k_cap: DEFAULT_K_CAP,
            beta: DEFAULT_BETA,
            omega_quantile: None,
            phi_quantile: None,
            backend: KnnBackend::Exact,
            threads: None,
        }
    }

    pub fn with_density_k(mut self, density_k: usize) -> Self {
        self.density_k = Some(density_k);
        self
    }

    pub fn resolved_density_k(&self, n: usize) -> usize {
        self.density_k
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(CpfError::InvalidParam("k must be at least 1".into()));
        }
        if self.density_k == Some(0) {
            return Err(CpfError::InvalidParam("K must be at least 1".into()));
        }
        if self.k_cap == 0 {
            return Err(CpfError::InvalidParam("the K cap must be at least 1".into()));
        }
        if self.beta == 0 {
            return Err(CpfError::InvalidParam("beta must be at least 1".into()));
        }
        for q in [self.omega_quantile, self.phi_quantile].into_iter().flatten() {
            if !(0.0..=1.0).contains(&q) {
                return Err(CpfError::InvalidParam(format!("quantile {q} outside [0, 1]")));
            }
        }
        if self.threads == Some(0) {
            return Err(CpfError::InvalidParam("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub knn: f64,
    pub graph: f64,
    pub components: f64,
    pub density: f64,
    pub big_brother: f64,
    pub selection: f64,
    pub assignment: f64,
    pub total: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.knn
            + self.graph
            + self.components
            + self.density
            + self.big_brother
            + self.selection
            + self.assignment
    }
}

/// Peak statistics of the points of one component that took part in
/// assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentPeaks {
    /// Point ids, ascending; positions index `stats`.
    pub members: Vec<usize>,
    pub stats: PeakStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentReport {
    pub id: usize,
    pub size: usize,
    /// Points removed as decision-graph outliers.
    pub decision_outliers: usize,
    /// First global cluster id used by this component.
    pub first_label: usize,
    pub clusters: usize,
    pub trace: CutTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    /// Cluster id per point, `-1` for outliers.
    pub labels: Vec<i64>,
    pub cluster_count: usize,
    pub outlier_count: usize,
    pub components: Vec<ComponentReport>,
    pub peaks: Vec<ComponentPeaks>,
    pub partition: ComponentPartition,
    pub timings: Timings,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CpfError::InvalidParam(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn check_inputs(data: &MixedDataset, params: &CpfParams, k_max: usize) -> Result<()> {
    params.validate()?;
    if data.len() < 2 {
        return Err(CpfError::TooFewPoints {
            needed: 2,
            got: data.len(),
        });
    }
    if k_max >= data.len() {
        return Err(CpfError::KTooLarge {
            k: k_max,
            n: data.len(),
        });
    }
    Ok(())
}

pub fn cluster(data: &MixedDataset, params: &CpfParams) -> Result<ClusteringResult> {
    check_inputs(data, params, params.k)?;
    in_pool(params.threads, || {
        let start = Instant::now();
        let mut timings = Timings::default();
        let t = Instant::now();
        let knn = knn_search(data, params.k, params.backend)?;
        timings.knn = t.elapsed().as_secs_f64();
        let mut result = cluster_from_knn(data, knn, params, None)?;
        result.timings.knn = timings.knn;
        result.timings.total = start.elapsed().as_secs_f64();
        Ok(result)
    })?
}

/// Runs everything after the global k-NN search. `component_lists`, when
/// given, holds in-component neighbor lists at least as wide as needed.
fn cluster_from_knn(
    data: &MixedDataset,
    knn: KnnLists,
    params: &CpfParams,
    component_lists: Option<&[Option<KnnLists>]>,
) -> Result<ClusteringResult> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let graph = build_mutual_graph(knn);
    timings.graph = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let partition = components(&graph);
    timings.components = t.elapsed().as_secs_f64();
    run_components(data, &graph, partition, params, component_lists, timings)
}

fn component_lists_for(
    data: &MixedDataset,
    partition: &ComponentPartition,
    density_k: usize,
    params: &CpfParams,
) -> Result<Vec<Option<KnnLists>>> {
    partition
        .components
        .par_iter()
        .map(|members| {
            let k_eff = effective_k(density_k, members.len(), params.k_cap);
            component_neighbors(data, members, k_eff, params.backend)
        })
        .collect()
}

/// Gamma-ordered candidates, without points that coincide with a denser
/// point (`omega == 0`): such a point cannot head a cluster of its own.
fn eligible_candidates(stats: &PeakStats, beta: usize) -> Vec<usize> {
    let mut candidates = candidate_centers(stats, beta);
    let first = candidates[0];
    candidates.retain(|&c| c == first || stats.omega[c] > 0.0);
    candidates
}

fn run_components(
    data: &MixedDataset,
    graph: &NeighborGraph,
    partition: ComponentPartition,
    params: &CpfParams,
    component_lists: Option<&[Option<KnnLists>]>,
    mut timings: Timings,
) -> Result<ClusteringResult> {
    let n = data.len();
    let density_k = params.resolved_density_k(n);

    // density
    let t = Instant::now();
    let computed;
    let lists: &[Option<KnnLists>] = match component_lists {
        Some(l) => l,
        None => {
            computed = component_lists_for(data, &partition, density_k, params)?;
            &computed
        }
    };
    let densities: Vec<Vec<f64>> = partition
        .components
        .par_iter()
        .zip(lists.par_iter())
        .map(|(members, l)| {
            let k_eff = effective_k(density_k, members.len(), params.k_cap);
            match l {
                Some(l) => density_from_lists(l, k_eff),
                None => vec![0.0; members.len()],
            }
        })
        .collect();
    timings.density = t.elapsed().as_secs_f64();

    // big brothers, with optional decision-graph outlier removal
    let t = Instant::now();
    let peaks: Vec<(ComponentPeaks, usize)> = partition
        .components
        .par_iter()
        .zip(lists.par_iter())
        .zip(densities.into_par_iter())
        .map(|((members, l), phi)| {
            let k_eff = effective_k(density_k, members.len(), params.k_cap);
            let l = l.as_ref().map(|l| if l.k() == k_eff { l.clone() } else { l.truncate(k_eff) });
            let stats = big_brother(data, members, phi, l.as_ref());
            let flagged = decision_outliers(&stats, params.omega_quantile, params.phi_quantile);
            let removed = flagged.iter().filter(|&&f| f).count();
            if removed == 0 {
                return Ok((
                    ComponentPeaks {
                        members: members.clone(),
                        stats,
                    },
                    0,
                ));
            }
            let keep: Vec<usize> = (0..members.len()).filter(|&i| !flagged[i]).collect();
            let active: Vec<usize> = keep.iter().map(|&i| members[i]).collect();
            let phi: Vec<f64> = keep.iter().map(|&i| stats.phi[i]).collect();
            let width = k_eff.min(active.len().saturating_sub(1));
            let l = component_neighbors(data, &active, width, params.backend)?;
            let stats = big_brother(data, &active, phi, l.as_ref());
            Ok((
                ComponentPeaks {
                    members: active,
                    stats,
                },
                removed,
            ))
        })
        .collect::<Result<_>>()?;
    timings.big_brother = t.elapsed().as_secs_f64();

    // center selection
    let t = Instant::now();
    let selections: Vec<(Vec<usize>, CutTrace)> = peaks
        .par_iter()
        .map(|(cp, _)| {
            let candidates = eligible_candidates(&cp.stats, params.beta);
            let base = LocalGraph::induced(graph, &cp.members);
            select_centers(
                data,
                &cp.members,
                &cp.stats,
                &candidates,
                &base,
                params.beta,
                params.backend,
            )
        })
        .collect::<Result<_>>()?;
    timings.selection = t.elapsed().as_secs_f64();

    // assignment
    let t = Instant::now();
    let local_labels: Vec<Vec<usize>> = peaks
        .par_iter()
        .zip(selections.par_iter())
        .map(|((cp, _), (centers, _))| assign(&cp.stats, centers))
        .collect::<Result<_>>()?;
    let mut labels = vec![-1i64; n];
    let mut reports = Vec::with_capacity(peaks.len());
    let mut next_label = 0usize;
    for (id, (((cp, removed), (centers, trace)), local)) in peaks
        .iter()
        .zip(selections)
        .zip(&local_labels)
        .enumerate()
    {
        for (&p, &l) in cp.members.iter().zip(local) {
            labels[p] = (next_label + l) as i64;
        }
        reports.push(ComponentReport {
            id,
            size: partition.components[id].len(),
            decision_outliers: *removed,
            first_label: next_label,
            clusters: centers.len(),
            trace,
        });
        next_label += centers.len();
    }
    timings.assignment = t.elapsed().as_secs_f64();

    let outlier_count = labels.iter().filter(|&&l| l < 0).count();
    Ok(ClusteringResult {
        labels,
        cluster_count: next_label,
        outlier_count,
        components: reports,
        peaks: peaks.into_iter().map(|(cp, _)| cp).collect(),
        partition,
        timings: Timings {
            total: timings.stage_sum(),
            ..timings
        },
    })
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub density_k: usize,
    pub clusters: usize,
    pub outliers: usize,
    pub indices: ExternalIndices,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepBest {
    pub ari: usize,
    pub nmi: usize,
    pub purity: usize,
    pub f1: usize,
    pub ca: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    /// Rows in grid order: `k` outer, `K` inner.
    pub rows: Vec<SweepRow>,
    /// Row index of the best value of each index (earliest row on ties).
    pub best: SweepBest,
}

fn best_row(rows: &[SweepRow], key: impl Fn(&ExternalIndices) -> f64) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if key(&r.indices) > key(&rows[best].indices) {
            best = i;
        }
    }
    best
}

/// Clusters at every `(k, K)` grid point and scores each result against
/// `truth`. The global k-NN lists are computed once at the largest `k` and
/// sliced; in-component lists are computed once per `k` at the largest `K`.
pub fn sweep(
    data: &MixedDataset,
    ks: &[usize],
    density_ks: &[usize],
    base: &CpfParams,
    truth: &[usize],
    policy: OutlierPolicy,
) -> Result<SweepResult> {
    if ks.is_empty() || density_ks.is_empty() {
        return Err(CpfError::InvalidParam("empty parameter grid".into()));
    }
    if truth.len() != data.len() {
        return Err(CpfError::LengthMismatch {
            left: truth.len(),
            right: data.len(),
        });
    }
    let k_max = *ks.iter().max().expect("non-empty");
    check_inputs(data, base, k_max)?;
    if ks.contains(&0) || density_ks.contains(&0) {
        return Err(CpfError::InvalidParam("grid values must be at least 1".into()));
    }
    let density_max = *density_ks.iter().max().expect("non-empty");
    in_pool(base.threads, || {
        let wide = knn_search(data, k_max, base.backend)?;
        let per_k: Vec<Vec<SweepRow>> = ks
            .par_iter()
            .map(|&k| {
                let knn = if k == k_max { wide.clone() } else { wide.truncate(k) };
                let graph = build_mutual_graph(knn);
                let partition = components(&graph);
                let lists = component_lists_for(data, &partition, density_max, base)?;
                density_ks
                    .iter()
                    .map(|&density_k| {
                        let params = CpfParams {
                            k,
                            density_k: Some(density_k),
                            ..base.clone()
                        };
                        let result = run_components(
                            data,
                            &graph,
                            partition.clone(),
                            &params,
                            Some(&lists),
                            Timings::default(),
                        )?;
                        let indices = external_indices(&result.labels, truth, policy)?;
                        Ok(SweepRow {
                            k,
                            density_k,
                            clusters: result.cluster_count,
                            outliers: result.outlier_count,
                            indices,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let rows: Vec<SweepRow> = per_k.into_iter().flatten().collect();
        let best = SweepBest {
            ari: best_row(&rows, |i| i.ari),
            nmi: best_row(&rows, |i| i.nmi),
            purity: best_row(&rows, |i| i.purity),
            f1: best_row(&rows, |i| i.f1),
            ca: best_row(&rows, |i| i.ca),
        };
        Ok(SweepResult { rows, best })
    })?
}
