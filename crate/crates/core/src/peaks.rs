//! Density peaks inside one component set.
//!
//! All functions here work on a component given as its ascending list of
//! member ids; per-point vectors are indexed by position in that list. Because
//! members are ascending, "lower local index" and "lower point id" coincide,
//! which is what the density tie-break uses.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::MixedDataset;
use crate::error::{CpfError, Result};
use crate::metric::squared_distance;
use crate::neighbors::{knn_search_subset, KnnBackend, KnnLists};

/// Default upper limit on the density neighborhood size.
pub const DEFAULT_K_CAP: usize = 100;

/// Number of density neighbors actually used in a component of `size` points.
pub fn effective_k(k: usize, size: usize, k_cap: usize) -> usize {
    k.min(size.saturating_sub(1)).min(k_cap)
}

/// `a` is denser than `b` under the strict order: higher density, or equal
/// density and lower index.
#[inline]
pub fn denser(phi: &[f64], a: usize, b: usize) -> bool {
    phi[a] > phi[b] || (phi[a] == phi[b] && a < b)
}

/// In-component neighbor lists of width `k` (positions within `members`).
pub fn component_neighbors(
    data: &MixedDataset,
    members: &[usize],
    k: usize,
    backend: KnnBackend,
) -> Result<Option<KnnLists>> {
    if k == 0 || members.len() < 2 {
        return Ok(None);
    }
    knn_search_subset(data, members, k, backend).map(Some)
}

/// `phi_i = sum of exp(-d)` over the first `k_eff` entries of each list.
pub fn density_from_lists(lists: &KnnLists, k_eff: usize) -> Vec<f64> {
    (0..lists.len())
        .map(|i| {
            lists.sq_distances(i)[..k_eff]
                .iter()
                .map(|sq| (-sq.sqrt()).exp())
                .sum()
        })
        .collect()
}

/// Local densities of a component with `K_eff = min(k, |C| - 1, k_cap)`
/// neighbors searched inside the component. A singleton has density 0.
pub fn local_density(
    data: &MixedDataset,
    members: &[usize],
    k: usize,
    k_cap: usize,
    backend: KnnBackend,
) -> Result<(Vec<f64>, Option<KnnLists>)> {
    if members.is_empty() {
        return Err(CpfError::EmptySet);
    }
    let k_eff = effective_k(k, members.len(), k_cap);
    match component_neighbors(data, members, k_eff, backend)? {
        Some(lists) => Ok((density_from_lists(&lists, k_eff), Some(lists))),
        None => Ok((vec![0.0; members.len()], None)),
    }
}

/// Position of the density maximum under the strict order.
pub fn density_max(phi: &[f64]) -> usize {
    (1..phi.len()).fold(0, |best, i| if denser(phi, i, best) { i } else { best })
}

/// Per-point peak statistics of one component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeakStats {
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    /// Nearest strictly denser point; `None` only for the density maximum.
    pub big_brother: Vec<Option<usize>>,
    pub gamma: Vec<f64>,
    /// Positions sorted from densest to sparsest.
    pub order: Vec<usize>,
}

impl PeakStats {
    pub fn new(phi: Vec<f64>, omega: Vec<f64>, big_brother: Vec<Option<usize>>) -> Self {
        let gamma = phi.iter().zip(&omega).map(|(p, w)| p * w).collect();
        let mut order: Vec<usize> = (0..phi.len()).collect();
        order.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
        Self {
            phi,
            omega,
            big_brother,
            gamma,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

fn scan_for_big_brother(
    data: &MixedDataset,
    members: &[usize],
    phi: &[f64],
    i: usize,
) -> (f64, usize) {
    let mut best: Option<(f64, usize)> = None;
    for j in 0..members.len() {
        if !denser(phi, j, i) {
            continue;
        }
        let sq = squared_distance(data, members[i], members[j]);
        if best.is_none_or(|(b, _)| sq < b) {
            best = Some((sq, j));
        }
    }
    let (sq, j) = best.expect("only the density maximum lacks a denser point");
    (sq.sqrt(), j)
}

fn list_big_brother(lists: &KnnLists, phi: &[f64], i: usize) -> Option<(f64, usize)> {
    lists
        .neighbors(i)
        .iter()
        .zip(lists.sq_distances(i))
        .find(|&(&j, _)| denser(phi, j, i))
        .map(|(&j, &sq)| (sq.sqrt(), j))
}

fn peak_stats(
    data: &MixedDataset,
    members: &[usize],
    phi: Vec<f64>,
    lists: Option<&KnnLists>,
) -> PeakStats {
    let m = members.len();
    let top = density_max(&phi);
    let (mut omega, mut big_brother): (Vec<f64>, Vec<Option<usize>>) = (0..m)
        .into_par_iter()
        .map(|i| {
            if i == top {
                return (0.0, None);
            }
            let found = lists.and_then(|l| list_big_brother(l, &phi, i));
            let (d, j) = found.unwrap_or_else(|| scan_for_big_brother(data, members, &phi, i));
            (d, Some(j))
        })
        .unzip();
    omega[top] = members
        .iter()
        .map(|&p| squared_distance(data, members[top], p))
        .fold(0.0, f64::max)
        .sqrt();
    big_brother[top] = None;
    PeakStats::new(phi, omega, big_brother)
}

/// Big brothers and `omega` using the component's sorted neighbor lists first
/// and a scan over the whole component for points whose lists hold no denser
/// member. The density maximum gets the largest distance in the component.
pub fn big_brother(
    data: &MixedDataset,
    members: &[usize],
    phi: Vec<f64>,
    lists: Option<&KnnLists>,
) -> PeakStats {
    peak_stats(data, members, phi, lists)
}

/// Same result as [`big_brother`], always scanning the whole component.
pub fn big_brother_scan(data: &MixedDataset, members: &[usize], phi: Vec<f64>) -> PeakStats {
    peak_stats(data, members, phi, None)
}

/// The `min(beta, |C|)` positions of largest gamma, descending, ties by index.
pub fn candidate_centers(stats: &PeakStats, beta: usize) -> Vec<usize> {
    let g = &stats.gamma;
    let mut idx: Vec<usize> = (0..g.len()).collect();
    let take = beta.min(idx.len());
    let by_gamma = |a: &usize, b: &usize| g[*b].total_cmp(&g[*a]).then(a.cmp(b));
    if take < idx.len() && take > 0 {
        idx.select_nth_unstable_by(take - 1, by_gamma);
        idx.truncate(take);
    }
    idx.sort_by(by_gamma);
    idx.truncate(take);
    idx
}

/// Labels every point by walking down the density order: a center opens its
/// own cluster (numbered by its position in `centers`) and every other point
/// copies its big brother's label.
pub fn assign(stats: &PeakStats, centers: &[usize]) -> Result<Vec<usize>> {
    const UNSET: usize = usize::MAX;
    if centers.is_empty() {
        return Err(CpfError::InvalidParam("at least one center is required".into()));
    }
    let mut labels = vec![UNSET; stats.len()];
    for (c, &p) in centers.iter().enumerate() {
        if p >= stats.len() {
            return Err(CpfError::InvalidParam(format!("center {p} outside the component")));
        }
        labels[p] = c;
    }
    for &i in &stats.order {
        if labels[i] != UNSET {
            continue;
        }
        let parent = stats.big_brother[i].ok_or(CpfError::Invariant(
            "density maximum is not among the centers",
        ))?;
        labels[i] = labels[parent];
    }
    Ok(labels)
}

/// Linear-interpolated quantile of `values` at `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Decision-graph outliers: points whose `omega` exceeds the `omega_q`
/// quantile and whose density falls below the `phi_q` quantile (each condition
/// applies only when its threshold is given). The density maximum is never
/// flagged.
pub fn decision_outliers(stats: &PeakStats, omega_q: Option<f64>, phi_q: Option<f64>) -> Vec<bool> {
    if stats.is_empty() || (omega_q.is_none() && phi_q.is_none()) {
        return vec![false; stats.len()];
    }
    let omega_cut = omega_q.map(|q| quantile(&stats.omega, q));
    let phi_cut = phi_q.map(|q| quantile(&stats.phi, q));
    (0..stats.len())
        .map(|i| {
            stats.big_brother[i].is_some()
                && omega_cut.is_none_or(|c| stats.omega[i] > c)
                && phi_cut.is_none_or(|c| stats.phi[i] < c)
        })
        .collect()
}
