//! External validation indices comparing a predicted labeling with ground
//! truth.

use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CpfError, Result};

/// How points labeled `-1` (outliers) enter the comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierPolicy {
    /// All outliers form one extra predicted cluster.
    #[default]
    OwnCluster,
    /// Outliers are dropped before scoring.
    Exclude,
}

/// Counts `n_ij` of points in predicted cluster `i` and true class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new<P: Ord + Copy, T: Ord + Copy>(pred: &[P], truth: &[T]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(CpfError::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        let rows = dense_ids(pred);
        let cols = dense_ids(truth);
        let (r, c) = (
            rows.iter().max().map_or(0, |m| m + 1),
            cols.iter().max().map_or(0, |m| m + 1),
        );
        let mut counts = vec![vec![0u64; c]; r];
        for (&i, &j) in rows.iter().zip(&cols) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|row| row.iter().sum()).collect();
        let col_sums = (0..c).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: pred.len() as u64,
        })
    }
}

fn dense_ids<L: Ord + Copy>(labels: &[L]) -> Vec<usize> {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    labels.iter().map(|l| ids[l]).collect()
}

fn pairs(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalIndices {
    pub ari: f64,
    pub nmi: f64,
    pub purity: f64,
    pub f1: f64,
    pub ca: f64,
}

pub fn adjusted_rand_index(t: &ContingencyTable) -> f64 {
    let index: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = a * b / pairs(t.n);
    let max = 0.5 * (a + b);
    if max == expected {
        // both partitions trivial (all singletons or one block)
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the geometric mean of the two entropies. If
/// either labeling has a single value the index is 0, except when both do.
pub fn normalized_mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let hp = entropy(&t.row_sums, n);
    let ht = entropy(&t.col_sums, n);
    if t.row_sums.len() <= 1 && t.col_sums.len() <= 1 {
        return 1.0;
    }
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    (mi / (hp * ht).sqrt()).clamp(0.0, 1.0)
}

pub fn purity(t: &ContingencyTable) -> f64 {
    let hits: u64 = t
        .counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / t.n as f64
}

/// Pair-counting F1: precision and recall over pairs placed together.
pub fn pairwise_f1(t: &ContingencyTable) -> f64 {
    let together: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let pred_pairs: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let true_pairs: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    if pred_pairs == 0.0 && true_pairs == 0.0 {
        return 1.0;
    }
    if together == 0.0 {
        return 0.0;
    }
    let precision = together / pred_pairs;
    let recall = together / true_pairs;
    2.0 * precision * recall / (precision + recall)
}

/// Accuracy under the best one-to-one matching of clusters to classes.
pub fn clustering_accuracy(t: &ContingencyTable) -> f64 {
    let (r, c) = (t.row_sums.len(), t.col_sums.len());
    if r == 0 || c == 0 {
        return 0.0;
    }
    // kuhn_munkres needs rows <= columns
    let (rows, cols, flip) = if r <= c { (r, c, false) } else { (c, r, true) };
    let weights = Matrix::from_fn(rows, cols, |(i, j)| {
        let v = if flip { t.counts[j][i] } else { t.counts[i][j] };
        v as i64
    });
    let (total, _) = kuhn_munkres(&weights);
    total as f64 / t.n as f64
}

/// Drops or relabels outliers (`-1`) in `pred` according to `policy`.
pub fn apply_outlier_policy<T: Copy>(
    pred: &[i64],
    truth: &[T],
    policy: OutlierPolicy,
) -> (Vec<i64>, Vec<T>) {
    match policy {
        OutlierPolicy::OwnCluster => (pred.to_vec(), truth.to_vec()),
        OutlierPolicy::Exclude => pred
            .iter()
            .zip(truth)
            .filter(|(&p, _)| p >= 0)
            .map(|(&p, &t)| (p, t))
            .unzip(),
    }
}

pub fn external_indices<T: Ord + Copy>(
    pred: &[i64],
    truth: &[T],
    policy: OutlierPolicy,
) -> Result<ExternalIndices> {
    if pred.len() != truth.len() {
        return Err(CpfError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let (pred, truth) = apply_outlier_policy(pred, truth, policy);
    if pred.len() < 2 {
        return Err(CpfError::TooFewPoints {
            needed: 2,
            got: pred.len(),
        });
    }
    let t = ContingencyTable::new(&pred, &truth)?;
    Ok(ExternalIndices {
        ari: adjusted_rand_index(&t),
        nmi: normalized_mutual_information(&t),
        purity: purity(&t),
        f1: pairwise_f1(&t),
        ca: clustering_accuracy(&t),
    })
}
