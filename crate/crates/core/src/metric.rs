//! Mixed distance between encoded points and cluster prototypes.

use crate::dataset::MixedDataset;
use crate::error::{CpfError, Result};

/// Squared mixed distance. A categorical attribute on which the two points
/// differ contributes `rho_j * (w_a + w_b)`; equal categories contribute 0.
#[inline]
pub fn squared_distance(data: &MixedDataset, i: usize, j: usize) -> f64 {
    squared_distance_rows(
        data.half_terms(),
        data.numeric_row(i),
        data.categorical_row(i),
        data.numeric_row(j),
        data.categorical_row(j),
    )
}

/// [`squared_distance`] on raw encoded rows.
#[inline]
pub(crate) fn squared_distance_rows(
    half_terms: &[Vec<f64>],
    num_a: &[f64],
    cat_a: &[u32],
    num_b: &[f64],
    cat_b: &[u32],
) -> f64 {
    let mut sum = 0.0;
    for (a, b) in num_a.iter().zip(num_b) {
        let d = a - b;
        sum += d * d;
    }
    for ((terms, &a), &b) in half_terms.iter().zip(cat_a).zip(cat_b) {
        if a != b {
            sum += terms[a as usize] + terms[b as usize];
        }
    }
    sum
}

#[inline]
pub fn distance(data: &MixedDataset, i: usize, j: usize) -> f64 {
    squared_distance(data, i, j).sqrt()
}

/// Cluster mean: numeric centroid plus per-attribute category proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub numeric: Vec<f64>,
    pub categorical: Vec<Vec<f64>>,
}

pub fn cluster_prototype(members: &[usize], data: &MixedDataset) -> Result<Prototype> {
    if members.is_empty() {
        return Err(CpfError::EmptySet);
    }
    let m = members.len() as f64;
    let mut numeric = vec![0.0; data.numeric_dims()];
    let mut categorical: Vec<Vec<f64>> = data
        .model()
        .categorical
        .iter()
        .map(|c| vec![0.0; c.categories.len()])
        .collect();
    for &i in members {
        for (acc, v) in numeric.iter_mut().zip(data.numeric_row(i)) {
            *acc += v;
        }
        for (counts, &q) in categorical.iter_mut().zip(data.categorical_row(i)) {
            counts[q as usize] += 1.0;
        }
    }
    numeric.iter_mut().for_each(|v| *v /= m);
    categorical
        .iter_mut()
        .flatten()
        .for_each(|v| *v /= m);
    Ok(Prototype {
        numeric,
        categorical,
    })
}
