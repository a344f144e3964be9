//! Synthetic data shared by the integration tests.

#![allow(dead_code)]

use cpf::dataset::{encode, fit_encoding, MixedDataset, RawTable, WeightScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic 2-D Gaussian sample around `center`.
pub fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, center: [f64; 2], sigma: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|_| vec![center[0] + normal.sample(rng), center[1] + normal.sample(rng)])
        .collect()
}

/// Random mixed table: `p_num` Gaussian columns and `levels.len()`
/// categorical columns with the given number of levels each. Every level is
/// guaranteed to occur.
pub fn mixed_table(rng: &mut ChaCha8Rng, n: usize, p_num: usize, levels: &[usize]) -> RawTable {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let numeric = (0..p_num)
        .map(|j| {
            let scale = 1.0 + j as f64;
            let col: Vec<f64> = (0..n).map(|_| normal.sample(rng) * scale).collect();
            (format!("x{j}"), col)
        })
        .collect();
    let categorical = levels
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            // skewed level frequencies
            let col: Vec<String> = (0..n)
                .map(|i| {
                    let q = if i < l {
                        i
                    } else {
                        let u: f64 = rng.random();
                        ((u * u) * l as f64) as usize
                    };
                    format!("c{}", q.min(l - 1))
                })
                .collect();
            (format!("a{j}"), col)
        })
        .collect();
    RawTable::from_columns(numeric, categorical).unwrap()
}

pub fn mixed_dataset(seed: u64, n: usize, p_num: usize, levels: &[usize], scheme: WeightScheme) -> MixedDataset {
    let mut r = rng(seed);
    let table = mixed_table(&mut r, n, p_num, levels);
    let model = fit_encoding(&table, scheme).unwrap();
    encode(&table, &model).unwrap()
}

/// Mixed data with a few planted groups (shifted numeric means and
/// group-dependent category preferences).
pub fn grouped_mixed_dataset(seed: u64, n: usize, groups: usize) -> MixedDataset {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x0 = Vec::with_capacity(n);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut a0 = Vec::with_capacity(n);
    let mut a1 = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % groups;
        let shift = 6.0 * g as f64;
        x0.push(shift + normal.sample(&mut r));
        x1.push(-shift + normal.sample(&mut r));
        x2.push(normal.sample(&mut r));
        let keep: f64 = r.random();
        let c0 = if keep < 0.8 { g % 4 } else { r.random_range(0..4) };
        a0.push(format!("u{c0}"));
        a1.push(format!("v{}", r.random_range(0..3)));
    }
    let table = RawTable::from_columns(
        vec![("x0".into(), x0), ("x1".into(), x1), ("x2".into(), x2)],
        vec![("a0".into(), a0), ("a1".into(), a1)],
    )
    .unwrap();
    let model = fit_encoding(&table, WeightScheme::W1).unwrap();
    encode(&table, &model).unwrap()
}

pub mod checks;
