//! Independent oracles shared by the integration tests. Nothing here calls
//! into the factorization code under test.

#![allow(dead_code)]

use ptl_core::rng::{seeded_rng, SeededRng};
use ptl_core::{FeatureSet, FeatureVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let w = 2 * n;
    let mut m = vec![0.0; n * w];
    for i in 0..n {
        m[i * w..i * w + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        m[i * w + n + i] = 1.0;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&x, &y| m[x * w + col].abs().total_cmp(&m[y * w + col].abs()))
            .unwrap();
        if pivot_row != col {
            for k in 0..w {
                m.swap(col * w + k, pivot_row * w + k);
            }
        }
        let p = m[col * w + col];
        assert!(p != 0.0, "singular matrix in oracle");
        for k in 0..w {
            m[col * w + k] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * w + col];
                if f != 0.0 {
                    for k in 0..w {
                        m[r * w + k] -= f * m[col * w + k];
                    }
                }
            }
        }
    }
    (0..n)
        .flat_map(|i| m[i * w + n..(i + 1) * w].to_vec())
        .collect()
}

/// `vᵀ A v` for a dense row-major `A`.
pub fn quad_dense(a: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| v[i] * (0..n).map(|j| a[i * n + j] * v[j]).sum::<f64>())
        .sum()
}

pub fn normals(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random SPD matrix `G·Gᵀ/n + δI`.
pub fn random_spd(rng: &mut SeededRng, n: usize, delta: f64) -> Vec<f64> {
    let g = normals(rng, n * n);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| g[i * n + k] * g[j * n + k]).sum();
            a[i * n + j] = s / n as f64 + if i == j { delta } else { 0.0 };
        }
    }
    a
}

/// `count` correlated Gaussian samples with random mean and scale.
pub fn random_feature_set(seed: u64, dim: usize, count: usize) -> FeatureSet<f64> {
    let mut rng = seeded_rng(seed);
    let mean: Vec<f64> = normals(&mut rng, dim).iter().map(|x| 3.0 * x).collect();
    let mix = normals(&mut rng, dim * dim);
    let members = (0..count as u64)
        .map(|id| {
            let z = normals(&mut rng, dim);
            let values = (0..dim)
                .map(|i| mean[i] + z[i] + 0.5 * (0..dim).map(|k| mix[i * dim + k] * z[k]).sum::<f64>())
                .collect();
            FeatureVector::new(id, values)
        })
        .collect();
    FeatureSet::new("test", dim, members).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
