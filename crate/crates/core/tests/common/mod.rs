//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use sft_core::{FeatureMatrix, Matrix, Partition, PortableRng};

pub fn random_features(rng: &mut PortableRng, n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

/// Labels covering every one of `k` classes, shuffled.
pub fn random_partition(rng: &mut PortableRng, n: usize, k: usize) -> Partition {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.below(k) }).collect();
    rng.shuffle(&mut labels);
    Partition::new(labels).unwrap()
}

pub fn random_permutation(rng: &mut PortableRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

/// Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut PortableRng, d: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, j)] = c[i];
        }
    }
    q
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Row softmax of `cos/σ`, one row at a time.
pub fn softmax_transition(x: &FeatureMatrix, sigma: f64) -> Vec<Vec<f64>> {
    let n = x.n();
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..n).map(|j| cosine(x.row(i), x.row(j)) / sigma).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Precision at every relevant prefix, counted from scratch each time.
pub fn brute_force_ap(relevant: &[bool]) -> f64 {
    let total = relevant.iter().filter(|&&r| r).count();
    let mut sum = 0.0;
    for k in 0..relevant.len() {
        if relevant[k] {
            let hits = relevant[..=k].iter().filter(|&&r| r).count();
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

/// Head order after transforming the query together with `head`: indices
/// into `head`, best first.
pub fn refine_oracle(query: &[f64], head: &[&[f64]], sigma: f64) -> Vec<usize> {
    let mut nodes: Vec<Vec<f64>> = vec![query.to_vec()];
    nodes.extend(head.iter().map(|r| r.to_vec()));
    let n = nodes.len();
    let w: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (cosine(&nodes[i], &nodes[j]) / sigma).exp()).collect())
        .collect();
    let moved: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let deg: f64 = w[i].iter().sum();
            (0..nodes[0].len())
                .map(|c| (0..n).map(|j| w[i][j] / deg * nodes[j][c]).sum())
                .collect()
        })
        .collect();
    let mut order: Vec<(f64, usize)> = (1..n).map(|k| (cosine(&moved[0], &moved[k]), k - 1)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    order.into_iter().map(|o| o.1).collect()
}

/// Query `[1, 0, 0]` against two outliers on either side of it in one plane,
/// a neighbour off that plane in third place, and two far items.
pub fn adversarial_instance() -> ([f64; 3], FeatureMatrix) {
    let (a, b, c) = (0.5f64, 0.55f64, 0.6f64);
    let gallery = FeatureMatrix::from_rows(&[
        [a.cos(), a.sin(), 0.0],
        [b.cos(), -b.sin(), 0.0],
        [c.cos(), 0.0, c.sin()],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ])
    .unwrap();
    ([1.0, 0.0, 0.0], gallery)
}
