//! Independent oracles shared by the integration and acceptance suites.
//! Everything here deliberately avoids the library's computation paths:
//! explicit loops, Gaussian elimination instead of Cholesky, Jacobi sweeps
//! instead of power iteration.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;

use smfh::data::FeatureMatrix;
use smfh::factorization::{BasisMatrix, CodeMatrix, Hyperparameters, ModalityView};
use smfh::graph::SampleSet;
use smfh::hashing::BinaryCodes;
use smfh::regression::ProjectionMatrix;

/// `1/2 * sum_ij A_ij ||y_i - y_j||^2`, the pairwise form of the graph
/// quadratic.
pub fn pairwise_graph_sum(codes: &Array2<f64>, affinity: &Array2<f64>) -> f64 {
    let m = affinity.nrows();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let mut sq = 0.0;
            for b in 0..codes.nrows() {
                let d = codes[(b, i)] - codes[(b, j)];
                sq += d * d;
            }
            total += affinity[(i, j)] * sq;
        }
    }
    0.5 * total
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

/// Dense solve of `A X = B` by Gaussian elimination with partial pivoting.
pub fn gaussian_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let rhs = b.ncols();
    let mut aug = Array2::<f64>::zeros((n, n + rhs));
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        for j in 0..rhs {
            aug[(i, n + j)] = b[(i, j)];
        }
    }
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if aug[(row, col)].abs() > aug[(pivot, col)].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            for j in 0..(n + rhs) {
                let tmp = aug[(col, j)];
                aug[(col, j)] = aug[(pivot, j)];
                aug[(pivot, j)] = tmp;
            }
        }
        let diag = aug[(col, col)];
        assert!(diag.abs() > 1e-300, "oracle hit a singular system");
        for row in (col + 1)..n {
            let factor = aug[(row, col)] / diag;
            for j in col..(n + rhs) {
                let v = aug[(col, j)];
                aug[(row, j)] -= factor * v;
            }
        }
    }
    let mut x = Array2::<f64>::zeros((n, rhs));
    for j in 0..rhs {
        for row in (0..n).rev() {
            let mut v = aug[(row, n + j)];
            for k in (row + 1)..n {
                v -= aug[(row, k)] * x[(k, j)];
            }
            x[(row, j)] = v / aug[(row, row)];
        }
    }
    x
}

pub fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// `||X - U Y||_F^2` by explicit loops.
pub fn naive_reconstruction_error(x: &Array2<f64>, u: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut approx = 0.0;
            for k in 0..u.ncols() {
                approx += u[(i, k)] * y[(k, j)];
            }
            let d = x[(i, j)] - approx;
            total += d * d;
        }
    }
    total
}

/// Term-by-term loop re-implementation of the sampled training objective.
pub fn naive_objective(
    views: &[ModalityView<'_>],
    codes: &CodeMatrix,
    sample: &SampleSet,
    affinity: &Array2<f64>,
    hyper: &Hyperparameters,
) -> f64 {
    let y = codes.data();
    let (r, n) = (y.nrows(), y.ncols());
    let idx = sample.indices();
    let m = idx.len();
    let mut total = 0.0;
    for v in views {
        let x = v.features.data();
        let u = v.basis.data();
        let w = v.projection.data();
        total += v.weight * naive_reconstruction_error(x, u, y);
        // mu * ||Y - W^T X||^2
        let mut fit = 0.0;
        for b in 0..r {
            for j in 0..n {
                let mut proj = 0.0;
                for d in 0..x.nrows() {
                    proj += w[(d, b)] * x[(d, j)];
                }
                let diff = y[(b, j)] - proj;
                fit += diff * diff;
            }
        }
        total += hyper.mu * fit;
        // eta * pairwise graph penalty on the sampled projections
        let mut proj_sub = Array2::<f64>::zeros((r, m));
        for (slot, &col) in idx.iter().enumerate() {
            for b in 0..r {
                let mut p = 0.0;
                for d in 0..x.nrows() {
                    p += w[(d, b)] * x[(d, col)];
                }
                proj_sub[(b, slot)] = p;
            }
        }
        total += hyper.eta * pairwise_graph_sum(&proj_sub, affinity);
    }
    let mut y_sub = Array2::<f64>::zeros((r, m));
    for (slot, &col) in idx.iter().enumerate() {
        for b in 0..r {
            y_sub[(b, slot)] = y[(b, col)];
        }
    }
    total += hyper.alpha * pairwise_graph_sum(&y_sub, affinity);
    // beta * ||Y Y^T - I||^2
    let mut orth = 0.0;
    for a in 0..r {
        for b in 0..r {
            let mut g = 0.0;
            for j in 0..n {
                g += y[(a, j)] * y[(b, j)];
            }
            if a == b {
                g -= 1.0;
            }
            orth += g * g;
        }
    }
    total + hyper.beta * orth
}

pub fn naive_precision(rel: &[bool], k: usize) -> f64 {
    let mut hits = 0usize;
    for &r in &rel[..k] {
        if r {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

pub fn naive_recall(rel: &[bool], total_relevant: usize, k: usize) -> f64 {
    let mut hits = 0usize;
    for &r in &rel[..k] {
        if r {
            hits += 1;
        }
    }
    hits as f64 / total_relevant as f64
}

/// AP by recounting the precision prefix at every relevant position.
pub fn naive_ap(rel: &[bool], cutoff: usize) -> f64 {
    let total: usize = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let top = cutoff.min(rel.len());
    let mut sum = 0.0;
    for k in 1..=top {
        if rel[k - 1] {
            sum += naive_precision(rel, k);
        }
    }
    sum / total.min(cutoff) as f64
}

pub fn naive_mean_ap(queries: &[Vec<bool>], cutoff: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for q in queries {
        if q.iter().any(|&r| r) {
            sum += naive_ap(q, cutoff);
            count += 1;
        }
    }
    sum / count as f64
}

/// Bit-by-bit Hamming distance through the public bit accessor.
pub fn naive_hamming(a: &BinaryCodes, i: usize, b: &BinaryCodes, j: usize) -> u32 {
    assert_eq!(a.bits(), b.bits());
    (0..a.bits())
        .filter(|&bit| a.bit(i, bit) != b.bit(j, bit))
        .count() as u32
}

/// Full ranking by (distance, index) using the naive distance.
pub fn naive_rank(query: &BinaryCodes, qi: usize, db: &BinaryCodes) -> Vec<(usize, u32)> {
    let mut scored: Vec<(u32, usize)> = (0..db.n_items())
        .map(|i| (naive_hamming(query, qi, db, i), i))
        .collect();
    scored.sort();
    scored.into_iter().map(|(d, i)| (i, d)).collect()
}

pub fn random_nonneg<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

pub fn random_positive<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| 1.0 - rng.random::<f64>())
}

pub fn random_signed<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() - 0.5)
}

/// One-hot label matrix with classes assigned round-robin.
pub fn round_robin_labels(n_classes: usize, n: usize) -> Array2<u8> {
    let mut labels = Array2::<u8>::zeros((n_classes, n));
    for j in 0..n {
        labels[(j % n_classes, j)] = 1;
    }
    labels
}

/// The small mixed-sign instance used by the code-update descent checks:
/// N=20, d1=6, d2=5, r=4, full 20-sample graph, alpha=1, mu=0.1, beta=0.01.
pub struct DescentInstance {
    pub features: Vec<FeatureMatrix>,
    pub bases: Vec<BasisMatrix>,
    pub projections: Vec<ProjectionMatrix>,
    pub codes: CodeMatrix,
    pub sample: SampleSet,
    pub affinity: Array2<f64>,
    pub hyper: Hyperparameters,
}

impl DescentInstance {
    pub fn views(&self) -> Vec<ModalityView<'_>> {
        self.features
            .iter()
            .zip(&self.bases)
            .zip(&self.projections)
            .zip(&self.hyper.lambdas)
            .map(|(((features, basis), projection), &weight)| ModalityView {
                features,
                basis,
                projection,
                weight,
            })
            .collect()
    }
}

pub fn descent_instance<R: Rng>(rng: &mut R) -> DescentInstance {
    let n = 20;
    let dims = [6usize, 5];
    let features: Vec<FeatureMatrix> = dims
        .iter()
        .map(|&d| FeatureMatrix::new(random_nonneg(d, n, rng)).unwrap())
        .collect();
    let bases: Vec<BasisMatrix> = dims
        .iter()
        .map(|&d| BasisMatrix::new(random_positive(d, 4, rng)).unwrap())
        .collect();
    let projections: Vec<ProjectionMatrix> = dims
        .iter()
        .map(|&d| ProjectionMatrix::new(random_signed(d, 4, rng)).unwrap())
        .collect();
    let codes = CodeMatrix::new(random_positive(4, n, rng)).unwrap();
    let sample = SampleSet::new((0..n).collect(), n).unwrap();
    let affinity = smfh::graph::label_affinity(&round_robin_labels(4, n));
    let hyper = Hyperparameters {
        lambdas: vec![0.5, 0.5],
        alpha: 1.0,
        mu: 0.1,
        eta: 0.0,
        beta: 0.01,
        gamma: 0.001,
        sample_size: n,
        bits: 4,
        max_iters: 50,
        tol: 1e-4,
        seed: 0,
        eps: 1e-12,
    };
    DescentInstance {
        features,
        bases,
        projections,
        codes,
        sample,
        affinity,
        hyper,
    }
}
