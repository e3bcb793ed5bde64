//! Label affinity graphs over a sampled subset of the training data.
//!
//! The full N x N label graph is never materialized; each training iteration
//! draws m indices and builds the m x m affinity, degree, and Laplacian
//! matrices for just that subgraph.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// The m sampled training indices defining the per-iteration subgraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    indices: Vec<usize>,
}

impl SampleSet {
    /// `indices` must be distinct and `< n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::Invalid(format!(
                    "sample index {i} out of range for population {n}"
                )));
            }
            if seen[i] {
                return Err(Error::Invalid(format!("duplicate sample index {i}")));
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Draws m distinct indices uniformly without replacement from `0..n`.
/// Deterministic for a given generator state.
pub fn sample_indices<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if m > n {
        return Err(Error::SampleTooLarge { m, n });
    }
    // Partial Fisher-Yates: the first m slots are a uniform sample.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    SampleSet::new(pool, n)
}

/// Affinity, degree, and Laplacian of one sampled label subgraph.
#[derive(Debug, Clone)]
pub struct AffinityBundle {
    affinity: Array2<f64>,
    degree: Array1<f64>,
    laplacian: Array2<f64>,
}

impl AffinityBundle {
    pub fn m(&self) -> usize {
        self.affinity.nrows()
    }

    pub fn affinity(&self) -> &Array2<f64> {
        &self.affinity
    }

    /// Diagonal of the degree matrix (row sums of the affinity).
    pub fn degree(&self) -> &Array1<f64> {
        &self.degree
    }

    pub fn laplacian(&self) -> &Array2<f64> {
        &self.laplacian
    }
}

/// Pairwise label affinity of the sampled columns: entry (i, j) counts the
/// labels shared by samples i and j. Computed in integer arithmetic, so the
/// result is exact.
pub fn label_affinity(labels_sub: &Array2<u8>) -> Array2<f64> {
    let m = labels_sub.ncols();
    let mut a = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let ci = labels_sub.column(i);
        for j in i..m {
            let count: u64 = ci
                .iter()
                .zip(labels_sub.column(j).iter())
                .map(|(&x, &y)| (x & y) as u64)
                .sum();
            a[(i, j)] = count as f64;
            a[(j, i)] = count as f64;
        }
    }
    a
}

/// Builds degree and Laplacian `L = D - A` for a symmetric non-negative
/// affinity matrix.
pub fn laplacian(affinity: Array2<f64>) -> Result<AffinityBundle> {
    let m = affinity.nrows();
    if affinity.ncols() != m {
        return Err(Error::DimMismatch {
            context: "affinity".into(),
            expected: "square matrix".into(),
            found: format!("{}x{}", m, affinity.ncols()),
        });
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if (affinity[(i, j)] - affinity[(j, i)]).abs() > 1e-12 {
                return Err(Error::AsymmetricAffinity { i, j });
            }
        }
    }
    let degree: Array1<f64> = affinity.rows().into_iter().map(|r| r.sum()).collect();
    let mut lap = -affinity.clone();
    for i in 0..m {
        lap[(i, i)] += degree[i];
    }
    Ok(AffinityBundle {
        affinity,
        degree,
        laplacian: lap,
    })
}

/// The graph quadratic form `Tr(C L C^T)` for codes `C` (r x m) over the
/// sampled Laplacian; equals half the affinity-weighted sum of squared
/// column differences.
pub fn graph_quadratic(codes_sub: &Array2<f64>, lap: &Array2<f64>) -> Result<f64> {
    let m = lap.nrows();
    if lap.ncols() != m || codes_sub.ncols() != m {
        return Err(Error::DimMismatch {
            context: "graph quadratic".into(),
            expected: format!("codes r x {m}, laplacian {m}x{m}"),
            found: format!(
                "codes {}x{}, laplacian {}x{}",
                codes_sub.nrows(),
                codes_sub.ncols(),
                lap.nrows(),
                lap.ncols()
            ),
        });
    }
    let cl = codes_sub.dot(lap);
    Ok((&cl * codes_sub).sum())
}
