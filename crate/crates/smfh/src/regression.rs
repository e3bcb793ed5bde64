//! Closed-form solve for the per-modality projection: graph-regularized
//! ridge regression of the codes onto the features.
//!
//! The system `(X X^T + eta Xhat Lhat Xhat^T + gamma I) W = X Y^T` is d x d
//! with r right-hand sides and is solved by Cholesky factorization plus one
//! step of iterative refinement; the matrix is never inverted explicitly.

use ndarray::{Array1, Array2};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::factorization::CodeMatrix;
use crate::graph::SampleSet;

const MAX_CONDITION: f64 = 1e12;

/// Per-modality projection W (d x r), unconstrained in sign.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    data: Array2<f64>,
}

impl ProjectionMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("projection entries must be finite".into()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn bits(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Builds the symmetric system matrix
/// `X X^T + eta (X S) Lhat (S^T X^T) + gamma I`.
pub fn system_matrix(
    features: &FeatureMatrix,
    sample: &SampleSet,
    laplacian: &Array2<f64>,
    eta: f64,
    gamma: f64,
) -> Result<Array2<f64>> {
    let x = features.data();
    let m = sample.len();
    if laplacian.nrows() != m || laplacian.ncols() != m {
        return Err(Error::DimMismatch {
            context: "projection solve".into(),
            expected: format!("{m}x{m} laplacian"),
            found: format!("{}x{}", laplacian.nrows(), laplacian.ncols()),
        });
    }
    let mut g = x.dot(&x.t());
    if eta != 0.0 {
        let x_sub = features.select_columns(sample);
        let graph = x_sub.dot(laplacian).dot(&x_sub.t());
        g.scaled_add(eta, &graph);
    }
    for i in 0..g.nrows() {
        g[(i, i)] += gamma;
    }
    // The two Gram terms are symmetric by construction; mirror the upper
    // triangle so downstream factorization sees an exactly symmetric matrix.
    let asym = max_asymmetry(&g);
    let scale = g.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())).max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::Invalid(format!(
            "system matrix asymmetry {asym:.3e} exceeds tolerance"
        )));
    }
    for i in 0..g.nrows() {
        for j in (i + 1)..g.ncols() {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

pub(crate) fn max_asymmetry(g: &Array2<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in (i + 1)..g.ncols() {
            worst = worst.max((g[(i, j)] - g[(j, i)]).abs());
        }
    }
    worst
}

/// Solves for the projection of one modality against the relaxed codes.
/// Errors if the system is singular (possible only with `gamma = 0`) or its
/// condition estimate exceeds 1e12.
pub fn solve_projection(
    features: &FeatureMatrix,
    codes: &CodeMatrix,
    sample: &SampleSet,
    laplacian: &Array2<f64>,
    eta: f64,
    gamma: f64,
) -> Result<ProjectionMatrix> {
    solve_projection_raw(features, codes.data(), sample, laplacian, eta, gamma)
}

/// General form of the projection solve for arbitrary real targets (r x N).
/// The trainer fits mean-centered codes here so the sign-threshold encoder
/// sees targets on both sides of zero.
pub fn solve_projection_raw(
    features: &FeatureMatrix,
    targets: &Array2<f64>,
    sample: &SampleSet,
    laplacian: &Array2<f64>,
    eta: f64,
    gamma: f64,
) -> Result<ProjectionMatrix> {
    let x = features.data();
    let y = targets;
    if x.ncols() != y.ncols() {
        return Err(Error::DimMismatch {
            context: "projection solve".into(),
            expected: format!("codes with {} columns", x.ncols()),
            found: format!("{}", y.ncols()),
        });
    }
    let g = system_matrix(features, sample, laplacian, eta, gamma)?;
    let rhs = x.dot(&y.t());

    let chol = Cholesky::factor(&g)?;
    let cond = chol.condition_estimate(&g);
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned { cond });
    }

    let mut w = chol.solve_matrix(&rhs);
    // One refinement pass pushes the residual to near machine precision.
    let rhs_norm = frob(&rhs);
    for _ in 0..2 {
        let resid = &rhs - &g.dot(&w);
        if frob(&resid) <= 1e-10 * rhs_norm.max(1.0) {
            break;
        }
        w += &chol.solve_matrix(&resid);
    }
    let resid = frob(&(&rhs - &g.dot(&w)));
    if resid > 1e-8 * rhs_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::IllConditioned { cond });
    }
    ProjectionMatrix::new(w)
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    fn factor(g: &Array2<f64>) -> Result<Self> {
        let n = g.nrows();
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = g[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::SingularSystem);
            }
            let root = diag.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..n {
                let mut v = g[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / root;
            }
        }
        Ok(Self { l })
    }

    fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut z = b.clone();
        for i in 0..n {
            for k in 0..i {
                let t = z[k];
                z[i] -= self.l[(i, k)] * t;
            }
            z[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = z[k];
                z[i] -= self.l[(k, i)] * t;
            }
            z[i] /= self.l[(i, i)];
        }
        z
    }

    fn solve_matrix(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            let solved = self.solve_vec(&col.to_owned());
            out.column_mut(j).assign(&solved);
        }
        out
    }

    /// Ratio of extreme eigenvalue estimates from fixed-iteration power and
    /// inverse-power iteration. Deterministic.
    fn condition_estimate(&self, g: &Array2<f64>) -> f64 {
        let n = g.nrows();
        if n == 1 {
            return 1.0;
        }
        let mut v = Array1::<f64>::from_shape_fn(n, |i| 1.0 + (i as f64) / (n as f64));
        normalize(&mut v);
        let mut lambda_max = 0.0;
        for _ in 0..40 {
            let mut next = g.dot(&v);
            lambda_max = norm(&next);
            if lambda_max == 0.0 {
                return f64::INFINITY;
            }
            normalize(&mut next);
            v = next;
        }
        let mut u = Array1::<f64>::from_shape_fn(n, |i| 1.0 - (i as f64) / (2.0 * n as f64));
        normalize(&mut u);
        let mut inv_norm = 0.0;
        for _ in 0..40 {
            let mut next = self.solve_vec(&u);
            inv_norm = norm(&next);
            if inv_norm == 0.0 || !inv_norm.is_finite() {
                return f64::INFINITY;
            }
            normalize(&mut next);
            u = next;
        }
        let lambda_min = 1.0 / inv_norm;
        lambda_max / lambda_min
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut Array1<f64>) {
    let n = norm(v);
    if n > 0.0 {
        v.mapv_inplace(|x| x / n);
    }
}
