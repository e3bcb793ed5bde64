//! Multiplicative update rules for the collective factorization, code
//! normalization, and the sampled training objective.
//!
//! The code matrix Y is relaxed from binary to `[0, 1]`; every update keeps it
//! non-negative, and `normalize_codes` rescales rows back into `[0, 1]` after
//! each iteration. All denominators carry a small additive guard `eps` so
//! exact fixed points survive to machine precision.

use ndarray::Array2;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{graph_quadratic, AffinityBundle, SampleSet};
use crate::regression::ProjectionMatrix;

/// Relaxed code matrix: r rows (bits) by N columns (samples), entries >= 0,
/// in `[0, 1]` after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    data: Array2<f64>,
}

impl CodeMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Invalid("code matrix needs at least one bit".into()));
        }
        if data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Invalid(
                "code matrix entries must be non-negative and finite".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn bits(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Column subsample for a sample set.
    pub fn select_columns(&self, sample: &SampleSet) -> Array2<f64> {
        self.data.select(ndarray::Axis(1), sample.indices())
    }
}

/// Non-negative basis matrix for one modality: d rows by r columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    data: Array2<f64>,
}

impl BasisMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Invalid(
                "basis entries must be non-negative and finite".into(),
            ));
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

/// Training hyperparameters. `lambdas` weight the per-modality factorization
/// residuals and must sum to 1; `alpha` weights the label-graph term, `mu`
/// the hash-function fit, `eta` the projection graph regularizer, `beta` the
/// near-orthogonality penalty, and `gamma` the ridge term of the projection
/// solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    pub eta: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Subgraph sample size m.
    pub sample_size: usize,
    /// Code length r.
    pub bits: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Additive denominator guard.
    pub eps: f64,
}

impl Hyperparameters {
    /// Defaults for a dataset with `n_modalities` modalities and `n_samples`
    /// training samples: equal modality weights, alpha = 2, mu = 25,
    /// eta = beta = gamma = 0.001, m = min(N, 1000), r = 64.
    pub fn defaults(n_modalities: usize, n_samples: usize) -> Self {
        Self {
            lambdas: vec![1.0 / n_modalities as f64; n_modalities],
            alpha: 2.0,
            mu: 25.0,
            eta: 0.001,
            beta: 0.001,
            gamma: 0.001,
            sample_size: n_samples.min(1000),
            bits: 64,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
            eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::InvalidHyper {
                name: "lambda",
                msg: "at least one modality weight required".into(),
            });
        }
        if self.lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::InvalidHyper {
                name: "lambda",
                msg: "weights must be non-negative".into(),
            });
        }
        let sum: f64 = self.lambdas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::WeightSum { sum });
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("eta", self.eta),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidHyper {
                    name,
                    msg: format!("must be a non-negative number, got {v}"),
                });
            }
        }
        if self.bits == 0 {
            return Err(Error::InvalidHyper {
                name: "bits",
                msg: "code length must be at least 1".into(),
            });
        }
        if self.sample_size == 0 {
            return Err(Error::InvalidHyper {
                name: "sample-size",
                msg: "sample size must be at least 1".into(),
            });
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidHyper {
                name: "tol",
                msg: format!("must be >= 0, got {}", self.tol),
            });
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidHyper {
                name: "eps",
                msg: format!("must be > 0, got {}", self.eps),
            });
        }
        Ok(())
    }
}

/// Borrowed per-modality state consumed by the code update and objective.
#[derive(Clone, Copy)]
pub struct ModalityView<'a> {
    pub features: &'a FeatureMatrix,
    pub basis: &'a BasisMatrix,
    pub projection: &'a ProjectionMatrix,
    pub weight: f64,
}

/// One multiplicative basis update:
/// `u_ij <- u_ij * (X Y^T)_ij / ((U Y Y^T)_ij + eps)`.
/// Non-negative inputs map to non-negative outputs, and an exact
/// factorization is a fixed point up to the eps guard.
pub fn update_basis(
    features: &FeatureMatrix,
    codes: &CodeMatrix,
    basis: &BasisMatrix,
    eps: f64,
) -> Result<BasisMatrix> {
    let x = features.data();
    let y = codes.data();
    let u = basis.data();
    if x.ncols() != y.ncols() || u.nrows() != x.nrows() || u.ncols() != y.nrows() {
        return Err(Error::DimMismatch {
            context: "basis update".into(),
            expected: format!("X {}x{}, U {}x{}", x.nrows(), y.ncols(), x.nrows(), y.nrows()),
            found: format!(
                "X {}x{}, U {}x{}, Y {}x{}",
                x.nrows(),
                x.ncols(),
                u.nrows(),
                u.ncols(),
                y.nrows(),
                y.ncols()
            ),
        });
    }
    let numer = x.dot(&y.t());
    // U (Y Y^T): r x r Gram keeps the cost linear in N.
    let gram = y.dot(&y.t());
    let denom = u.dot(&gram);
    let mut out = u.clone();
    ndarray::Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|v, &n, &d| *v *= n / (d + eps));
    BasisMatrix::new(out)
}

/// One multiplicative code update over all modalities. The graph terms touch
/// only the sampled columns; the numerator is clamped at zero before the
/// ratio because the projection fit term can go negative.
pub fn update_codes(
    views: &[ModalityView<'_>],
    codes: &CodeMatrix,
    sample: &SampleSet,
    bundle: &AffinityBundle,
    hyper: &Hyperparameters,
) -> Result<CodeMatrix> {
    if views.is_empty() {
        return Err(Error::TooFewModalities { found: 0 });
    }
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if bundle.m() != sample.len() {
        return Err(Error::DimMismatch {
            context: "code update".into(),
            expected: format!("bundle of size {}", sample.len()),
            found: format!("{}", bundle.m()),
        });
    }
    let y = codes.data();
    let (r, n) = (y.nrows(), y.ncols());
    let n_t = views.len();

    let mut numer = Array2::<f64>::zeros((r, n));
    let mut denom = Array2::<f64>::zeros((r, n));
    for v in views {
        let x = v.features.data();
        let u = v.basis.data();
        let w = v.projection.data();
        if x.ncols() != n || u.nrows() != x.nrows() || u.ncols() != r || w.shape() != u.shape() {
            return Err(Error::DimMismatch {
                context: "code update".into(),
                expected: format!("X d x {n}, U d x {r}, W d x {r}"),
                found: format!(
                    "X {}x{}, U {}x{}, W {}x{}",
                    x.nrows(),
                    x.ncols(),
                    u.nrows(),
                    u.ncols(),
                    w.nrows(),
                    w.ncols()
                ),
            });
        }
        numer.scaled_add(v.weight, &u.t().dot(x));
        numer.scaled_add(hyper.mu, &w.t().dot(x));
        denom.scaled_add(v.weight, &u.t().dot(u).dot(y));
    }
    numer.scaled_add(4.0 * hyper.beta, y);
    denom.scaled_add(hyper.mu * n_t as f64, y);
    // Y (Y^T Y) == (Y Y^T) Y; the r x r grouping is linear in N.
    let gram = y.dot(&y.t());
    denom.scaled_add(4.0 * hyper.beta, &gram.dot(y));

    // Graph terms: scatter columns of (Yhat Ahat) and (Yhat Dhat) back into
    // the sampled positions only.
    let y_sub = codes.select_columns(sample);
    let ya = y_sub.dot(bundle.affinity());
    for (slot, &col) in sample.indices().iter().enumerate() {
        let deg = bundle.degree()[slot];
        for bit in 0..r {
            numer[(bit, col)] += hyper.alpha * ya[(bit, slot)];
            denom[(bit, col)] += hyper.alpha * deg * y_sub[(bit, slot)];
        }
    }

    let mut out = y.clone();
    ndarray::Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|v, &nm, &d| *v *= nm.max(0.0) / (d + hyper.eps));
    CodeMatrix::new(out)
}

/// Rescales each row by its maximum so entries lie in `[0, 1]`; all-zero rows
/// are left untouched. Idempotent and order-preserving within each row.
pub fn normalize_codes(codes: CodeMatrix) -> CodeMatrix {
    let mut data = codes.data;
    for mut row in data.rows_mut() {
        let max = row.iter().cloned().fold(0.0_f64, f64::max);
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
    CodeMatrix { data }
}

/// The sampled training objective, with hatted matrices restricted to the
/// sampled columns:
///
/// ```text
/// sum_t lambda_t ||X^t - U^t Y||_F^2
///   + alpha Tr(Yhat Lhat Yhat^T)
///   + mu sum_t ||Y - W^t^T X^t||_F^2
///   + eta sum_t Tr((W^t^T Xhat^t) Lhat (W^t^T Xhat^t)^T)
///   + beta ||Y Y^T - I||_F^2
/// ```
pub fn objective(
    views: &[ModalityView<'_>],
    codes: &CodeMatrix,
    sample: &SampleSet,
    bundle: &AffinityBundle,
    hyper: &Hyperparameters,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::TooFewModalities { found: 0 });
    }
    let y = codes.data();
    let mut total = 0.0;
    for v in views {
        let x = v.features.data();
        let u = v.basis.data();
        let w = v.projection.data();
        if x.ncols() != y.ncols() || u.ncols() != y.nrows() || u.nrows() != x.nrows() {
            return Err(Error::DimMismatch {
                context: "objective".into(),
                expected: "feature/basis/code shape agreement".into(),
                found: format!(
                    "X {}x{}, U {}x{}, Y {}x{}",
                    x.nrows(),
                    x.ncols(),
                    u.nrows(),
                    u.ncols(),
                    y.nrows(),
                    y.ncols()
                ),
            });
        }
        let resid = x - &u.dot(y);
        total += v.weight * resid.iter().map(|&e| e * e).sum::<f64>();

        let fit = y - &w.t().dot(x);
        total += hyper.mu * fit.iter().map(|&e| e * e).sum::<f64>();

        let x_sub = v.features.select_columns(sample);
        let proj_sub = w.t().dot(&x_sub);
        total += hyper.eta * graph_quadratic(&proj_sub, bundle.laplacian())?;
    }
    let y_sub = codes.select_columns(sample);
    total += hyper.alpha * graph_quadratic(&y_sub, bundle.laplacian())?;

    let mut gram = y.dot(&y.t());
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    total += hyper.beta * gram.iter().map(|&e| e * e).sum::<f64>();
    Ok(total)
}
