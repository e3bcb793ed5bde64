//! Alternating optimization with per-iteration subgraph sampling.
//!
//! Each iteration updates every modality basis, draws a fresh m-sample of the
//! label graph, updates and renormalizes the code matrix, and re-solves every
//! projection against the same sample. The objective is evaluated on that
//! iteration's subgraph, so the full label graph is never materialized.
//!
//! All randomness flows through one ChaCha8 generator seeded from the run
//! seed (`seed_from_u64`), making training bit-reproducible across runs and
//! platforms. Draw order: per-modality bases, then per-modality projections,
//! then the code matrix, all row-major; the training loop then owns the
//! generator for sampling.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::factorization::{
    normalize_codes, objective, update_basis, update_codes, BasisMatrix, CodeMatrix,
    Hyperparameters, ModalityView,
};
use crate::graph::{label_affinity, laplacian, sample_indices};
use crate::hashing::{binarize, BinaryCodes};
use crate::regression::{solve_projection_raw, ProjectionMatrix};

pub const SMFM_MAGIC: &[u8; 4] = b"SMFM";
pub const SMFM_VERSION: u32 = 1;

/// Learned state for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityModel {
    pub basis: BasisMatrix,
    pub projection: ProjectionMatrix,
    pub weight: f64,
}

/// Output of training: per-modality models, the training codes (relaxed and
/// binarized), the hyperparameters used, and the per-iteration objective
/// history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub modalities: Vec<ModalityModel>,
    /// Relaxed training codes. Present after `train`; not stored in the model
    /// file, so `None` after `load`.
    pub relaxed_codes: Option<CodeMatrix>,
    /// Binarized training codes.
    pub binary_codes: BinaryCodes,
    pub hyper: Hyperparameters,
    /// Sampled objective after each iteration; empty when `max_iters = 0`.
    pub history: Vec<f64>,
}

impl TrainedModel {
    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn bits(&self) -> usize {
        self.binary_codes.bits()
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    // Strictly positive entries in (0, 1]: zeros are absorbing under
    // multiplicative updates, so the start must avoid them.
    Array2::from_shape_fn((rows, cols), |_| 1.0 - rng.random::<f64>())
}

/// Runs the full alternating optimization. Any number of modalities (two or
/// more) goes through the same code path. Deterministic for a given seed.
pub fn train(dataset: &Dataset, hyper: &Hyperparameters) -> Result<TrainedModel> {
    hyper.validate()?;
    let n = dataset.n_samples();
    let n_t = dataset.n_modalities();
    if hyper.lambdas.len() != n_t {
        return Err(Error::InvalidHyper {
            name: "lambda",
            msg: format!(
                "expected {n_t} modality weights, got {}",
                hyper.lambdas.len()
            ),
        });
    }
    if hyper.sample_size > n {
        return Err(Error::SampleTooLarge {
            m: hyper.sample_size,
            n,
        });
    }
    let r = hyper.bits;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut bases: Vec<BasisMatrix> = dataset
        .modalities()
        .iter()
        .map(|fm| BasisMatrix::new(random_matrix(fm.dim(), r, &mut rng)).expect("positive init"))
        .collect();
    let mut projections: Vec<ProjectionMatrix> = dataset
        .modalities()
        .iter()
        .map(|fm| {
            ProjectionMatrix::new(random_matrix(fm.dim(), r, &mut rng)).expect("positive init")
        })
        .collect();
    let mut codes = CodeMatrix::new(random_matrix(r, n, &mut rng)).expect("positive init");

    let mut history = Vec::new();
    for iter in 1..=hyper.max_iters {
        for (t, fm) in dataset.modalities().iter().enumerate() {
            bases[t] = update_basis(fm, &codes, &bases[t], hyper.eps)?;
        }

        let sample = sample_indices(n, hyper.sample_size, &mut rng)?;
        let bundle = laplacian(label_affinity(&dataset.labels().select_columns(&sample)))?;

        {
            let views = make_views(dataset, &bases, &projections, &hyper.lambdas);
            codes = update_codes(&views, &codes, &sample, &bundle, hyper)?;
        }
        codes = normalize_codes(codes);

        // Regress mean-centered codes: the relaxed codes live in [0, 1], so
        // fitting them directly would give sign-constant projections and the
        // >= 0 encoder would emit the same bit everywhere. Per-bit mean
        // centering keeps both code levels away from the sign boundary even
        // when a bit's mass is unbalanced across items.
        let mut targets = codes.data().clone();
        for mut row in targets.rows_mut() {
            let mean = row.sum() / row.len() as f64;
            row.mapv_inplace(|v| v - mean);
        }
        for (t, fm) in dataset.modalities().iter().enumerate() {
            projections[t] = solve_projection_raw(
                fm,
                &targets,
                &sample,
                bundle.laplacian(),
                hyper.eta,
                hyper.gamma,
            )?;
        }

        let views = make_views(dataset, &bases, &projections, &hyper.lambdas);
        let obj = objective(&views, &codes, &sample, &bundle, hyper)?;
        if !obj.is_finite() {
            return Err(Error::Diverged { iter });
        }
        history.push(obj);

        if converged(&history, hyper.tol) {
            break;
        }
    }

    let binary_codes = binarize(&codes);
    let modalities = bases
        .into_iter()
        .zip(projections)
        .zip(hyper.lambdas.iter())
        .map(|((basis, projection), &weight)| ModalityModel {
            basis,
            projection,
            weight,
        })
        .collect();
    Ok(TrainedModel {
        modalities,
        relaxed_codes: Some(codes),
        binary_codes,
        hyper: hyper.clone(),
        history,
    })
}

fn make_views<'a>(
    dataset: &'a Dataset,
    bases: &'a [BasisMatrix],
    projections: &'a [ProjectionMatrix],
    lambdas: &[f64],
) -> Vec<ModalityView<'a>> {
    dataset
        .modalities()
        .iter()
        .zip(bases)
        .zip(projections)
        .zip(lambdas)
        .map(|(((features, basis), projection), &weight)| ModalityView {
            features,
            basis,
            projection,
            weight,
        })
        .collect()
}

/// The sampled objective is noisy across iterations, so the stop test
/// compares the latest value against the mean of the three before it.
fn converged(history: &[f64], tol: f64) -> bool {
    if history.len() < 4 {
        return false;
    }
    let last = history[history.len() - 1];
    let prev = &history[history.len() - 4..history.len() - 1];
    let mean = prev.iter().sum::<f64>() / prev.len() as f64;
    (last - mean).abs() / mean.max(1e-12) < tol
}

/// Writes the model file: magic `SMFM`, version, n_t, r, then per modality
/// `d_t` and the basis, projection, and weight, then the hyperparameter
/// block, then the binarized training codes in the codes container format.
/// All integers and floats little-endian; matrices row-major f64.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SMFM_MAGIC);
    out.extend_from_slice(&SMFM_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.modalities.len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.bits() as u32).to_le_bytes());
    for m in &model.modalities {
        out.extend_from_slice(&(m.basis.dim() as u32).to_le_bytes());
        write_matrix(&mut out, m.basis.data());
        write_matrix(&mut out, m.projection.data());
        out.extend_from_slice(&m.weight.to_le_bytes());
    }
    let h = &model.hyper;
    for v in [h.alpha, h.mu, h.eta, h.beta, h.gamma, h.tol, h.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [h.sample_size as u64, h.max_iters as u64, h.seed] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    model.binary_codes.write_into(&mut out);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a model file back. The relaxed training codes and objective history
/// are not part of the format, so the result carries `None` / empty there.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != SMFM_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SMFM",
        });
    }
    let version = read_u32(&mut file, path)?;
    if version != SMFM_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n_t = read_u32(&mut file, path)? as usize;
    let r = read_u32(&mut file, path)? as usize;
    let mut modalities = Vec::with_capacity(n_t);
    let mut lambdas = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        let d = read_u32(&mut file, path)? as usize;
        let basis = BasisMatrix::new(read_matrix(&mut file, path, d, r)?)?;
        let projection = ProjectionMatrix::new(read_matrix(&mut file, path, d, r)?)?;
        let weight = read_f64(&mut file, path)?;
        lambdas.push(weight);
        modalities.push(ModalityModel {
            basis,
            projection,
            weight,
        });
    }
    let alpha = read_f64(&mut file, path)?;
    let mu = read_f64(&mut file, path)?;
    let eta = read_f64(&mut file, path)?;
    let beta = read_f64(&mut file, path)?;
    let gamma = read_f64(&mut file, path)?;
    let tol = read_f64(&mut file, path)?;
    let eps = read_f64(&mut file, path)?;
    let sample_size = read_u64(&mut file, path)? as usize;
    let max_iters = read_u64(&mut file, path)? as usize;
    let seed = read_u64(&mut file, path)?;
    let binary_codes = BinaryCodes::read_from(&mut file, path)?;
    if binary_codes.bits() != r {
        return Err(Error::DimMismatch {
            context: path.display().to_string(),
            expected: format!("{r}-bit train codes"),
            found: format!("{} bits", binary_codes.bits()),
        });
    }
    Ok(TrainedModel {
        modalities,
        relaxed_codes: None,
        binary_codes,
        hyper: Hyperparameters {
            lambdas,
            alpha,
            mu,
            eta,
            beta,
            gamma,
            sample_size,
            bits: r,
            max_iters,
            tol,
            seed,
            eps,
        },
        history: Vec::new(),
    })
}

fn write_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    for row in m.rows() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_matrix(file: &mut fs::File, path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let flat: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("sized above"))
}

fn read_u32(file: &mut fs::File, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    file.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(file: &mut fs::File, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    file.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(file: &mut fs::File, path: &Path) -> Result<f64> {
    Ok(f64::from_bits(read_u64(file, path)?))
}
