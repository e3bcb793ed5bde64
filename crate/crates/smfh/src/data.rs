//! Dataset ingestion, validation, synthesis, and the on-disk dataset format.
//!
//! A dataset is a set of per-modality feature matrices (`d_t x N`, one column
//! per sample) plus a binary label matrix (`d_l x N`). Column `i` of every
//! matrix refers to the same sample. A JSON manifest ties the files together;
//! matrices are stored either as CSV (one matrix row per line) or in the
//! binary `.smfd` format (magic `SMFD`, version, rows, cols, row-major f64
//! little-endian).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SampleSet;

pub const SMFD_MAGIC: &[u8; 4] = b"SMFD";
pub const SMFD_VERSION: u32 = 1;

/// One modality's features: `dim` rows by `n_samples` columns, all entries
/// non-negative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Self::with_source(data, "<memory>")
    }

    /// Validates entries, reporting violations against `source` (a file name
    /// when loading from disk).
    pub fn with_source(data: Array2<f64>, source: &str) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Invalid(format!("{source}: feature matrix has no rows")));
        }
        for ((row, col), &v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    file: source.to_string(),
                    row,
                    col,
                });
            }
            if v < 0.0 {
                return Err(Error::NegativeFeature {
                    file: source.to_string(),
                    row,
                    col,
                    value: v,
                });
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Column subsample `X S` for a sample set.
    pub fn select_columns(&self, sample: &SampleSet) -> Array2<f64> {
        self.data.select(ndarray::Axis(1), sample.indices())
    }

    /// Rescales every column to unit l2 norm; zero columns stay zero.
    pub fn normalize_columns(&mut self) {
        for mut col in self.data.columns_mut() {
            let norm = col.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
    }
}

/// Binary label matrix: `vocab` rows by `n_samples` columns, entries in
/// {0, 1}, every column labeled with at least one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: Array2<u8>,
}

impl LabelMatrix {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Invalid("label matrix has no rows".into()));
        }
        for ((row, col), &v) in data.indexed_iter() {
            if v > 1 {
                return Err(Error::NonBinaryLabel {
                    file: "<memory>".into(),
                    row,
                    col,
                    value: v as f64,
                });
            }
        }
        for col in 0..data.ncols() {
            if data.column(col).iter().all(|&v| v == 0) {
                return Err(Error::UnlabeledSample { index: col });
            }
        }
        Ok(Self { data })
    }

    /// Converts a float matrix whose entries must be exactly 0.0 or 1.0.
    pub fn from_float(data: &Array2<f64>, source: &str) -> Result<Self> {
        let mut out = Array2::<u8>::zeros(data.raw_dim());
        for ((row, col), &v) in data.indexed_iter() {
            if v == 0.0 {
                out[(row, col)] = 0;
            } else if v == 1.0 {
                out[(row, col)] = 1;
            } else {
                return Err(Error::NonBinaryLabel {
                    file: source.to_string(),
                    row,
                    col,
                    value: v,
                });
            }
        }
        for col in 0..out.ncols() {
            if out.column(col).iter().all(|&v| v == 0) {
                return Err(Error::UnlabeledSample { index: col });
            }
        }
        Ok(Self { data: out })
    }

    pub fn vocab_size(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn column(&self, i: usize) -> ArrayView1<'_, u8> {
        self.data.column(i)
    }

    /// Label submatrix over the sampled columns.
    pub fn select_columns(&self, sample: &SampleSet) -> Array2<u8> {
        self.data.select(ndarray::Axis(1), sample.indices())
    }

    /// Number of labels shared by column `i` of `self` and column `j` of
    /// `other` (the label inner product).
    pub fn shared_labels(&self, i: usize, other: &LabelMatrix, j: usize) -> u32 {
        self.data
            .column(i)
            .iter()
            .zip(other.data.column(j).iter())
            .map(|(&a, &b)| (a & b) as u32)
            .sum()
    }

    pub fn to_float(&self) -> Array2<f64> {
        self.data.mapv(|v| v as f64)
    }
}

/// Multi-modal dataset: at least two feature matrices over a shared sample
/// axis, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    modalities: Vec<FeatureMatrix>,
    labels: LabelMatrix,
    n_samples: usize,
}

impl Dataset {
    pub fn new(modalities: Vec<FeatureMatrix>, labels: LabelMatrix) -> Result<Self> {
        if modalities.len() < 2 {
            return Err(Error::TooFewModalities {
                found: modalities.len(),
            });
        }
        let n = labels.n_samples();
        for (t, fm) in modalities.iter().enumerate() {
            if fm.n_samples() != n {
                return Err(Error::DimMismatch {
                    context: format!("modality {t}"),
                    expected: format!("{n} columns"),
                    found: format!("{} columns", fm.n_samples()),
                });
            }
        }
        Ok(Self {
            modalities,
            labels,
            n_samples: n,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn modality(&self, t: usize) -> &FeatureMatrix {
        &self.modalities[t]
    }

    pub fn modalities(&self) -> &[FeatureMatrix] {
        &self.modalities
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    /// Unit-l2 normalization of every feature column in every modality.
    /// Off by default; the factorization takes features as given.
    pub fn normalize_features(&mut self) {
        for fm in &mut self.modalities {
            fm.normalize_columns();
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    pub dim: usize,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelEntry {
    pub dim: usize,
    pub path: String,
}

/// Dataset manifest. Paths are resolved relative to the manifest's directory.
/// `shift` records per-modality, per-row offsets subtracted from the raw
/// feature files at load time (written by `--shift-nonneg`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub n_samples: usize,
    pub modalities: Vec<ModalityEntry>,
    pub labels: LabelEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<Vec<f64>>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads a matrix file, dispatching on the `.csv` / `.smfd` extension.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("smfd") => read_matrix_binary(path),
        _ => read_matrix_csv(path),
    }
}

/// Writes a matrix file, dispatching on the extension.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("smfd") => write_matrix_binary(path, m),
        _ => write_matrix_csv(path, m),
    }
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    file: source.clone(),
                    line: lineno + 1,
                    msg: format!("not a number: {:?}", tok.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    file: source,
                    line: lineno + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            file: source,
            line: 0,
            msg: "empty matrix file".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((r, c), flat).expect("shape checked above"))
}

fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_matrix_binary(path: &Path) -> Result<Array2<f64>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != SMFD_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SMFD",
        });
    }
    let version = read_u32(&mut file, path)?;
    if version != SMFD_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = read_u32(&mut file, path)? as usize;
    let cols = read_u32(&mut file, path)? as usize;
    let mut buf = vec![0u8; rows * cols * 8];
    file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let flat: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("sized above"))
}

fn write_matrix_binary(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(16 + m.len() * 8);
    out.extend_from_slice(SMFD_MAGIC);
    out.extend_from_slice(&SMFD_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for row in m.rows() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_u32(file: &mut fs::File, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    file.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

/// Loads and validates a dataset from its manifest. Violations are reported
/// with the offending file and index; nothing is silently repaired.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    load_from_manifest(&manifest, manifest_path)
}

pub fn load_from_manifest(manifest: &Manifest, manifest_path: &Path) -> Result<Dataset> {
    if manifest.modalities.len() < 2 {
        return Err(Error::TooFewModalities {
            found: manifest.modalities.len(),
        });
    }
    if let Some(shift) = &manifest.shift {
        if shift.len() != manifest.modalities.len() {
            return Err(Error::DimMismatch {
                context: "manifest shift".into(),
                expected: format!("{} modality offset lists", manifest.modalities.len()),
                found: format!("{}", shift.len()),
            });
        }
    }
    let mut modalities = Vec::with_capacity(manifest.modalities.len());
    for (t, entry) in manifest.modalities.iter().enumerate() {
        let path = resolve(manifest_path, &entry.path);
        let mut raw = read_matrix(&path)?;
        check_shape(&raw, entry.dim, manifest.n_samples, &path)?;
        if let Some(shift) = &manifest.shift {
            let offsets = &shift[t];
            if offsets.len() != entry.dim {
                return Err(Error::DimMismatch {
                    context: format!("shift for modality {t}"),
                    expected: format!("{} offsets", entry.dim),
                    found: format!("{}", offsets.len()),
                });
            }
            for (r, mut row) in raw.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|v| v - offsets[r]);
            }
        }
        modalities.push(FeatureMatrix::with_source(raw, &path.display().to_string())?);
    }
    let label_path = resolve(manifest_path, &manifest.labels.path);
    let raw = read_matrix(&label_path)?;
    check_shape(&raw, manifest.labels.dim, manifest.n_samples, &label_path)?;
    let labels = LabelMatrix::from_float(&raw, &label_path.display().to_string())?;
    Dataset::new(modalities, labels)
}

fn check_shape(m: &Array2<f64>, dim: usize, n: usize, path: &Path) -> Result<()> {
    if m.nrows() != dim || m.ncols() != n {
        return Err(Error::DimMismatch {
            context: path.display().to_string(),
            expected: format!("{dim}x{n}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// On-disk matrix encoding for `save_dataset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    fn ext(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Binary => "smfd",
        }
    }
}

/// Writes a dataset under `dir` (feature files, label file, `manifest.json`)
/// and returns the manifest path. Loading the result reproduces the dataset
/// bit-exactly.
pub fn save_dataset(dataset: &Dataset, dir: &Path, format: FileFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (t, fm) in dataset.modalities().iter().enumerate() {
        let file = format!("modality_{t}.{}", format.ext());
        write_matrix(&dir.join(&file), fm.data())?;
        entries.push(ModalityEntry {
            name: format!("modality_{t}"),
            dim: fm.dim(),
            path: file,
        });
    }
    let label_file = format!("labels.{}", format.ext());
    write_matrix(&dir.join(&label_file), &dataset.labels().to_float())?;
    let manifest = Manifest {
        n_samples: dataset.n_samples(),
        modalities: entries,
        labels: LabelEntry {
            dim: dataset.labels().vocab_size(),
            path: label_file,
        },
        shift: None,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}

/// Synthesizes a labeled multi-modal dataset with shared latent class
/// structure: per class, each modality gets a fixed non-negative prototype
/// column; samples are prototype plus uniform non-negative noise. Labels are
/// one-hot. Deterministic for a given seed.
pub fn generate_synthetic(
    n_classes: usize,
    per_class: usize,
    dims: &[usize],
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if per_class < 1 {
        return Err(Error::Invalid("per_class must be at least 1".into()));
    }
    if dims.len() < 2 {
        return Err(Error::TooFewModalities { found: dims.len() });
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::Invalid(format!("noise must be >= 0, got {noise}")));
    }
    for (t, &d) in dims.iter().enumerate() {
        if d < n_classes {
            return Err(Error::Invalid(format!(
                "modality {t} dim {d} is smaller than n_classes {n_classes}"
            )));
        }
    }

    let n = n_classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modalities = Vec::with_capacity(dims.len());
    for &d in dims {
        // Rows are assigned to classes round-robin; the owning class gets a
        // strong prototype entry, the rest stay weak.
        let mut proto = Array2::<f64>::zeros((d, n_classes));
        for row in 0..d {
            for class in 0..n_classes {
                proto[(row, class)] = if row % n_classes == class {
                    0.8 + 0.2 * rng.random::<f64>()
                } else {
                    0.2 * rng.random::<f64>()
                };
            }
        }
        let mut x = Array2::<f64>::zeros((d, n));
        for i in 0..n {
            let class = i / per_class;
            for row in 0..d {
                x[(row, i)] = proto[(row, class)] + noise * rng.random::<f64>();
            }
        }
        modalities.push(FeatureMatrix::new(x)?);
    }

    let mut label_data = Array2::<u8>::zeros((n_classes, n));
    for i in 0..n {
        label_data[(i / per_class, i)] = 1;
    }
    let labels = LabelMatrix::new(label_data)?;
    Dataset::new(modalities, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_dataset() -> Dataset {
        let x1 = FeatureMatrix::new(array![[1.0, 2.0], [0.5, 0.0]]).unwrap();
        let x2 = FeatureMatrix::new(array![[3.0, 4.0]]).unwrap();
        let labels = LabelMatrix::new(array![[1, 0], [0, 1]]).unwrap();
        Dataset::new(vec![x1, x2], labels).unwrap()
    }

    #[test]
    fn rejects_negative_feature() {
        let err = FeatureMatrix::new(array![[1.0, -0.1]]).unwrap_err();
        match err {
            Error::NegativeFeature { row, col, value, .. } => {
                assert_eq!((row, col), (0, 1));
                assert_eq!(value, -0.1);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_nan_feature() {
        assert!(matches!(
            FeatureMatrix::new(array![[f64::NAN]]),
            Err(Error::NonFiniteFeature { .. })
        ));
    }

    #[test]
    fn rejects_unlabeled_column() {
        let err = LabelMatrix::new(array![[1, 0], [0, 0]]).unwrap_err();
        match err {
            Error::UnlabeledSample { index } => assert_eq!(index, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_non_binary_label() {
        let raw = array![[1.0, 0.5]];
        assert!(matches!(
            LabelMatrix::from_float(&raw, "labels.csv"),
            Err(Error::NonBinaryLabel { col: 1, .. })
        ));
    }

    #[test]
    fn rejects_single_modality() {
        let x1 = FeatureMatrix::new(array![[1.0]]).unwrap();
        let labels = LabelMatrix::new(array![[1]]).unwrap();
        assert!(matches!(
            Dataset::new(vec![x1], labels),
            Err(Error::TooFewModalities { found: 1 })
        ));
    }

    #[test]
    fn rejects_column_count_mismatch() {
        let x1 = FeatureMatrix::new(array![[1.0, 2.0]]).unwrap();
        let x2 = FeatureMatrix::new(array![[1.0, 2.0, 3.0]]).unwrap();
        let labels = LabelMatrix::new(array![[1, 1]]).unwrap();
        assert!(matches!(
            Dataset::new(vec![x1, x2], labels),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn dataset_roundtrip_csv_and_binary() {
        let ds = small_dataset();
        for format in [FileFormat::Csv, FileFormat::Binary] {
            let dir = tempfile::tempdir().unwrap();
            let manifest = save_dataset(&ds, dir.path(), format).unwrap();
            let back = load_dataset(&manifest).unwrap();
            assert_eq!(ds, back);
        }
    }

    #[test]
    fn synth_zero_noise_gives_identical_columns_per_class() {
        let ds = generate_synthetic(3, 10, &[8, 6], 0.0, 42).unwrap();
        assert_eq!(ds.n_samples(), 30);
        assert_eq!(ds.n_modalities(), 2);
        for fm in ds.modalities() {
            for class in 0..3 {
                let base = fm.data().column(class * 10).to_owned();
                for i in 1..10 {
                    assert_eq!(fm.data().column(class * 10 + i), base);
                }
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = generate_synthetic(3, 10, &[8, 6], 0.1, 42).unwrap();
        let b = generate_synthetic(3, 10, &[8, 6], 0.1, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        assert!(generate_synthetic(1, 10, &[8, 6], 0.0, 0).is_err());
        assert!(generate_synthetic(3, 0, &[8, 6], 0.0, 0).is_err());
        assert!(generate_synthetic(3, 10, &[2, 6], 0.0, 0).is_err());
    }

    #[test]
    fn manifest_shift_is_applied_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let manifest_path = save_dataset(&ds, dir.path(), FileFormat::Csv).unwrap();
        let mut manifest = Manifest::read(&manifest_path).unwrap();
        // offsets of -1 raise every entry of modality 0 by 1
        manifest.shift = Some(vec![vec![-1.0, -1.0], vec![0.0]]);
        manifest.write(&manifest_path).unwrap();
        let shifted = load_dataset(&manifest_path).unwrap();
        let expected = ds.modality(0).data() + 1.0;
        assert_eq!(shifted.modality(0).data(), &expected);
        assert_eq!(shifted.modality(1).data(), ds.modality(1).data());
    }
}
