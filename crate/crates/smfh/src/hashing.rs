//! Binary quantization, out-of-sample encoding, packed code storage, and
//! Hamming ranking.
//!
//! Codes are packed item-major: item i occupies `ceil(bits / 8)` bytes; bit b
//! lives in byte `b / 8` at position `b % 8` (little-endian within the byte).
//! Padding bits are always zero, so distances can run over whole bytes and
//! 64-bit lanes without masking.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::factorization::CodeMatrix;
use crate::regression::ProjectionMatrix;

pub const SMFB_MAGIC: &[u8; 4] = b"SMFB";
pub const SMFB_VERSION: u32 = 1;

/// Bit-packed binary codes for a collection of items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    n_items: usize,
    bits: usize,
    packed: Vec<u8>,
}

impl BinaryCodes {
    /// Packs `bits(item, bit) -> bool` into code storage.
    pub fn from_fn(n_items: usize, bits: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if bits == 0 {
            return Err(Error::Invalid("codes need at least one bit".into()));
        }
        let stride = bits.div_ceil(8);
        let mut packed = vec![0u8; n_items * stride];
        for item in 0..n_items {
            let base = item * stride;
            for bit in 0..bits {
                if f(item, bit) {
                    packed[base + bit / 8] |= 1 << (bit % 8);
                }
            }
        }
        Ok(Self {
            n_items,
            bits,
            packed,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn bytes_per_item(&self) -> usize {
        self.bits.div_ceil(8)
    }

    pub fn bit(&self, item: usize, bit: usize) -> bool {
        let byte = self.packed[item * self.bytes_per_item() + bit / 8];
        byte >> (bit % 8) & 1 == 1
    }

    /// Packed bytes of one item's code.
    pub fn code(&self, item: usize) -> &[u8] {
        let stride = self.bytes_per_item();
        &self.packed[item * stride..(item + 1) * stride]
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    /// Serializes into the codes container format (magic `SMFB`, version,
    /// n_items u64, bits u32, packed payload; all integers little-endian).
    pub fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SMFB_MAGIC);
        out.extend_from_slice(&SMFB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_items as u64).to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&self.packed);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(20 + self.packed.len());
        self.write_into(&mut out);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(reader: &mut impl Read, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != SMFB_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "SMFB",
            });
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        reader.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
        let version = u32::from_le_bytes(b4);
        if version != SMFB_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        reader.read_exact(&mut b8).map_err(|e| Error::io(path, e))?;
        let n_items = u64::from_le_bytes(b8) as usize;
        reader.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
        let bits = u32::from_le_bytes(b4) as usize;
        if bits == 0 {
            return Err(Error::Invalid(format!(
                "{}: codes file declares zero bits",
                path.display()
            )));
        }
        let stride = bits.div_ceil(8);
        let mut packed = vec![0u8; n_items * stride];
        reader
            .read_exact(&mut packed)
            .map_err(|e| Error::io(path, e))?;
        let codes = Self {
            n_items,
            bits,
            packed,
        };
        // Zero padding is an invariant of the format, not a repair target.
        if !bits.is_multiple_of(8) {
            let mask = !((1u8 << (bits % 8)) - 1);
            for item in 0..n_items {
                if codes.code(item)[stride - 1] & mask != 0 {
                    return Err(Error::Invalid(format!(
                        "{}: nonzero padding bits in item {item}",
                        path.display()
                    )));
                }
            }
        }
        Ok(codes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut file, path)
    }
}

/// Quantizes relaxed codes by per-bit median: bit b of item i is 1 iff
/// `y[b, i] >= median(row b)`. Yields balanced bits regardless of row scale.
pub fn binarize(codes: &CodeMatrix) -> BinaryCodes {
    let y = codes.data();
    let medians = row_medians(codes);
    BinaryCodes::from_fn(y.ncols(), y.nrows(), |item, bit| {
        y[(bit, item)] >= medians[bit]
    })
    .expect("bits >= 1 by CodeMatrix invariant")
}

/// Per-bit binarization thresholds (the row medians). The trainer centers
/// its regression targets on these so `encode` and `binarize` agree on the
/// training set.
pub fn row_medians(codes: &CodeMatrix) -> Vec<f64> {
    codes
        .data()
        .rows()
        .into_iter()
        .map(|row| median(row.iter()))
        .collect()
}

fn median<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let mut v: Vec<f64> = values.copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("codes are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Encodes items through the linear hash function: bit b of item i is 1 iff
/// `(W^T X)[b, i] >= 0`. The `>=` convention maps a zero projection to 1.
pub fn encode(projection: &ProjectionMatrix, features: &FeatureMatrix) -> Result<BinaryCodes> {
    if projection.dim() != features.dim() {
        return Err(Error::DimMismatch {
            context: "encode".into(),
            expected: format!("features with {} rows", projection.dim()),
            found: format!("{} rows", features.dim()),
        });
    }
    let projected: Array2<f64> = projection.data().t().dot(features.data());
    BinaryCodes::from_fn(projected.ncols(), projected.nrows(), |item, bit| {
        projected[(bit, item)] >= 0.0
    })
}

/// Hamming distance between two equal-width codes.
pub fn hamming_distance(a: &BinaryCodes, i: usize, b: &BinaryCodes, j: usize) -> Result<u32> {
    if a.bits() != b.bits() {
        return Err(Error::BitWidthMismatch {
            a: a.bits(),
            b: b.bits(),
        });
    }
    Ok(distance_bytes(a.code(i), b.code(j)))
}

/// XOR-popcount over packed bytes, 64 bits at a time. Both slices must have
/// equal length and zero padding.
pub fn distance_bytes(a: &[u8], b: &[u8]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut dist = 0u32;
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        let xa = u64::from_le_bytes(ca.try_into().unwrap());
        let xb = u64::from_le_bytes(cb.try_into().unwrap());
        dist += (xa ^ xb).count_ones();
    }
    for (&ra, &rb) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        dist += (ra ^ rb).count_ones();
    }
    dist
}

/// Top-k database items by ascending Hamming distance to the query; ties
/// break by ascending database index, so the ranking is deterministic.
pub fn rank(
    query: &[u8],
    query_bits: usize,
    database: &BinaryCodes,
    k: usize,
) -> Result<Vec<(usize, u32)>> {
    if query_bits != database.bits() {
        return Err(Error::BitWidthMismatch {
            a: query_bits,
            b: database.bits(),
        });
    }
    if k > database.n_items() {
        return Err(Error::KTooLarge {
            k,
            n: database.n_items(),
        });
    }
    let mut scored: Vec<(u32, usize)> = (0..database.n_items())
        .map(|i| (distance_bytes(query, database.code(i)), i))
        .collect();
    scored.sort_unstable();
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(dist, idx)| (idx, dist))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn codes_from_rows(rows: &[&[u8]]) -> BinaryCodes {
        let bits = rows[0].len();
        BinaryCodes::from_fn(rows.len(), bits, |i, b| rows[i][b] == 1).unwrap()
    }

    #[test]
    fn binarize_splits_around_median() {
        let y = CodeMatrix::new(array![[0.1, 0.9, 0.2, 0.8]]).unwrap();
        let b = binarize(&y);
        let bits: Vec<bool> = (0..4).map(|i| b.bit(i, 0)).collect();
        assert_eq!(bits, vec![false, true, false, true]);
    }

    #[test]
    fn binarize_ties_go_to_one() {
        let y = CodeMatrix::new(array![[0.5, 0.5, 0.5]]).unwrap();
        let b = binarize(&y);
        assert!((0..3).all(|i| b.bit(i, 0)));
    }

    #[test]
    fn encode_uses_sign_of_projection() {
        let w = ProjectionMatrix::new(array![[1.0], [-1.0]]).unwrap();
        let x = FeatureMatrix::new(array![[3.0, 1.0], [1.0, 3.0]]).unwrap();
        let b = encode(&w, &x).unwrap();
        assert!(b.bit(0, 0)); // 3 - 1 = 2 >= 0
        assert!(!b.bit(1, 0)); // 1 - 3 = -2 < 0
    }

    #[test]
    fn encode_zero_projection_is_bit_one() {
        let w = ProjectionMatrix::new(array![[0.0]]).unwrap();
        let x = FeatureMatrix::new(array![[5.0]]).unwrap();
        let b = encode(&w, &x).unwrap();
        assert!(b.bit(0, 0));
    }

    #[test]
    fn encode_rejects_dim_mismatch() {
        let w = ProjectionMatrix::new(array![[1.0], [2.0]]).unwrap();
        let x = FeatureMatrix::new(array![[1.0]]).unwrap();
        assert!(encode(&w, &x).is_err());
    }

    #[test]
    fn hamming_identity_and_complement() {
        let a = codes_from_rows(&[&[0, 1, 0, 1], &[0, 0, 0, 0], &[1, 1, 1, 1]]);
        assert_eq!(hamming_distance(&a, 0, &a, 0).unwrap(), 0);
        assert_eq!(hamming_distance(&a, 1, &a, 2).unwrap(), 4);
    }

    #[test]
    fn hamming_rejects_width_mismatch() {
        let a = codes_from_rows(&[&[0, 1]]);
        let b = codes_from_rows(&[&[0, 1, 1]]);
        assert!(matches!(
            hamming_distance(&a, 0, &b, 0),
            Err(Error::BitWidthMismatch { a: 2, b: 3 })
        ));
    }

    #[test]
    fn rank_self_retrieval_first() {
        let db = codes_from_rows(&[&[1, 1, 0, 0], &[0, 1, 0, 1], &[1, 0, 1, 0]]);
        let hits = rank(db.code(1), db.bits(), &db, 3).unwrap();
        assert_eq!(hits[0], (1, 0));
        // distances never decrease
        assert!(hits.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        let db = codes_from_rows(&[&[0, 0], &[0, 0], &[1, 1]]);
        let hits = rank(db.code(0), db.bits(), &db, 3).unwrap();
        assert_eq!(hits, vec![(0, 0), (1, 0), (2, 2)]);
    }

    #[test]
    fn rank_rejects_oversized_k() {
        let db = codes_from_rows(&[&[0, 1]]);
        assert!(matches!(
            rank(db.code(0), 2, &db, 2),
            Err(Error::KTooLarge { k: 2, n: 1 })
        ));
    }

    #[test]
    fn padding_bits_stay_zero() {
        let b = BinaryCodes::from_fn(2, 5, |_, _| true).unwrap();
        for item in 0..2 {
            assert_eq!(b.code(item)[0] & 0b1110_0000, 0);
        }
    }

    #[test]
    fn codes_file_golden_bytes() {
        // 1 item, 4 bits 1010 (LSB first) -> payload byte 0b0000_0101.
        let b = BinaryCodes::from_fn(1, 4, |_, bit| bit % 2 == 0).unwrap();
        let mut out = Vec::new();
        b.write_into(&mut out);
        let expected: Vec<u8> = [
            b"SMFB".as_slice(),
            &1u32.to_le_bytes(),
            &1u64.to_le_bytes(),
            &4u32.to_le_bytes(),
            &[0b0000_0101],
        ]
        .concat();
        assert_eq!(out, expected);
    }

    #[test]
    fn codes_file_roundtrip() {
        let b = BinaryCodes::from_fn(7, 13, |i, j| (i * 31 + j * 7) % 3 == 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.smfb");
        b.save(&path).unwrap();
        let back = BinaryCodes::load(&path).unwrap();
        assert_eq!(b, back);
    }

    #[test]
    fn codes_file_rejects_nonzero_padding() {
        let b = BinaryCodes::from_fn(1, 4, |_, _| true).unwrap();
        let mut out = Vec::new();
        b.write_into(&mut out);
        *out.last_mut().unwrap() |= 0b1000_0000;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.smfb");
        std::fs::write(&path, &out).unwrap();
        assert!(BinaryCodes::load(&path).is_err());
    }
}
