//! Embedding matrices and the `SFTE` binary file format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size  | field                      |
//! |--------|-------|----------------------------|
//! | 0      | 4     | magic `b"SFTE"`            |
//! | 4      | 2     | version, `u16` = 1         |
//! | 6      | 8     | `n` (rows), `u64`          |
//! | 14     | 8     | `d` (columns), `u64`       |
//! | 22     | 4·n·d | row-major IEEE-754 `f32`   |
//!
//! Values are held as `f64` in memory and narrowed to `f32` on save, so
//! `load ∘ save` is bit-exact for every matrix whose entries are
//! `f32`-representable, which includes every matrix read from a file.

use std::fs;
use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use crate::error::{Result, SftError};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"SFTE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 8;

/// An `n × d` embedding matrix: rows are samples, every entry finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_matrix(Matrix::from_vec(n, d, data)?)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(SftError::Shape(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(SftError::NonFinite {
                row: pos / m.cols(),
                col: pos % m.cols(),
            });
        }
        Ok(FeatureMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn d(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<FeatureMatrix> {
        FeatureMatrix::from_matrix(self.0.select_rows(indices))
    }

    /// Fails with the index of the first zero-norm row, if any.
    pub fn check_nonzero_rows(&self) -> Result<()> {
        match self.0.row_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
            Some(row) => Err(SftError::ZeroNormRow { row }),
            None => Ok(()),
        }
    }

    /// Copy with every row scaled to unit l2 norm.
    pub fn l2_normalized(&self) -> Result<FeatureMatrix> {
        self.check_nonzero_rows()?;
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let norm = crate::matrix::norm(row);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(FeatureMatrix(m))
    }
}

impl Deref for FeatureMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Serializes to the `SFTE` byte layout.
pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.n() * m.d());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n() as u64).to_le_bytes());
    out.extend_from_slice(&(m.d() as u64).to_le_bytes());
    for (pos, &v) in m.as_slice().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(SftError::NonFinite {
                row: pos / m.d(),
                col: pos % m.d(),
            });
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(SftError::MalformedHeader(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(SftError::MalformedHeader("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(SftError::MalformedHeader(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
    if n == 0 || d == 0 {
        return Err(SftError::MalformedHeader(format!(
            "dimensions must be positive, got n={n}, d={d}"
        )));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| SftError::MalformedHeader(format!("n={n}, d={d} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(SftError::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }
    let (n, d) = (n as usize, d as usize);
    let mut data = Vec::with_capacity(n * d);
    for (pos, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(SftError::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        data.push(v as f64);
    }
    FeatureMatrix::new(n, d, data)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SftError::io(path, e))?;
    decode_features(&bytes)
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(m)?;
    let mut file = fs::File::create(path).map_err(|e| SftError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| SftError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    fn random_f32_matrix(rng: &mut PortableRng, n: usize, d: usize) -> FeatureMatrix {
        let data = (0..n * d).map(|_| (rng.normal() * 10.0) as f32 as f64).collect();
        FeatureMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn identity_payload_decodes() {
        let m = FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let back = decode_features(&encode_features(&m).unwrap()).unwrap();
        assert_eq!(back.shape(), (2, 3));
        assert_eq!(back, m);
    }

    #[test]
    fn single_value_file_length() {
        let m = FeatureMatrix::new(1, 1, vec![0.5]).unwrap();
        let bytes = encode_features(&m).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(bytes.len(), 26);
        assert_eq!(&bytes[22..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn random_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfte");
        let mut rng = PortableRng::seed_from_u64(3);
        let m = random_f32_matrix(&mut rng, 7, 5);
        save_features(&m, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn payload_length_mismatch_is_truncation() {
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = encode_features(&m).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_features(&bytes),
            Err(SftError::TruncatedPayload { expected: 8, found: 7 })
        ));
        bytes.extend_from_slice(&[0; 5]);
        assert!(matches!(
            decode_features(&bytes),
            Err(SftError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_features(b"SFTE"), Err(SftError::MalformedHeader(_))));
        let m = FeatureMatrix::from_rows(&[[1.0]]).unwrap();
        let mut bytes = encode_features(&m).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(SftError::MalformedHeader(_))));
        let mut bytes = encode_features(&m).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_features(&bytes), Err(SftError::MalformedHeader(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut bytes = encode_features(&m).unwrap();
        bytes[HEADER_LEN + 12..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_features(&bytes),
            Err(SftError::NonFinite { row: 1, col: 1 })
        ));
    }

    #[test]
    fn construction_rejects_empty_and_nan() {
        assert!(FeatureMatrix::new(0, 3, vec![]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn zero_row_reported() {
        let m = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(m.l2_normalized(), Err(SftError::ZeroNormRow { row: 1 })));
    }

    proptest::proptest! {
        #[test]
        fn load_save_is_identity(n in 1usize..9, d in 1usize..9, seed in 0u64..1000) {
            let mut rng = PortableRng::seed_from_u64(seed);
            let m = random_f32_matrix(&mut rng, n, d);
            let back = decode_features(&encode_features(&m).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, m);
        }
    }
}
