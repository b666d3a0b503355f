//! AXLM on-disk matrix format.
//!
//! Layout, all little endian:
//!   magic   4 bytes  "AXLM"
//!   version u16      currently 1
//!   rows    u32      nonzero
//!   cols    u32      nonzero
//!   scale   f64      positive, finite
//!   data    rows*cols i8, row major, -128 forbidden
//!
//! The payload length is validated against the header before any allocation,
//! so a hostile header cannot request more memory than the file provides.

use crate::quantizer::QuantizedMatrix;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AXLM";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 22;

#[derive(Debug, Error, PartialEq)]
pub enum MatFileError {
    #[error("file is {len} bytes, header needs {HEADER_LEN}")]
    TooShort { len: usize },
    #[error("bad magic {got:02x?}")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported version {got}")]
    BadVersion { got: u16 },
    #[error("rows and cols must be nonzero")]
    ZeroDim,
    #[error("scale {scale} must be positive and finite")]
    BadScale { scale: f64 },
    #[error("payload is {got} bytes, header claims {expected}")]
    WrongLength { expected: u64, got: u64 },
    #[error("value -128 at payload offset {index}")]
    MinValue { index: usize },
    #[error("matrix larger than this platform can address")]
    TooLarge,
    #[error("io: {0}")]
    Io(String),
}

pub fn parse_matrix(bytes: &[u8]) -> Result<QuantizedMatrix, MatFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(MatFileError::TooShort { len: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(MatFileError::BadMagic { got: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(MatFileError::BadVersion { got: version });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(MatFileError::ZeroDim);
    }
    let scale = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(MatFileError::BadScale { scale });
    }
    let expected = u64::from(rows) * u64::from(cols);
    let got = (bytes.len() - HEADER_LEN) as u64;
    if expected != got {
        return Err(MatFileError::WrongLength { expected, got });
    }
    let n = usize::try_from(expected).map_err(|_| MatFileError::TooLarge)?;
    let payload = &bytes[HEADER_LEN..];
    if let Some(index) = payload.iter().position(|&b| b == 0x80) {
        return Err(MatFileError::MinValue { index });
    }
    let mut data = Vec::with_capacity(n);
    data.extend(payload.iter().map(|&b| b as i8));
    QuantizedMatrix::new(rows as usize, cols as usize, data, scale)
        .map_err(|e| MatFileError::Io(e.to_string()))
}

pub fn encode_matrix(m: &QuantizedMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&m.scale().to_le_bytes());
    out.extend(m.data().iter().map(|&v| v as u8));
    out
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<QuantizedMatrix, MatFileError> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| MatFileError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_matrix(&bytes)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &QuantizedMatrix) -> Result<(), MatFileError> {
    crate::report::write_atomic(path.as_ref(), &encode_matrix(m))
        .map_err(|e| MatFileError::Io(format!("{}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> QuantizedMatrix {
        QuantizedMatrix::new(2, 3, vec![1, -2, 3, 127, 0, -127], 0.25).unwrap()
    }

    #[test]
    fn roundtrip_bytes() {
        let m = sample();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[0..4], b"AXLM");
        assert_eq!(bytes.len(), 22 + 6);
        assert_eq!(parse_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn roundtrip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.axlm");
        write_matrix(&path, &sample()).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_matrix(&sample());
        bytes[0] = b'B';
        assert!(matches!(
            parse_matrix(&bytes),
            Err(MatFileError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = encode_matrix(&sample());
        bytes[4] = 2;
        assert_eq!(
            parse_matrix(&bytes),
            Err(MatFileError::BadVersion { got: 2 })
        );
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let bytes = encode_matrix(&sample());
        for cut in 0..bytes.len() {
            assert!(parse_matrix(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut bytes = encode_matrix(&sample());
        bytes.push(0);
        assert_eq!(
            parse_matrix(&bytes),
            Err(MatFileError::WrongLength {
                expected: 6,
                got: 7
            })
        );
    }

    #[test]
    fn rejects_zero_dims() {
        let mut bytes = encode_matrix(&sample());
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(parse_matrix(&bytes), Err(MatFileError::ZeroDim));
    }

    #[test]
    fn rejects_min_value() {
        let mut bytes = encode_matrix(&sample());
        bytes[22 + 4] = 0x80;
        assert_eq!(parse_matrix(&bytes), Err(MatFileError::MinValue { index: 4 }));
    }

    #[test]
    fn rejects_bad_scale() {
        for scale in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let mut bytes = encode_matrix(&sample());
            bytes[14..22].copy_from_slice(&scale.to_le_bytes());
            assert!(matches!(
                parse_matrix(&bytes),
                Err(MatFileError::BadScale { .. })
            ));
        }
    }

    #[test]
    fn huge_header_cannot_allocate() {
        // header claims 4 billion entries but provides none
        let mut bytes = encode_matrix(&sample());
        bytes.truncate(22);
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            parse_matrix(&bytes),
            Err(MatFileError::WrongLength { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_random(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
            let m = crate::dist::gen_quantized(
                &crate::dist::DistributionSpec::gaussian_preset(), rows, cols, seed).unwrap();
            prop_assert_eq!(parse_matrix(&encode_matrix(&m)).unwrap(), m);
        }

        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_matrix(&bytes);
        }

        #[test]
        fn parser_never_panics_with_valid_prefix(
            tail in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut bytes = encode_matrix(&sample());
            bytes.truncate(14);
            bytes.extend(tail);
            let _ = parse_matrix(&bytes);
        }
    }
}
