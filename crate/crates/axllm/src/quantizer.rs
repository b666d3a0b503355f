//! Symmetric per-tensor int8 quantization and result-cache slot addressing.

use thiserror::Error;

/// Dense row-major f64 matrix, the input side of quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    /// Builds a matrix from row-major data. `data.len()` must equal `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, QuantizeError> {
        let expect = rows
            .checked_mul(cols)
            .ok_or(QuantizeError::ShapeOverflow { rows, cols })?;
        if data.len() != expect {
            return Err(QuantizeError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Row-major int8 matrix with its dequantization scale.
///
/// Invariant: every element lies in [-127, 127]; -128 is never produced or
/// accepted, so magnitude always fits the 0..=127 cache index space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
    scale: f64,
}

impl QuantizedMatrix {
    /// Builds a quantized matrix from parts, enforcing the no -128 invariant
    /// and a positive finite scale.
    pub fn new(rows: usize, cols: usize, data: Vec<i8>, scale: f64) -> Result<Self, QuantizeError> {
        let expect = rows
            .checked_mul(cols)
            .ok_or(QuantizeError::ShapeOverflow { rows, cols })?;
        if data.len() != expect {
            return Err(QuantizeError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(QuantizeError::BadScale { scale });
        }
        if let Some(pos) = data.iter().position(|&v| v == i8::MIN) {
            return Err(QuantizeError::MinValue { index: pos });
        }
        Ok(Self {
            rows,
            cols,
            data,
            scale,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Result-cache address of a weight: table index is the magnitude, the sign
/// is applied when the cached product is read back. sign(0) is +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheSlot {
    /// Weight magnitude, 0..=127.
    pub index: u8,
    /// +1 or -1.
    pub sign: i8,
}

#[derive(Debug, Error, PartialEq)]
pub enum QuantizeError {
    #[error("rows*cols overflows usize ({rows}x{cols})")]
    ShapeOverflow { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("scale {scale} is not positive and finite")]
    BadScale { scale: f64 },
    #[error("-128 at index {index} has no magnitude representation")]
    MinValue { index: usize },
}

/// Quantizes with scale = max|x| / 127 (1.0 for an all-zero tensor), rounding
/// half away from zero and clamping to [-127, 127].
pub fn quantize_symmetric(m: &RealMatrix) -> Result<QuantizedMatrix, QuantizeError> {
    if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(QuantizeError::NonFinite { index: pos });
    }
    let amax = m.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let scale = if amax == 0.0 { 1.0 } else { amax / 127.0 };
    let data = m
        .data
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedMatrix::new(m.rows, m.cols, data, scale)
}

/// Same rounding and clamping against a caller-supplied scale. Used to bring
/// an adaptor onto the scale of the matrix it fuses with.
pub fn quantize_with_scale(m: &RealMatrix, scale: f64) -> Result<QuantizedMatrix, QuantizeError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(QuantizeError::BadScale { scale });
    }
    if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(QuantizeError::NonFinite { index: pos });
    }
    let data = m
        .data
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedMatrix::new(m.rows, m.cols, data, scale)
}

/// Inverse map: value * scale.
pub fn dequantize(q: &QuantizedMatrix) -> RealMatrix {
    RealMatrix {
        rows: q.rows,
        cols: q.cols,
        data: q.data.iter().map(|&v| v as f64 * q.scale).collect(),
    }
}

/// Splits a weight into its cache address. Rejects -128, whose magnitude does
/// not exist in i8.
pub fn rc_index(w: i8) -> Result<CacheSlot, QuantizeError> {
    if w == i8::MIN {
        return Err(QuantizeError::MinValue { index: 0 });
    }
    Ok(CacheSlot {
        index: w.unsigned_abs(),
        sign: if w < 0 { -1 } else { 1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rm(rows: usize, cols: usize, data: &[f64]) -> RealMatrix {
        RealMatrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn quantize_spans_full_range() {
        let q = quantize_symmetric(&rm(1, 2, &[-2.54, 1.27])).unwrap();
        assert_eq!(q.scale(), 0.02);
        assert_eq!(q.data(), &[-127, 64]);
    }

    #[test]
    fn quantize_all_zero_uses_unit_scale() {
        let q = quantize_symmetric(&rm(2, 2, &[0.0; 4])).unwrap();
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.data(), &[0, 0, 0, 0]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // scale = 1.0, so codes equal rounded inputs
        let q = quantize_symmetric(&rm(1, 5, &[127.0, 0.5, -0.5, 1.5, -1.5])).unwrap();
        assert_eq!(q.scale(), 1.0);
        assert_eq!(q.data(), &[127, 1, -1, 2, -2]);
    }

    #[test]
    fn max_magnitude_maps_to_127_never_minus_128() {
        let q = quantize_symmetric(&rm(1, 3, &[-1.0, 0.999, 1.0])).unwrap();
        assert_eq!(q.data()[0], -127);
        assert!(q.data().iter().all(|&v| v != i8::MIN));
    }

    #[test]
    fn non_finite_rejected_with_position() {
        let m = RealMatrix::new(1, 3, vec![1.0, f64::NAN, 2.0]).unwrap();
        assert_eq!(
            quantize_symmetric(&m),
            Err(QuantizeError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(RealMatrix::new(2, 3, vec![0.0; 5]).is_err());
        assert!(QuantizedMatrix::new(2, 3, vec![0; 7], 1.0).is_err());
    }

    #[test]
    fn dequantize_round_trip_error_bounded() {
        let m = rm(1, 4, &[0.3, -0.7, 0.11, 0.02]);
        let q = quantize_symmetric(&m).unwrap();
        let back = dequantize(&q);
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= q.scale() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn rc_index_folds_sign() {
        assert_eq!(rc_index(5).unwrap(), CacheSlot { index: 5, sign: 1 });
        assert_eq!(rc_index(-5).unwrap(), CacheSlot { index: 5, sign: -1 });
        assert_eq!(rc_index(0).unwrap(), CacheSlot { index: 0, sign: 1 });
        assert_eq!(rc_index(127).unwrap().index, 127);
        assert!(rc_index(i8::MIN).is_err());
    }

    #[test]
    fn minus_128_payload_rejected() {
        let err = QuantizedMatrix::new(1, 2, vec![3, -128], 1.0).unwrap_err();
        assert_eq!(err, QuantizeError::MinValue { index: 1 });
    }
}
