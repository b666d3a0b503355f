//! Low-rank adaptor fusion: [W | A] shares one cache pass, then the small
//! t x B product runs as a second reuse pass.

use crate::quantizer::{rc_index, QuantizedMatrix};
use crate::reuse::{reuse_mvm, AccumulatorVector, ReuseError, ReuseStats, TileConfig};

/// Column-concatenates W (rows x cols) and A (rows x rank) into one matrix so
/// A rides along W's weight stream. Scales must already agree; requantize the
/// adaptor first if they do not.
pub fn combine_lora(
    w: &QuantizedMatrix,
    a: &QuantizedMatrix,
) -> Result<QuantizedMatrix, ReuseError> {
    if w.rows() != a.rows() {
        return Err(ReuseError::RowMismatch {
            a: w.rows(),
            b: a.rows(),
        });
    }
    if w.scale().to_bits() != a.scale().to_bits() {
        return Err(ReuseError::ScaleMismatch {
            a: w.scale(),
            b: a.scale(),
        });
    }
    let cols = w.cols() + a.cols();
    let mut data = Vec::with_capacity(w.rows() * cols);
    for i in 0..w.rows() {
        data.extend_from_slice(w.row(i));
        data.extend_from_slice(a.row(i));
    }
    Ok(QuantizedMatrix::new(w.rows(), cols, data, w.scale())
        .expect("parts uphold the element invariant"))
}

/// Second-pass product cache. The input side is an i32 accumulator, so
/// products are memoized in i64; the table is still magnitude-indexed.
struct WideCache {
    products: [i64; 128],
    live: [bool; 128],
}

impl WideCache {
    fn new() -> Self {
        Self {
            products: [0; 128],
            live: [false; 128],
        }
    }

    fn clear(&mut self) {
        self.live = [false; 128];
    }
}

/// t (i32, length = rank) times B (rank x cols) through the cache, i64
/// accumulation. Tallies merge into `stats` like any other reuse pass.
fn reuse_mvm_wide(
    t: &[i32],
    b: &QuantizedMatrix,
    tile: &TileConfig,
    stats: &mut ReuseStats,
) -> Result<Vec<i64>, ReuseError> {
    if t.len() != b.rows() {
        return Err(ReuseError::DimensionMismatch {
            x: t.len(),
            rows: b.rows(),
        });
    }
    let cols = b.cols();
    let n_tiles = if cols == 0 { 0 } else { tile.tiles_for(cols) };
    let mut y = vec![0i64; cols];
    let mut wide_tiles = vec![0u64; n_tiles];
    let mut cache = WideCache::new();
    for (tidx, wt) in wide_tiles.iter_mut().enumerate() {
        let lo = tidx * tile.tile_cols;
        let hi = (lo + tile.tile_cols).min(cols);
        for (k, &tk) in t.iter().enumerate() {
            cache.clear();
            for (j, &w) in b.row(k)[lo..hi].iter().enumerate() {
                let slot = rc_index(w).expect("quantized weights exclude -128");
                let idx = slot.index as usize;
                let p = if cache.live[idx] {
                    stats.reuses += 1;
                    cache.products[idx]
                } else {
                    let p = tk as i64 * slot.index as i64;
                    cache.products[idx] = p;
                    cache.live[idx] = true;
                    stats.multiplications += 1;
                    *wt += 1;
                    p
                };
                y[lo + j] += p * slot.sign as i64;
            }
        }
    }
    stats.merge(&ReuseStats {
        multiplications: 0,
        reuses: 0,
        per_tile_mults: wide_tiles,
    });
    Ok(y)
}

/// Adaptor-fused MVM: y = x*W + (x*A)*B, both stages through the cache.
///
/// The fused [W | A] pass produces x*W and t = x*A together; t then streams
/// through B in a second pass. Internally i64, narrowed back to the i32
/// accumulator domain with overflow reported, never wrapped.
pub fn lora_mvm(
    x: &[i8],
    w: &QuantizedMatrix,
    a: &QuantizedMatrix,
    b: &QuantizedMatrix,
    tile: &TileConfig,
) -> Result<(AccumulatorVector, ReuseStats), ReuseError> {
    if a.cols() != b.rows() || b.cols() != w.cols() || a.rows() != w.rows() {
        return Err(ReuseError::LoraShape {
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
            w_rows: w.rows(),
            w_cols: w.cols(),
        });
    }
    let combined = combine_lora(w, a)?;
    let (h, mut stats) = reuse_mvm(x, &combined, tile)?;
    let (y_w, t) = h.split_at(w.cols());
    let tb = reuse_mvm_wide(t, b, tile, &mut stats)?;
    let mut y = Vec::with_capacity(w.cols());
    for (j, (&base, &delta)) in y_w.iter().zip(tb.iter()).enumerate() {
        let sum = base as i64 + delta;
        let narrowed =
            i32::try_from(sum).map_err(|_| ReuseError::AccumulatorOverflow { col: j })?;
        y.push(narrowed);
    }
    Ok((y, stats))
}

/// Mean fraction of adaptor weights whose magnitude already occurs in the
/// same row of W, i.e. rides free in the fused pass.
pub fn row_overlap_rate(w: &QuantizedMatrix, a: &QuantizedMatrix) -> Result<f64, ReuseError> {
    if w.rows() != a.rows() {
        return Err(ReuseError::RowMismatch {
            a: w.rows(),
            b: a.rows(),
        });
    }
    if a.cols() == 0 {
        return Err(ReuseError::EmptyAdaptor);
    }
    let mut total = 0.0;
    for i in 0..w.rows() {
        let mut present = [false; 128];
        for &v in w.row(i) {
            present[v.unsigned_abs() as usize] = true;
        }
        let hits = a
            .row(i)
            .iter()
            .filter(|&&v| present[v.unsigned_abs() as usize])
            .count();
        total += hits as f64 / a.cols() as f64;
    }
    Ok(total / w.rows().max(1) as f64)
}
