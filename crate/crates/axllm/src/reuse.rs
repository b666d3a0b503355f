//! Result-cache multiplication elimination, bit-exact against plain MVM.
//!
//! One input element is multiplied against a row of weights; the product for
//! each weight magnitude is computed once, cached, and replayed (with the
//! sign applied at read) for every repeat. The cache is cleared per input
//! element and per column tile.

use crate::quantizer::{rc_index, QuantizedMatrix};
use serde::Serialize;
use thiserror::Error;

/// Result cache: 128 product entries indexed by weight magnitude.
///
/// Clearing is an epoch bump so a fresh cache per (input element, tile) costs
/// O(1). An entry is live only when its epoch matches the current one.
#[derive(Debug, Clone)]
pub struct ResultCache {
    products: [i16; 128],
    epochs: [u32; 128],
    epoch: u32,
}

impl ResultCache {
    pub fn new() -> Self {
        Self {
            products: [0; 128],
            epochs: [0; 128],
            epoch: 1,
        }
    }

    /// Invalidates every entry.
    pub fn clear(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            // wrapped: stale epochs could alias, so erase them for real
            self.epochs = [0; 128];
            self.epoch = 1;
        }
    }

    #[inline]
    pub fn lookup(&self, index: u8) -> Option<i16> {
        (self.epochs[index as usize] == self.epoch).then(|| self.products[index as usize])
    }

    #[inline]
    pub fn insert(&mut self, index: u8, product: i16) {
        self.products[index as usize] = product;
        self.epochs[index as usize] = self.epoch;
    }

    pub fn live_entries(&self) -> usize {
        self.epochs.iter().filter(|&&e| e == self.epoch).count()
    }
}

impl Default for ResultCache {
    fn default() -> Self {
        Self::new()
    }
}

/// Column tiling of the weight stream; the cache is cleared at tile
/// boundaries so one tile of a row is what a 128-entry cache sees at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileConfig {
    pub tile_cols: usize,
}

impl TileConfig {
    pub fn new(tile_cols: usize) -> Result<Self, ReuseError> {
        if tile_cols == 0 {
            return Err(ReuseError::BadTile);
        }
        Ok(Self { tile_cols })
    }

    /// One tile covering the whole row.
    pub fn full_row(cols: usize) -> Self {
        Self {
            tile_cols: cols.max(1),
        }
    }

    pub fn tiles_for(&self, cols: usize) -> usize {
        cols.div_ceil(self.tile_cols)
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { tile_cols: 256 }
    }
}

/// Multiply/reuse tallies for a pass. `per_tile_mults[t]` is the number of
/// products actually multiplied in column tile t, summed over input elements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReuseStats {
    pub multiplications: u64,
    pub reuses: u64,
    pub per_tile_mults: Vec<u64>,
}

impl ReuseStats {
    pub fn total(&self) -> u64 {
        self.multiplications + self.reuses
    }

    /// reuses / (multiplications + reuses). Zero-work stats carry no rate.
    pub fn reuse_rate(&self) -> Result<f64, ReuseError> {
        let total = self.total();
        if total == 0 {
            return Err(ReuseError::EmptyStats);
        }
        Ok(self.reuses as f64 / total as f64)
    }

    pub fn merge(&mut self, other: &ReuseStats) {
        self.multiplications += other.multiplications;
        self.reuses += other.reuses;
        if self.per_tile_mults.len() < other.per_tile_mults.len() {
            self.per_tile_mults.resize(other.per_tile_mults.len(), 0);
        }
        for (acc, v) in self.per_tile_mults.iter_mut().zip(&other.per_tile_mults) {
            *acc += v;
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReuseError {
    #[error("input length {x} does not match weight rows {rows}")]
    DimensionMismatch { x: usize, rows: usize },
    #[error("tile_cols must be positive")]
    BadTile,
    #[error("reuse rate undefined: no work recorded")]
    EmptyStats,
    #[error("matrices disagree in rows: {a} vs {b}")]
    RowMismatch { a: usize, b: usize },
    #[error("matrices disagree in scale: {a} vs {b}; requantize first")]
    ScaleMismatch { a: f64, b: f64 },
    #[error("adaptor shapes do not chain: A is {a_rows}x{a_cols}, B is {b_rows}x{b_cols}, W is {w_rows}x{w_cols}")]
    LoraShape {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
        w_rows: usize,
        w_cols: usize,
    },
    #[error("accumulator overflow at column {col}")]
    AccumulatorOverflow { col: usize },
    #[error("adaptor has zero columns")]
    EmptyAdaptor,
}

/// Output accumulators; i32 holds any i8xi8 MVM up to 65536 rows without
/// overflow (127*127*65536 < 2^31).
pub type AccumulatorVector = Vec<i32>;

/// Reference MVM: y[j] = sum_i x[i] * w[i][j], every product multiplied.
pub fn naive_mvm(x: &[i8], w: &QuantizedMatrix) -> Result<AccumulatorVector, ReuseError> {
    if x.len() != w.rows() {
        return Err(ReuseError::DimensionMismatch {
            x: x.len(),
            rows: w.rows(),
        });
    }
    let mut y = vec![0i32; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        let xi = xi as i32;
        for (acc, &wij) in y.iter_mut().zip(w.row(i)) {
            *acc += xi * wij as i32;
        }
    }
    Ok(y)
}

/// One input element against one weight row (or row tile) through the cache.
/// Returns the partial products in column order; tallies go into `stats`
/// (tile histogram is the caller's concern).
pub fn reuse_row(
    x_elem: i8,
    w_row: &[i8],
    rc: &mut ResultCache,
    stats: &mut ReuseStats,
) -> Vec<i16> {
    let mut out = Vec::with_capacity(w_row.len());
    reuse_row_into(x_elem, w_row, rc, stats, &mut out);
    out
}

#[inline]
pub(crate) fn reuse_row_into(
    x_elem: i8,
    w_row: &[i8],
    rc: &mut ResultCache,
    stats: &mut ReuseStats,
    out: &mut Vec<i16>,
) {
    for &w in w_row {
        let slot = rc_index(w).expect("quantized weights exclude -128");
        let magnitude_product = match rc.lookup(slot.index) {
            Some(p) => {
                stats.reuses += 1;
                p
            }
            None => {
                let p = x_elem as i16 * slot.index as i16;
                rc.insert(slot.index, p);
                stats.multiplications += 1;
                p
            }
        };
        out.push(magnitude_product * slot.sign as i16);
    }
}

/// Cache-based MVM, bit-exact with [`naive_mvm`]: the cache is cleared for
/// every (input element, tile) pair, products accumulate per column.
pub fn reuse_mvm(
    x: &[i8],
    w: &QuantizedMatrix,
    tile: &TileConfig,
) -> Result<(AccumulatorVector, ReuseStats), ReuseError> {
    if x.len() != w.rows() {
        return Err(ReuseError::DimensionMismatch {
            x: x.len(),
            rows: w.rows(),
        });
    }
    let cols = w.cols();
    let n_tiles = if cols == 0 { 0 } else { tile.tiles_for(cols) };
    let mut y = vec![0i32; cols];
    let mut stats = ReuseStats {
        per_tile_mults: vec![0; n_tiles],
        ..Default::default()
    };
    let mut rc = ResultCache::new();
    let mut buf = Vec::with_capacity(tile.tile_cols.min(cols.max(1)));
    for t in 0..n_tiles {
        let lo = t * tile.tile_cols;
        let hi = (lo + tile.tile_cols).min(cols);
        for (i, &xi) in x.iter().enumerate() {
            rc.clear();
            let before = stats.multiplications;
            buf.clear();
            reuse_row_into(xi, &w.row(i)[lo..hi], &mut rc, &mut stats, &mut buf);
            stats.per_tile_mults[t] += stats.multiplications - before;
            for (acc, &p) in y[lo..hi].iter_mut().zip(buf.iter()) {
                *acc += p as i32;
            }
        }
    }
    Ok((y, stats))
}
