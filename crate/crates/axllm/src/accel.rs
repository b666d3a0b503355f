//! Whole-accelerator model: a row-parallel array of lanes works through each
//! matrix in passes (one row per lane) and column tiles, lane partials merged
//! by a pipelined adder tree. Timing is input-independent, so one simulated
//! token prices a whole sequence exactly.

use crate::lane::{simulate_baseline_lane, LaneError, LaneTimingConfig};
use crate::lora::{combine_lora, lora_mvm};
use crate::quantizer::QuantizedMatrix;
use crate::reuse::{
    reuse_row_into, AccumulatorVector, ResultCache, ReuseError, ReuseStats, TileConfig,
};
use crate::sliced::{simulate_sliced_lane, SliceConfig, SlicedLaneError};
use crate::workload::{materialize_matmul, MatmulSpec, WorkloadError, WorkloadSpec};
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

/// Per-event energy weights, arbitrary units. The multiply weight is
/// calibrated so the default configuration lands on the measured
/// accelerator-to-baseline power ratio; the rest are unit costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParams {
    pub e_mult: f64,
    pub e_rc: f64,
    pub e_buffer: f64,
    pub e_add: f64,
    pub e_queue: f64,
}

/// Multiply energy relative to a unit table/buffer access, calibrated once on
/// the distilbert-proxy compare run (miss rate 0.3048, zero baseline
/// writeback conflicts) so the default-config energy ratio lands at 0.71.
pub const E_MULT_DEFAULT: f64 = 5.6;

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            e_mult: E_MULT_DEFAULT,
            e_rc: 1.0,
            e_buffer: 1.0,
            e_add: 1.0,
            e_queue: 0.25,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), AccelError> {
        let all = [self.e_mult, self.e_rc, self.e_buffer, self.e_add, self.e_queue];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AccelError::BadConfig(
                "energy weights must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcceleratorConfig {
    /// Lanes working one pass of rows in parallel.
    pub lanes: usize,
    pub tile: TileConfig,
    pub slice: SliceConfig,
    pub timing: LaneTimingConfig,
    pub adder_tree_stage_latency: u64,
    /// Multipliers per lane in the conventional baseline.
    pub baseline_multipliers_per_lane: usize,
    /// Fixed per-layer cycles outside the matmuls (attention, norms, io).
    pub nonmatmul_cycles_per_layer: u64,
    pub energy: EnergyParams,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            lanes: 64,
            tile: TileConfig::default(),
            slice: SliceConfig::default(),
            timing: LaneTimingConfig::default(),
            adder_tree_stage_latency: 1,
            baseline_multipliers_per_lane: 1,
            nonmatmul_cycles_per_layer: 0,
            energy: EnergyParams::default(),
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<(), AccelError> {
        if self.lanes == 0 {
            return Err(AccelError::BadConfig("lanes must be positive"));
        }
        if self.baseline_multipliers_per_lane == 0 {
            return Err(AccelError::BadConfig(
                "baseline needs at least one multiplier per lane",
            ));
        }
        self.slice.validate()?;
        self.timing.validate()?;
        if self.tile.tile_cols > self.slice.lane_buffer_entries() {
            return Err(AccelError::BadConfig(
                "tile does not fit the lane weight buffer",
            ));
        }
        self.energy.validate()
    }
}

#[derive(Debug, Error)]
pub enum AccelError {
    #[error("{0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Reuse(#[from] ReuseError),
    #[error(transparent)]
    Lane(#[from] LaneError),
    #[error(transparent)]
    Sliced(#[from] SlicedLaneError),
    #[error("adder tree needs at least one equal-length input vector")]
    TreeShape,
    #[error("timing model issued {timing} multiplies, functional model {functional}")]
    CounterMismatch { functional: u64, timing: u64 },
    #[error("comparison needs one accelerator run and one baseline run")]
    ModeMismatch,
    #[error("runs describe different workloads")]
    WorkloadMismatch,
    #[error("runs used different accelerator configurations")]
    ConfigMismatch,
}

/// ceil(log2(lanes)): stages a lane partial crosses to reach the tree root.
pub fn adder_tree_depth(lanes: usize) -> u32 {
    (lanes.max(1) as u64).next_power_of_two().trailing_zeros()
}

/// Pairwise reduction of per-lane partial vectors, the functional view of
/// the adder tree. Exactly equals the flat sum.
pub fn accumulate_adder_tree(
    partials: &[AccumulatorVector],
) -> Result<AccumulatorVector, AccelError> {
    if partials.is_empty() || partials.iter().any(|p| p.len() != partials[0].len()) {
        return Err(AccelError::TreeShape);
    }
    let mut level = partials.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [a, b] => next.push(a.iter().zip(b).map(|(x, y)| x + y).collect()),
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    Ok(level.pop().expect("nonempty"))
}

/// Functional MVM through the full pass/tile/lane/tree structure. Bit-exact
/// with the flat reuse engine and the reference matmul; exercised here so the
/// array assembly itself is under test, not just per-row reuse.
pub fn accelerator_mvm(
    x: &[i8],
    w: &QuantizedMatrix,
    cfg: &AcceleratorConfig,
) -> Result<(AccumulatorVector, ReuseStats), AccelError> {
    cfg.validate()?;
    if x.len() != w.rows() {
        return Err(AccelError::Reuse(ReuseError::DimensionMismatch {
            x: x.len(),
            rows: w.rows(),
        }));
    }
    let cols = w.cols();
    let n_tiles = cfg.tile.tiles_for(cols);
    let mut y = vec![0i32; cols];
    let mut stats = ReuseStats {
        per_tile_mults: vec![0; n_tiles],
        ..Default::default()
    };
    let mut rc = ResultCache::new();
    let mut buf = Vec::new();
    for pass_lo in (0..w.rows()).step_by(cfg.lanes) {
        let pass_hi = (pass_lo + cfg.lanes).min(w.rows());
        for t in 0..n_tiles {
            let lo = t * cfg.tile.tile_cols;
            let hi = (lo + cfg.tile.tile_cols).min(cols);
            let mut partials: Vec<AccumulatorVector> = Vec::with_capacity(pass_hi - pass_lo);
            for r in pass_lo..pass_hi {
                rc.clear();
                let before = stats.multiplications;
                buf.clear();
                reuse_row_into(x[r], &w.row(r)[lo..hi], &mut rc, &mut stats, &mut buf);
                stats.per_tile_mults[t] += stats.multiplications - before;
                partials.push(buf.iter().map(|&p| p as i32).collect());
            }
            let merged = accumulate_adder_tree(&partials)?;
            for (acc, v) in y[lo..hi].iter_mut().zip(merged) {
                *acc += v;
            }
        }
    }
    Ok((y, stats))
}

/// Event tallies for a whole run, extensive (scaled by token count).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub weights_streamed: u64,
    pub mults: u64,
    pub reuses: u64,
    /// Reuse-path table reads; writes equal `mults`.
    pub rc_reads: u64,
    pub rc_writes: u64,
    /// Weight-buffer read plus output-buffer write per element.
    pub buffer_accesses: u64,
    /// Every partial product crosses exactly one adder (tree or accumulator).
    pub adds: u64,
    pub queue_transfers: u64,
    pub hazard_wait_cycles: u64,
    pub credit_stall_cycles: u64,
    pub rc_collision_events: u64,
    pub fetch_requests: u64,
    /// Sum of per-lane busy cycles, the stall-fraction denominator.
    pub lane_cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub mult: f64,
    pub rc: f64,
    pub buffer: f64,
    pub adder: f64,
    pub queue: f64,
    pub total: f64,
}

pub fn estimate_energy(c: &Counters, p: &EnergyParams) -> EnergyBreakdown {
    let mult = c.mults as f64 * p.e_mult;
    let rc = (c.rc_reads + c.rc_writes) as f64 * p.e_rc;
    let buffer = c.buffer_accesses as f64 * p.e_buffer;
    let adder = c.adds as f64 * p.e_add;
    let queue = c.queue_transfers as f64 * p.e_queue;
    EnergyBreakdown {
        mult,
        rc,
        buffer,
        adder,
        queue,
        total: mult + rc + buffer + adder + queue,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Axllm,
    Baseline,
}

/// Enough of the workload to prove two runs measured the same thing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkloadEcho {
    pub name: String,
    pub seed: u64,
    pub tokens: u64,
    pub matmuls: u64,
    pub total_weights: u64,
}

impl WorkloadEcho {
    fn of(spec: &WorkloadSpec) -> Self {
        Self {
            name: spec.name.clone(),
            seed: spec.seed,
            tokens: spec.tokens,
            matmuls: spec
                .expanded_layers()
                .iter()
                .map(|(_, l)| l.matmuls.len() as u64)
                .sum(),
            total_weights: spec.total_weights(),
        }
    }
}

/// Per-matrix line in a report. Work figures are per token.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixReport {
    pub layer: String,
    pub layer_index: u64,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub lora_rank: usize,
    pub reuse_rate: f64,
    pub mults: u64,
    pub reuses: u64,
    pub cycles_per_token: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub report_version: u32,
    pub mode: RunMode,
    pub workload: WorkloadEcho,
    pub total_cycles: u64,
    pub reuse_rate: f64,
    pub stall_fraction: f64,
    pub collision_rate: f64,
    pub counters: Counters,
    pub energy: EnergyBreakdown,
    pub config: AcceleratorConfig,
    pub per_matrix: Vec<MatrixReport>,
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
struct TimingAgg {
    cycles: u64,
    lane_cycles: u64,
    mults: u64,
    reuses: u64,
    hazard_wait: u64,
    credit_stall: u64,
    collisions: u64,
    fetches: u64,
}

impl TimingAgg {
    fn absorb(&mut self, other: &TimingAgg) {
        self.cycles += other.cycles;
        self.lane_cycles += other.lane_cycles;
        self.mults += other.mults;
        self.reuses += other.reuses;
        self.hazard_wait += other.hazard_wait;
        self.credit_stall += other.credit_stall;
        self.collisions += other.collisions;
        self.fetches += other.fetches;
    }
}

/// Cycle cost of one matrix on the lane array: for each pass of rows and each
/// column tile, every lane streams its row segment; the wave ends when the
/// slowest lane drains, plus the tree traversal.
fn simulate_matrix_timing(
    m: &QuantizedMatrix,
    cfg: &AcceleratorConfig,
) -> Result<TimingAgg, AccelError> {
    let tree = u64::from(adder_tree_depth(cfg.lanes)) * cfg.adder_tree_stage_latency;
    let n_tiles = cfg.tile.tiles_for(m.cols());
    let mut agg = TimingAgg::default();
    for pass_lo in (0..m.rows()).step_by(cfg.lanes) {
        let pass_hi = (pass_lo + cfg.lanes).min(m.rows());
        for t in 0..n_tiles {
            let lo = t * cfg.tile.tile_cols;
            let hi = (lo + cfg.tile.tile_cols).min(m.cols());
            let mut wave = 0u64;
            for r in pass_lo..pass_hi {
                let trace = simulate_sliced_lane(&m.row(r)[lo..hi], &cfg.slice, &cfg.timing)?;
                wave = wave.max(trace.total_cycles);
                agg.lane_cycles += trace.total_cycles;
                agg.mults += trace.mults_issued;
                agg.reuses += trace.reuses_issued;
                agg.hazard_wait += trace.hazard_wait_cycles;
                agg.credit_stall += trace.credit_stall_cycles;
                agg.collisions += trace.rc_collision_events;
                agg.fetches += trace.fetch_requests;
            }
            agg.cycles += wave + tree;
        }
    }
    Ok(agg)
}

/// Baseline cost of a rows x cols matrix. Lane time depends only on segment
/// length, so per-length traces are memoized across the whole run.
fn baseline_matrix_timing(
    rows: usize,
    cols: usize,
    cfg: &AcceleratorConfig,
    memo: &mut HashMap<usize, crate::lane::LaneTrace>,
) -> Result<(TimingAgg, u64), AccelError> {
    let tree = u64::from(adder_tree_depth(cfg.lanes)) * cfg.adder_tree_stage_latency;
    let n_tiles = cfg.tile.tiles_for(cols);
    let mut agg = TimingAgg::default();
    let mut conflicts = 0u64;
    for pass_lo in (0..rows).step_by(cfg.lanes) {
        let active = ((pass_lo + cfg.lanes).min(rows) - pass_lo) as u64;
        for t in 0..n_tiles {
            let lo = t * cfg.tile.tile_cols;
            let hi = (lo + cfg.tile.tile_cols).min(cols);
            let seg = hi - lo;
            if !memo.contains_key(&seg) {
                let trace =
                    simulate_baseline_lane(seg, cfg.baseline_multipliers_per_lane, &cfg.timing)?;
                memo.insert(seg, trace);
            }
            let trace = &memo[&seg];
            agg.cycles += trace.total_cycles + tree;
            agg.lane_cycles += active * trace.total_cycles;
            agg.mults += active * trace.mults_issued;
            conflicts += active * trace.writeback_conflicts;
        }
    }
    Ok((agg, conflicts))
}

struct MatmulOutcome {
    stats: ReuseStats,
    timing: TimingAgg,
    weights: u64,
}

fn process_matmul_axllm(
    spec: &WorkloadSpec,
    layer_idx: u64,
    matmul_idx: u64,
    mm: &MatmulSpec,
    cfg: &AcceleratorConfig,
) -> Result<MatmulOutcome, AccelError> {
    let m = materialize_matmul(spec, layer_idx, matmul_idx, mm)?;
    let x = crate::workload::materialize_input(spec, layer_idx, matmul_idx, mm.rows);
    let (stats, timing, weights) = match &m.lora {
        None => {
            let (_y, stats) = accelerator_mvm(&x, &m.w, cfg)?;
            let timing = simulate_matrix_timing(&m.w, cfg)?;
            let weights = m.w.data().len() as u64;
            (stats, timing, weights)
        }
        Some((a, b)) => {
            let (_y, stats) = lora_mvm(&x, &m.w, a, b, &cfg.tile)?;
            let combined = combine_lora(&m.w, a)?;
            let mut timing = simulate_matrix_timing(&combined, cfg)?;
            timing.absorb(&simulate_matrix_timing(b, cfg)?);
            let weights = (combined.data().len() + b.data().len()) as u64;
            (stats, timing, weights)
        }
    };
    if stats.multiplications != timing.mults || stats.reuses != timing.reuses {
        return Err(AccelError::CounterMismatch {
            functional: stats.multiplications,
            timing: timing.mults,
        });
    }
    Ok(MatmulOutcome {
        stats,
        timing,
        weights,
    })
}

pub fn run_axllm(spec: &WorkloadSpec, cfg: &AcceleratorConfig) -> Result<RunReport, AccelError> {
    spec.validate()?;
    cfg.validate()?;
    let mut counters = Counters::default();
    let mut per_matrix = Vec::new();
    let mut cycles_per_token = 0u64;
    let layers = spec.expanded_layers();
    for (layer_idx, layer) in &layers {
        for (matmul_idx, mm) in layer.matmuls.iter().enumerate() {
            let out = process_matmul_axllm(spec, *layer_idx, matmul_idx as u64, mm, cfg)?;
            let t = &out.timing;
            cycles_per_token += t.cycles;
            counters.weights_streamed += out.weights;
            counters.mults += t.mults;
            counters.reuses += t.reuses;
            counters.hazard_wait_cycles += t.hazard_wait;
            counters.credit_stall_cycles += t.credit_stall;
            counters.rc_collision_events += t.collisions;
            counters.fetch_requests += t.fetches;
            counters.lane_cycles += t.lane_cycles;
            per_matrix.push(MatrixReport {
                layer: layer.name.clone(),
                layer_index: *layer_idx,
                name: mm.name.clone(),
                rows: mm.rows,
                cols: mm.cols,
                lora_rank: mm.lora.as_ref().map_or(0, |l| l.rank),
                reuse_rate: out.stats.reuse_rate().unwrap_or(0.0),
                mults: t.mults,
                reuses: t.reuses,
                cycles_per_token: t.cycles,
            });
        }
        cycles_per_token += cfg.nonmatmul_cycles_per_layer;
    }
    scale_counters(&mut counters, spec.tokens);
    counters.rc_reads = counters.reuses;
    counters.rc_writes = counters.mults;
    counters.buffer_accesses = 2 * counters.weights_streamed;
    counters.adds = counters.weights_streamed;
    // pushes: every weight enters a request queue and an out queue, misses
    // also cross the multiplier feed
    counters.queue_transfers = 2 * counters.weights_streamed + counters.mults;
    finish_report(RunMode::Axllm, spec, cfg, cycles_per_token, counters, per_matrix)
}

pub fn run_baseline(spec: &WorkloadSpec, cfg: &AcceleratorConfig) -> Result<RunReport, AccelError> {
    spec.validate()?;
    cfg.validate()?;
    let mut counters = Counters::default();
    let mut per_matrix = Vec::new();
    let mut cycles_per_token = 0u64;
    let mut conflicts = 0u64;
    let mut memo = HashMap::new();
    let layers = spec.expanded_layers();
    for (layer_idx, layer) in &layers {
        for mm in &layer.matmuls {
            let mut shapes: Vec<(usize, usize)> = vec![(mm.rows, mm.cols)];
            if let Some(l) = &mm.lora {
                shapes.push((mm.rows, l.rank));
                shapes.push((l.rank, mm.cols));
            }
            let mut mm_cycles = 0u64;
            let mut mm_mults = 0u64;
            for (rows, cols) in shapes {
                let (agg, c) = baseline_matrix_timing(rows, cols, cfg, &mut memo)?;
                mm_cycles += agg.cycles;
                mm_mults += agg.mults;
                conflicts += c;
                counters.lane_cycles += agg.lane_cycles;
                counters.weights_streamed += (rows * cols) as u64;
            }
            cycles_per_token += mm_cycles;
            counters.mults += mm_mults;
            per_matrix.push(MatrixReport {
                layer: layer.name.clone(),
                layer_index: *layer_idx,
                name: mm.name.clone(),
                rows: mm.rows,
                cols: mm.cols,
                lora_rank: mm.lora.as_ref().map_or(0, |l| l.rank),
                reuse_rate: 0.0,
                mults: mm_mults,
                reuses: 0,
                cycles_per_token: mm_cycles,
            });
        }
        cycles_per_token += cfg.nonmatmul_cycles_per_layer;
    }
    scale_counters(&mut counters, spec.tokens);
    conflicts *= spec.tokens;
    counters.buffer_accesses = 2 * counters.weights_streamed;
    counters.adds = counters.weights_streamed;
    counters.queue_transfers = counters.weights_streamed + conflicts;
    finish_report(RunMode::Baseline, spec, cfg, cycles_per_token, counters, per_matrix)
}

fn scale_counters(c: &mut Counters, tokens: u64) {
    c.weights_streamed *= tokens;
    c.mults *= tokens;
    c.reuses *= tokens;
    c.hazard_wait_cycles *= tokens;
    c.credit_stall_cycles *= tokens;
    c.rc_collision_events *= tokens;
    c.fetch_requests *= tokens;
    c.lane_cycles *= tokens;
}

fn finish_report(
    mode: RunMode,
    spec: &WorkloadSpec,
    cfg: &AcceleratorConfig,
    cycles_per_token: u64,
    counters: Counters,
    per_matrix: Vec<MatrixReport>,
) -> Result<RunReport, AccelError> {
    let streamed = counters.mults + counters.reuses;
    let reuse_rate = if streamed == 0 {
        0.0
    } else {
        counters.reuses as f64 / streamed as f64
    };
    let stall_fraction = if counters.lane_cycles == 0 {
        0.0
    } else {
        counters.hazard_wait_cycles as f64 / counters.lane_cycles as f64
    };
    let collision_rate = if counters.fetch_requests == 0 {
        0.0
    } else {
        counters.rc_collision_events as f64 / counters.fetch_requests as f64
    };
    Ok(RunReport {
        report_version: REPORT_VERSION,
        mode,
        workload: WorkloadEcho::of(spec),
        total_cycles: cycles_per_token.saturating_mul(spec.tokens),
        reuse_rate,
        stall_fraction,
        collision_rate,
        counters,
        energy: estimate_energy(&counters, &cfg.energy),
        config: *cfg,
        per_matrix,
    })
}

/// Cycle cost of one adaptor matmul done fused versus separate.
///
/// Fused streams `[W | A]` through the cache in one pass, then B; separate
/// streams W, A, and B as three plain matrices. The B pass is identical in
/// both, so the gap is what riding A inside W's stream buys.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LoraTiming {
    pub fused_cycles: u64,
    pub separate_cycles: u64,
    pub fused_speedup: f64,
    pub fused_mults: u64,
    pub separate_mults: u64,
}

pub fn lora_timing(
    w: &QuantizedMatrix,
    a: &QuantizedMatrix,
    b: &QuantizedMatrix,
    cfg: &AcceleratorConfig,
) -> Result<LoraTiming, AccelError> {
    cfg.validate()?;
    let combined = combine_lora(w, a)?;
    let b_pass = simulate_matrix_timing(b, cfg)?;
    let mut fused = simulate_matrix_timing(&combined, cfg)?;
    fused.absorb(&b_pass);
    let mut separate = simulate_matrix_timing(w, cfg)?;
    separate.absorb(&simulate_matrix_timing(a, cfg)?);
    separate.absorb(&b_pass);
    Ok(LoraTiming {
        fused_cycles: fused.cycles,
        separate_cycles: separate.cycles,
        fused_speedup: separate.cycles as f64 / fused.cycles.max(1) as f64,
        fused_mults: fused.mults,
        separate_mults: separate.mults,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub report_version: u32,
    pub workload: WorkloadEcho,
    pub axllm_cycles: u64,
    pub baseline_cycles: u64,
    pub speedup: f64,
    pub energy_axllm: f64,
    pub energy_baseline: f64,
    pub energy_ratio: f64,
    pub energy_reduction_pct: f64,
    pub reuse_rate: f64,
    pub stall_fraction: f64,
    pub collision_rate: f64,
    pub config: AcceleratorConfig,
}

pub fn compare_reports(
    ax: &RunReport,
    base: &RunReport,
) -> Result<ComparisonReport, AccelError> {
    if ax.mode != RunMode::Axllm || base.mode != RunMode::Baseline {
        return Err(AccelError::ModeMismatch);
    }
    if ax.workload != base.workload {
        return Err(AccelError::WorkloadMismatch);
    }
    if ax.config != base.config {
        return Err(AccelError::ConfigMismatch);
    }
    let speedup = base.total_cycles as f64 / ax.total_cycles.max(1) as f64;
    let energy_ratio = ax.energy.total / base.energy.total.max(f64::MIN_POSITIVE);
    Ok(ComparisonReport {
        report_version: REPORT_VERSION,
        workload: ax.workload.clone(),
        axllm_cycles: ax.total_cycles,
        baseline_cycles: base.total_cycles,
        speedup,
        energy_axllm: ax.energy.total,
        energy_baseline: base.energy.total,
        energy_ratio,
        energy_reduction_pct: (1.0 - energy_ratio) * 100.0,
        reuse_rate: ax.reuse_rate,
        stall_fraction: ax.stall_fraction,
        collision_rate: ax.collision_rate,
        config: ax.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{gen_quantized, DistributionSpec};
    use crate::reuse::{naive_mvm, reuse_mvm};
    use crate::workload::single_matmul;
    use proptest::prelude::*;

    fn tiny_cfg() -> AcceleratorConfig {
        AcceleratorConfig {
            lanes: 4,
            ..Default::default()
        }
    }

    #[test]
    fn tree_depth_is_ceil_log2() {
        for (lanes, depth) in [(1, 0), (2, 1), (3, 2), (4, 2), (63, 6), (64, 6), (65, 7)] {
            assert_eq!(adder_tree_depth(lanes), depth, "lanes {lanes}");
        }
    }

    #[test]
    fn tree_equals_flat_sum() {
        let parts: Vec<AccumulatorVector> =
            vec![vec![1, -2], vec![3, 4], vec![-5, 6], vec![7, 0], vec![2, 2]];
        let summed = accumulate_adder_tree(&parts).unwrap();
        assert_eq!(summed, vec![1 + 3 - 5 + 7 + 2, -2 + 4 + 6 + 0 + 2]);
        assert_eq!(
            accumulate_adder_tree(&parts[..1]).unwrap(),
            parts[0].clone()
        );
    }

    #[test]
    fn tree_rejects_bad_shapes() {
        assert!(accumulate_adder_tree(&[]).is_err());
        assert!(accumulate_adder_tree(&[vec![1], vec![1, 2]]).is_err());
    }

    #[test]
    fn assembly_matches_flat_reuse_and_reference() {
        let cfg = AcceleratorConfig {
            lanes: 3,
            tile: TileConfig::new(5).unwrap(),
            slice: SliceConfig {
                num_slices: 1,
                slice_size: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let w = gen_quantized(&DistributionSpec::gaussian_preset(), 10, 13, 3).unwrap();
        let x = crate::dist::gen_input(10, 4);
        let (y, stats) = accelerator_mvm(&x, &w, &cfg).unwrap();
        let (y_flat, stats_flat) = reuse_mvm(&x, &w, &cfg.tile).unwrap();
        assert_eq!(y, y_flat);
        assert_eq!(stats, stats_flat);
        assert_eq!(y, naive_mvm(&x, &w).unwrap());
    }

    #[test]
    fn energy_is_linear_in_counters() {
        let c = Counters {
            mults: 10,
            rc_reads: 20,
            rc_writes: 10,
            buffer_accesses: 60,
            adds: 30,
            queue_transfers: 70,
            ..Default::default()
        };
        let p = EnergyParams {
            e_mult: 4.0,
            e_rc: 1.0,
            e_buffer: 1.0,
            e_add: 1.0,
            e_queue: 0.25,
        };
        let e = estimate_energy(&c, &p);
        assert_eq!(e.mult, 40.0);
        assert_eq!(e.rc, 30.0);
        assert_eq!(e.buffer, 60.0);
        assert_eq!(e.adder, 30.0);
        assert_eq!(e.queue, 17.5);
        assert_eq!(e.total, 40.0 + 30.0 + 60.0 + 30.0 + 17.5);
        let zero = estimate_energy(&Counters::default(), &p);
        assert_eq!(zero.total, 0.0);
        let doubled = EnergyParams { e_mult: 8.0, ..p };
        assert_eq!(estimate_energy(&c, &doubled).mult, 80.0);
    }

    #[test]
    fn run_counters_are_consistent() {
        let spec = single_matmul(10, 20, DistributionSpec::gaussian_preset(), 1, 5, None);
        let r = run_axllm(&spec, &tiny_cfg()).unwrap();
        assert_eq!(r.mode, RunMode::Axllm);
        assert_eq!(r.counters.mults + r.counters.reuses, 200);
        assert_eq!(r.counters.weights_streamed, 200);
        assert_eq!(r.counters.rc_writes, r.counters.mults);
        assert_eq!(r.counters.rc_reads, r.counters.reuses);
        assert_eq!(r.counters.buffer_accesses, 400);
        assert_eq!(r.counters.adds, 200);
        assert_eq!(r.per_matrix.len(), 1);
        assert_eq!(
            r.total_cycles,
            r.per_matrix.iter().map(|m| m.cycles_per_token).sum::<u64>()
        );
        assert!(r.reuse_rate > 0.0 && r.reuse_rate < 1.0);
    }

    #[test]
    fn baseline_multiplies_everything() {
        let spec = single_matmul(10, 20, DistributionSpec::gaussian_preset(), 1, 5, None);
        let r = run_baseline(&spec, &tiny_cfg()).unwrap();
        assert_eq!(r.mode, RunMode::Baseline);
        assert_eq!(r.counters.mults, 200);
        assert_eq!(r.counters.reuses, 0);
        assert_eq!(r.reuse_rate, 0.0);
        assert_eq!(r.stall_fraction, 0.0);
    }

    #[test]
    fn tokens_scale_cycles_and_counters_exactly() {
        let one = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 1, 5, None);
        let three = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 3, 5, None);
        let cfg = tiny_cfg();
        let r1 = run_axllm(&one, &cfg).unwrap();
        let r3 = run_axllm(&three, &cfg).unwrap();
        assert_eq!(r3.total_cycles, 3 * r1.total_cycles);
        assert_eq!(r3.counters.mults, 3 * r1.counters.mults);
        assert_eq!(r3.counters.lane_cycles, 3 * r1.counters.lane_cycles);
        assert_eq!(r3.per_matrix[0].cycles_per_token, r1.per_matrix[0].cycles_per_token);
    }

    #[test]
    fn nonmatmul_cycles_add_per_layer() {
        let spec = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 2, 5, None);
        let mut cfg = tiny_cfg();
        let base = run_axllm(&spec, &cfg).unwrap().total_cycles;
        cfg.nonmatmul_cycles_per_layer = 100;
        let padded = run_axllm(&spec, &cfg).unwrap().total_cycles;
        assert_eq!(padded, base + 2 * 100);
    }

    #[test]
    fn lora_run_covers_all_three_matrices() {
        let spec = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 1, 5, Some(2));
        let cfg = tiny_cfg();
        let r = run_axllm(&spec, &cfg).unwrap();
        assert_eq!(r.per_matrix[0].lora_rank, 2);
        // combined [W|A] plus B
        assert_eq!(r.counters.weights_streamed, (8 * 16 + 8 * 2 + 2 * 16) as u64);
        let b = run_baseline(&spec, &cfg).unwrap();
        assert_eq!(b.counters.mults, r.counters.weights_streamed);
    }

    #[test]
    fn lora_fused_never_loses_to_separate() {
        let spec = single_matmul(16, 64, DistributionSpec::gaussian_preset(), 1, 7, Some(4));
        let m = crate::workload::materialize_matmul(&spec, 0, 0, &spec.layers[0].matmuls[0])
            .unwrap();
        let (a, b) = m.lora.as_ref().unwrap();
        let mut cfg = tiny_cfg();
        // full-row tiles over the widened stream
        cfg.tile = TileConfig::full_row(64 + 4);
        cfg.slice.slice_size = (64usize + 4).div_ceil(cfg.slice.num_slices);
        let t = lora_timing(&m.w, a, b, &cfg).unwrap();
        assert!(t.fused_cycles <= t.separate_cycles);
        assert!(t.fused_mults <= t.separate_mults);
        assert!(t.fused_speedup >= 1.0);
        // fused run must agree with the end-to-end path
        let fused_run = run_axllm(&spec, &cfg).unwrap();
        assert_eq!(fused_run.total_cycles, t.fused_cycles);
    }

    #[test]
    fn repeated_layers_double_baseline_cycles() {
        let mut two = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 1, 5, None);
        two.layers[0].repeat = 2;
        let one = single_matmul(8, 16, DistributionSpec::gaussian_preset(), 1, 5, None);
        let cfg = tiny_cfg();
        assert_eq!(
            run_baseline(&two, &cfg).unwrap().total_cycles,
            2 * run_baseline(&one, &cfg).unwrap().total_cycles
        );
    }

    #[test]
    fn comparison_matches_hand_ratio() {
        let spec = single_matmul(16, 512, DistributionSpec::gaussian_preset(), 1, 5, None);
        let cfg = tiny_cfg();
        let ax = run_axllm(&spec, &cfg).unwrap();
        let base = run_baseline(&spec, &cfg).unwrap();
        let cmp = compare_reports(&ax, &base).unwrap();
        assert!(cmp.speedup > 1.0, "speedup {}", cmp.speedup);
        assert_eq!(
            cmp.speedup,
            base.total_cycles as f64 / ax.total_cycles as f64
        );
        assert!(cmp.energy_ratio < 1.0);
        assert!((cmp.energy_reduction_pct - (1.0 - cmp.energy_ratio) * 100.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_rejects_mismatches() {
        let spec = single_matmul(8, 8, DistributionSpec::gaussian_preset(), 1, 5, None);
        let other = single_matmul(8, 8, DistributionSpec::gaussian_preset(), 1, 6, None);
        let cfg = tiny_cfg();
        let ax = run_axllm(&spec, &cfg).unwrap();
        let base = run_baseline(&other, &cfg).unwrap();
        assert!(matches!(
            compare_reports(&ax, &base),
            Err(AccelError::WorkloadMismatch)
        ));
        let base_ok = run_baseline(&spec, &cfg).unwrap();
        assert!(matches!(
            compare_reports(&base_ok, &ax),
            Err(AccelError::ModeMismatch)
        ));
    }

    #[test]
    fn config_validation_catches_oversized_tile() {
        let cfg = AcceleratorConfig {
            tile: TileConfig::new(512).unwrap(),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(AccelError::BadConfig(_))));
    }

    #[test]
    fn report_serializes_to_toml() {
        let spec = single_matmul(8, 8, DistributionSpec::gaussian_preset(), 1, 5, None);
        let r = run_axllm(&spec, &tiny_cfg()).unwrap();
        let text = crate::report::toml_string(&r).unwrap();
        assert!(text.contains("report_version = 1"));
        assert!(text.contains("[[per_matrix]]"));
        assert!(text.contains("mode = \"axllm\""));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn assembly_always_matches_reference(
            rows in 1usize..20,
            cols in 1usize..40,
            lanes in 1usize..6,
            seed in any::<u64>(),
        ) {
            let cfg = AcceleratorConfig {
                lanes,
                tile: TileConfig::new(7).unwrap(),
                slice: SliceConfig { num_slices: 1, slice_size: 7, ..Default::default() },
                ..Default::default()
            };
            let w = gen_quantized(&DistributionSpec::gaussian_preset(), rows, cols, seed).unwrap();
            let x = crate::dist::gen_input(rows, seed ^ 1);
            let (y, _) = accelerator_mvm(&x, &w, &cfg).unwrap();
            prop_assert_eq!(y, naive_mvm(&x, &w).unwrap());
        }

        #[test]
        fn timing_and_functional_counters_agree(
            rows in 1usize..16,
            cols in 1usize..48,
            seed in any::<u64>(),
        ) {
            let spec = single_matmul(rows, cols, DistributionSpec::gaussian_preset(), 1, seed, None);
            let r = run_axllm(&spec, &tiny_cfg()).unwrap();
            // run_axllm errors out on mismatch; reaching here is the assertion
            prop_assert_eq!(r.counters.mults + r.counters.reuses, (rows * cols) as u64);
        }
    }
}
