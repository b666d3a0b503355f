//! Argument surface and command bodies. Every report is TOML on stdout unless
//! --out names a file; file writes are atomic, so a failed run leaves nothing
//! behind.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};

use axllm::accel::{lora_timing, EnergyParams};
use axllm::dist::{
    gen_quantized, DistributionKind, DistributionSpec, GAUSSIAN_PRESET_SPREAD,
    LAPLACE_PRESET_SPREAD, UNIFORM_PRESET_SPREAD,
};
use axllm::lane::LaneTimingConfig;
use axllm::lora::{lora_mvm, row_overlap_rate};
use axllm::sliced::{RcSliceMapping, SliceConfig};
use axllm::workload::{
    materialize_input, materialize_matmul, preset, read_workload, single_matmul, PRESET_NAMES,
};
use axllm::{
    compare_reports, run_axllm, run_baseline, AcceleratorConfig, TileConfig, WorkloadSpec,
};

#[derive(Parser)]
#[command(
    name = "axllm",
    version,
    about = "Workbench for result-cache multiplication elimination"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a quantized weight matrix file
    Gen(GenArgs),
    /// Measure the functional reuse rate of one matrix
    ReuseRate(ReuseRateArgs),
    /// Simulate a workload on one machine and write the full report
    Run(RunArgs),
    /// Simulate both machines and report speedup and energy side by side
    Compare(CompareArgs),
    /// Fused adaptor pass against separate W, A, B passes
    Lora(LoraArgs),
    /// Cartesian sweep over geometry and spread, CSV out
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Gaussian,
    Laplace,
}

impl DistArg {
    fn kind(self) -> DistributionKind {
        match self {
            DistArg::Uniform => DistributionKind::Uniform,
            DistArg::Gaussian => DistributionKind::Gaussian,
            DistArg::Laplace => DistributionKind::Laplace,
        }
    }

    fn preset_spread(self) -> f64 {
        match self {
            DistArg::Uniform => UNIFORM_PRESET_SPREAD,
            DistArg::Gaussian => GAUSSIAN_PRESET_SPREAD,
            DistArg::Laplace => LAPLACE_PRESET_SPREAD,
        }
    }
}

#[derive(Args, Clone)]
struct DistArgs {
    /// Weight distribution for generated matrices
    #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
    dist: DistArg,
    /// Width before clipping to [-1, 1]; per-distribution preset when omitted
    #[arg(long)]
    spread: Option<f64>,
}

impl DistArgs {
    fn to_spec(&self) -> Result<DistributionSpec> {
        let spread = self.spread.unwrap_or_else(|| self.dist.preset_spread());
        Ok(DistributionSpec::new(self.dist.kind(), spread)?)
    }
}

#[derive(Args, Clone)]
#[command(group(
    clap::ArgGroup::new("source").required(true).args(["preset", "workload", "rows"])
))]
struct SourceArgs {
    /// Built-in workload
    #[arg(long, value_parser = PRESET_NAMES.to_vec())]
    preset: Option<String>,
    /// Workload description file (TOML)
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Ad hoc single matmul: rows
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    /// Ad hoc single matmul: columns
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    /// Adaptor rank on the ad hoc matmul
    #[arg(long, requires = "rows")]
    rank: Option<usize>,
    /// Input tokens per run (workload file's own value when omitted)
    #[arg(long)]
    tokens: Option<u64>,
    /// Root seed (workload file's own value when omitted)
    #[arg(long)]
    seed: Option<u64>,
}

impl SourceArgs {
    fn to_spec(&self, dist: DistributionSpec) -> Result<WorkloadSpec> {
        if let Some(name) = &self.preset {
            return preset(name, self.tokens.unwrap_or(1), self.seed.unwrap_or(0))
                .with_context(|| format!("unknown preset {name}"));
        }
        if let Some(path) = &self.workload {
            let mut spec = read_workload(path)?;
            if let Some(t) = self.tokens {
                spec.tokens = t;
            }
            if let Some(s) = self.seed {
                spec.seed = s;
            }
            return Ok(spec);
        }
        let rows = self.rows.expect("source group guarantees one");
        let cols = self.cols.expect("clap requires cols with rows");
        Ok(single_matmul(
            rows,
            cols,
            dist,
            self.tokens.unwrap_or(1),
            self.seed.unwrap_or(0),
            self.rank,
        ))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RcMappingArg {
    Contiguous,
    Modulo,
}

impl RcMappingArg {
    fn mapping(self) -> RcSliceMapping {
        match self {
            RcMappingArg::Contiguous => RcSliceMapping::Contiguous,
            RcMappingArg::Modulo => RcSliceMapping::Modulo,
        }
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Lanes in the array
    #[arg(long, default_value_t = 64)]
    lanes: usize,
    /// Columns per cache tile [default: 256, lora: whole widened row]
    #[arg(long)]
    tile_cols: Option<usize>,
    /// Weight/output buffer slices per lane (P)
    #[arg(long, default_value_t = 4)]
    slices: usize,
    /// Entries per weight-buffer slice [default: tile columns / slices]
    #[arg(long)]
    slice_size: Option<usize>,
    /// Depth of every credit-managed queue in the sliced lane
    #[arg(long, default_value_t = 4)]
    slice_queue_depth: usize,
    /// Result-cache partitions per lane
    #[arg(long, default_value_t = 4)]
    rc_slices: usize,
    /// Magnitude-to-slice mapping
    #[arg(long, value_enum, default_value_t = RcMappingArg::Contiguous)]
    rc_mapping: RcMappingArg,
    /// Multiplier latency, cycles
    #[arg(long, default_value_t = 3)]
    mult_latency: u64,
    /// Multiplier initiation interval, cycles
    #[arg(long, default_value_t = 3)]
    mult_ii: u64,
    /// Result-cache read latency, cycles
    #[arg(long, default_value_t = 1)]
    buffer_latency: u64,
    /// Queue depth of the non-sliced lane model
    #[arg(long, default_value_t = 4)]
    out_queue_depth: usize,
    /// Baseline multiplier initiation interval
    #[arg(long, default_value_t = 3)]
    baseline_ii: u64,
    /// Multipliers per baseline lane
    #[arg(long, default_value_t = 1)]
    baseline_multipliers: usize,
    /// Adder tree latency per stage
    #[arg(long, default_value_t = 1)]
    adder_stage_latency: u64,
    /// Fixed non-matmul cycles charged per layer
    #[arg(long, default_value_t = 0)]
    nonmatmul_cycles: u64,
    /// Energy per int8 multiply, relative to one cache access
    #[arg(long)]
    e_mult: Option<f64>,
}

impl ConfigArgs {
    fn to_config(&self) -> Result<AcceleratorConfig> {
        self.to_config_with(None)
    }

    /// `full_row` widens the default tile so one tile spans a whole row.
    fn to_config_with(&self, full_row: Option<usize>) -> Result<AcceleratorConfig> {
        let tile_cols = self.tile_cols.or(full_row).unwrap_or(256);
        let slice_size = self
            .slice_size
            .unwrap_or_else(|| tile_cols.div_ceil(self.slices.max(1)));
        let mut energy = EnergyParams::default();
        if let Some(e) = self.e_mult {
            energy.e_mult = e;
        }
        let cfg = AcceleratorConfig {
            lanes: self.lanes,
            tile: TileConfig::new(tile_cols)?,
            slice: SliceConfig {
                num_slices: self.slices,
                slice_size,
                queue_depth: self.slice_queue_depth,
                rc_slices: self.rc_slices,
                rc_mapping: self.rc_mapping.mapping(),
            },
            timing: LaneTimingConfig {
                mult_latency: self.mult_latency,
                mult_initiation_interval: self.mult_ii,
                buffer_access_latency: self.buffer_latency,
                out_queue_depth: self.out_queue_depth,
                baseline_initiation_interval: self.baseline_ii,
            },
            adder_tree_stage_latency: self.adder_stage_latency,
            baseline_multipliers_per_lane: self.baseline_multipliers,
            nonmatmul_cycles_per_layer: self.nonmatmul_cycles,
            energy,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output matrix file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("mat").required(true).args(["file", "rows"])))]
struct ReuseRateArgs {
    /// Matrix file to measure
    #[arg(long)]
    file: Option<PathBuf>,
    /// Generated matrix: rows
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    /// Generated matrix: columns
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Columns per cache tile, 0 for a single full-row tile
    #[arg(long, default_value_t = 256)]
    tile_cols: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    dist: DistArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Which machine to simulate
    #[arg(long, value_enum, default_value_t = ModeArg::Axllm)]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Axllm,
    Baseline,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    dist: DistArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoraArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Adaptor rank
    #[arg(long)]
    rank: usize,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Distribution for ad hoc matmuls
    #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
    dist: DistArg,
    /// Spread values; overrides the workload's default distribution
    #[arg(long, value_delimiter = ',')]
    spread: Vec<f64>,
    /// Slice counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "4")]
    slices: Vec<usize>,
    /// Queue depths to sweep
    #[arg(long, value_delimiter = ',', default_value = "4")]
    slice_queue_depth: Vec<usize>,
    /// Tile widths to sweep (slice size follows as tile/slices)
    #[arg(long, value_delimiter = ',', default_value = "256")]
    tile_cols: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    lanes: usize,
    #[arg(long, default_value_t = 4)]
    rc_slices: usize,
    /// CSV output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::ReuseRate(a) => cmd_reuse_rate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Lora(a) => cmd_lora(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => axllm::report::write_toml(path, value)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", axllm::report::toml_string(value)?),
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        bail!("matrix dimensions must be positive");
    }
    let m = gen_quantized(&a.dist.to_spec()?, a.rows, a.cols, a.seed)?;
    axllm::matfile::write_matrix(&a.out, &m)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "wrote {} ({}x{}, scale {})",
        a.out.display(),
        m.rows(),
        m.cols(),
        m.scale()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReuseRateReport {
    rows: usize,
    cols: usize,
    tile_cols: usize,
    /// Present when the matrix was generated rather than read from a file.
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    reuse_rate: f64,
    multiplications: u64,
    reuses: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist: Option<DistributionSpec>,
}

fn cmd_reuse_rate(a: &ReuseRateArgs) -> Result<()> {
    let mut generated = None;
    let m = match &a.file {
        Some(path) => axllm::matfile::read_matrix(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => {
            let rows = a.rows.expect("mat group guarantees one");
            let cols = a.cols.expect("clap requires cols with rows");
            if rows == 0 || cols == 0 {
                bail!("matrix dimensions must be positive");
            }
            let dist = a.dist.to_spec()?;
            generated = Some(dist);
            gen_quantized(&dist, rows, cols, a.seed)?
        }
    };
    let tile = if a.tile_cols == 0 {
        TileConfig::full_row(m.cols())
    } else {
        TileConfig::new(a.tile_cols)?
    };
    // hit/miss pattern depends only on the weight stream, any input works
    let x = vec![1i8; m.rows()];
    let (_y, stats) = axllm::reuse_mvm(&x, &m, &tile)?;
    let total = stats.multiplications + stats.reuses;
    emit(
        &ReuseRateReport {
            rows: m.rows(),
            cols: m.cols(),
            tile_cols: tile.tile_cols,
            seed: generated.map(|_| a.seed),
            reuse_rate: stats.reuses as f64 / total.max(1) as f64,
            multiplications: stats.multiplications,
            reuses: stats.reuses,
            dist: generated,
        },
        a.out.as_deref(),
    )
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let spec = a.source.to_spec(a.dist.to_spec()?)?;
    let cfg = a.config.to_config()?;
    let report = match a.mode {
        ModeArg::Axllm => run_axllm(&spec, &cfg)?,
        ModeArg::Baseline => run_baseline(&spec, &cfg)?,
    };
    emit(&report, a.out.as_deref())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let spec = a.source.to_spec(a.dist.to_spec()?)?;
    let cfg = a.config.to_config()?;
    let ax = run_axllm(&spec, &cfg)?;
    let base = run_baseline(&spec, &cfg)?;
    emit(&compare_reports(&ax, &base)?, a.out.as_deref())
}

#[derive(Serialize)]
struct LoraReport {
    rows: usize,
    cols: usize,
    rank: usize,
    seed: u64,
    /// Fraction of adaptor weights whose magnitude already occurs in the
    /// matching row of W.
    overlap_rate: f64,
    reuse_rate: f64,
    fused_mults: u64,
    separate_mults: u64,
    mult_reduction_pct: f64,
    fused_cycles: u64,
    separate_cycles: u64,
    fused_speedup: f64,
    dist: DistributionSpec,
    config: AcceleratorConfig,
}

fn cmd_lora(a: &LoraArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 || a.rank == 0 {
        bail!("rows, cols, and rank must be positive");
    }
    let spec = single_matmul(a.rows, a.cols, a.dist.to_spec()?, 1, a.seed, Some(a.rank));
    let cfg = a.config.to_config_with(Some(a.cols + a.rank))?;
    let m = materialize_matmul(&spec, 0, 0, &spec.layers[0].matmuls[0])?;
    let (la, lb) = m.lora.as_ref().expect("rank was set");
    let t = lora_timing(&m.w, la, lb, &cfg)?;
    let x = materialize_input(&spec, 0, 0, a.rows);
    let (_y, stats) = lora_mvm(&x, &m.w, la, lb, &cfg.tile)?;
    if stats.multiplications != t.fused_mults {
        bail!(
            "functional and timing multiply counts diverged: {} vs {}",
            stats.multiplications,
            t.fused_mults
        );
    }
    let total = stats.multiplications + stats.reuses;
    emit(
        &LoraReport {
            rows: a.rows,
            cols: a.cols,
            rank: a.rank,
            seed: a.seed,
            overlap_rate: row_overlap_rate(&m.w, la)?,
            reuse_rate: stats.reuses as f64 / total.max(1) as f64,
            fused_mults: t.fused_mults,
            separate_mults: t.separate_mults,
            mult_reduction_pct: (1.0 - t.fused_mults as f64 / t.separate_mults.max(1) as f64)
                * 100.0,
            fused_cycles: t.fused_cycles,
            separate_cycles: t.separate_cycles,
            fused_speedup: t.fused_speedup,
            dist: spec.default_dist,
            config: cfg,
        },
        a.out.as_deref(),
    )
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut csv = String::from(
        "slices,queue_depth,tile_cols,spread,seed,reuse_rate,speedup,stall_fraction,collision_rate,energy_ratio\n",
    );
    let spreads: Vec<Option<f64>> = if a.spread.is_empty() {
        vec![None]
    } else {
        a.spread.iter().copied().map(Some).collect()
    };
    for &sp in &spreads {
        let dist = match sp {
            Some(s) => DistributionSpec::new(a.dist.kind(), s)?,
            None => DistributionSpec::new(a.dist.kind(), a.dist.preset_spread())?,
        };
        let mut spec = a.source.to_spec(dist)?;
        if let Some(s) = sp {
            spec.default_dist = DistributionSpec::new(spec.default_dist.kind, s)?;
        }
        let spread_shown = spec.default_dist.normalized()?.spread;
        for &slices in &a.slices {
            for &depth in &a.slice_queue_depth {
                for &tile in &a.tile_cols {
                    let cfg = AcceleratorConfig {
                        lanes: a.lanes,
                        tile: TileConfig::new(tile)?,
                        slice: SliceConfig {
                            num_slices: slices,
                            slice_size: tile.div_ceil(slices.max(1)),
                            queue_depth: depth,
                            rc_slices: a.rc_slices,
                            rc_mapping: RcSliceMapping::Contiguous,
                        },
                        ..AcceleratorConfig::default()
                    };
                    cfg.validate()?;
                    let ax = run_axllm(&spec, &cfg)?;
                    let base = run_baseline(&spec, &cfg)?;
                    let cmp = compare_reports(&ax, &base)?;
                    csv.push_str(&format!(
                        "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                        slices,
                        depth,
                        tile,
                        spread_shown,
                        spec.seed,
                        cmp.reuse_rate,
                        cmp.speedup,
                        cmp.stall_fraction,
                        cmp.collision_rate,
                        cmp.energy_ratio
                    ));
                }
            }
        }
    }
    match &a.out {
        Some(path) => axllm::report::write_atomic(path, csv.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
