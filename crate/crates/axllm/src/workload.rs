//! Workload descriptions: which matrices a model run touches and how they
//! are sourced (synthetic distribution or an AXLM file on disk).
//!
//! Matrices are materialized one at a time during a run; a 13B-class proxy
//! does not fit in memory all at once.

use crate::dist::{subseed, DistError, DistributionSpec};
use crate::matfile;
use crate::quantizer::{quantize_with_scale, QuantizedMatrix};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default = "default_tokens")]
    pub tokens: u64,
    #[serde(default)]
    pub seed: u64,
    /// Source for matmuls that do not name their own.
    #[serde(default)]
    pub default_dist: DistributionSpec,
    pub layers: Vec<LayerSpec>,
}

fn default_tokens() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    /// Number of identical copies of this layer in the stack.
    #[serde(default = "default_repeat")]
    pub repeat: u32,
    pub matmuls: Vec<MatmulSpec>,
}

fn default_repeat() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatmulSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Synthetic source; mutually exclusive with `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistributionSpec>,
    /// Load weights from an AXLM file instead of sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraSpec {
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistributionSpec>,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("workload has no layers")]
    Empty,
    #[error("layer {layer} has no matmuls")]
    EmptyLayer { layer: String },
    #[error("matmul {name}: rows and cols must be nonzero")]
    ZeroDim { name: String },
    #[error("matmul {name}: exactly one of dist/file may be set")]
    AmbiguousSource { name: String },
    #[error("matmul {name}: lora rank must be nonzero")]
    ZeroRank { name: String },
    #[error("{what} {got} exceeds the supported maximum {max}")]
    Oversized {
        what: &'static str,
        got: u64,
        max: u64,
    },
    #[error("matmul {name}: file {path} holds a {got_rows}x{got_cols} matrix, expected {rows}x{cols}")]
    FileShape {
        name: String,
        path: PathBuf,
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matmul {name}: {source}")]
    File {
        name: String,
        source: matfile::MatFileError,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("workload parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Generous desk-scale ceilings; they keep every derived count inside u64
/// and bound what a hostile description file can make the tool allocate.
pub const MAX_DIM: usize = 1 << 24;
pub const MAX_RANK: usize = 1 << 16;
pub const MAX_REPEAT: u32 = 1 << 12;
pub const MAX_TOTAL_LAYERS: u64 = 1 << 16;
pub const MAX_TOKENS: u64 = 1 << 40;

fn bounded(what: &'static str, got: u64, max: u64) -> Result<(), WorkloadError> {
    if got > max {
        return Err(WorkloadError::Oversized { what, got, max });
    }
    Ok(())
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.layers.is_empty() {
            return Err(WorkloadError::Empty);
        }
        bounded("tokens", self.tokens, MAX_TOKENS)?;
        self.default_dist.normalized()?;
        let mut total_layers = 0u64;
        for layer in &self.layers {
            if layer.matmuls.is_empty() {
                return Err(WorkloadError::EmptyLayer {
                    layer: layer.name.clone(),
                });
            }
            bounded("layer repeat", layer.repeat as u64, MAX_REPEAT as u64)?;
            total_layers += layer.repeat as u64;
            bounded("total layer count", total_layers, MAX_TOTAL_LAYERS)?;
            for mm in &layer.matmuls {
                if mm.rows == 0 || mm.cols == 0 {
                    return Err(WorkloadError::ZeroDim {
                        name: mm.name.clone(),
                    });
                }
                bounded("rows", mm.rows as u64, MAX_DIM as u64)?;
                bounded("cols", mm.cols as u64, MAX_DIM as u64)?;
                if mm.dist.is_some() && mm.file.is_some() {
                    return Err(WorkloadError::AmbiguousSource {
                        name: mm.name.clone(),
                    });
                }
                if let Some(d) = &mm.dist {
                    d.normalized()?;
                }
                if let Some(l) = &mm.lora {
                    if l.rank == 0 {
                        return Err(WorkloadError::ZeroRank {
                            name: mm.name.clone(),
                        });
                    }
                    bounded("lora rank", l.rank as u64, MAX_RANK as u64)?;
                    if let Some(d) = &l.dist {
                        d.normalized()?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let spec: WorkloadSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Layer list with `repeat` expanded, as (layer index, spec) pairs.
    pub fn expanded_layers(&self) -> Vec<(u64, &LayerSpec)> {
        let mut out = Vec::new();
        let mut idx = 0u64;
        for layer in &self.layers {
            for _ in 0..layer.repeat {
                out.push((idx, layer));
                idx += 1;
            }
        }
        out
    }

    /// Weight elements streamed per token; saturates rather than wraps on
    /// absurd (but parseable) descriptions.
    pub fn total_weights(&self) -> u64 {
        self.expanded_layers()
            .iter()
            .fold(0u64, |acc, (_, l)| {
                let layer = l.matmuls.iter().fold(0u64, |acc, m| {
                    let base = (m.rows as u64).saturating_mul(m.cols as u64);
                    let lora = m.lora.as_ref().map_or(0, |l| {
                        (m.rows as u64)
                            .saturating_mul(l.rank as u64)
                            .saturating_add((l.rank as u64).saturating_mul(m.cols as u64))
                    });
                    acc.saturating_add(base).saturating_add(lora)
                });
                acc.saturating_add(layer)
            })
    }
}

pub struct MaterializedMatmul {
    pub w: QuantizedMatrix,
    /// (A, B) with A requantized to w's scale so the fused pass is legal.
    pub lora: Option<(QuantizedMatrix, QuantizedMatrix)>,
}

/// Role tags for subseed derivation.
const ROLE_W: u64 = 0;
const ROLE_A: u64 = 1;
const ROLE_B: u64 = 2;
const ROLE_X: u64 = 3;

/// Deterministic activation vector for one matmul, independent of the weight
/// streams.
pub fn materialize_input(
    spec: &WorkloadSpec,
    layer_idx: u64,
    matmul_idx: u64,
    len: usize,
) -> Vec<i8> {
    crate::dist::gen_input(len, subseed(spec.seed, &[layer_idx, matmul_idx, ROLE_X]))
}

/// Builds one matmul's matrices. `layer_idx` is the expanded layer index so
/// repeated layers get distinct weights.
pub fn materialize_matmul(
    spec: &WorkloadSpec,
    layer_idx: u64,
    matmul_idx: u64,
    mm: &MatmulSpec,
) -> Result<MaterializedMatmul, WorkloadError> {
    let dist = mm.dist.unwrap_or(spec.default_dist).normalized()?;
    let w = match &mm.file {
        Some(path) => {
            let m = matfile::read_matrix(path).map_err(|source| WorkloadError::File {
                name: mm.name.clone(),
                source,
            })?;
            if m.rows() != mm.rows || m.cols() != mm.cols {
                return Err(WorkloadError::FileShape {
                    name: mm.name.clone(),
                    path: path.clone(),
                    got_rows: m.rows(),
                    got_cols: m.cols(),
                    rows: mm.rows,
                    cols: mm.cols,
                });
            }
            m
        }
        None => crate::dist::gen_quantized(
            &dist,
            mm.rows,
            mm.cols,
            subseed(spec.seed, &[layer_idx, matmul_idx, ROLE_W]),
        )?,
    };
    let lora = match &mm.lora {
        Some(l) => {
            let ldist = l.dist.unwrap_or(dist).normalized()?;
            let a_real = crate::dist::sample_real(
                &ldist,
                mm.rows,
                l.rank,
                subseed(spec.seed, &[layer_idx, matmul_idx, ROLE_A]),
            )?;
            // A must share w's scale for the fused [W|A] pass
            let a = quantize_with_scale(&a_real, w.scale()).expect("scale is valid");
            let b = crate::dist::gen_quantized(
                &ldist,
                l.rank,
                mm.cols,
                subseed(spec.seed, &[layer_idx, matmul_idx, ROLE_B]),
            )?;
            Some((a, b))
        }
        None => None,
    };
    Ok(MaterializedMatmul { w, lora })
}

fn square_attention_layer(hidden: usize, ff: usize) -> LayerSpec {
    LayerSpec {
        name: "encoder".into(),
        repeat: 1,
        matmuls: vec![
            mat("q", hidden, hidden),
            mat("k", hidden, hidden),
            mat("v", hidden, hidden),
            mat("attn_out", hidden, hidden),
            mat("ff_up", hidden, ff),
            mat("ff_down", ff, hidden),
        ],
    }
}

fn gated_layer(hidden: usize, ff: usize) -> LayerSpec {
    LayerSpec {
        name: "decoder".into(),
        repeat: 1,
        matmuls: vec![
            mat("q", hidden, hidden),
            mat("k", hidden, hidden),
            mat("v", hidden, hidden),
            mat("attn_out", hidden, hidden),
            mat("gate", hidden, ff),
            mat("up", hidden, ff),
            mat("down", ff, hidden),
        ],
    }
}

fn mat(name: &str, rows: usize, cols: usize) -> MatmulSpec {
    MatmulSpec {
        name: name.into(),
        rows,
        cols,
        dist: None,
        file: None,
        lora: None,
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "distilbert-proxy",
    "bert-base-proxy",
    "bert-large-proxy",
    "llama7b-proxy",
    "llama13b-proxy",
];

/// Named model-shaped workloads. Layer counts and matrix shapes follow the
/// public architectures; weights are synthetic.
pub fn preset(name: &str, tokens: u64, seed: u64) -> Option<WorkloadSpec> {
    let (layer, repeat) = match name {
        "distilbert-proxy" => (square_attention_layer(768, 3072), 6),
        "bert-base-proxy" => (square_attention_layer(768, 3072), 12),
        "bert-large-proxy" => (square_attention_layer(1024, 4096), 24),
        "llama7b-proxy" => (gated_layer(4096, 11008), 32),
        "llama13b-proxy" => (gated_layer(5120, 13824), 40),
        _ => return None,
    };
    let mut layer = layer;
    layer.repeat = repeat;
    Some(WorkloadSpec {
        name: name.into(),
        tokens,
        seed,
        default_dist: DistributionSpec::gaussian_preset(),
        layers: vec![layer],
    })
}

/// One bare matmul, for ad hoc experiments and sweeps.
pub fn single_matmul(
    rows: usize,
    cols: usize,
    dist: DistributionSpec,
    tokens: u64,
    seed: u64,
    lora_rank: Option<usize>,
) -> WorkloadSpec {
    let mut mm = mat("matmul", rows, cols);
    mm.lora = lora_rank.map(|rank| LoraSpec { rank, dist: None });
    WorkloadSpec {
        name: format!("single-{rows}x{cols}"),
        tokens,
        seed,
        default_dist: dist,
        layers: vec![LayerSpec {
            name: "layer".into(),
            repeat: 1,
            matmuls: vec![mm],
        }],
    }
}

pub fn read_workload(path: &Path) -> Result<WorkloadSpec, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    WorkloadSpec::parse(&text)
}
