//! Fallback block selection and the per-layer delay-threshold controller.

use crate::error::{config_err, Result};
use crate::matrix::{DenseMatrix, GroupGeometry};
use crate::quant::{dequantize, quantize_rtn, BitWidth, BlockMask};

/// How blocks are scored for fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackCriterion {
    /// Largest magnitude in the block.
    AbsMax,
    /// Sum of absolute round-to-nearest quantization error.
    L1,
    /// `L1` divided by the sum of absolute block values.
    L1Rel,
}

impl std::str::FromStr for FallbackCriterion {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "absmax" => Ok(Self::AbsMax),
            "l1" => Ok(Self::L1),
            "l1rel" | "l1-rel" => Ok(Self::L1Rel),
            other => config_err(format!("unknown fallback criterion '{other}'")),
        }
    }
}

impl std::fmt::Display for FallbackCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AbsMax => "absmax",
            Self::L1 => "l1",
            Self::L1Rel => "l1rel",
        })
    }
}

/// One score per block, row-major over the block grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockScores {
    grid_rows: usize,
    grid_cols: usize,
    values: Vec<f64>,
}

impl BlockScores {
    pub fn new(grid_rows: usize, grid_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid_rows * grid_cols {
            return crate::error::dim_err(format!(
                "{grid_rows}x{grid_cols} grid needs {} scores, got {}",
                grid_rows * grid_cols,
                values.len()
            ));
        }
        Ok(Self {
            grid_rows,
            grid_cols,
            values,
        })
    }

    /// A single row of scores, for tests and streams without 2-D structure.
    pub fn flat(values: Vec<f64>) -> Self {
        Self {
            grid_rows: 1,
            grid_cols: values.len(),
            values,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn score_blocks(
    m: &DenseMatrix,
    g: GroupGeometry,
    bits: BitWidth,
    criterion: FallbackCriterion,
) -> BlockScores {
    let (rows, cols) = m.shape();
    let (gr, gc) = g.grid(rows, cols);
    let deq = match criterion {
        FallbackCriterion::AbsMax => None,
        _ => Some(dequantize(&quantize_rtn(m, g, bits))),
    };
    let mut values = vec![0f64; gr * gc];
    for r in 0..rows {
        let bi = r / g.group_rows();
        for c in 0..cols {
            let b = bi * gc + c / g.group_cols();
            let x = m.get(r, c) as f64;
            match &deq {
                None => values[b] = values[b].max(x.abs()),
                Some(d) => values[b] += (x - d.get(r, c) as f64).abs(),
            }
        }
    }
    if criterion == FallbackCriterion::L1Rel {
        let mut mass = vec![0f64; gr * gc];
        for r in 0..rows {
            for c in 0..cols {
                mass[(r / g.group_rows()) * gc + c / g.group_cols()] += (m.get(r, c) as f64).abs();
            }
        }
        for (v, s) in values.iter_mut().zip(mass) {
            *v = if s == 0.0 { 0.0 } else { *v / s };
        }
    }
    BlockScores {
        grid_rows: gr,
        grid_cols: gc,
        values,
    }
}

/// Number of blocks selected at `rate`: `ceil(rate * count)`, ignoring
/// floating-point noise below 1e-9 blocks.
pub fn topk_count(rate: f64, count: usize) -> usize {
    let k = (rate * count as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(count)
}

/// Marks the `ceil(rate * n)` highest-scoring blocks; ties go to the lower
/// linear block index.
pub fn mask_topk(scores: &BlockScores, rate: f64) -> Result<BlockMask> {
    if !(0.0..=1.0).contains(&rate) {
        return config_err(format!("fallback rate must be in [0, 1], got {rate}"));
    }
    let k = topk_count(rate, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.values[b]
            .total_cmp(&scores.values[a])
            .then(a.cmp(&b))
    });
    let mut bits = vec![false; scores.len()];
    for &i in &order[..k] {
        bits[i] = true;
    }
    BlockMask::from_vec(scores.grid_rows, scores.grid_cols, bits)
}

/// Marks blocks whose score is strictly above `threshold`.
pub fn mask_threshold(scores: &BlockScores, threshold: f64) -> BlockMask {
    let bits = scores.values.iter().map(|&s| s > threshold).collect();
    BlockMask::from_vec(scores.grid_rows, scores.grid_cols, bits).expect("grid matches scores")
}

/// Target fallback-rate band and multiplicative step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    r_min: f64,
    r_max: f64,
    alpha: f64,
}

impl Default for ControllerConfig {
    /// Band `[0.1, 0.3]` with `alpha = 1.3`.
    fn default() -> Self {
        Self {
            r_min: 0.1,
            r_max: 0.3,
            alpha: 1.3,
        }
    }
}

impl ControllerConfig {
    pub fn new(r_min: f64, r_max: f64, alpha: f64) -> Result<Self> {
        if !(0.0 <= r_min && r_min < r_max && r_max <= 1.0) {
            return config_err(format!(
                "need 0 <= r_min < r_max <= 1, got [{r_min}, {r_max}]"
            ));
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return config_err(format!("adjustment factor must exceed 1, got {alpha}"));
        }
        Ok(Self {
            r_min,
            r_max,
            alpha,
        })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn contains(&self, rate: f64) -> bool {
        (self.r_min..=self.r_max).contains(&rate)
    }
}

/// Per-layer threshold state. Starts at threshold 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackThresholdState {
    pub threshold: f64,
    pub last_rate: f64,
}

impl Default for FallbackThresholdState {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            last_rate: 0.0,
        }
    }
}

/// One delay-threshold step driven by the rate observed with the previous
/// threshold.
pub fn controller_update(
    state: FallbackThresholdState,
    observed_rate: f64,
    cfg: &ControllerConfig,
) -> FallbackThresholdState {
    debug_assert!((0.0..=1.0).contains(&observed_rate));
    let threshold = if observed_rate < cfg.r_min {
        state.threshold / cfg.alpha
    } else if observed_rate > cfg.r_max {
        state.threshold * cfg.alpha
    } else {
        state.threshold
    };
    FallbackThresholdState {
        threshold,
        last_rate: observed_rate,
    }
}
