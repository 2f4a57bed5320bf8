//! Saved activations for the backward pass.

use crate::matrix::{DenseMatrix, GroupGeometry};
use crate::quant::{dequantize, quantize_rtn, BitWidth, QuantizedTensor};

/// How non-linear layers store their backward contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextConfig {
    /// `None` keeps contexts in full precision.
    pub bits: Option<BitWidth>,
    /// Row-segment length of a context group (`1 x group`).
    pub group: usize,
}

impl ContextConfig {
    pub const FULL: ContextConfig = ContextConfig {
        bits: None,
        group: 128,
    };

    /// 10-bit, `1 x 128` groups.
    pub fn int10() -> Self {
        Self {
            bits: Some(BitWidth::INT10),
            group: 128,
        }
    }

    pub fn geometry(&self) -> GroupGeometry {
        GroupGeometry::per_block(1, self.group)
    }
}

/// A tensor kept for backward, either quantized or full precision.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedTensor {
    Quantized(QuantizedTensor),
    Full(DenseMatrix),
}

impl SavedTensor {
    pub fn save(m: &DenseMatrix, cfg: &ContextConfig) -> Self {
        match cfg.bits {
            Some(bits) => Self::Quantized(quantize_rtn(m, cfg.geometry(), bits)),
            None => Self::Full(m.clone()),
        }
    }

    pub fn restore(&self) -> DenseMatrix {
        match self {
            Self::Quantized(q) => dequantize(q),
            Self::Full(m) => m.clone(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Self::Quantized(_))
    }
}
