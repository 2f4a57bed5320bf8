//! Linear layer with block-quantized forward and backward GEMMs.

use crate::error::{Error, Result};
use crate::gemm::{block_quant_gemm, fallback_gemm, gemm_oracle, GemmBlockShape};
use crate::matrix::{DenseMatrix, DeterministicRng, GroupGeometry};
use crate::policy::{
    controller_update, mask_threshold, mask_topk, score_blocks, ControllerConfig,
    FallbackCriterion, FallbackThresholdState,
};
use crate::quant::{
    fallback_quantize, quantize_rtn, quantize_stochastic, BitWidth, BlockMask, QuantizedTensor,
};

/// Block selection for the forward activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FallbackMode {
    /// Plain block quantization.
    Off,
    /// A fixed fraction of blocks, chosen by score.
    FixedRate {
        rate: f64,
        criterion: FallbackCriterion,
    },
    /// AbsMax threshold adjusted once per step by the delay controller.
    Delayed(ControllerConfig),
}

/// Quantization applied by linear layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearQuant {
    pub block: GemmBlockShape,
    pub x_bits: BitWidth,
    pub w_bits: BitWidth,
    pub grad_bits: BitWidth,
    pub fallback: FallbackMode,
}

impl LinearQuant {
    pub fn int8(block: GemmBlockShape, fallback: FallbackMode) -> Self {
        Self {
            block,
            x_bits: BitWidth::INT8,
            w_bits: BitWidth::INT8,
            grad_bits: BitWidth::INT8,
            fallback,
        }
    }
}

const TAG_X_CONTEXT: u64 = 1;
const TAG_GRAD_Y: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
enum LinearContext {
    Quantized(QuantizedTensor),
    Full(DenseMatrix),
}

/// `Y = X W^T` with `W` stored as `out x in`.
#[derive(Debug, Clone)]
pub struct QuantLinearLayer {
    id: u64,
    weight: DenseMatrix,
    grad: DenseMatrix,
    threshold: FallbackThresholdState,
    last_rate: f64,
    context: Option<LinearContext>,
}

impl QuantLinearLayer {
    pub fn new(id: u64, weight: DenseMatrix) -> Self {
        let (o, i) = weight.shape();
        Self {
            id,
            weight,
            grad: DenseMatrix::zeros(o, i),
            threshold: FallbackThresholdState::default(),
            last_rate: 0.0,
            context: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn grad(&self) -> &DenseMatrix {
        &self.grad
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.threshold
    }

    /// Fallback rate of the most recent forward pass.
    pub fn last_rate(&self) -> f64 {
        self.last_rate
    }

    /// True when the saved activation is held only in quantized form.
    pub fn context_is_quantized(&self) -> Option<bool> {
        self.context
            .as_ref()
            .map(|c| matches!(c, LinearContext::Quantized(_)))
    }

    pub fn zero_grad(&mut self) {
        let (o, i) = self.weight.shape();
        self.grad = DenseMatrix::zeros(o, i);
    }

    pub(crate) fn apply_sgd(&mut self, lr: f32) {
        let g = self.grad.data().to_vec();
        for (w, g) in self.weight.data_mut().iter_mut().zip(g) {
            *w -= lr * g;
        }
    }

    /// Advances the delay controller with the last observed rate.
    pub fn update_controller(&mut self, cfg: &ControllerConfig) {
        self.threshold = controller_update(self.threshold, self.last_rate, cfg);
    }

    fn rng(&self, seed: u64, step: u64, tag: u64) -> DeterministicRng {
        DeterministicRng::new(seed)
            .derive(self.id)
            .derive(step)
            .derive(tag)
    }

    fn select(&self, x: &DenseMatrix, q: &LinearQuant) -> Result<BlockMask> {
        let g = q.block.lhs_geometry();
        let grid = g.grid(x.rows(), x.cols());
        Ok(match q.fallback {
            FallbackMode::Off => BlockMask::filled(grid.0, grid.1, false),
            FallbackMode::FixedRate { rate, criterion } => {
                mask_topk(&score_blocks(x, g, q.x_bits, criterion), rate)?
            }
            FallbackMode::Delayed(_) => mask_threshold(
                &score_blocks(x, g, q.x_bits, FallbackCriterion::AbsMax),
                self.threshold.threshold,
            ),
        })
    }

    pub fn forward(
        &mut self,
        x: &DenseMatrix,
        quant: Option<&LinearQuant>,
        seed: u64,
        step: u64,
    ) -> Result<DenseMatrix> {
        let Some(q) = quant else {
            self.context = Some(LinearContext::Full(x.clone()));
            self.last_rate = 0.0;
            return gemm_oracle(x, &self.weight.transpose());
        };
        let g = q.block.lhs_geometry();
        let mask = self.select(x, q)?;
        let fx = fallback_quantize(x, g, q.x_bits, &mask)?;
        let qw = quantize_rtn(&self.weight.transpose(), q.block.rhs_geometry(), q.w_bits);
        let y = fallback_gemm(&fx, &qw, q.block)?;
        self.last_rate = mask.rate();
        let ctx = quantize_stochastic(x, g, q.x_bits, &self.rng(seed, step, TAG_X_CONTEXT));
        self.context = Some(LinearContext::Quantized(ctx));
        Ok(y)
    }

    /// Consumes the saved context, accumulates `dW` and returns `dX`.
    pub fn backward(
        &mut self,
        dy: &DenseMatrix,
        quant: Option<&LinearQuant>,
        seed: u64,
        step: u64,
    ) -> Result<DenseMatrix> {
        let ctx = self
            .context
            .take()
            .ok_or_else(|| Error::State(format!("layer {} has no saved context", self.id)))?;
        let (dx, dw) = match (quant, ctx) {
            (None, LinearContext::Full(x)) => {
                let dx = gemm_oracle(dy, &self.weight)?;
                let dw = gemm_oracle(&dy.transpose(), &x)?;
                (dx, dw)
            }
            (Some(q), LinearContext::Quantized(qx)) => {
                let b = q.block;
                let qdy = quantize_stochastic(
                    dy,
                    GroupGeometry::per_block(b.m_g, b.n_g),
                    q.grad_bits,
                    &self.rng(seed, step, TAG_GRAD_Y),
                );
                let qw = quantize_rtn(
                    &self.weight,
                    GroupGeometry::per_block(b.n_g, b.k_g),
                    q.w_bits,
                );
                let dx_shape = GemmBlockShape {
                    m_g: b.m_g,
                    n_g: b.k_g,
                    k_g: b.n_g,
                };
                let dx = block_quant_gemm(&qdy, &qw, dx_shape)?;
                let dw_shape = GemmBlockShape {
                    m_g: b.n_g,
                    n_g: b.k_g,
                    k_g: b.m_g,
                };
                let dw = block_quant_gemm(&qdy.transpose(), &qx, dw_shape)?;
                (dx, dw)
            }
            _ => {
                return Err(Error::State(format!(
                    "layer {} context does not match the quantization mode",
                    self.id
                )))
            }
        };
        self.grad = self.grad.zip_map(&dw, |a, b| a + b)?;
        Ok(dx)
    }
}
