//! Reference arithmetic for INT8 training with dynamic block-level fallback.
//!
//! * [`matrix`]: dense matrices, quantization-group addressing, RNG and `.fmat` I/O.
//! * [`quant`]: per-group quantization, stochastic rounding, two-step fallback quantization.
//! * [`gemm`]: block-quantized and fallback GEMM with a 64-bit oracle and error metrics.
//! * [`policy`]: fallback criteria, mask construction and the delay-threshold controller.
//! * [`synth`]: synthetic GLU-style activations with structured and occasional outliers.
//! * [`trainsim`]: a toy quantized-training simulator with a full-precision twin.

pub mod error;
pub mod gemm;
pub mod matrix;
pub mod policy;
pub mod quant;
pub mod synth;
pub mod trainsim;

pub use error::{Error, Result};
