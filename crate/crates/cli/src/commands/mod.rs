pub mod gemm_check;
pub mod gen;
pub mod sweep;
pub mod train;
