//! Symmetric per-group integer quantization.
//!
//! A group `G` is mapped to codes `round(G / a)` with scale `a = max|G| / L`,
//! `L = 2^(b-1) - 1`. Two-step fallback quantization additionally stores the
//! quantized residual `G - Q(G)` for selected blocks.

use crate::error::{config_err, dim_err, Result};
use crate::matrix::{BlockIndex, DenseMatrix, DeterministicRng, GroupGeometry};

/// Integer bit-width `b` in `2..=16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitWidth(u8);

impl BitWidth {
    pub const INT8: BitWidth = BitWidth(8);
    pub const INT10: BitWidth = BitWidth(10);
    pub const INT16: BitWidth = BitWidth(16);

    pub fn new(bits: u32) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return config_err(format!("bit-width must be in 2..=16, got {bits}"));
        }
        Ok(Self(bits as u8))
    }

    pub fn bits(self) -> u32 {
        self.0 as u32
    }

    /// Largest code magnitude `L = 2^(b-1) - 1`.
    pub fn level(self) -> i32 {
        (1 << (self.0 - 1)) - 1
    }
}

impl std::fmt::Display for BitWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Round half to even on an already-scaled value.
#[inline]
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// Round `x` up with probability `x - floor(x)`, given a uniform draw `u` in `[0, 1)`.
#[inline]
pub fn stochastic_round(x: f64, u: f64) -> f64 {
    let lo = x.floor();
    if u < x - lo {
        lo + 1.0
    } else {
        lo
    }
}

#[inline]
fn scale_for(abs_max: f32, bits: BitWidth) -> f32 {
    abs_max / bits.level() as f32
}

#[inline]
fn clamp_code(v: f64, level: i32) -> i16 {
    v.clamp(-(level as f64), level as f64) as i16
}

/// Integer codes plus one scale per group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    geometry: GroupGeometry,
    bits: BitWidth,
    codes: Vec<i16>,
    scales: Vec<f32>,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn geometry(&self) -> GroupGeometry {
        self.geometry
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    /// Codes in row-major order, one per element.
    pub fn codes(&self) -> &[i16] {
        &self.codes
    }

    /// Scales in row-major block order.
    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn grid(&self) -> (usize, usize) {
        self.geometry.grid(self.rows, self.cols)
    }

    pub fn code(&self, row: usize, col: usize) -> i16 {
        self.codes[row * self.cols + col]
    }

    pub fn scale(&self, idx: BlockIndex) -> f32 {
        self.scales[idx.block_row * self.grid().1 + idx.block_col]
    }

    /// Transposed tensor: codes, geometry and the scale grid are all transposed,
    /// so `dequantize(q.transpose()) == dequantize(q).transpose()`.
    pub fn transpose(&self) -> Self {
        let mut codes = vec![0i16; self.codes.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                codes[c * self.rows + r] = self.codes[r * self.cols + c];
            }
        }
        let (gr, gc) = self.grid();
        let mut scales = vec![0f32; self.scales.len()];
        for i in 0..gr {
            for j in 0..gc {
                scales[j * gr + i] = self.scales[i * gc + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            geometry: self.geometry.transposed(),
            bits: self.bits,
            codes,
            scales,
        }
    }

    /// Bytes used by codes at `bits` per element plus `f32` scales.
    pub fn packed_bytes(&self) -> usize {
        (self.codes.len() * self.bits.bits() as usize).div_ceil(8) + 4 * self.scales.len()
    }
}

fn for_each_block(
    rows: usize,
    cols: usize,
    g: GroupGeometry,
    mut f: impl FnMut(usize, BlockIndex, (usize, usize, usize, usize)),
) {
    let (gr, gc) = g.grid(rows, cols);
    for i in 0..gr {
        for j in 0..gc {
            let idx = BlockIndex::new(i, j);
            f(i * gc + j, idx, g.extent(rows, cols, idx));
        }
    }
}

fn quantize_with(
    m: &DenseMatrix,
    g: GroupGeometry,
    bits: BitWidth,
    mut round: impl FnMut(f64, usize) -> f64,
) -> QuantizedTensor {
    let (rows, cols) = m.shape();
    let (gr, gc) = g.grid(rows, cols);
    let level = bits.level();
    let data = m.data();
    let mut codes = vec![0i16; rows * cols];
    let mut scales = vec![0f32; gr * gc];
    for_each_block(rows, cols, g, |b, _, (r0, c0, h, w)| {
        let mut abs_max = 0f32;
        for r in r0..r0 + h {
            for &v in &data[r * cols + c0..r * cols + c0 + w] {
                abs_max = abs_max.max(v.abs());
            }
        }
        if abs_max == 0.0 {
            return;
        }
        let scale = scale_for(abs_max, bits);
        scales[b] = scale;
        let inv = scale as f64;
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                let lin = r * cols + c;
                codes[lin] = clamp_code(round(data[lin] as f64 / inv, lin), level);
            }
        }
    });
    QuantizedTensor {
        rows,
        cols,
        geometry: g,
        bits,
        codes,
        scales,
    }
}

/// Round-to-nearest (ties to even) per-group quantization.
pub fn quantize_rtn(m: &DenseMatrix, g: GroupGeometry, bits: BitWidth) -> QuantizedTensor {
    quantize_with(m, g, bits, |x, _| round_half_even(x))
}

/// Stochastic-rounding per-group quantization. The draw for an element is
/// taken from `rng` at the element's row-major linear index.
pub fn quantize_stochastic(
    m: &DenseMatrix,
    g: GroupGeometry,
    bits: BitWidth,
    rng: &DeterministicRng,
) -> QuantizedTensor {
    quantize_with(m, g, bits, |x, lin| {
        stochastic_round(x, rng.uniform(lin as u64))
    })
}

pub fn dequantize(q: &QuantizedTensor) -> DenseMatrix {
    let mut out = vec![0f32; q.rows * q.cols];
    for_each_block(q.rows, q.cols, q.geometry, |b, _, (r0, c0, h, w)| {
        let scale = q.scales[b];
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                let lin = r * q.cols + c;
                out[lin] = q.codes[lin] as f32 * scale;
            }
        }
    });
    DenseMatrix::from_raw(q.rows, q.cols, out)
}

/// One boolean per block of a block grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    grid_rows: usize,
    grid_cols: usize,
    bits: Vec<bool>,
}

impl BlockMask {
    pub fn filled(grid_rows: usize, grid_cols: usize, value: bool) -> Self {
        Self {
            grid_rows,
            grid_cols,
            bits: vec![value; grid_rows * grid_cols],
        }
    }

    pub fn from_vec(grid_rows: usize, grid_cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid_rows * grid_cols {
            return dim_err(format!(
                "mask for {grid_rows}x{grid_cols} grid needs {} entries, got {}",
                grid_rows * grid_cols,
                bits.len()
            ));
        }
        Ok(Self {
            grid_rows,
            grid_cols,
            bits,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn get(&self, idx: BlockIndex) -> bool {
        self.bits[idx.block_row * self.grid_cols + idx.block_col]
    }

    pub fn set(&mut self, idx: BlockIndex, value: bool) {
        self.bits[idx.block_row * self.grid_cols + idx.block_col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of blocks set.
    pub fn rate(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }
}

/// Second-step codes for one fallback block, laid out row-major over the
/// block's actual extent.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    rows: usize,
    cols: usize,
    codes: Vec<i16>,
    scale: f32,
}

impl ResidualBlock {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn codes(&self) -> &[i16] {
        &self.codes
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }
}

/// A quantized tensor whose masked blocks also carry a quantized residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackTensor {
    primary: QuantizedTensor,
    mask: BlockMask,
    residuals: Vec<Option<ResidualBlock>>,
}

impl FallbackTensor {
    pub fn primary(&self) -> &QuantizedTensor {
        &self.primary
    }

    pub fn mask(&self) -> &BlockMask {
        &self.mask
    }

    pub fn residual(&self, idx: BlockIndex) -> Option<&ResidualBlock> {
        self.residuals[idx.block_row * self.mask.grid_cols + idx.block_col].as_ref()
    }

    pub fn fallback_rate(&self) -> f64 {
        self.mask.rate()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.primary.shape()
    }
}

/// Two-step fallback quantization: every block is quantized once with
/// round-to-nearest; blocks selected by `mask` additionally store
/// `quantize_rtn(G - dequant(Q(G)))`.
pub fn fallback_quantize(
    m: &DenseMatrix,
    g: GroupGeometry,
    bits: BitWidth,
    mask: &BlockMask,
) -> Result<FallbackTensor> {
    let grid = g.grid(m.rows(), m.cols());
    if mask.grid() != grid {
        return dim_err(format!(
            "mask grid {:?} does not match block grid {:?}",
            mask.grid(),
            grid
        ));
    }
    let primary = quantize_rtn(m, g, bits);
    let level = bits.level();
    let cols = m.cols();
    let data = m.data();
    let mut residuals = vec![None; grid.0 * grid.1];
    for_each_block(m.rows(), cols, g, |b, _, (r0, c0, h, w)| {
        if !mask.bits[b] {
            return;
        }
        let scale = primary.scales[b];
        let mut diff = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                let lin = r * cols + c;
                diff.push(data[lin] - primary.codes[lin] as f32 * scale);
            }
        }
        let abs_max = diff.iter().fold(0f32, |a, v| a.max(v.abs()));
        let (codes, rscale) = if abs_max == 0.0 {
            (vec![0i16; diff.len()], 0.0)
        } else {
            let s = scale_for(abs_max, bits);
            let codes = diff
                .iter()
                .map(|&d| clamp_code(round_half_even(d as f64 / s as f64), level))
                .collect();
            (codes, s)
        };
        residuals[b] = Some(ResidualBlock {
            rows: h,
            cols: w,
            codes,
            scale: rscale,
        });
    });
    Ok(FallbackTensor {
        primary,
        mask: mask.clone(),
        residuals,
    })
}

pub fn dequantize_fallback(f: &FallbackTensor) -> DenseMatrix {
    let mut out = dequantize(&f.primary);
    let (rows, cols) = f.primary.shape();
    let g = f.primary.geometry;
    let data = out.data_mut();
    for_each_block(rows, cols, g, |b, _, (r0, c0, h, w)| {
        if let Some(res) = &f.residuals[b] {
            for r in 0..h {
                for c in 0..w {
                    data[(r0 + r) * cols + c0 + c] += res.codes[r * w + c] as f32 * res.scale;
                }
            }
        }
    });
    out
}
