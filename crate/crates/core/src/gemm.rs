//! Block-quantized GEMM.
//!
//! For `C = A B` with `A` split into `m_g x k_g` blocks and `B` into
//! `k_g x n_g` blocks, each output block is
//!
//! ```text
//! C[i,j] = sum_k  IntGemm(Q(A[i,k]), Q(B[k,j])) * a[i,k] * b[k,j]
//!               + u(i,k) * IntGemm(Q(dA[i,k]), Q(B[k,j])) * ra[i,k] * b[k,j]
//! ```
//!
//! Integer products accumulate in `i32` inside a block; the scaled partial
//! products accumulate in `f32` in ascending `k`, primary before residual.
//! Output blocks are independent and computed in parallel; each has exactly
//! one accumulator, so results do not depend on the schedule.

use rayon::prelude::*;

use crate::error::{config_err, dim_err, Result};
use crate::matrix::{BlockIndex, DenseMatrix, GroupGeometry};
use crate::quant::{FallbackTensor, QuantizedTensor};

/// Widest integer operands accepted by the block kernels.
pub const MAX_GEMM_BITS: u32 = 8;

/// Quantization block sides of a GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmBlockShape {
    pub m_g: usize,
    pub n_g: usize,
    pub k_g: usize,
}

impl Default for GemmBlockShape {
    fn default() -> Self {
        Self::cube(128)
    }
}

impl GemmBlockShape {
    pub fn new(m_g: usize, n_g: usize, k_g: usize) -> Result<Self> {
        if m_g == 0 || n_g == 0 || k_g == 0 {
            return config_err(format!(
                "block sides must be positive, got {m_g}x{n_g}x{k_g}"
            ));
        }
        let shape = Self { m_g, n_g, k_g };
        shape.check_accumulator(MAX_GEMM_BITS)?;
        Ok(shape)
    }

    pub fn cube(side: usize) -> Self {
        Self {
            m_g: side,
            n_g: side,
            k_g: side,
        }
    }

    /// Geometry expected of the left operand.
    pub fn lhs_geometry(&self) -> GroupGeometry {
        GroupGeometry::per_block(self.m_g, self.k_g)
    }

    /// Geometry expected of the right operand.
    pub fn rhs_geometry(&self) -> GroupGeometry {
        GroupGeometry::per_block(self.k_g, self.n_g)
    }

    /// Largest magnitude an intra-block integer dot product can reach.
    pub fn max_partial_sum(&self, bits: u32) -> i64 {
        let level = (1i64 << (bits - 1)) - 1;
        self.k_g as i64 * level * level
    }

    /// Fails unless `k_g * L^2 < 2^31`.
    pub fn check_accumulator(&self, bits: u32) -> Result<()> {
        if self.max_partial_sum(bits) >= 1i64 << 31 {
            return config_err(format!(
                "k_g = {} overflows the i32 accumulator at {bits} bits",
                self.k_g
            ));
        }
        Ok(())
    }
}

/// Sub-block shape used to decompose each block product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileShape {
    pub m_t: usize,
    pub n_t: usize,
    pub k_t: usize,
}

impl TileShape {
    pub fn cube(side: usize) -> Self {
        Self {
            m_t: side,
            n_t: side,
            k_t: side,
        }
    }

    fn check(&self, shape: &GemmBlockShape) -> Result<()> {
        let divides = |t: usize, b: usize| t >= 1 && b.is_multiple_of(t);
        if !(divides(self.m_t, shape.m_g)
            && divides(self.n_t, shape.n_g)
            && divides(self.k_t, shape.k_g))
        {
            return config_err(format!(
                "tile {}x{}x{} does not divide block {}x{}x{}",
                self.m_t, self.n_t, self.k_t, shape.m_g, shape.n_g, shape.k_g
            ));
        }
        Ok(())
    }
}

/// Product accumulated in `f64`, rounded to `f32` on output.
pub fn gemm_oracle(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let (m, k) = a.shape();
    let (kb, n) = b.shape();
    if k != kb {
        return dim_err(format!("inner dimensions {k} and {kb} differ"));
    }
    let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0f32; m * n];
    if n == 0 {
        return Ok(DenseMatrix::from_raw(m, n, out));
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row_out)| {
        let mut acc = vec![0f64; n];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            for (s, &bv) in acc.iter_mut().zip(&b64[p * n..(p + 1) * n]) {
                *s += av * bv;
            }
        }
        for (o, s) in row_out.iter_mut().zip(acc) {
            *o = s as f32;
        }
    });
    Ok(DenseMatrix::from_raw(m, n, out))
}

/// A strided window onto `i16` codes.
#[derive(Clone, Copy)]
struct CodeBlock<'a> {
    data: &'a [i16],
    stride: usize,
    offset: usize,
}

impl<'a> CodeBlock<'a> {
    #[inline]
    fn row(&self, r: usize, start: usize, len: usize) -> &'a [i16] {
        let s = self.offset + r * self.stride + start;
        &self.data[s..s + len]
    }
}

#[inline]
fn dot_i16(a: &[i16], b: &[i16]) -> i32 {
    // |sum| <= k_g * L^2 < 2^31 is checked when the shape is built, so
    // wrapping arithmetic never actually wraps.
    a.iter().zip(b).fold(0i32, |s, (&x, &y)| {
        s.wrapping_add((x as i32).wrapping_mul(y as i32))
    })
}

/// Integer block product over a tile grid. `lhs` is `h x kd` (row-major),
/// `rhs_t` is the right block transposed (`w x kd`), `acc` is `h x w`.
fn int_block_product(
    lhs: CodeBlock<'_>,
    rhs_t: CodeBlock<'_>,
    (h, w, kd): (usize, usize, usize),
    tile: TileShape,
    acc: &mut [i32],
) {
    for r0 in (0..h).step_by(tile.m_t) {
        let r1 = (r0 + tile.m_t).min(h);
        for c0 in (0..w).step_by(tile.n_t) {
            let c1 = (c0 + tile.n_t).min(w);
            for p0 in (0..kd).step_by(tile.k_t) {
                let len = tile.k_t.min(kd - p0);
                for r in r0..r1 {
                    let a = lhs.row(r, p0, len);
                    let out = &mut acc[r * w..r * w + w];
                    for c in c0..c1 {
                        out[c] = out[c].wrapping_add(dot_i16(a, rhs_t.row(c, p0, len)));
                    }
                }
            }
        }
    }
}

fn check_operands(
    qa: &QuantizedTensor,
    qb: &QuantizedTensor,
    shape: &GemmBlockShape,
) -> Result<()> {
    if qa.cols() != qb.rows() {
        return dim_err(format!(
            "inner dimensions {} and {} differ",
            qa.cols(),
            qb.rows()
        ));
    }
    if qa.geometry() != shape.lhs_geometry() {
        return dim_err(format!(
            "lhs geometry {:?} does not match block shape {:?}",
            qa.geometry(),
            shape
        ));
    }
    if qb.geometry() != shape.rhs_geometry() {
        return dim_err(format!(
            "rhs geometry {:?} does not match block shape {:?}",
            qb.geometry(),
            shape
        ));
    }
    let bits = qa.bits().bits().max(qb.bits().bits());
    if bits > MAX_GEMM_BITS {
        return config_err(format!(
            "GEMM operands must be at most {MAX_GEMM_BITS} bits, got {bits}"
        ));
    }
    shape.check_accumulator(bits)
}

fn blocked_gemm(
    qa: &QuantizedTensor,
    fallback: Option<&FallbackTensor>,
    qb: &QuantizedTensor,
    shape: GemmBlockShape,
    tile: TileShape,
) -> Result<DenseMatrix> {
    check_operands(qa, qb, &shape)?;
    tile.check(&shape)?;
    let (m, k) = qa.shape();
    let n = qb.cols();
    let (grid_m, grid_k) = qa.grid();
    let grid_n = qb.grid().1;

    let bt = qb.transpose();
    let lhs = CodeBlock {
        data: qa.codes(),
        stride: k,
        offset: 0,
    };

    let blocks: Vec<(usize, usize)> = (0..grid_m)
        .flat_map(|i| (0..grid_n).map(move |j| (i, j)))
        .collect();
    let results: Vec<Vec<f32>> = blocks
        .par_iter()
        .map(|&(i, j)| {
            let (r0, h) = (i * shape.m_g, shape.m_g.min(m - i * shape.m_g));
            let (c0, w) = (j * shape.n_g, shape.n_g.min(n - j * shape.n_g));
            let mut acc = vec![0f32; h * w];
            let mut ints = vec![0i32; h * w];
            for kb in 0..grid_k {
                let (p0, kd) = (kb * shape.k_g, shape.k_g.min(k - kb * shape.k_g));
                let idx_a = BlockIndex::new(i, kb);
                let b_scale = qb.scale(BlockIndex::new(kb, j));
                let rhs_t = CodeBlock {
                    data: bt.codes(),
                    stride: k,
                    offset: c0 * k + p0,
                };

                ints.fill(0);
                int_block_product(
                    CodeBlock {
                        offset: r0 * k + p0,
                        ..lhs
                    },
                    rhs_t,
                    (h, w, kd),
                    tile,
                    &mut ints,
                );
                let s = qa.scale(idx_a) * b_scale;
                for (o, &p) in acc.iter_mut().zip(&ints) {
                    *o += p as f32 * s;
                }

                if let Some(res) = fallback.and_then(|f| f.residual(idx_a)) {
                    ints.fill(0);
                    let res_lhs = CodeBlock {
                        data: res.codes(),
                        stride: kd,
                        offset: 0,
                    };
                    int_block_product(res_lhs, rhs_t, (h, w, kd), tile, &mut ints);
                    let s = res.scale() * b_scale;
                    for (o, &p) in acc.iter_mut().zip(&ints) {
                        *o += p as f32 * s;
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = vec![0f32; m * n];
    for (&(i, j), acc) in blocks.iter().zip(results) {
        let (r0, c0) = (i * shape.m_g, j * shape.n_g);
        let w = shape.n_g.min(n - c0);
        for (r, row) in acc.chunks(w.max(1)).enumerate() {
            out[(r0 + r) * n + c0..(r0 + r) * n + c0 + w].copy_from_slice(row);
        }
    }
    Ok(DenseMatrix::from_raw(m, n, out))
}

fn whole_block(shape: &GemmBlockShape) -> TileShape {
    TileShape {
        m_t: shape.m_g,
        n_t: shape.n_g,
        k_t: shape.k_g,
    }
}

/// Block-quantized GEMM: per-block integer products, dequantized and
/// accumulated in `f32`.
pub fn block_quant_gemm(
    qa: &QuantizedTensor,
    qb: &QuantizedTensor,
    shape: GemmBlockShape,
) -> Result<DenseMatrix> {
    blocked_gemm(qa, None, qb, shape, whole_block(&shape))
}

/// Mixed-precision GEMM where masked left blocks also contribute their
/// residual block product.
pub fn fallback_gemm(
    fa: &FallbackTensor,
    qb: &QuantizedTensor,
    shape: GemmBlockShape,
) -> Result<DenseMatrix> {
    let (gm, gk) = fa.primary().grid();
    if fa.mask().grid() != (gm, gk) {
        return dim_err("fallback mask does not match the lhs block grid");
    }
    blocked_gemm(fa.primary(), Some(fa), qb, shape, whole_block(&shape))
}

/// [`block_quant_gemm`] with every block product split into tiles that
/// share the block's scales.
pub fn tiled_block_gemm(
    qa: &QuantizedTensor,
    qb: &QuantizedTensor,
    shape: GemmBlockShape,
    tile: TileShape,
) -> Result<DenseMatrix> {
    blocked_gemm(qa, None, qb, shape, tile)
}

/// [`fallback_gemm`] with tiled block products.
pub fn tiled_fallback_gemm(
    fa: &FallbackTensor,
    qb: &QuantizedTensor,
    shape: GemmBlockShape,
    tile: TileShape,
) -> Result<DenseMatrix> {
    blocked_gemm(fa.primary(), Some(fa), qb, shape, tile)
}

/// Error metrics of `actual` against `reference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub rmse: f64,
    pub max_abs_err: f64,
    pub cosine_similarity: f64,
    pub underflow_fraction: f64,
}

/// Cosine similarity of two flattened tensors. Two all-zero tensors are
/// treated as identical (1); one all-zero tensor gives 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn compare(actual: &DenseMatrix, reference: &DenseMatrix) -> Result<ErrorReport> {
    if actual.shape() != reference.shape() {
        return dim_err(format!("{:?} vs {:?}", actual.shape(), reference.shape()));
    }
    let mut sq = 0f64;
    let mut max_abs = 0f64;
    let mut nonzero = 0usize;
    let mut underflow = 0usize;
    for (&x, &r) in actual.data().iter().zip(reference.data()) {
        let e = (x as f64 - r as f64).abs();
        sq += e * e;
        max_abs = max_abs.max(e);
        if r != 0.0 {
            nonzero += 1;
            if x == 0.0 {
                underflow += 1;
            }
        }
    }
    let count = actual.len().max(1) as f64;
    Ok(ErrorReport {
        rmse: (sq / count).sqrt(),
        max_abs_err: max_abs,
        cosine_similarity: cosine_similarity(actual.data(), reference.data()),
        underflow_fraction: if nonzero == 0 {
            0.0
        } else {
            underflow as f64 / nonzero as f64
        },
    })
}

/// `||actual - reference||_F / ||reference||_F`, computed in `f64`.
/// Returns the absolute norm when the reference is zero.
pub fn relative_frobenius(actual: &DenseMatrix, reference: &DenseMatrix) -> Result<f64> {
    if actual.shape() != reference.shape() {
        return dim_err(format!("{:?} vs {:?}", actual.shape(), reference.shape()));
    }
    let (mut diff, mut norm) = (0f64, 0f64);
    for (&x, &r) in actual.data().iter().zip(reference.data()) {
        diff += (x as f64 - r as f64).powi(2);
        norm += (r as f64).powi(2);
    }
    Ok(if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DeterministicRng;
    use crate::quant::{
        dequantize, dequantize_fallback, fallback_quantize, quantize_rtn, BitWidth, BlockMask,
    };

    fn normal(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::random_normal(rows, cols, 1.0, &DeterministicRng::new(seed))
    }

    fn bits_of(m: &DenseMatrix) -> Vec<u32> {
        m.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn oracle_identity_and_scalar() {
        let m = normal(5, 7, 1);
        assert_eq!(gemm_oracle(&DenseMatrix::identity(5), &m).unwrap(), m);
        let a = DenseMatrix::new(1, 1, vec![3.0]).unwrap();
        let b = DenseMatrix::new(1, 1, vec![4.0]).unwrap();
        assert_eq!(gemm_oracle(&a, &b).unwrap().data(), &[12.0]);
        assert!(gemm_oracle(&normal(2, 3, 1), &normal(4, 2, 1)).is_err());
    }

    #[test]
    fn oracle_associativity_with_basis_vectors() {
        let a = normal(64, 64, 2);
        let b = normal(64, 64, 3);
        let ab = gemm_oracle(&a, &b).unwrap();
        for j in [0, 17, 63] {
            let e = DenseMatrix::from_fn(64, 1, |r, _| if r == j { 1.0 } else { 0.0 });
            let lhs = gemm_oracle(&ab, &e).unwrap();
            let rhs = gemm_oracle(&a, &gemm_oracle(&b, &e).unwrap()).unwrap();
            assert!(relative_frobenius(&lhs, &rhs).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn accumulator_bounds() {
        assert_eq!(GemmBlockShape::cube(128).max_partial_sum(8), 2_064_512);
        assert!(GemmBlockShape::new(128, 128, 133_144).is_ok());
        assert!(GemmBlockShape::new(128, 128, 133_145).is_err());
        assert!(GemmBlockShape::new(0, 1, 1).is_err());
    }

    #[test]
    fn lossless_single_block_is_exact() {
        // Each group holds +-127 so every scale is exactly 1.
        let a = DenseMatrix::from_fn(8, 8, |r, c| {
            if r == c {
                127.0
            } else {
                ((r * 3 + c) % 11) as f32 - 5.0
            }
        });
        let b = DenseMatrix::from_fn(8, 8, |r, c| {
            if r == c {
                -127.0
            } else {
                ((r + 5 * c) % 9) as f32 - 4.0
            }
        });
        let shape = GemmBlockShape::cube(8);
        let qa = quantize_rtn(&a, shape.lhs_geometry(), BitWidth::INT8);
        let qb = quantize_rtn(&b, shape.rhs_geometry(), BitWidth::INT8);
        assert_eq!(qa.scales(), &[1.0]);
        assert_eq!(qb.scales(), &[1.0]);
        let c = block_quant_gemm(&qa, &qb, shape).unwrap();
        assert_eq!(c, gemm_oracle(&a, &b).unwrap());
    }

    #[test]
    fn zero_lhs_gives_zero() {
        let shape = GemmBlockShape::cube(16);
        let qa = quantize_rtn(
            &DenseMatrix::zeros(40, 33),
            shape.lhs_geometry(),
            BitWidth::INT8,
        );
        let qb = quantize_rtn(&normal(33, 20, 4), shape.rhs_geometry(), BitWidth::INT8);
        let c = block_quant_gemm(&qa, &qb, shape).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_oracle_on_dequantized_operands() {
        let shape = GemmBlockShape::cube(128);
        let qa = quantize_rtn(&normal(256, 256, 5), shape.lhs_geometry(), BitWidth::INT8);
        let qb = quantize_rtn(&normal(256, 256, 6), shape.rhs_geometry(), BitWidth::INT8);
        let c = block_quant_gemm(&qa, &qb, shape).unwrap();
        let want = gemm_oracle(&dequantize(&qa), &dequantize(&qb)).unwrap();
        assert!(relative_frobenius(&c, &want).unwrap() <= 1e-5);
    }

    #[test]
    fn ragged_edges_match_oracle() {
        let shape = GemmBlockShape::new(16, 8, 32).unwrap();
        let qa = quantize_rtn(&normal(37, 70, 7), shape.lhs_geometry(), BitWidth::INT8);
        let qb = quantize_rtn(&normal(70, 19, 8), shape.rhs_geometry(), BitWidth::INT8);
        let c = block_quant_gemm(&qa, &qb, shape).unwrap();
        let want = gemm_oracle(&dequantize(&qa), &dequantize(&qb)).unwrap();
        assert!(relative_frobenius(&c, &want).unwrap() <= 1e-5);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let shape = GemmBlockShape::cube(16);
        let qa = quantize_rtn(
            &normal(32, 32, 1),
            GroupGeometry::per_block(8, 16),
            BitWidth::INT8,
        );
        let qb = quantize_rtn(&normal(32, 32, 2), shape.rhs_geometry(), BitWidth::INT8);
        assert!(matches!(
            block_quant_gemm(&qa, &qb, shape),
            Err(crate::Error::Dimension(_))
        ));
        let wide = quantize_rtn(&normal(32, 32, 1), shape.lhs_geometry(), BitWidth::INT10);
        assert!(matches!(
            block_quant_gemm(&wide, &qb, shape),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn all_false_mask_is_bit_identical() {
        let shape = GemmBlockShape::cube(32);
        let a = normal(96, 64, 9);
        let qb = quantize_rtn(&normal(64, 40, 10), shape.rhs_geometry(), BitWidth::INT8);
        let fa = fallback_quantize(
            &a,
            shape.lhs_geometry(),
            BitWidth::INT8,
            &BlockMask::filled(3, 2, false),
        )
        .unwrap();
        let plain = block_quant_gemm(fa.primary(), &qb, shape).unwrap();
        assert_eq!(
            bits_of(&fallback_gemm(&fa, &qb, shape).unwrap()),
            bits_of(&plain)
        );
    }

    #[test]
    fn fallback_beats_plain_with_block_outliers() {
        let shape = GemmBlockShape::cube(32);
        let mut a = normal(64, 64, 11);
        for (bi, bk) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (r, c) = (bi * 32 + 5 + bk, bk * 32 + 9 + bi);
            a.data_mut()[r * 64 + c] = 500.0;
        }
        let b = normal(64, 48, 12);
        let qb = quantize_rtn(&b, shape.rhs_geometry(), BitWidth::INT8);
        let want = gemm_oracle(&a, &b).unwrap();
        let fa = fallback_quantize(
            &a,
            shape.lhs_geometry(),
            BitWidth::INT8,
            &BlockMask::filled(2, 2, true),
        )
        .unwrap();
        let fb = compare(&fallback_gemm(&fa, &qb, shape).unwrap(), &want).unwrap();
        let plain = compare(&block_quant_gemm(fa.primary(), &qb, shape).unwrap(), &want).unwrap();
        assert!(fb.rmse < plain.rmse, "{} vs {}", fb.rmse, plain.rmse);
    }

    #[test]
    fn fallback_matches_oracle_on_dequantized_fallback() {
        let shape = GemmBlockShape::cube(64);
        let a = normal(192, 128, 13);
        let rng = DeterministicRng::new(14);
        let mask =
            BlockMask::from_vec(3, 2, (0..6).map(|i| rng.uniform(i) < 0.5).collect()).unwrap();
        let fa = fallback_quantize(&a, shape.lhs_geometry(), BitWidth::INT8, &mask).unwrap();
        let qb = quantize_rtn(&normal(128, 64, 15), shape.rhs_geometry(), BitWidth::INT8);
        let got = fallback_gemm(&fa, &qb, shape).unwrap();
        let want = gemm_oracle(&dequantize_fallback(&fa), &dequantize(&qb)).unwrap();
        assert!(relative_frobenius(&got, &want).unwrap() <= 1e-5);
    }

    #[test]
    fn tiles_are_bit_identical() {
        let shape = GemmBlockShape::cube(128);
        let qa = quantize_rtn(&normal(256, 128, 16), shape.lhs_geometry(), BitWidth::INT8);
        let qb = quantize_rtn(&normal(128, 256, 17), shape.rhs_geometry(), BitWidth::INT8);
        let base = bits_of(&block_quant_gemm(&qa, &qb, shape).unwrap());
        for t in [128, 64, 32] {
            let tiled = tiled_block_gemm(&qa, &qb, shape, TileShape::cube(t)).unwrap();
            assert_eq!(bits_of(&tiled), base, "tile {t}");
        }
        assert!(tiled_block_gemm(&qa, &qb, shape, TileShape::cube(48)).is_err());
    }

    #[test]
    fn compare_basic_cases() {
        let r = normal(6, 6, 18);
        let same = compare(&r, &r).unwrap();
        assert_eq!(
            (same.rmse, same.cosine_similarity, same.underflow_fraction),
            (0.0, 1.0, 0.0)
        );

        let doubled = compare(&r.map(|v| 2.0 * v), &r).unwrap();
        let norm = r
            .data()
            .iter()
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((doubled.cosine_similarity - 1.0).abs() < 1e-12);
        assert!((doubled.rmse - norm / 6.0).abs() < 1e-6);

        let neg = compare(&r.map(|v| -v), &r).unwrap();
        assert!((neg.cosine_similarity + 1.0).abs() < 1e-12);

        let zeros = compare(&DenseMatrix::zeros(6, 6), &r).unwrap();
        assert_eq!(zeros.underflow_fraction, 1.0);
        assert!(zeros.rmse <= zeros.max_abs_err);
        assert!(compare(&r, &DenseMatrix::zeros(5, 6)).is_err());
    }
}
