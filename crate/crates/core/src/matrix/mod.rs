//! Dense full-precision matrices and quantization-group addressing.

mod io;
mod rng;

pub use io::{load_matrix, read_matrix, save_matrix, write_matrix, FMAT_MAGIC, FMAT_VERSION};
pub use rng::DeterministicRng;

use crate::error::{dim_err, Error, Result};

/// Row-major matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    /// Builds a matrix, rejecting wrong lengths and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of arithmetic on finite inputs.
    /// Non-finite values (overflow) are allowed through; callers that care
    /// check with [`DenseMatrix::is_finite`].
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(row, col)`. Panics if `f` yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data).expect("from_fn produced a non-finite value")
    }

    /// Standard-normal entries scaled by `std`, drawn at each element's
    /// linear index.
    pub fn random_normal(rows: usize, cols: usize, std: f32, rng: &DeterministicRng) -> Self {
        let data = (0..rows * cols)
            .map(|i| (rng.normal(i as u64) * std as f64) as f32)
            .collect();
        Self::from_raw(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    /// Element-wise map. The result is not re-validated.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape() != other.shape() {
            return dim_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn abs_max(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Shape of one quantization group: `group_rows x group_cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupGeometry {
    group_rows: usize,
    group_cols: usize,
}

impl GroupGeometry {
    pub fn new(group_rows: usize, group_cols: usize) -> Result<Self> {
        if group_rows == 0 || group_cols == 0 {
            return Err(Error::Config(format!(
                "group sides must be positive, got {group_rows}x{group_cols}"
            )));
        }
        Ok(Self {
            group_rows,
            group_cols,
        })
    }

    /// One group covering the whole `rows x cols` tensor.
    pub fn per_tensor(rows: usize, cols: usize) -> Self {
        Self::clamped(rows, cols)
    }

    /// One group per row (token).
    pub fn per_token(cols: usize) -> Self {
        Self::clamped(1, cols)
    }

    /// One group per column (channel).
    pub fn per_channel(rows: usize) -> Self {
        Self::clamped(rows, 1)
    }

    pub fn per_block(group_rows: usize, group_cols: usize) -> Self {
        Self::clamped(group_rows, group_cols)
    }

    fn clamped(group_rows: usize, group_cols: usize) -> Self {
        Self {
            group_rows: group_rows.max(1),
            group_cols: group_cols.max(1),
        }
    }

    pub fn group_rows(&self) -> usize {
        self.group_rows
    }

    pub fn group_cols(&self) -> usize {
        self.group_cols
    }

    pub fn transposed(&self) -> Self {
        Self {
            group_rows: self.group_cols,
            group_cols: self.group_rows,
        }
    }

    /// Number of groups along each axis of a `rows x cols` matrix.
    pub fn grid(&self, rows: usize, cols: usize) -> (usize, usize) {
        (
            rows.div_ceil(self.group_rows),
            cols.div_ceil(self.group_cols),
        )
    }

    /// Actual (possibly truncated) extent of group `idx`, as
    /// `(row_start, col_start, rows, cols)`.
    pub fn extent(
        &self,
        rows: usize,
        cols: usize,
        idx: BlockIndex,
    ) -> (usize, usize, usize, usize) {
        let r0 = idx.block_row * self.group_rows;
        let c0 = idx.block_col * self.group_cols;
        (
            r0,
            c0,
            self.group_rows.min(rows - r0),
            self.group_cols.min(cols - c0),
        )
    }
}

/// Address of one group in the block grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockIndex {
    pub block_row: usize,
    pub block_col: usize,
}

impl BlockIndex {
    pub fn new(block_row: usize, block_col: usize) -> Self {
        Self {
            block_row,
            block_col,
        }
    }
}

/// Borrowed view of one quantization group.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    matrix: &'a DenseMatrix,
    row_start: usize,
    col_start: usize,
    rows: usize,
    cols: usize,
}

impl<'a> BlockView<'a> {
    pub fn row_start(&self) -> usize {
        self.row_start
    }

    pub fn col_start(&self) -> usize {
        self.col_start
    }

    /// Actual extent, truncated at the matrix edge.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.matrix.get(self.row_start + r, self.col_start + c)
    }

    /// Row `r` of the view as a contiguous slice.
    pub fn row(&self, r: usize) -> &'a [f32] {
        let start = (self.row_start + r) * self.matrix.cols + self.col_start;
        &self.matrix.data[start..start + self.cols]
    }

    pub fn iter(&self) -> impl Iterator<Item = f32> + 'a {
        let view = *self;
        (0..view.rows).flat_map(move |r| view.row(r).iter().copied())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.iter().collect()
    }
}

/// Returns the elements of group `idx` of `m` under geometry `g`.
pub fn block_view(m: &DenseMatrix, g: GroupGeometry, idx: BlockIndex) -> Result<BlockView<'_>> {
    let (grid_rows, grid_cols) = g.grid(m.rows, m.cols);
    if idx.block_row >= grid_rows || idx.block_col >= grid_cols {
        return Err(Error::Range(format!(
            "block ({}, {}) outside {grid_rows}x{grid_cols} grid",
            idx.block_row, idx.block_col
        )));
    }
    let (row_start, col_start, rows, cols) = g.extent(m.rows, m.cols, idx);
    Ok(BlockView {
        matrix: m,
        row_start,
        col_start,
        rows,
        cols,
    })
}
