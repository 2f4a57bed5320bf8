//! Element-wise and row-wise operators whose backward reads compressed
//! contexts.

use super::context::{ContextConfig, SavedTensor};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::synth::silu;

fn missing(op: &str) -> Error {
    Error::State(format!("{op} backward called without a saved context"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of `x * sigmoid(x)`.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Default)]
pub struct Silu {
    ctx: Option<SavedTensor>,
}

impl Silu {
    pub fn forward(&mut self, x: &DenseMatrix, cfg: &ContextConfig) -> DenseMatrix {
        self.ctx = Some(SavedTensor::save(x, cfg));
        x.map(silu)
    }

    pub fn backward(&mut self, dy: &DenseMatrix) -> Result<DenseMatrix> {
        let x = self.ctx.take().ok_or_else(|| missing("silu"))?.restore();
        x.zip_map(dy, |x, d| (silu_grad(x as f64) * d as f64) as f32)
    }

    pub fn context(&self) -> Option<&SavedTensor> {
        self.ctx.as_ref()
    }
}

/// `a * b`, the combine step of a gated unit.
#[derive(Debug, Clone, Default)]
pub struct GluCombine {
    ctx: Option<(SavedTensor, SavedTensor)>,
}

impl GluCombine {
    pub fn forward(
        &mut self,
        a: &DenseMatrix,
        b: &DenseMatrix,
        cfg: &ContextConfig,
    ) -> Result<DenseMatrix> {
        let out = a.zip_map(b, |a, b| a * b)?;
        self.ctx = Some((SavedTensor::save(a, cfg), SavedTensor::save(b, cfg)));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        let (a, b) = self.ctx.take().ok_or_else(|| missing("glu"))?;
        let (a, b) = (a.restore(), b.restore());
        Ok((dy.zip_map(&b, |d, b| d * b)?, dy.zip_map(&a, |d, a| d * a)?))
    }

    pub fn contexts(&self) -> Option<(&SavedTensor, &SavedTensor)> {
        self.ctx.as_ref().map(|(a, b)| (a, b))
    }
}

pub const RMS_EPS: f64 = 1e-6;

/// Row-wise RMS normalisation with a learned gain.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    gain: Vec<f32>,
    grad: Vec<f32>,
    ctx: Option<SavedTensor>,
}

impl RmsNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gain: vec![1.0; width],
            grad: vec![0.0; width],
            ctx: None,
        }
    }

    pub fn gain(&self) -> &[f32] {
        &self.gain
    }

    pub fn grad(&self) -> &[f32] {
        &self.grad
    }

    pub fn context(&self) -> Option<&SavedTensor> {
        self.ctx.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub(crate) fn apply_sgd(&mut self, lr: f32) {
        for (w, g) in self.gain.iter_mut().zip(&self.grad) {
            *w -= lr * g;
        }
    }

    fn inv_rms(row: &[f32]) -> f64 {
        let ms = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / row.len() as f64;
        1.0 / (ms + RMS_EPS).sqrt()
    }

    pub fn forward(&mut self, x: &DenseMatrix, cfg: &ContextConfig) -> Result<DenseMatrix> {
        if x.cols() != self.gain.len() {
            return Err(Error::Dimension(format!(
                "rmsnorm width {} does not match input width {}",
                self.gain.len(),
                x.cols()
            )));
        }
        self.ctx = Some(SavedTensor::save(x, cfg));
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let row = x.row(r);
            let inv = Self::inv_rms(row);
            out.extend(
                row.iter()
                    .zip(&self.gain)
                    .map(|(&v, &g)| (v as f64 * inv * g as f64) as f32),
            );
        }
        Ok(DenseMatrix::from_raw(x.rows(), x.cols(), out))
    }

    pub fn backward(&mut self, dy: &DenseMatrix) -> Result<DenseMatrix> {
        let x = self.ctx.take().ok_or_else(|| missing("rmsnorm"))?.restore();
        if x.shape() != dy.shape() {
            return Err(Error::Dimension("rmsnorm gradient shape mismatch".into()));
        }
        let n = x.cols() as f64;
        let mut dgain = vec![0f64; x.cols()];
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let (row, drow) = (x.row(r), dy.row(r));
            let inv = Self::inv_rms(row);
            let mut dot = 0f64;
            for j in 0..row.len() {
                let (xv, dv, gv) = (row[j] as f64, drow[j] as f64, self.gain[j] as f64);
                dgain[j] += dv * xv * inv;
                dot += gv * dv * xv;
            }
            let coef = dot * inv.powi(3) / n;
            out.extend((0..row.len()).map(|j| {
                let (xv, dv, gv) = (row[j] as f64, drow[j] as f64, self.gain[j] as f64);
                (gv * dv * inv - xv * coef) as f32
            }));
        }
        for (g, d) in self.grad.iter_mut().zip(dgain) {
            *g += d as f32;
        }
        Ok(DenseMatrix::from_raw(x.rows(), x.cols(), out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DeterministicRng;

    fn input(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::random_normal(rows, cols, 1.5, &DeterministicRng::new(seed))
    }

    // Central differences on an f64 reimplementation of each operator.
    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-3 * (1.0 + b.abs())
    }

    #[test]
    fn silu_backward_matches_finite_differences() {
        let x = input(4, 8, 1);
        let dy = input(4, 8, 2);
        let mut op = Silu::default();
        op.forward(&x, &ContextConfig::FULL);
        let dx = op.backward(&dy).unwrap();
        let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let ds: Vec<f64> = dy.data().iter().map(|&v| v as f64).collect();
        let loss = |v: &[f64]| {
            v.iter()
                .zip(&ds)
                .map(|(x, d)| x / (1.0 + (-x).exp()) * d)
                .sum::<f64>()
        };
        for i in 0..xs.len() {
            assert!(close(dx.data()[i] as f64, fd(loss, &xs, i)), "element {i}");
        }
    }

    #[test]
    fn rmsnorm_backward_matches_finite_differences() {
        let (rows, cols) = (3, 16);
        let x = input(rows, cols, 3);
        let dy = input(rows, cols, 4);
        let mut op = RmsNorm::new(cols);
        op.gain = (0..cols).map(|j| 0.5 + j as f32 / cols as f32).collect();
        op.forward(&x, &ContextConfig::FULL).unwrap();
        let dx = op.backward(&dy).unwrap();
        let gain: Vec<f64> = op.gain.iter().map(|&g| g as f64).collect();
        let ds: Vec<f64> = dy.data().iter().map(|&v| v as f64).collect();
        let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let loss = |v: &[f64], g: &[f64]| {
            let mut s = 0.0;
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                let rms = (row.iter().map(|a| a * a).sum::<f64>() / cols as f64 + RMS_EPS).sqrt();
                for j in 0..cols {
                    s += row[j] / rms * g[j] * ds[r * cols + j];
                }
            }
            s
        };
        for i in 0..xs.len() {
            let want = fd(|v| loss(v, &gain), &xs, i);
            assert!(close(dx.data()[i] as f64, want), "dx {i}");
        }
        for j in 0..cols {
            let want = fd(|g| loss(&xs, g), &gain, j);
            assert!(close(op.grad[j] as f64, want), "dgain {j}");
        }
    }

    #[test]
    fn glu_combine_backward_swaps_operands() {
        let a = input(2, 8, 5);
        let b = input(2, 8, 6);
        let dy = input(2, 8, 7);
        let mut op = GluCombine::default();
        op.forward(&a, &b, &ContextConfig::FULL).unwrap();
        let (da, db) = op.backward(&dy).unwrap();
        for i in 0..a.len() {
            assert_eq!(da.data()[i], dy.data()[i] * b.data()[i]);
            assert_eq!(db.data()[i], dy.data()[i] * a.data()[i]);
        }
    }

    #[test]
    fn contexts_are_stored_quantized() {
        let x = input(4, 256, 8);
        let mut op = Silu::default();
        op.forward(&x, &ContextConfig::int10());
        match op.context().unwrap() {
            SavedTensor::Quantized(q) => {
                assert_eq!(q.bits().bits(), 10);
                assert_eq!(q.grid(), (4, 2));
            }
            SavedTensor::Full(_) => panic!("expected a quantized context"),
        }
    }

    #[test]
    fn backward_without_context_fails() {
        let dy = input(1, 4, 9);
        assert!(Silu::default().backward(&dy).is_err());
        assert!(RmsNorm::new(4).backward(&dy).is_err());
        assert!(GluCombine::default().backward(&dy).is_err());
    }
}
