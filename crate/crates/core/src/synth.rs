//! Synthetic activations with GLU-style outliers and outlier statistics.
//!
//! Additive mode draws a Gaussian body and overwrites whole channels
//! (columns), whole tokens (rows) and randomly placed single elements with
//! `±magnitude`. GLU mode instead builds `silu(x1) * x2` from Gaussian
//! factors whose hot rows, columns and elements are scaled by
//! `sqrt(magnitude)`, so outliers come from the multiplicative gating.

use crate::error::{config_err, Result};
use crate::matrix::{DenseMatrix, DeterministicRng};

/// Randomly placed single-element outliers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Occasional {
    pub density: f64,
    pub magnitude: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSpec {
    pub rows: usize,
    pub cols: usize,
    pub body_std: f32,
    /// `(column, magnitude)` pairs.
    pub channel_outliers: Vec<(usize, f32)>,
    /// `(row, magnitude)` pairs.
    pub token_outliers: Vec<(usize, f32)>,
    pub occasional: Occasional,
    pub glu_mode: bool,
    pub seed: u64,
}

impl OutlierSpec {
    /// Gaussian body only.
    pub fn gaussian(rows: usize, cols: usize, body_std: f32, seed: u64) -> Self {
        Self {
            rows,
            cols,
            body_std,
            channel_outliers: Vec::new(),
            token_outliers: Vec::new(),
            occasional: Occasional::default(),
            glu_mode: false,
            seed,
        }
    }

    /// GLU-mode spec with sparse heavy-tailed outliers: one hot channel per
    /// 1024 columns (magnitude 120) and occasional outliers of magnitude 150
    /// at density 5e-6, hot channels placed by `seed`.
    pub fn glu_default(rows: usize, cols: usize, seed: u64) -> Self {
        let rng = DeterministicRng::new(seed).derive(0xC0FFEE);
        let hot = cols.div_ceil(1024).max(1).min(cols);
        let channel_outliers = (0..hot)
            .map(|i| {
                let span = cols / hot;
                (
                    i * span + rng.below(i as u64, span.max(1) as u64) as usize,
                    120.0,
                )
            })
            .collect();
        Self {
            rows,
            cols,
            body_std: 1.0,
            channel_outliers,
            token_outliers: Vec::new(),
            occasional: Occasional {
                density: 5e-6,
                magnitude: 150.0,
            },
            glu_mode: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return config_err("outlier spec needs a nonempty matrix");
        }
        if !(self.body_std >= 0.0 && self.body_std.is_finite()) {
            return config_err(format!(
                "body_std must be finite and >= 0, got {}",
                self.body_std
            ));
        }
        for &(c, m) in &self.channel_outliers {
            if c >= self.cols || !(m >= 0.0 && m.is_finite()) {
                return config_err(format!("bad channel outlier {c}:{m}"));
            }
        }
        for &(r, m) in &self.token_outliers {
            if r >= self.rows || !(m >= 0.0 && m.is_finite()) {
                return config_err(format!("bad token outlier {r}:{m}"));
            }
        }
        let occ = self.occasional;
        if !(0.0..=1.0).contains(&occ.density)
            || !(occ.magnitude >= 0.0 && occ.magnitude.is_finite())
        {
            return config_err(format!(
                "bad occasional outliers {}:{}",
                occ.density, occ.magnitude
            ));
        }
        if self.occasional_count() > self.eligible_cells().len() {
            return config_err("occasional density exceeds the cells outside structured outliers");
        }
        Ok(())
    }

    /// `round(density * rows * cols)`.
    pub fn occasional_count(&self) -> usize {
        (self.occasional.density * (self.rows * self.cols) as f64).round() as usize
    }

    fn structured(&self) -> (Vec<bool>, Vec<bool>) {
        let mut hot_rows = vec![false; self.rows];
        let mut hot_cols = vec![false; self.cols];
        for &(r, _) in &self.token_outliers {
            hot_rows[r] = true;
        }
        for &(c, _) in &self.channel_outliers {
            hot_cols[c] = true;
        }
        (hot_rows, hot_cols)
    }

    fn eligible_cells(&self) -> Vec<usize> {
        let (hot_rows, hot_cols) = self.structured();
        (0..self.rows)
            .filter(|&r| !hot_rows[r])
            .flat_map(|r| {
                let hot_cols = &hot_cols;
                (0..self.cols)
                    .filter(move |&c| !hot_cols[c])
                    .map(move |c| r * self.cols + c)
            })
            .collect()
    }

    /// Linear indices of the occasional outliers, in placement order.
    pub fn occasional_cells(&self) -> Vec<usize> {
        let mut cells = self.eligible_cells();
        let count = self.occasional_count().min(cells.len());
        let rng = DeterministicRng::new(self.seed).derive(2);
        // Partial Fisher-Yates: the first `count` slots become a uniform sample.
        for i in 0..count {
            let j = i + rng.below(i as u64, (cells.len() - i) as u64) as usize;
            cells.swap(i, j);
        }
        cells.truncate(count);
        cells
    }
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Generates the matrix described by `spec`; deterministic in `spec.seed`.
pub fn generate(spec: &OutlierSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let rng = DeterministicRng::new(spec.seed);
    let (rows, cols) = (spec.rows, spec.cols);
    let occasional = spec.occasional_cells();

    if spec.glu_mode {
        let f1 = rng.derive(10);
        let f2 = rng.derive(11);
        let mut factor = vec![spec.body_std.sqrt(); rows * cols];
        for &(c, m) in &spec.channel_outliers {
            for r in 0..rows {
                factor[r * cols + c] = m.sqrt();
            }
        }
        for &(r, m) in &spec.token_outliers {
            factor[r * cols..(r + 1) * cols].fill(m.sqrt());
        }
        for &lin in &occasional {
            factor[lin] = spec.occasional.magnitude.sqrt();
        }
        let data: Vec<f32> = factor
            .iter()
            .enumerate()
            .map(|(lin, &s)| {
                let x1 = f1.normal(lin as u64) as f32 * s;
                let x2 = f2.normal(lin as u64) as f32 * s;
                silu(x1) * x2
            })
            .collect();
        return DenseMatrix::new(rows, cols, data);
    }

    let body = rng.derive(0);
    let signs = rng.derive(1);
    let signed = |lin: usize, m: f32| {
        if signs.bits(lin as u64) & 1 == 0 {
            m
        } else {
            -m
        }
    };
    let mut data: Vec<f32> = (0..rows * cols)
        .map(|lin| (body.normal(lin as u64) * spec.body_std as f64) as f32)
        .collect();
    for &(c, m) in &spec.channel_outliers {
        for r in 0..rows {
            data[r * cols + c] = signed(r * cols + c, m);
        }
    }
    for &(r, m) in &spec.token_outliers {
        for c in 0..cols {
            data[r * cols + c] = signed(r * cols + c, m);
        }
    }
    for &lin in &occasional {
        data[lin] = signed(lin, spec.occasional.magnitude);
    }
    DenseMatrix::new(rows, cols, data)
}

/// Quantiles reported in the sparsity curve.
pub const SPARSITY_QUANTILES: [f64; 8] = [0.5, 0.9, 0.99, 0.999, 0.9999, 0.99999, 0.999999, 1.0];

/// Share of rows/columns that count as outlier tokens/channels.
pub const TOP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierStats {
    /// Largest magnitude inside the outlier tokens.
    pub token_max: f32,
    /// Largest magnitude inside the outlier channels, outside the outlier tokens.
    pub channel_max: f32,
    /// Largest magnitude outside both outlier sets.
    pub others_max: f32,
    /// Rows with the largest L1 norms, best first.
    pub top_tokens: Vec<usize>,
    /// Columns with the largest L1 norms, best first.
    pub top_channels: Vec<usize>,
    /// `(quantile, magnitude)` of the sorted absolute values.
    pub sparsity: Vec<(f64, f32)>,
}

fn top_by_norm(norms: &[f64]) -> Vec<usize> {
    let k = ((norms.len() as f64 * TOP_FRACTION).ceil() as usize).clamp(1, norms.len());
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Magnitude at quantile `q` of the sorted absolute values (nearest rank).
pub fn magnitude_quantile(sorted_abs: &[f32], q: f64) -> f32 {
    if sorted_abs.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted_abs.len() as f64).ceil() as usize).clamp(1, sorted_abs.len());
    sorted_abs[rank - 1]
}

/// Fraction of elements with `|x| > cutoff`.
pub fn fraction_above(m: &DenseMatrix, cutoff: f32) -> f64 {
    m.data().iter().filter(|v| v.abs() > cutoff).count() as f64 / m.len().max(1) as f64
}

/// Outlier statistics: maxima inside the top-5% tokens and channels (by L1
/// norm) and outside both, plus a sorted-magnitude sparsity curve.
pub fn analyze(m: &DenseMatrix) -> Result<OutlierStats> {
    if m.is_empty() {
        return config_err("cannot analyze an empty matrix");
    }
    let (rows, cols) = m.shape();
    let mut row_l1 = vec![0f64; rows];
    let mut col_l1 = vec![0f64; cols];
    for r in 0..rows {
        for (c, &v) in m.row(r).iter().enumerate() {
            row_l1[r] += v.abs() as f64;
            col_l1[c] += v.abs() as f64;
        }
    }
    let top_tokens = top_by_norm(&row_l1);
    let top_channels = top_by_norm(&col_l1);
    let mut is_token = vec![false; rows];
    let mut is_channel = vec![false; cols];
    top_tokens.iter().for_each(|&r| is_token[r] = true);
    top_channels.iter().for_each(|&c| is_channel[c] = true);

    let (mut token_max, mut channel_max, mut others_max) = (0f32, 0f32, 0f32);
    for r in 0..rows {
        for (c, &v) in m.row(r).iter().enumerate() {
            let a = v.abs();
            if is_token[r] {
                token_max = token_max.max(a);
            } else if is_channel[c] {
                channel_max = channel_max.max(a);
            } else {
                others_max = others_max.max(a);
            }
        }
    }

    let mut sorted: Vec<f32> = m.data().iter().map(|v| v.abs()).collect();
    sorted.sort_by(f32::total_cmp);
    let sparsity = SPARSITY_QUANTILES
        .iter()
        .map(|&q| (q, magnitude_quantile(&sorted, q)))
        .collect();

    Ok(OutlierStats {
        token_max,
        channel_max,
        others_max,
        top_tokens,
        top_channels,
        sparsity,
    })
}

/// Sample excess-free kurtosis `E[(x - mu)^4] / var^2`.
pub fn kurtosis(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut m2, mut m4) = (0f64, 0f64);
    for &v in values {
        let d = v as f64 - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    (m4 / n) / (m2 / n).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_outlier() {
        let mut spec = OutlierSpec::gaussian(16, 8, 0.0, 3);
        spec.channel_outliers.push((3, 100.0));
        let m = generate(&spec).unwrap();
        for r in 0..16 {
            for c in 0..8 {
                let v = m.get(r, c);
                if c == 3 {
                    assert_eq!(v.abs(), 100.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let stats = analyze(&m).unwrap();
        assert_eq!(stats.top_channels[0], 3);
        // Row 0 is the tie-broken top token, so the channel max comes from
        // the remaining rows.
        assert_eq!(stats.channel_max, 100.0);
        assert_eq!(stats.others_max, 0.0);
    }

    #[test]
    fn occasional_count_is_rounded() {
        let mut spec = OutlierSpec::gaussian(1024, 1024, 0.0, 1);
        spec.occasional = Occasional {
            density: 0.001,
            magnitude: 150.0,
        };
        assert_eq!(spec.occasional_count(), 1049);
        let m = generate(&spec).unwrap();
        assert_eq!(m.data().iter().filter(|v| v.abs() == 150.0).count(), 1049);
    }

    #[test]
    fn occasional_cells_avoid_structured_lines() {
        let mut spec = OutlierSpec::gaussian(64, 64, 1.0, 8);
        spec.channel_outliers = vec![(5, 50.0)];
        spec.token_outliers = vec![(9, 60.0)];
        spec.occasional = Occasional {
            density: 0.05,
            magnitude: 70.0,
        };
        let cells = spec.occasional_cells();
        assert_eq!(cells.len(), 205);
        let mut sorted = cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), cells.len());
        assert!(cells.iter().all(|&l| l / 64 != 9 && l % 64 != 5));
    }

    #[test]
    fn uniform_ones() {
        let m = DenseMatrix::from_fn(20, 20, |_, _| 1.0);
        let s = analyze(&m).unwrap();
        assert_eq!((s.token_max, s.channel_max, s.others_max), (1.0, 1.0, 1.0));
    }

    #[test]
    fn recovers_table_style_magnitudes() {
        // Five structured lines of each kind fill the top-5% sets of a
        // 100x100 matrix exactly.
        let mut spec = OutlierSpec::gaussian(100, 100, 1.0, 12);
        spec.token_outliers = (0..5).map(|i| (i * 19 + 3, 600.0)).collect();
        spec.channel_outliers = (0..5).map(|i| (i * 17 + 4, 120.0)).collect();
        spec.occasional = Occasional {
            density: 0.002,
            magnitude: 150.0,
        };
        let s = analyze(&generate(&spec).unwrap()).unwrap();
        assert_eq!(s.token_max, 600.0);
        assert_eq!(s.channel_max, 120.0);
        assert_eq!(s.others_max, 150.0);
        let mut tokens = s.top_tokens.clone();
        tokens.sort_unstable();
        assert_eq!(tokens, vec![3, 22, 41, 60, 79]);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = OutlierSpec::glu_default(64, 256, 5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = OutlierSpec {
            seed: 6,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn glu_output_is_heavy_tailed() {
        let spec = OutlierSpec::gaussian(1000, 1000, 1.0, 4);
        let m = generate(&OutlierSpec {
            glu_mode: true,
            ..spec
        })
        .unwrap();
        let k = kurtosis(m.data());
        assert!(k > 3.0, "kurtosis {k}");
    }

    #[test]
    fn glu_default_is_sparse() {
        for seed in 0..4 {
            let m = generate(&OutlierSpec::glu_default(512, 1024, seed)).unwrap();
            let frac = fraction_above(&m, 10.0);
            assert!(frac > 0.0 && frac < 0.01, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = OutlierSpec::gaussian(4, 4, 1.0, 0);
        spec.channel_outliers.push((4, 1.0));
        assert!(generate(&spec).is_err());
        let mut spec = OutlierSpec::gaussian(4, 4, 1.0, 0);
        spec.occasional.density = 1.5;
        assert!(generate(&spec).is_err());
        let mut spec = OutlierSpec::gaussian(4, 4, 1.0, 0);
        spec.token_outliers.push((0, -2.0));
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn quantile_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(magnitude_quantile(&v, 0.5), 2.0);
        assert_eq!(magnitude_quantile(&v, 1.0), 4.0);
        assert_eq!(magnitude_quantile(&v, 0.0), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn injected_magnitudes_are_exact(
                seed in any::<u64>(),
                col in 0usize..32, row in 0usize..24,
                cm in 1.0f32..500.0, tm in 1.0f32..500.0, om in 1.0f32..500.0,
            ) {
                let mut spec = OutlierSpec::gaussian(24, 32, 1.0, seed);
                spec.channel_outliers = vec![(col, cm)];
                spec.token_outliers = vec![(row, tm)];
                spec.occasional = Occasional { density: 0.01, magnitude: om };
                let m = generate(&spec).unwrap();
                for r in 0..24 {
                    prop_assert_eq!(m.get(r, col).abs(), if r == row { tm } else { cm });
                }
                for c in 0..32 {
                    prop_assert_eq!(m.get(row, c).abs(), tm);
                }
                for lin in spec.occasional_cells() {
                    prop_assert_eq!(m.data()[lin].abs(), om);
                }
            }
        }
    }
}
