use std::path::PathBuf;

use clap::Args;
use fbq_core::gemm::{
    block_quant_gemm, fallback_gemm, gemm_oracle, relative_frobenius, tiled_fallback_gemm,
    GemmBlockShape, TileShape,
};
use fbq_core::matrix::{DenseMatrix, DeterministicRng};
use fbq_core::policy::{mask_topk, score_blocks, BlockScores, FallbackCriterion};
use fbq_core::quant::{
    dequantize, dequantize_fallback, fallback_quantize, quantize_rtn, BitWidth, BlockMask,
};
use fbq_core::synth::{generate, Occasional, OutlierSpec};

use crate::config::{opt, RunConfig};
use crate::{write_csv, CliError, CliResult};

pub const CHECK_FILE: &str = "gemm_check.csv";

#[derive(Debug, Args)]
pub struct GemmCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Cubic block side.
    #[arg(long)]
    pub block: Option<usize>,
    /// `none`, `random` or `absmax`.
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// Cubic tile sides to compare against the untiled product, comma-separated.
    #[arg(long)]
    pub tile: Option<String>,
    /// Instance seeds, comma-separated.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Relative Frobenius tolerance against the oracle.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("m", "256"),
    ("n", "256"),
    ("k", "256"),
    ("block", "128"),
    ("mask", "random"),
    ("rate", "0.2"),
    ("tile", ""),
    ("seeds", "0"),
    ("tolerance", "1e-5"),
    ("out", ""),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    None,
    Random,
    AbsMax,
}

impl std::str::FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "random" => Ok(Self::Random),
            "absmax" => Ok(Self::AbsMax),
            _ => Err(format!("unknown mask mode `{s}`")),
        }
    }
}

/// One verified property of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub seed: u64,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn mismatches(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x.to_bits() != y.to_bits())
        .count() as f64
}

/// Outlier-bearing operands for one seed.
pub fn operands(m: usize, n: usize, k: usize, seed: u64) -> CliResult<(DenseMatrix, DenseMatrix)> {
    let mut spec = OutlierSpec::gaussian(m, k, 1.0, seed);
    spec.occasional = Occasional {
        density: 1e-3,
        magnitude: 50.0,
    };
    let a = generate(&spec)?;
    let b = DenseMatrix::random_normal(k, n, 1.0, &DeterministicRng::new(seed).derive(1));
    Ok((a, b))
}

pub struct Instance {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub block: usize,
    pub mask: MaskMode,
    pub rate: f64,
    pub tiles: Vec<usize>,
    pub tolerance: f64,
}

pub fn check_instance(inst: &Instance, seed: u64) -> CliResult<Vec<Check>> {
    let shape = GemmBlockShape::new(inst.block, inst.block, inst.block)?;
    let (a, b) = operands(inst.m, inst.n, inst.k, seed)?;
    let g = shape.lhs_geometry();
    let (gr, gc) = g.grid(inst.m, inst.k);
    let mask = match inst.mask {
        MaskMode::None => BlockMask::filled(gr, gc, false),
        MaskMode::Random => {
            let rng = DeterministicRng::new(seed).derive(2);
            let scores = (0..(gr * gc) as u64).map(|i| rng.uniform(i)).collect();
            mask_topk(&BlockScores::new(gr, gc, scores)?, inst.rate)?
        }
        MaskMode::AbsMax => mask_topk(
            &score_blocks(&a, g, BitWidth::INT8, FallbackCriterion::AbsMax),
            inst.rate,
        )?,
    };
    let fa = fallback_quantize(&a, g, BitWidth::INT8, &mask)?;
    let qb = quantize_rtn(&b, shape.rhs_geometry(), BitWidth::INT8);
    let out = fallback_gemm(&fa, &qb, shape)?;
    let reference = gemm_oracle(&dequantize_fallback(&fa), &dequantize(&qb))?;
    let mut checks = vec![Check {
        seed,
        name: "oracle_rel_frobenius".into(),
        value: relative_frobenius(&out, &reference)?,
        tolerance: inst.tolerance,
    }];
    if inst.mask == MaskMode::None {
        let plain = block_quant_gemm(fa.primary(), &qb, shape)?;
        checks.push(Check {
            seed,
            name: "zero_mask_mismatches".into(),
            value: mismatches(&out, &plain),
            tolerance: 0.0,
        });
    }
    for &t in &inst.tiles {
        let tiled = tiled_fallback_gemm(&fa, &qb, shape, TileShape::cube(t))?;
        checks.push(Check {
            seed,
            name: format!("tile{t}_mismatches"),
            value: mismatches(&out, &tiled),
            tolerance: 0.0,
        });
    }
    Ok(checks)
}

pub fn run(a: &GemmCheckArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(
        "gemm-check",
        DEFAULTS,
        a.config.as_deref(),
        vec![
            ("m", opt(&a.m)),
            ("n", opt(&a.n)),
            ("k", opt(&a.k)),
            ("block", opt(&a.block)),
            ("mask", a.mask.clone()),
            ("rate", opt(&a.rate)),
            ("tile", a.tile.clone()),
            ("seeds", a.seeds.clone()),
            ("tolerance", opt(&a.tolerance)),
            ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ],
    )?;
    let inst = Instance {
        m: cfg.get("m")?,
        n: cfg.get("n")?,
        k: cfg.get("k")?,
        block: cfg.get("block")?,
        mask: cfg.get("mask")?,
        rate: cfg.get("rate")?,
        tiles: cfg.list("tile")?,
        tolerance: cfg.get("tolerance")?,
    };
    if inst.m == 0 || inst.n == 0 || inst.k == 0 {
        return Err(CliError::Usage("dimensions must be positive".into()));
    }
    let seeds: Vec<u64> = cfg.list("seeds")?;
    let dir = cfg.out_dir()?;
    let mut checks = Vec::new();
    for &s in &seeds {
        checks.extend(check_instance(&inst, s)?);
    }
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.seed.to_string(),
                c.name.clone(),
                c.value.to_string(),
                c.tolerance.to_string(),
                c.passed().to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join(CHECK_FILE),
        &["seed", "check", "value", "tolerance", "pass"],
        &rows,
    )?;
    cfg.write_manifest(&dir)?;
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed()).collect();
    for c in &failed {
        eprintln!(
            "FAIL seed {} {}: {} > {}",
            c.seed, c.name, c.value, c.tolerance
        );
    }
    println!("{} checks, {} failed", checks.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!(
            "{} of {} checks failed",
            failed.len(),
            checks.len()
        )))
    }
}
