use std::path::PathBuf;

use clap::Args;
use fbq_core::gemm::{compare, ErrorReport};
use fbq_core::matrix::{load_matrix, DenseMatrix, GroupGeometry};
use fbq_core::policy::{mask_topk, score_blocks, FallbackCriterion};
use fbq_core::quant::{dequantize, dequantize_fallback, fallback_quantize, quantize_rtn, BitWidth};

use crate::config::RunConfig;
use crate::{write_csv, CliError, CliResult};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const HEADER: [&str; 8] = [
    "block_size",
    "bits",
    "method",
    "fallback_rate",
    "rmse",
    "max_err",
    "cossim",
    "underflow_fraction",
];

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input `.fmat` matrix.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Square block sides, comma-separated.
    #[arg(long)]
    pub block_sizes: Option<String>,
    #[arg(long)]
    pub bits: Option<String>,
    /// `naive`, `fallback`, comma-separated.
    #[arg(long)]
    pub methods: Option<String>,
    /// Fallback rates, comma-separated.
    #[arg(long)]
    pub rates: Option<String>,
    /// Block score for fallback selection: absmax, l1 or l1rel.
    #[arg(long)]
    pub criterion: Option<String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("input", ""),
    ("block_sizes", "32,64,128"),
    ("bits", "8"),
    ("methods", "naive,fallback"),
    ("rates", "0.2"),
    ("criterion", "absmax"),
    ("out", ""),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    Fallback,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Self::Naive),
            "fallback" => Ok(Self::Fallback),
            _ => Err(format!("unknown method `{s}`")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::Fallback => "fallback",
        })
    }
}

/// Quantization error of one setting against the input.
pub fn measure(
    m: &DenseMatrix,
    block: usize,
    bits: BitWidth,
    method: Method,
    rate: f64,
    criterion: FallbackCriterion,
) -> CliResult<ErrorReport> {
    let g = GroupGeometry::per_block(block, block);
    let deq = match method {
        Method::Naive => dequantize(&quantize_rtn(m, g, bits)),
        Method::Fallback => {
            let mask = mask_topk(&score_blocks(m, g, bits, criterion), rate)?;
            dequantize_fallback(&fallback_quantize(m, g, bits, &mask)?)
        }
    };
    Ok(compare(&deq, m)?)
}

pub fn run(a: &SweepArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(
        "quant-sweep",
        DEFAULTS,
        a.config.as_deref(),
        vec![
            ("input", a.input.as_ref().map(|p| p.display().to_string())),
            ("block_sizes", a.block_sizes.clone()),
            ("bits", a.bits.clone()),
            ("methods", a.methods.clone()),
            ("rates", a.rates.clone()),
            ("criterion", a.criterion.clone()),
            ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ],
    )?;
    let input = cfg.raw("input");
    if input.is_empty() {
        return Err(CliError::Usage(
            "an input matrix is required (--input)".into(),
        ));
    }
    let blocks: Vec<usize> = cfg.list("block_sizes")?;
    if blocks.contains(&0) {
        return Err(CliError::Usage("block sizes must be positive".into()));
    }
    let bits: Vec<u32> = cfg.list("bits")?;
    let bits = bits
        .into_iter()
        .map(BitWidth::new)
        .collect::<Result<Vec<_>, _>>()?;
    let methods: Vec<Method> = cfg.list("methods")?;
    let rates: Vec<f64> = cfg.list("rates")?;
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Usage("rates must lie in [0, 1]".into()));
    }
    let criterion: FallbackCriterion = cfg.get("criterion")?;
    let dir = cfg.out_dir()?;
    let m = load_matrix(std::path::Path::new(input))
        .map_err(|e| CliError::from(e).with_context(input))?;

    let mut rows = Vec::new();
    for &block in &blocks {
        for &b in &bits {
            for &method in &methods {
                let method_rates = match method {
                    Method::Naive => vec![0.0],
                    Method::Fallback => rates.clone(),
                };
                for rate in method_rates {
                    let r = measure(&m, block, b, method, rate, criterion)?;
                    rows.push(vec![
                        block.to_string(),
                        b.bits().to_string(),
                        method.to_string(),
                        rate.to_string(),
                        r.rmse.to_string(),
                        r.max_abs_err.to_string(),
                        r.cosine_similarity.to_string(),
                        r.underflow_fraction.to_string(),
                    ]);
                }
            }
        }
    }
    write_csv(&dir.join(SWEEP_FILE), &HEADER, &rows)?;
    cfg.write_manifest(&dir)?;
    println!("{} rows -> {}", rows.len(), dir.join(SWEEP_FILE).display());
    Ok(())
}
