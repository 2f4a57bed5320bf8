use std::path::PathBuf;

use clap::Args;
use fbq_core::matrix::save_matrix;
use fbq_core::synth::{analyze, generate, kurtosis, Occasional, OutlierSpec};

use crate::config::{flag, joined, opt, parse_pair, RunConfig};
use crate::{write_csv, CliError, CliResult};

pub const MATRIX_FILE: &str = "matrix.fmat";
pub const STATS_FILE: &str = "stats.csv";
pub const SPARSITY_FILE: &str = "sparsity.csv";

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Body standard deviation.
    #[arg(long)]
    pub std: Option<f32>,
    /// Channel outlier `column:magnitude`; repeatable.
    #[arg(long)]
    pub channel: Vec<String>,
    /// Token outlier `row:magnitude`; repeatable.
    #[arg(long)]
    pub token: Vec<String>,
    /// Occasional outliers `density:magnitude`.
    #[arg(long)]
    pub occasional: Option<String>,
    /// Gated-unit mode with the default hot channels.
    #[arg(long)]
    pub glu: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("rows", "1024"),
    ("cols", "1024"),
    ("std", ""),
    ("channel", ""),
    ("token", ""),
    ("occasional", ""),
    ("glu", "false"),
    ("seed", "0"),
    ("out", ""),
];

fn resolve(a: &GenArgs) -> CliResult<RunConfig> {
    RunConfig::resolve(
        "gen",
        DEFAULTS,
        a.config.as_deref(),
        vec![
            ("rows", opt(&a.rows)),
            ("cols", opt(&a.cols)),
            ("std", opt(&a.std)),
            ("channel", joined(&a.channel)),
            ("token", joined(&a.token)),
            ("occasional", a.occasional.clone()),
            ("glu", flag(a.glu)),
            ("seed", opt(&a.seed)),
            ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ],
    )
}

/// Builds the outlier spec; explicit settings replace the mode defaults.
pub fn spec_from(cfg: &RunConfig) -> CliResult<OutlierSpec> {
    let (rows, cols, seed) = (cfg.get("rows")?, cfg.get("cols")?, cfg.get("seed")?);
    let mut spec = if cfg.get::<bool>("glu")? {
        OutlierSpec::glu_default(rows, cols, seed)
    } else {
        OutlierSpec::gaussian(rows, cols, 1.0, seed)
    };
    if !cfg.raw("std").is_empty() {
        spec.body_std = cfg.get("std")?;
    }
    let pairs = |key| -> CliResult<Vec<(usize, f32)>> {
        cfg.list::<String>(key)?
            .iter()
            .map(|s| parse_pair(s))
            .collect()
    };
    if !cfg.raw("channel").is_empty() {
        spec.channel_outliers = pairs("channel")?;
    }
    if !cfg.raw("token").is_empty() {
        spec.token_outliers = pairs("token")?;
    }
    let occ = cfg.raw("occasional");
    if !occ.is_empty() {
        let bad = || CliError::Usage(format!("expected density:magnitude, got `{occ}`"));
        let (d, m) = occ.split_once(':').ok_or_else(bad)?;
        spec.occasional = Occasional {
            density: d.trim().parse().map_err(|_| bad())?,
            magnitude: m.trim().parse().map_err(|_| bad())?,
        };
    }
    spec.validate()?;
    Ok(spec)
}

pub fn run(a: &GenArgs) -> CliResult<()> {
    let cfg = resolve(a)?;
    let spec = spec_from(&cfg)?;
    let dir = cfg.out_dir()?;
    let m = generate(&spec)?;
    let stats = analyze(&m)?;
    save_matrix(&m, dir.join(MATRIX_FILE))?;
    let metrics = [
        ("rows", m.rows().to_string()),
        ("cols", m.cols().to_string()),
        ("abs_max", m.abs_max().to_string()),
        ("token_max", stats.token_max.to_string()),
        ("channel_max", stats.channel_max.to_string()),
        ("others_max", stats.others_max.to_string()),
        ("kurtosis", kurtosis(m.data()).to_string()),
    ];
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.clone()])
        .collect();
    write_csv(&dir.join(STATS_FILE), &["metric", "value"], &rows)?;
    let rows: Vec<Vec<String>> = stats
        .sparsity
        .iter()
        .map(|(q, v)| vec![q.to_string(), v.to_string()])
        .collect();
    write_csv(&dir.join(SPARSITY_FILE), &["quantile", "magnitude"], &rows)?;
    cfg.write_manifest(&dir)?;
    println!(
        "{}x{} token_max {} channel_max {} others_max {}",
        m.rows(),
        m.cols(),
        stats.token_max,
        stats.channel_max,
        stats.others_max
    );
    Ok(())
}
