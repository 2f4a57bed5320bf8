use std::path::PathBuf;

use clap::Args;
use fbq_core::gemm::GemmBlockShape;
use fbq_core::policy::{ControllerConfig, FallbackCriterion};
use fbq_core::quant::BitWidth;
use fbq_core::trainsim::{
    train, ContextConfig, FallbackMode, LinearQuant, ModelConfig, QuantConfig, TrainConfig,
    TrainReport,
};

use crate::config::{opt, RunConfig};
use crate::{write_csv, CliError, CliResult};

pub const TRACE_FILE: &str = "trace.csv";
pub const CONTROLLER_FILE: &str = "controller.csv";
pub const GRADS_FILE: &str = "grads.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Steps averaged for the reported final loss.
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Tokens per batch.
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub hot_channels: Option<usize>,
    #[arg(long)]
    pub hot_scale: Option<f32>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub teacher_seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Stochastic-rounding seed of the quantized model.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `false` runs the quantized model in full precision.
    #[arg(long)]
    pub quant: Option<bool>,
    #[arg(long)]
    pub track_gradients: Option<bool>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub x_bits: Option<u32>,
    #[arg(long)]
    pub w_bits: Option<u32>,
    #[arg(long)]
    pub grad_bits: Option<u32>,
    /// Non-linear context bits; 0 keeps full precision.
    #[arg(long)]
    pub context_bits: Option<u32>,
    #[arg(long)]
    pub context_group: Option<usize>,
    /// `off`, `fixed` or `delayed`.
    #[arg(long)]
    pub fallback: Option<String>,
    /// Rate for `--fallback fixed`.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("steps", "5000"),
    ("lr", "0.05"),
    ("d_model", "64"),
    ("d_hidden", "128"),
    ("layers", "2"),
    ("tokens", "16"),
    ("hot_channels", "4"),
    ("hot_scale", "8"),
    ("init_seed", "1"),
    ("teacher_seed", "2"),
    ("data_seed", "3"),
    ("seed", "0"),
    ("quant", "true"),
    ("track_gradients", "true"),
    ("block", "16"),
    ("x_bits", "8"),
    ("w_bits", "8"),
    ("grad_bits", "8"),
    ("context_bits", "10"),
    ("context_group", "128"),
    ("fallback", "delayed"),
    ("rate", "0.2"),
    ("criterion", "absmax"),
    ("r_min", "0.1"),
    ("r_max", "0.3"),
    ("alpha", "1.3"),
    ("out", ""),
];

fn resolve(a: &TrainArgs) -> CliResult<RunConfig> {
    RunConfig::resolve(
        "train",
        DEFAULTS,
        a.config.as_deref(),
        vec![
            ("steps", opt(&a.steps)),
            ("lr", opt(&a.lr)),
            ("d_model", opt(&a.d_model)),
            ("d_hidden", opt(&a.d_hidden)),
            ("layers", opt(&a.layers)),
            ("tokens", opt(&a.tokens)),
            ("hot_channels", opt(&a.hot_channels)),
            ("hot_scale", opt(&a.hot_scale)),
            ("init_seed", opt(&a.init_seed)),
            ("teacher_seed", opt(&a.teacher_seed)),
            ("data_seed", opt(&a.data_seed)),
            ("seed", opt(&a.seed)),
            ("quant", opt(&a.quant)),
            ("track_gradients", opt(&a.track_gradients)),
            ("block", opt(&a.block)),
            ("x_bits", opt(&a.x_bits)),
            ("w_bits", opt(&a.w_bits)),
            ("grad_bits", opt(&a.grad_bits)),
            ("context_bits", opt(&a.context_bits)),
            ("context_group", opt(&a.context_group)),
            ("fallback", a.fallback.clone()),
            ("rate", opt(&a.rate)),
            ("criterion", a.criterion.clone()),
            ("r_min", opt(&a.r_min)),
            ("r_max", opt(&a.r_max)),
            ("alpha", opt(&a.alpha)),
            ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ],
    )
}

pub fn configs(cfg: &RunConfig) -> CliResult<(TrainConfig, QuantConfig)> {
    let train_cfg = TrainConfig {
        model: ModelConfig {
            d_model: cfg.get("d_model")?,
            d_hidden: cfg.get("d_hidden")?,
            layers: cfg.get("layers")?,
        },
        tokens: cfg.get("tokens")?,
        steps: cfg.get("steps")?,
        lr: cfg.get("lr")?,
        init_seed: cfg.get("init_seed")?,
        teacher_seed: cfg.get("teacher_seed")?,
        data_seed: cfg.get("data_seed")?,
        hot_channels: cfg.get("hot_channels")?,
        hot_scale: cfg.get("hot_scale")?,
        track_gradients: cfg.get("track_gradients")?,
    };
    train_cfg.validate()?;
    if !cfg.get::<bool>("quant")? {
        return Ok((train_cfg, QuantConfig::disabled()));
    }
    let fallback = match cfg.raw("fallback") {
        "off" => FallbackMode::Off,
        "fixed" => {
            let rate: f64 = cfg.get("rate")?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(CliError::Usage("rate must lie in [0, 1]".into()));
            }
            FallbackMode::FixedRate {
                rate,
                criterion: cfg.get::<FallbackCriterion>("criterion")?,
            }
        }
        "delayed" => FallbackMode::Delayed(ControllerConfig::new(
            cfg.get("r_min")?,
            cfg.get("r_max")?,
            cfg.get("alpha")?,
        )?),
        other => return Err(CliError::Usage(format!("unknown fallback mode `{other}`"))),
    };
    let side: usize = cfg.get("block")?;
    let bits = |key| -> CliResult<BitWidth> { Ok(BitWidth::new(cfg.get(key)?)?) };
    let linear = LinearQuant {
        block: GemmBlockShape::new(side, side, side)?,
        x_bits: bits("x_bits")?,
        w_bits: bits("w_bits")?,
        grad_bits: bits("grad_bits")?,
        fallback,
    };
    for b in [linear.x_bits, linear.w_bits, linear.grad_bits] {
        if b.bits() > fbq_core::gemm::MAX_GEMM_BITS {
            return Err(CliError::Usage(format!(
                "linear-layer bit widths are limited to {}",
                fbq_core::gemm::MAX_GEMM_BITS
            )));
        }
    }
    let context_bits: u32 = cfg.get("context_bits")?;
    let context = ContextConfig {
        bits: if context_bits == 0 {
            None
        } else {
            Some(BitWidth::new(context_bits)?)
        },
        group: cfg.get("context_group")?,
    };
    if context.group == 0 {
        return Err(CliError::Usage("context_group must be positive".into()));
    }
    Ok((
        train_cfg,
        QuantConfig {
            linear: Some(linear),
            context,
            seed: cfg.get("seed")?,
        },
    ))
}

fn write_outputs(dir: &std::path::Path, r: &TrainReport) -> CliResult<()> {
    let rows: Vec<Vec<String>> = r
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.loss_quant.to_string(),
                s.loss_fp.to_string(),
                s.grad_cossim_mean.to_string(),
                s.fallback_rate_mean.to_string(),
                s.threshold_mean.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join(TRACE_FILE),
        &[
            "step",
            "loss_quant",
            "loss_fp",
            "grad_cossim_mean",
            "fallback_rate_mean",
            "threshold_mean",
        ],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = r
        .controller
        .iter()
        .map(|c| {
            vec![
                c.step.to_string(),
                c.layer.to_string(),
                c.threshold.to_string(),
                c.observed_rate.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join(CONTROLLER_FILE),
        &["step", "layer", "threshold", "observed_rate"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = r
        .grad_report
        .per_param
        .iter()
        .map(|(n, c)| vec![n.clone(), c.to_string()])
        .collect();
    write_csv(
        &dir.join(GRADS_FILE),
        &["parameter", "grad_cossim_mean"],
        &rows,
    )?;
    let (lq, lf) = (
        r.final_loss_quant(FINAL_WINDOW),
        r.final_loss_fp(FINAL_WINDOW),
    );
    let summary = [
        ("steps_completed", r.steps.len().to_string()),
        (
            "diverged_at",
            r.diverged_at.map_or("none".to_string(), |s| s.to_string()),
        ),
        ("final_loss_quant", lq.to_string()),
        ("final_loss_fp", lf.to_string()),
        ("relative_gap", ((lq - lf).abs() / lf).to_string()),
        ("grad_cossim_mean", r.grad_report.mean().to_string()),
    ];
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.clone()])
        .collect();
    write_csv(&dir.join(SUMMARY_FILE), &["metric", "value"], &rows)
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve(a)?;
    let (train_cfg, quant) = configs(&cfg)?;
    let dir = cfg.out_dir()?;
    let report = train(&train_cfg, &quant)?;
    write_outputs(&dir, &report)?;
    cfg.write_manifest(&dir)?;
    match report.diverged_at {
        Some(s) => println!("diverged at step {s}"),
        None => println!(
            "final loss quant {} fp {}",
            report.final_loss_quant(FINAL_WINDOW),
            report.final_loss_fp(FINAL_WINDOW)
        ),
    }
    Ok(())
}
