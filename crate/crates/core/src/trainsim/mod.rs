//! Toy training harness: a quantized GLU MLP trained side by side with a
//! full-precision twin on a teacher-student regression task.

mod context;
mod linear;
mod model;
mod nonlinear;

pub use context::{ContextConfig, SavedTensor};
pub use linear::{FallbackMode, LinearQuant, QuantLinearLayer};
pub use model::{mse, GluBlock, GluModel, ModelConfig, QuantConfig};
pub use nonlinear::{silu_grad, GluCombine, RmsNorm, Silu, RMS_EPS};

use crate::error::{config_err, Result};
use crate::gemm::cosine_similarity;
use crate::matrix::{DenseMatrix, DeterministicRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Tokens per step.
    pub tokens: usize,
    pub steps: usize,
    pub lr: f32,
    pub init_seed: u64,
    pub teacher_seed: u64,
    pub data_seed: u64,
    /// Number of input channels scaled by `hot_scale`.
    pub hot_channels: usize,
    pub hot_scale: f32,
    /// Recompute full-precision gradients at the quantized parameters each step.
    pub track_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                d_model: 64,
                d_hidden: 128,
                layers: 2,
            },
            tokens: 16,
            steps: 5000,
            lr: 0.05,
            init_seed: 1,
            teacher_seed: 2,
            data_seed: 3,
            hot_channels: 4,
            hot_scale: 8.0,
            track_gradients: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.d_model == 0 || m.d_hidden == 0 || m.layers == 0 || self.tokens == 0 {
            return config_err("model widths, depth and batch size must be positive");
        }
        if self.hot_channels > m.d_model {
            return config_err("more hot channels than model channels");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return config_err("learning rate must be positive");
        }
        if !(self.hot_scale.is_finite() && self.hot_scale > 0.0) {
            return config_err("hot_scale must be positive");
        }
        Ok(())
    }

    /// Indices of the scaled input channels: a contiguous run from channel 1.
    pub fn hot_channel_indices(&self) -> Vec<usize> {
        let d = self.model.d_model;
        (1..=self.hot_channels).map(|c| c % d).collect()
    }
}

/// Deterministic input batches with a few persistently large channels.
#[derive(Debug, Clone)]
pub struct DataSource {
    rng: DeterministicRng,
    tokens: usize,
    width: usize,
    hot: Vec<usize>,
    hot_scale: f32,
}

impl DataSource {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            rng: DeterministicRng::new(cfg.data_seed),
            tokens: cfg.tokens,
            width: cfg.model.d_model,
            hot: cfg.hot_channel_indices(),
            hot_scale: cfg.hot_scale,
        }
    }

    pub fn batch(&self, step: u64) -> DenseMatrix {
        let base = DenseMatrix::random_normal(self.tokens, self.width, 1.0, &self.rng.derive(step));
        let mut scale = vec![1f32; self.width];
        for &c in &self.hot {
            scale[c] = self.hot_scale;
        }
        DenseMatrix::from_fn(self.tokens, self.width, |r, c| base.get(r, c) * scale[c])
    }
}

/// Per-parameter cosine similarity between two gradient sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradReport {
    pub fn mean(&self) -> f64 {
        if self.per_param.is_empty() {
            return 1.0;
        }
        self.per_param.iter().map(|(_, c)| c).sum::<f64>() / self.per_param.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.per_param
            .iter()
            .map(|(_, c)| *c)
            .fold(f64::INFINITY, f64::min)
    }
}

fn grad_cosines(a: &GluModel, b: &GluModel) -> GradReport {
    let per_param = a
        .gradients()
        .into_iter()
        .zip(b.gradients())
        .map(|((name, ga), (_, gb))| (name, cosine_similarity(ga, gb)))
        .collect();
    GradReport { per_param }
}

/// Gradients of `model` on one batch under `quant` and under full precision,
/// compared per parameter. The model is left unchanged.
pub fn compare_gradients(
    model: &GluModel,
    x: &DenseMatrix,
    target: &DenseMatrix,
    quant: &QuantConfig,
    step: u64,
) -> Result<GradReport> {
    let run = |q: &QuantConfig| -> Result<GluModel> {
        let mut m = model.clone();
        m.zero_grads();
        let out = m.forward(x, q, step)?;
        let (_, d) = mse(&out, target)?;
        m.backward(&d, q, step)?;
        Ok(m)
    };
    Ok(grad_cosines(&run(quant)?, &run(&QuantConfig::disabled())?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss_quant: f64,
    pub loss_fp: f64,
    pub grad_cossim_mean: f64,
    pub fallback_rate_mean: f64,
    pub threshold_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerRecord {
    pub step: usize,
    pub layer: u64,
    /// Threshold in force during the step.
    pub threshold: f64,
    pub observed_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub controller: Vec<ControllerRecord>,
    /// Per-parameter gradient cosine averaged over all steps.
    pub grad_report: GradReport,
    /// First step whose quantized loss was not finite.
    pub diverged_at: Option<usize>,
}

impl TrainReport {
    fn tail_mean(&self, window: usize, f: impl Fn(&StepRecord) -> f64) -> f64 {
        let n = self.steps.len().min(window.max(1));
        if n == 0 {
            return f64::NAN;
        }
        self.steps[self.steps.len() - n..]
            .iter()
            .map(f)
            .sum::<f64>()
            / n as f64
    }

    /// Mean quantized loss over the last `window` steps.
    pub fn final_loss_quant(&self, window: usize) -> f64 {
        self.tail_mean(window, |r| r.loss_quant)
    }

    pub fn final_loss_fp(&self, window: usize) -> f64 {
        self.tail_mean(window, |r| r.loss_fp)
    }
}

/// Trains the quantized model and its full-precision twin from the same
/// initialisation on the same batches.
pub fn train(cfg: &TrainConfig, quant: &QuantConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = DataSource::new(cfg);
    let mut teacher = GluModel::new(cfg.model, cfg.teacher_seed);
    let mut student = GluModel::new(cfg.model, cfg.init_seed);
    let mut twin = student.clone();
    let fp = QuantConfig::disabled();
    let controller_cfg = match quant.linear.map(|l| l.fallback) {
        Some(FallbackMode::Delayed(c)) => Some(c),
        _ => None,
    };

    let mut steps = Vec::with_capacity(cfg.steps);
    let mut controller = Vec::new();
    let mut cos_sums: Vec<(String, f64)> = Vec::new();
    let mut diverged_at = None;

    for step in 0..cfg.steps {
        let s = step as u64;
        let x = data.batch(s);
        let target = teacher.forward(&x, &fp, s)?;

        student.zero_grads();
        let out = student.forward(&x, quant, s)?;
        let (loss_quant, dout) = mse(&out, &target)?;
        if !loss_quant.is_finite() {
            diverged_at = Some(step);
            break;
        }
        student.backward(&dout, quant, s)?;

        let grad_cossim_mean = if cfg.track_gradients {
            let mut probe = student.clone();
            probe.zero_grads();
            let out = probe.forward(&x, &fp, s)?;
            let (_, d) = mse(&out, &target)?;
            probe.backward(&d, &fp, s)?;
            let report = grad_cosines(&student, &probe);
            if cos_sums.is_empty() {
                cos_sums = report
                    .per_param
                    .iter()
                    .map(|(n, _)| (n.clone(), 0.0))
                    .collect();
            }
            for (acc, (_, c)) in cos_sums.iter_mut().zip(&report.per_param) {
                acc.1 += c;
            }
            report.mean()
        } else {
            f64::NAN
        };

        twin.zero_grads();
        let out = twin.forward(&x, &fp, s)?;
        let (loss_fp, d) = mse(&out, &target)?;
        twin.backward(&d, &fp, s)?;
        twin.sgd_step(cfg.lr);

        let layers: Vec<&QuantLinearLayer> = student.linear_layers().collect();
        let n = layers.len() as f64;
        let fallback_rate_mean = layers.iter().map(|l| l.last_rate()).sum::<f64>() / n;
        let threshold_mean = layers.iter().map(|l| l.threshold()).sum::<f64>() / n;
        if controller_cfg.is_some() {
            controller.extend(layers.iter().map(|l| ControllerRecord {
                step,
                layer: l.id(),
                threshold: l.threshold(),
                observed_rate: l.last_rate(),
            }));
        }
        steps.push(StepRecord {
            step,
            loss_quant,
            loss_fp,
            grad_cossim_mean,
            fallback_rate_mean,
            threshold_mean,
        });

        if let Some(c) = &controller_cfg {
            student.update_controllers(c);
        }
        student.sgd_step(cfg.lr);
    }

    let count = steps.len().max(1) as f64;
    let grad_report = GradReport {
        per_param: cos_sums.into_iter().map(|(n, s)| (n, s / count)).collect(),
    };
    Ok(TrainReport {
        steps,
        controller,
        grad_report,
        diverged_at,
    })
}
