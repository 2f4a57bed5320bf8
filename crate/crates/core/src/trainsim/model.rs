//! Residual GLU MLP built from quantized linear layers.

use super::context::ContextConfig;
use super::linear::{LinearQuant, QuantLinearLayer};
use super::nonlinear::{GluCombine, RmsNorm, Silu};
use crate::error::Result;
use crate::matrix::{DenseMatrix, DeterministicRng};
use crate::policy::ControllerConfig;

/// Quantization settings of a whole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    /// `None` runs every linear layer in full precision.
    pub linear: Option<LinearQuant>,
    pub context: ContextConfig,
    pub seed: u64,
}

impl QuantConfig {
    /// Full-precision passthrough.
    pub fn disabled() -> Self {
        Self {
            linear: None,
            context: ContextConfig::FULL,
            seed: 0,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.linear.is_none() && self.context.bits.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub layers: usize,
}

/// `h + Down(silu(Gate(norm h)) * Up(norm h))`.
#[derive(Debug, Clone)]
pub struct GluBlock {
    pub norm: RmsNorm,
    pub gate: QuantLinearLayer,
    pub up: QuantLinearLayer,
    pub down: QuantLinearLayer,
    silu: Silu,
    combine: GluCombine,
}

impl GluBlock {
    fn new(index: usize, cfg: &ModelConfig, rng: &DeterministicRng) -> Self {
        let (d, h) = (cfg.d_model, cfg.d_hidden);
        let w = |tag: u64, rows, cols, fan_in: usize| {
            let std = 1.0 / (fan_in as f32).sqrt();
            DenseMatrix::random_normal(rows, cols, std, &rng.derive(tag))
        };
        let id = 3 * index as u64;
        Self {
            norm: RmsNorm::new(d),
            gate: QuantLinearLayer::new(id, w(id, h, d, d)),
            up: QuantLinearLayer::new(id + 1, w(id + 1, h, d, d)),
            down: QuantLinearLayer::new(id + 2, w(id + 2, d, h, h)),
            silu: Silu::default(),
            combine: GluCombine::default(),
        }
    }

    fn forward(&mut self, x: &DenseMatrix, q: &QuantConfig, step: u64) -> Result<DenseMatrix> {
        let lin = q.linear.as_ref();
        let n = self.norm.forward(x, &q.context)?;
        let g = self.gate.forward(&n, lin, q.seed, step)?;
        let u = self.up.forward(&n, lin, q.seed, step)?;
        let a = self.silu.forward(&g, &q.context);
        let m = self.combine.forward(&a, &u, &q.context)?;
        let o = self.down.forward(&m, lin, q.seed, step)?;
        x.zip_map(&o, |a, b| a + b)
    }

    fn backward(&mut self, dy: &DenseMatrix, q: &QuantConfig, step: u64) -> Result<DenseMatrix> {
        let lin = q.linear.as_ref();
        let dm = self.down.backward(dy, lin, q.seed, step)?;
        let (da, du) = self.combine.backward(&dm)?;
        let dg = self.silu.backward(&da)?;
        let dn_g = self.gate.backward(&dg, lin, q.seed, step)?;
        let dn_u = self.up.backward(&du, lin, q.seed, step)?;
        let dn = dn_g.zip_map(&dn_u, |a, b| a + b)?;
        self.norm.backward(&dn)?.zip_map(dy, |a, b| a + b)
    }

    /// True when every saved non-linear context is quantized.
    pub fn contexts_quantized(&self) -> bool {
        let n = self.norm.context().is_some_and(|c| c.is_quantized());
        let s = self.silu.context().is_some_and(|c| c.is_quantized());
        let g = self
            .combine
            .contexts()
            .is_some_and(|(a, b)| a.is_quantized() && b.is_quantized());
        n && s && g
    }
}

#[derive(Debug, Clone)]
pub struct GluModel {
    config: ModelConfig,
    blocks: Vec<GluBlock>,
}

impl GluModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let rng = DeterministicRng::new(seed);
        let blocks = (0..config.layers)
            .map(|i| GluBlock::new(i, &config, &rng.derive(i as u64)))
            .collect();
        Self { config, blocks }
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn blocks(&self) -> &[GluBlock] {
        &self.blocks
    }

    pub fn forward(&mut self, x: &DenseMatrix, q: &QuantConfig, step: u64) -> Result<DenseMatrix> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, q, step)?;
        }
        Ok(h)
    }

    pub fn backward(
        &mut self,
        dy: &DenseMatrix,
        q: &QuantConfig,
        step: u64,
    ) -> Result<DenseMatrix> {
        let mut d = dy.clone();
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d, q, step)?;
        }
        Ok(d)
    }

    pub fn linear_layers(&self) -> impl Iterator<Item = &QuantLinearLayer> {
        self.blocks.iter().flat_map(|b| [&b.gate, &b.up, &b.down])
    }

    fn linear_layers_mut(&mut self) -> impl Iterator<Item = &mut QuantLinearLayer> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.gate, &mut b.up, &mut b.down])
    }

    /// Named parameter tensors, flattened.
    pub fn parameters(&self) -> Vec<(String, &[f32])> {
        self.named(|l| l.weight().data(), |n| n.gain())
    }

    /// Gradients in the same order as [`GluModel::parameters`].
    pub fn gradients(&self) -> Vec<(String, &[f32])> {
        self.named(|l| l.grad().data(), |n| n.grad())
    }

    fn named<'a>(
        &'a self,
        lin: impl Fn(&'a QuantLinearLayer) -> &'a [f32],
        norm: impl Fn(&'a RmsNorm) -> &'a [f32],
    ) -> Vec<(String, &'a [f32])> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.norm"), norm(&b.norm)));
            out.push((format!("block{i}.gate"), lin(&b.gate)));
            out.push((format!("block{i}.up"), lin(&b.up)));
            out.push((format!("block{i}.down"), lin(&b.down)));
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.norm.zero_grad();
        }
        self.linear_layers_mut().for_each(|l| l.zero_grad());
    }

    pub fn sgd_step(&mut self, lr: f32) {
        for b in &mut self.blocks {
            b.norm.apply_sgd(lr);
        }
        self.linear_layers_mut().for_each(|l| l.apply_sgd(lr));
    }

    pub fn update_controllers(&mut self, cfg: &ControllerConfig) {
        self.linear_layers_mut()
            .for_each(|l| l.update_controller(cfg));
    }
}

/// Mean squared error and its gradient with respect to `out`.
pub fn mse(out: &DenseMatrix, target: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let n = out.len() as f64;
    let loss = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n;
    let scale = (2.0 / n) as f32;
    let grad = out.zip_map(target, |a, b| scale * (a - b))?;
    Ok((loss, grad))
}
