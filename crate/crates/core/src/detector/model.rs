use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::AnchorGrid;
use crate::tensor::{he_uniform, Tensor};

use super::{DetectorError, Result};

/// VGG-style feature extractor: 3×3 same-padded convolutions with ReLU,
/// followed by a 2×2 max-pool after the listed layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub conv_channels: Vec<usize>,
    pub pools_after: Vec<usize>,
    /// Working image size; frames of other sizes are resized to it.
    pub input_w: usize,
    pub input_h: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64],
            pools_after: vec![0, 1, 2],
            input_w: 327,
            input_h: 240,
        }
    }
}

impl BackboneConfig {
    pub fn total_stride(&self) -> usize {
        1 << self.pools_after.len()
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.input_h, self.input_w);
        for _ in &self.pools_after {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    pub fn out_channels(&self) -> usize {
        *self.conv_channels.last().unwrap_or(&3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub rpn_channels: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub roi_pool_size: usize,
    pub head_hidden: usize,
    /// Per-coordinate scale dividing detection-head regression targets.
    pub bbox_std: [f64; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            rpn_channels: 64,
            anchor_scales: vec![32.0, 64.0, 128.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            roi_pool_size: 7,
            head_hidden: 128,
            bbox_std: [0.1, 0.1, 0.2, 0.2],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if b.conv_channels.is_empty() || b.conv_channels.contains(&0) {
            return bad("backbone.conv_channels must be non-empty and positive");
        }
        if b.pools_after.iter().any(|&i| i >= b.conv_channels.len()) {
            return bad("backbone.pools_after refers to a missing layer");
        }
        if b.pools_after.windows(2).any(|w| w[0] >= w[1]) {
            return bad("backbone.pools_after must be strictly increasing");
        }
        if b.input_w < 8 || b.input_h < 8 {
            return bad("backbone input must be at least 8x8");
        }
        if self.rpn_channels == 0 || self.head_hidden == 0 || self.roi_pool_size == 0 {
            return bad("rpn_channels, head_hidden and roi_pool_size must be positive");
        }
        if self.bbox_std.iter().any(|&s| !(s > 0.0)) {
            return bad("bbox_std entries must be positive");
        }
        self.anchor_grid().validate()?;
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    pub fn anchor_grid(&self) -> AnchorGrid {
        let (fh, fw) = self.backbone.feature_dims();
        AnchorGrid {
            feature_h: fh,
            feature_w: fw,
            stride: self.backbone.total_stride() as f64,
            scales: self.anchor_scales.clone(),
            aspect_ratios: self.anchor_ratios.clone(),
            image_w: self.backbone.input_w as f64,
            image_h: self.backbone.input_h as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize) -> Self {
        Self {
            weight: he_uniform(&[out_c, in_c, k, k], in_c * k * k, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    fn linear(rng: &mut ChaCha8Rng, out_n: usize, in_n: usize, gain: f64) -> Self {
        let mut weight: Tensor = he_uniform(&[out_n, in_n], in_n, rng);
        for v in weight.data_mut() {
            *v *= gain as f32;
        }
        Self {
            weight,
            bias: Tensor::zeros(&[out_n]),
        }
    }
}

/// All learnable tensors of the two-stage detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub backbone: Vec<Layer>,
    pub rpn_conv: Layer,
    pub rpn_cls: Layer,
    pub rpn_reg: Layer,
    pub head_fc: Layer,
    pub head_cls: Layer,
    pub head_reg: Layer,
}

impl DetectorModel {
    /// He-uniform initialization from a seeded generator. The output layers
    /// are scaled down so the untrained model starts near uniform scores.
    pub fn init(config: ModelConfig, class_names: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if class_names.is_empty() {
            return Err(DetectorError::Config("model needs at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Vec::with_capacity(config.backbone.conv_channels.len());
        let mut in_c = 3;
        for &c in &config.backbone.conv_channels {
            backbone.push(Layer::conv(&mut rng, c, in_c, 3));
            in_c = c;
        }
        let a = config.anchors_per_cell();
        let r = config.rpn_channels;
        let rpn_conv = Layer::conv(&mut rng, r, in_c, 3);
        let mut rpn_cls = Layer::conv(&mut rng, 2 * a, r, 1);
        let mut rpn_reg = Layer::conv(&mut rng, 4 * a, r, 1);
        for v in rpn_cls.weight.data_mut().iter_mut().chain(rpn_reg.weight.data_mut()) {
            *v *= 0.1;
        }
        let pooled = in_c * config.roi_pool_size * config.roi_pool_size;
        let c = class_names.len();
        let head_fc = Layer::linear(&mut rng, config.head_hidden, pooled, 1.0);
        let head_cls = Layer::linear(&mut rng, c + 1, config.head_hidden, 0.1);
        let head_reg = Layer::linear(&mut rng, 4 * c, config.head_hidden, 0.05);
        Ok(Self {
            config,
            class_names,
            backbone,
            rpn_conv,
            rpn_cls,
            rpn_reg,
            head_fc,
            head_cls,
            head_reg,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Parameter names in the fixed order used by gradients and checkpoints.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.backbone.len() {
            names.push(format!("backbone.conv{i}.weight"));
            names.push(format!("backbone.conv{i}.bias"));
        }
        for layer in ["rpn.conv", "rpn.cls", "rpn.reg", "head.fc", "head.cls", "head.reg"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self
            .backbone
            .iter()
            .chain([&self.rpn_conv, &self.rpn_cls, &self.rpn_reg, &self.head_fc, &self.head_cls, &self.head_reg])
        {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.backbone.iter_mut().chain([
            &mut self.rpn_conv,
            &mut self.rpn_cls,
            &mut self.rpn_reg,
            &mut self.head_fc,
            &mut self.head_cls,
            &mut self.head_reg,
        ]) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|t| t.all_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}
