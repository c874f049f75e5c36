//! Forward and backward passes of the fixed detector topology.

use crate::geometry::BBox;
use crate::tensor::{
    conv2d_backward, conv2d_forward, linear, linear_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, Conv2dCache, PoolIndices, Tensor,
};

use super::model::{DetectorModel, Layer};
use super::roi::{roi_pool, roi_pool_backward, PooledRoi};
use super::{DetectorError, Result};

/// Input normalization applied to `[0, 1]` pixels: `(x − 0.5) · 4`.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_SCALE: f32 = 4.0;

pub fn normalize_image(image: &Tensor) -> Tensor {
    let data = image
        .data()
        .iter()
        .map(|&v| (v - PIXEL_MEAN) * PIXEL_SCALE)
        .collect();
    Tensor::new(image.shape(), data).expect("same shape")
}

/// Which layer a gradient slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerId {
    Backbone(usize),
    RpnConv,
    RpnCls,
    RpnReg,
    HeadFc,
    HeadCls,
    HeadReg,
}

/// Gradient buffers laid out like [`DetectorModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f32>>,
    backbone_layers: usize,
}

impl Gradients {
    pub fn zeros_like(model: &DetectorModel) -> Self {
        Self {
            tensors: model.params().iter().map(|t| vec![0.0; t.len()]).collect(),
            backbone_layers: model.backbone.len(),
        }
    }

    fn slot(&self, layer: LayerId) -> usize {
        let l = self.backbone_layers;
        match layer {
            LayerId::Backbone(i) => 2 * i,
            LayerId::RpnConv => 2 * l,
            LayerId::RpnCls => 2 * l + 2,
            LayerId::RpnReg => 2 * l + 4,
            LayerId::HeadFc => 2 * l + 6,
            LayerId::HeadCls => 2 * l + 8,
            LayerId::HeadReg => 2 * l + 10,
        }
    }

    pub fn add_layer(&mut self, layer: LayerId, weight: &[f32], bias: &[f32]) {
        let s = self.slot(layer);
        for (g, &d) in self.tensors[s].iter_mut().zip(weight) {
            *g += d;
        }
        for (g, &d) in self.tensors[s + 1].iter_mut().zip(bias) {
            *g += d;
        }
    }

    pub fn layer(&self, layer: LayerId) -> (&[f32], &[f32]) {
        let s = self.slot(layer);
        (&self.tensors[s], &self.tensors[s + 1])
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for v in self.tensors.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

struct BackboneLayerCache {
    conv: Conv2dCache<f32>,
    activation: Tensor,
    pool: Option<PoolIndices>,
}

pub struct BackboneCache {
    layers: Vec<BackboneLayerCache>,
}

pub fn backbone_forward(model: &DetectorModel, image: &Tensor) -> Result<(Tensor, BackboneCache)> {
    let mut x = normalize_image(image);
    let mut layers = Vec::with_capacity(model.backbone.len());
    for (i, layer) in model.backbone.iter().enumerate() {
        let (pre, conv) = conv2d_forward(&x, &layer.weight, &layer.bias, 1, 1)?;
        let activation = relu(&pre);
        let (out, pool) = if model.config.backbone.pools_after.contains(&i) {
            let (p, idx) = maxpool2(&activation)?;
            (p, Some(idx))
        } else {
            (activation.clone(), None)
        };
        layers.push(BackboneLayerCache {
            conv,
            activation,
            pool,
        });
        x = out;
    }
    Ok((x, BackboneCache { layers }))
}

pub fn backbone_backward(
    model: &DetectorModel,
    cache: &BackboneCache,
    grad_features: Vec<f32>,
    grads: &mut Gradients,
) -> Result<()> {
    let mut grad = grad_features;
    for (i, (layer, c)) in model.backbone.iter().zip(&cache.layers).enumerate().rev() {
        let g_act = match &c.pool {
            Some(idx) => maxpool2_backward(idx, &grad)?.into_data(),
            None => grad,
        };
        let g_pre = relu_backward(&c.activation, &g_act)?;
        let g = conv2d_backward(&c.conv, &layer.weight, g_pre.data(), i > 0)?;
        grads.add_layer(LayerId::Backbone(i), g.kernel.data(), g.bias.data());
        grad = g.input.map(Tensor::into_data).unwrap_or_default();
    }
    Ok(())
}

pub struct RpnCache {
    conv: Conv2dCache<f32>,
    hidden: Tensor,
    cls_cache: Conv2dCache<f32>,
    reg_cache: Conv2dCache<f32>,
    cells: usize,
}

/// Per-anchor RPN outputs in anchor order `(cell, scale, ratio)`.
pub struct RpnOutputs {
    /// `[A, 2]` logits; column 1 is "object".
    pub logits: Tensor,
    /// `[A, 4]` predicted deltas.
    pub deltas: Tensor,
}

fn conv_layer(layer: &Layer, x: &Tensor, padding: usize) -> Result<(Tensor, Conv2dCache<f32>)> {
    Ok(conv2d_forward(x, &layer.weight, &layer.bias, 1, padding)?)
}

pub fn rpn_forward(model: &DetectorModel, features: &Tensor) -> Result<(RpnOutputs, RpnCache)> {
    let (pre, conv) = conv_layer(&model.rpn_conv, features, 1)?;
    let hidden = relu(&pre);
    let (cls, cls_cache) = conv_layer(&model.rpn_cls, &hidden, 0)?;
    let (reg, reg_cache) = conv_layer(&model.rpn_reg, &hidden, 0)?;
    let a = model.config.anchors_per_cell();
    let cells = features.shape()[1] * features.shape()[2];
    let mut logits = vec![0f32; cells * a * 2];
    let mut deltas = vec![0f32; cells * a * 4];
    let (cd, rd) = (cls.data(), reg.data());
    for cell in 0..cells {
        for k in 0..a {
            let n = cell * a + k;
            for c in 0..2 {
                logits[n * 2 + c] = cd[(2 * k + c) * cells + cell];
            }
            for c in 0..4 {
                deltas[n * 4 + c] = rd[(4 * k + c) * cells + cell];
            }
        }
    }
    Ok((
        RpnOutputs {
            logits: Tensor::new(&[cells * a, 2], logits)?,
            deltas: Tensor::new(&[cells * a, 4], deltas)?,
        },
        RpnCache {
            conv,
            hidden,
            cls_cache,
            reg_cache,
            cells,
        },
    ))
}

/// Returns the gradient w.r.t. the backbone features.
pub fn rpn_backward(
    model: &DetectorModel,
    cache: &RpnCache,
    grad_logits: &[f32],
    grad_deltas: &[f32],
    grads: &mut Gradients,
) -> Result<Vec<f32>> {
    let a = model.config.anchors_per_cell();
    let cells = cache.cells;
    let mut g_cls = vec![0f32; 2 * a * cells];
    let mut g_reg = vec![0f32; 4 * a * cells];
    for cell in 0..cells {
        for k in 0..a {
            let n = cell * a + k;
            for c in 0..2 {
                g_cls[(2 * k + c) * cells + cell] = grad_logits[n * 2 + c];
            }
            for c in 0..4 {
                g_reg[(4 * k + c) * cells + cell] = grad_deltas[n * 4 + c];
            }
        }
    }
    let gc = conv2d_backward(&cache.cls_cache, &model.rpn_cls.weight, &g_cls, true)?;
    let gr = conv2d_backward(&cache.reg_cache, &model.rpn_reg.weight, &g_reg, true)?;
    grads.add_layer(LayerId::RpnCls, gc.kernel.data(), gc.bias.data());
    grads.add_layer(LayerId::RpnReg, gr.kernel.data(), gr.bias.data());
    let mut g_hidden = gc.input.expect("requested").into_data();
    for (h, r) in g_hidden.iter_mut().zip(gr.input.expect("requested").data()) {
        *h += r;
    }
    let g_pre = relu_backward(&cache.hidden, &g_hidden)?;
    let g = conv2d_backward(&cache.conv, &model.rpn_conv.weight, g_pre.data(), true)?;
    grads.add_layer(LayerId::RpnConv, g.kernel.data(), g.bias.data());
    Ok(g.input.expect("requested").into_data())
}

pub struct HeadCache {
    pooled: Vec<PooledRoi>,
    stacked: Tensor,
    hidden: Tensor,
}

/// Detection-head outputs for a batch of regions.
pub struct HeadOutputs {
    /// `[R, C+1]` logits; column 0 is background.
    pub class_logits: Tensor,
    /// `[R, 4C]` normalized per-class deltas.
    pub deltas: Tensor,
}

pub fn head_forward(
    model: &DetectorModel,
    features: &Tensor,
    rois: &[BBox],
) -> Result<(HeadOutputs, HeadCache)> {
    if rois.is_empty() {
        return Err(DetectorError::Config("detection head called with no regions".into()));
    }
    let p = model.config.roi_pool_size;
    let stride = model.config.backbone.total_stride() as f64;
    let mut pooled = Vec::with_capacity(rois.len());
    let mut stacked = Vec::new();
    for roi in rois {
        let r = roi_pool(features, roi, stride, (p, p))?;
        stacked.extend_from_slice(r.values.data());
        pooled.push(r);
    }
    let d = stacked.len() / rois.len();
    let stacked = Tensor::new(&[rois.len(), d], stacked)?;
    let pre = linear(&stacked, &model.head_fc.weight, &model.head_fc.bias)?;
    let hidden = relu(&pre);
    let class_logits = linear(&hidden, &model.head_cls.weight, &model.head_cls.bias)?;
    let deltas = linear(&hidden, &model.head_reg.weight, &model.head_reg.bias)?;
    Ok((
        HeadOutputs {
            class_logits,
            deltas,
        },
        HeadCache {
            pooled,
            stacked,
            hidden,
        },
    ))
}

/// Accumulates head parameter gradients and adds the feature gradient
/// into `grad_features`.
pub fn head_backward(
    model: &DetectorModel,
    cache: &HeadCache,
    grad_logits: &[f32],
    grad_deltas: &[f32],
    grads: &mut Gradients,
    grad_features: &mut [f32],
) -> Result<()> {
    let gc = linear_backward(&cache.hidden, &model.head_cls.weight, grad_logits)?;
    let gr = linear_backward(&cache.hidden, &model.head_reg.weight, grad_deltas)?;
    grads.add_layer(LayerId::HeadCls, gc.weight.data(), gc.bias.data());
    grads.add_layer(LayerId::HeadReg, gr.weight.data(), gr.bias.data());
    let mut g_hidden = gc.input.into_data();
    for (h, r) in g_hidden.iter_mut().zip(gr.input.data()) {
        *h += r;
    }
    let g_pre = relu_backward(&cache.hidden, &g_hidden)?;
    let gf = linear_backward(&cache.stacked, &model.head_fc.weight, g_pre.data())?;
    grads.add_layer(LayerId::HeadFc, gf.weight.data(), gf.bias.data());
    let d = cache.stacked.shape()[1];
    for (r, pooled) in cache.pooled.iter().enumerate() {
        roi_pool_backward(pooled, &gf.input.data()[r * d..(r + 1) * d], grad_features);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::{BackboneConfig, ModelConfig};

    fn tiny_model() -> DetectorModel {
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                conv_channels: vec![4, 6],
                pools_after: vec![0, 1],
                input_w: 20,
                input_h: 16,
            },
            rpn_channels: 5,
            anchor_scales: vec![8.0],
            anchor_ratios: vec![0.5, 1.0],
            roi_pool_size: 2,
            head_hidden: 6,
            bbox_std: [0.1, 0.1, 0.2, 0.2],
        };
        DetectorModel::init(cfg, vec!["a".into(), "b".into()], 3).unwrap()
    }

    #[test]
    fn shapes_line_up() {
        let m = tiny_model();
        let img = Tensor::full(&[3, 16, 20], 0.3);
        let (feat, _) = backbone_forward(&m, &img).unwrap();
        assert_eq!(feat.shape(), &[6, 4, 5]);
        let (out, _) = rpn_forward(&m, &feat).unwrap();
        assert_eq!(out.logits.shape(), &[40, 2]);
        assert_eq!(out.deltas.shape(), &[40, 4]);
        let (head, _) = head_forward(&m, &feat, &[BBox::new(0., 0., 8., 8.)]).unwrap();
        assert_eq!(head.class_logits.shape(), &[1, 3]);
        assert_eq!(head.deltas.shape(), &[1, 8]);
    }

    /// Finite-difference check of the whole chain on a scalar probe.
    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut m = tiny_model();
        let mut img = Tensor::zeros(&[3, 16, 20]);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f32) / 101.0;
        }
        let rois = [BBox::new(0., 0., 12., 12.), BBox::new(4., 4., 20., 16.)];
        let probe = |m: &DetectorModel| -> (f64, Gradients) {
            let (feat, bcache) = backbone_forward(m, &img).unwrap();
            let (rpn, rcache) = rpn_forward(m, &feat).unwrap();
            let (head, hcache) = head_forward(m, &feat, &rois).unwrap();
            let wl: Vec<f32> = (0..rpn.logits.len()).map(|i| ((i % 7) as f32 - 3.0) * 0.1).collect();
            let wd: Vec<f32> = (0..rpn.deltas.len()).map(|i| ((i % 5) as f32 - 2.0) * 0.1).collect();
            let wc: Vec<f32> = (0..head.class_logits.len()).map(|i| (i % 3) as f32 * 0.2 - 0.2).collect();
            let wr: Vec<f32> = (0..head.deltas.len()).map(|i| (i % 4) as f32 * 0.1 - 0.15).collect();
            let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>();
            let value = dot(rpn.logits.data(), &wl)
                + dot(rpn.deltas.data(), &wd)
                + dot(head.class_logits.data(), &wc)
                + dot(head.deltas.data(), &wr);
            let mut grads = Gradients::zeros_like(m);
            let mut gfeat = rpn_backward(m, &rcache, &wl, &wd, &mut grads).unwrap();
            head_backward(m, &hcache, &wc, &wr, &mut grads, &mut gfeat).unwrap();
            backbone_backward(m, &bcache, gfeat, &mut grads).unwrap();
            (value, grads)
        };
        let (_, grads) = probe(&m);
        let eps = 2e-3f32;
        let mut worst = 0f64;
        let n_params = m.params().len();
        for p in 0..n_params {
            let len = m.params()[p].len();
            for j in (0..len).step_by((len / 6).max(1)) {
                let orig = m.params()[p].data()[j];
                m.params_mut()[p].data_mut()[j] = orig + eps;
                let (plus, _) = probe(&m);
                m.params_mut()[p].data_mut()[j] = orig - eps;
                let (minus, _) = probe(&m);
                m.params_mut()[p].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * eps as f64);
                let analytic = grads.tensors[p][j] as f64;
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-1);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 5e-2, "worst relative error {worst}");
    }
}
