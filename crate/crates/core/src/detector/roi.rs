use crate::geometry::BBox;
use crate::tensor::{Tensor, TensorError};

use super::{DetectorError, Result};

/// Feature-map cell range `[start, end)` covered by a proposal, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiWindow {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Maps an image-space box onto feature cells by dividing by the stride
/// (floor for the start, ceil for the end), clamped to the map.
pub fn map_to_features(proposal: &BBox, stride: f64, feat_w: usize, feat_h: usize) -> Result<RoiWindow> {
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
    let x0 = clamp((proposal.x_min / stride).floor(), feat_w);
    let y0 = clamp((proposal.y_min / stride).floor(), feat_h);
    let x1 = clamp((proposal.x_max / stride).ceil(), feat_w);
    let y1 = clamp((proposal.y_max / stride).ceil(), feat_h);
    if x1 <= x0 || y1 <= y0 {
        return Err(DetectorError::DegenerateRoi(*proposal));
    }
    Ok(RoiWindow { x0, y0, x1, y1 })
}

/// Result of pooling one region: values and the flat feature index each
/// output cell was taken from (`None` for empty bins).
#[derive(Debug, Clone)]
pub struct PooledRoi {
    pub values: Tensor,
    pub argmax: Vec<Option<usize>>,
}

/// Max-pools the features under `proposal` into a `C×ph×pw` grid.
///
/// Bin `i` of a window spanning `n` cells covers
/// `[floor(i·n/p), ceil((i+1)·n/p))`.
pub fn roi_pool(
    features: &Tensor,
    proposal: &BBox,
    stride: f64,
    output_size: (usize, usize),
) -> Result<PooledRoi> {
    if features.rank() != 3 {
        return Err(TensorError::Dimension(format!("roi_pool needs C×H×W, got {:?}", features.shape())).into());
    }
    let [c, h, w] = [features.shape()[0], features.shape()[1], features.shape()[2]];
    let (ph, pw) = output_size;
    if ph == 0 || pw == 0 {
        return Err(TensorError::Dimension("roi output size must be positive".into()).into());
    }
    let win = map_to_features(proposal, stride, w, h)?;
    let (rh, rw) = (win.y1 - win.y0, win.x1 - win.x0);
    let data = features.data();
    let mut values = vec![0f32; c * ph * pw];
    let mut argmax = vec![None; c * ph * pw];
    for by in 0..ph {
        let ys = win.y0 + by * rh / ph;
        let ye = (win.y0 + ((by + 1) * rh).div_ceil(ph)).min(win.y1);
        for bx in 0..pw {
            let xs = win.x0 + bx * rw / pw;
            let xe = (win.x0 + ((bx + 1) * rw).div_ceil(pw)).min(win.x1);
            for ci in 0..c {
                let mut best: Option<(usize, f32)> = None;
                for y in ys..ye {
                    for x in xs..xe {
                        let idx = (ci * h + y) * w + x;
                        if best.is_none_or(|(_, v)| data[idx] > v) {
                            best = Some((idx, data[idx]));
                        }
                    }
                }
                let o = (ci * ph + by) * pw + bx;
                if let Some((idx, v)) = best {
                    values[o] = v;
                    argmax[o] = Some(idx);
                }
            }
        }
    }
    Ok(PooledRoi {
        values: Tensor::new(&[c, ph, pw], values)?,
        argmax,
    })
}

/// Scatters a pooled-output gradient back onto the feature gradient.
pub fn roi_pool_backward(pooled: &PooledRoi, grad_out: &[f32], grad_features: &mut [f32]) {
    for (idx, &g) in pooled.argmax.iter().zip(grad_out) {
        if let Some(i) = idx {
            grad_features[*i] += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor {
        Tensor::new(&[1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn whole_map_single_bin_is_global_max() {
        let f = Tensor::new(&[2, 2, 3], vec![1., 9., 2., 3., 4., 5., -1., -2., -3., -4., -5., -0.5]).unwrap();
        let p = roi_pool(&f, &BBox::new(0., 0., 24., 16.), 8., (1, 1)).unwrap();
        assert_eq!(p.values.data(), &[9., -0.5]);
    }

    #[test]
    fn one_cell_per_bin_is_identity_slice() {
        let p = roi_pool(&ramp(), &BBox::new(8., 8., 24., 32.), 8., (3, 2)).unwrap();
        assert_eq!(p.values.data(), &[5., 6., 9., 10., 13., 14.]);
    }

    #[test]
    fn ramp_two_by_two_matches_maxpool() {
        let p = roi_pool(&ramp(), &BBox::new(0., 0., 32., 32.), 8., (2, 2)).unwrap();
        assert_eq!(p.values.data(), &[5., 7., 13., 15.]);
    }

    #[test]
    fn small_window_bins_never_empty() {
        let p = roi_pool(&ramp(), &BBox::new(8., 8., 24., 24.), 8., (7, 7)).unwrap();
        assert!(p.argmax.iter().all(Option::is_some));
    }

    #[test]
    fn degenerate_roi_rejected() {
        let err = roi_pool(&ramp(), &BBox::new(40., 40., 50., 50.), 8., (2, 2));
        assert!(matches!(err, Err(DetectorError::DegenerateRoi(_))));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let p = roi_pool(&ramp(), &BBox::new(0., 0., 32., 32.), 8., (2, 2)).unwrap();
        let mut g = vec![0f32; 16];
        roi_pool_backward(&p, &[1., 2., 3., 4.], &mut g);
        assert_eq!((g[5], g[7], g[13], g[15]), (1., 2., 3., 4.));
        assert_eq!(g.iter().sum::<f32>(), 10.);
    }
}
