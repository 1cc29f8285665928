//! Image-text fusion: project a frame feature down to `d`, concatenate it with
//! the text feature, and reduce the `2d` concatenation back to `d`. Both dense
//! layers use elu.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{elu, elu_grad, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `d x visual_dim`
    pub visual_weight: Tensor,
    /// `1 x d`
    pub visual_bias: Tensor,
    /// `d x 2d`; the first `d` columns read the text half.
    pub concat_weight: Tensor,
    /// `1 x d`
    pub concat_bias: Tensor,
}

impl FusionParams {
    pub fn new<R: Rng>(visual_dim: usize, d: usize, rng: &mut R) -> Self {
        FusionParams {
            visual_weight: Tensor::uniform(d, visual_dim, 1.0 / (visual_dim as f64).sqrt(), rng),
            visual_bias: Tensor::zeros(1, d),
            concat_weight: Tensor::uniform(d, 2 * d, 1.0 / ((2 * d) as f64).sqrt(), rng),
            concat_bias: Tensor::zeros(1, d),
        }
    }

    pub fn zeros(visual_dim: usize, d: usize) -> Self {
        FusionParams {
            visual_weight: Tensor::zeros(d, visual_dim),
            visual_bias: Tensor::zeros(1, d),
            concat_weight: Tensor::zeros(d, 2 * d),
            concat_bias: Tensor::zeros(1, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.visual_weight.rows
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_weight.cols
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("fusion.visual_weight".into(), &self.visual_weight),
            ("fusion.visual_bias".into(), &self.visual_bias),
            ("fusion.concat_weight".into(), &self.concat_weight),
            ("fusion.concat_bias".into(), &self.concat_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("fusion.visual_weight".into(), &mut self.visual_weight),
            ("fusion.visual_bias".into(), &mut self.visual_bias),
            ("fusion.concat_weight".into(), &mut self.concat_weight),
            ("fusion.concat_bias".into(), &mut self.concat_bias),
        ]
    }
}

fn dense_elu(weight: &Tensor, bias: &Tensor, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pre = bias.data.clone();
    weight.matvec_acc(x, &mut pre);
    let out = pre.iter().map(|&v| elu(v)).collect();
    (pre, out)
}

/// `elu(W_v vsl + b_v)`.
pub fn project_visual(visual: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    if visual.len() != params.visual_dim() {
        return Err(Error::InvalidArgument(format!(
            "visual feature has length {}, expected {}",
            visual.len(),
            params.visual_dim()
        )));
    }
    Ok(dense_elu(&params.visual_weight, &params.visual_bias, visual).1)
}

/// `elu(W_c [text; visual_projected] + b_c)`.
pub fn fuse(textual: &[f64], visual_projected: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    let d = params.dim();
    if textual.len() != d || visual_projected.len() != d {
        return Err(Error::InvalidArgument(format!(
            "fusion inputs have lengths {} and {}, expected {d}",
            textual.len(),
            visual_projected.len()
        )));
    }
    let com: Vec<f64> = textual.iter().chain(visual_projected).copied().collect();
    Ok(dense_elu(&params.concat_weight, &params.concat_bias, &com).1)
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    visual_pre: Vec<f64>,
    combined: Vec<f64>,
    combined_pre: Vec<f64>,
}

/// Projection plus fusion in one pass, keeping what the backward pass needs.
pub fn fusion_forward(textual: &[f64], visual: &[f64], params: &FusionParams) -> Result<(Vec<f64>, FusionCache)> {
    if visual.len() != params.visual_dim() {
        return Err(Error::InvalidArgument(format!(
            "visual feature has length {}, expected {}",
            visual.len(),
            params.visual_dim()
        )));
    }
    if textual.len() != params.dim() {
        return Err(Error::InvalidArgument(format!(
            "text feature has length {}, expected {}",
            textual.len(),
            params.dim()
        )));
    }
    let (visual_pre, projected) = dense_elu(&params.visual_weight, &params.visual_bias, visual);
    let combined: Vec<f64> = textual.iter().chain(&projected).copied().collect();
    let (combined_pre, out) = dense_elu(&params.concat_weight, &params.concat_bias, &combined);
    Ok((
        out,
        FusionCache {
            visual_pre,
            combined,
            combined_pre,
        },
    ))
}

/// Accumulates fusion gradients and returns `dL/d(textual)`.
pub fn fusion_backward(
    params: &FusionParams,
    cache: &FusionCache,
    visual: &[f64],
    d_out: &[f64],
    grad: &mut FusionParams,
) -> Vec<f64> {
    let d = params.dim();
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&cache.combined_pre)
        .map(|(g, &x)| g * elu_grad(x))
        .collect();
    grad.concat_weight.outer_acc(&d_pre, &cache.combined);
    for (b, g) in grad.concat_bias.data.iter_mut().zip(&d_pre) {
        *b += g;
    }
    let mut d_combined = vec![0.0; 2 * d];
    params.concat_weight.matvec_t_acc(&d_pre, &mut d_combined);
    let d_visual_pre: Vec<f64> = d_combined[d..]
        .iter()
        .zip(&cache.visual_pre)
        .map(|(g, &x)| g * elu_grad(x))
        .collect();
    grad.visual_weight.outer_acc(&d_visual_pre, visual);
    for (b, g) in grad.visual_bias.data.iter_mut().zip(&d_visual_pre) {
        *b += g;
    }
    d_combined.truncate(d);
    d_combined
}
