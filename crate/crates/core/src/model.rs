//! Composition of the four recommenders and their joint backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cf_core::{bce, FactorTables, TrainingExample, Variant};
use crate::error::{Error, Result};
use crate::fusion::{fusion_backward, fusion_forward, FusionCache, FusionParams};
use crate::hea_attention::{hea_backward, hea_forward, AttentionMode, AttentionTrace, HeaCache, HeaParams};
use crate::tensor::{sigmoid, Tensor};
use crate::text_encoder::{encode_backward, encode_with_trace, EncodeTrace, EncoderParams};

/// Shape and hyperparameters that fix a model's forward computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub d: usize,
    pub visual_dim: usize,
    pub context_size: usize,
    pub beta: f64,
    pub hea_mode: AttentionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub hea: Option<HeaParams>,
    pub fusion: Option<FusionParams>,
    pub factors: FactorTables,
}

impl ModelParams {
    pub fn init<R: Rng>(spec: &ModelSpec, vocab_size: usize, n_users: usize, n_videos: usize, rng: &mut R) -> Result<Self> {
        let encoder = EncoderParams::new(vocab_size, spec.d, rng)?;
        let hea = spec.variant.uses_attention().then(|| HeaParams::new(spec.d, rng));
        let fusion = spec
            .variant
            .uses_visual()
            .then(|| FusionParams::new(spec.visual_dim, spec.d, rng));
        let factors = FactorTables::new(n_users, n_videos, spec.d, rng);
        Ok(ModelParams {
            encoder,
            hea,
            fusion,
            factors,
        })
    }

    pub fn zeros(spec: &ModelSpec, vocab_size: usize, n_users: usize, n_videos: usize) -> Self {
        ModelParams {
            encoder: EncoderParams::zeros(vocab_size, spec.d),
            hea: spec.variant.uses_attention().then(|| HeaParams::zeros(spec.d)),
            fusion: spec
                .variant
                .uses_visual()
                .then(|| FusionParams::zeros(spec.visual_dim, spec.d)),
            factors: FactorTables::zeros(n_users, n_videos, spec.d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: EncoderParams::zeros(self.encoder.vocab_size(), self.encoder.dim()),
            hea: self.hea.as_ref().map(|h| HeaParams::zeros(h.dim())),
            fusion: self.fusion.as_ref().map(|f| FusionParams::zeros(f.visual_dim(), f.dim())),
            factors: FactorTables::zeros(self.factors.users.rows, self.factors.videos.rows, self.factors.users.cols),
        }
    }

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.tensors();
        if let Some(h) = &self.hea {
            out.extend(h.tensors());
        }
        if let Some(f) = &self.fusion {
            out.extend(f.tensors());
        }
        out.extend(self.factors.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.tensors_mut();
        if let Some(h) = &mut self.hea {
            out.extend(h.tensors_mut());
        }
        if let Some(f) = &mut self.fusion {
            out.extend(f.tensors_mut());
        }
        out.extend(self.factors.tensors_mut());
        out
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.tensors().into_iter().map(|(n, t)| (n, t.norm())).collect()
    }
}

struct TextCache {
    /// Encoder traces per slot; `None` where the slot was not encoded.
    encodes: Vec<Option<EncodeTrace>>,
    hea: Option<HeaCache>,
}

struct ForwardCache {
    text: TextCache,
    fusion: Option<FusionCache>,
    feature: Vec<f64>,
    pred: f64,
}

fn text_feature(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<(Vec<f64>, TextCache)> {
    let m = ex.slots.len();
    if m == 0 || ex.timestamps.len() != m || ex.pad_mask.len() != m {
        return Err(Error::InvalidArgument(format!(
            "example {} has an inconsistent window",
            ex.tsc_id
        )));
    }
    match &params.hea {
        None => {
            let (seq, trace) = encode_with_trace(ex.target_tokens(), &params.encoder)?;
            let mut encodes: Vec<Option<EncodeTrace>> = (0..m - 1).map(|_| None).collect();
            encodes.push(Some(trace));
            Ok((seq, TextCache { encodes, hea: None }))
        }
        Some(hea) => {
            let mut seqs = Vec::with_capacity(m);
            let mut encodes = Vec::with_capacity(m);
            for (tokens, &real) in ex.slots.iter().zip(&ex.pad_mask) {
                if real {
                    let (seq, trace) = encode_with_trace(tokens, &params.encoder)?;
                    seqs.push(seq);
                    encodes.push(Some(trace));
                } else {
                    seqs.push(vec![0.0; spec.d]);
                    encodes.push(None);
                }
            }
            let (out, cache) = hea_forward(&seqs, &ex.timestamps, &ex.pad_mask, spec.beta, spec.hea_mode, hea)?;
            Ok((
                out,
                TextCache {
                    encodes,
                    hea: Some(cache),
                },
            ))
        }
    }
}

fn forward_cached(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<ForwardCache> {
    if params.hea.is_some() != spec.variant.uses_attention() || params.fusion.is_some() != spec.variant.uses_visual() {
        return Err(Error::Config(format!("parameters do not match variant {}", spec.variant)));
    }
    let (text, text_cache) = text_feature(spec, params, ex)?;
    let (feature, fusion) = match &params.fusion {
        None => (text, None),
        Some(fp) => {
            let visual = ex.visual.as_deref().ok_or_else(|| {
                Error::Config(format!("variant {} requires visual features", spec.variant))
            })?;
            let (fused, cache) = fusion_forward(&text, visual, fp)?;
            (fused, Some(cache))
        }
    };
    let gu = params.factors.users.row(ex.user_idx);
    let gv = params.factors.videos.row(ex.video_idx);
    // p.q with p = GU (.) f and q = GV (.) f
    let logit: f64 = (0..spec.d).map(|k| gu[k] * gv[k] * feature[k] * feature[k]).sum();
    Ok(ForwardCache {
        text: text_cache,
        fusion,
        feature,
        pred: sigmoid(logit),
    })
}

fn check_indices(params: &ModelParams, ex: &TrainingExample) -> Result<()> {
    if ex.user_idx >= params.factors.users.rows {
        return Err(Error::UnknownEntity {
            kind: "user",
            id: ex.user_idx.to_string(),
        });
    }
    if ex.video_idx >= params.factors.videos.rows {
        return Err(Error::UnknownEntity {
            kind: "video",
            id: ex.video_idx.to_string(),
        });
    }
    Ok(())
}

/// Predicted likeness `y_hat` for one comment.
pub fn forward(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<f64> {
    check_indices(params, ex)?;
    Ok(forward_cached(spec, params, ex)?.pred)
}

/// The feature merged with the latent factors (text, attended text, or fused).
pub fn content_feature(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<Vec<f64>> {
    check_indices(params, ex)?;
    Ok(forward_cached(spec, params, ex)?.feature)
}

/// Attention internals for one example, for the attention variants.
pub fn attention_trace(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<Option<AttentionTrace>> {
    let (_, cache) = text_feature(spec, params, ex)?;
    Ok(cache.hea.map(|h| h.to_trace()))
}

/// Cross-entropy loss of one example.
pub fn example_loss(spec: &ModelSpec, params: &ModelParams, ex: &TrainingExample) -> Result<f64> {
    Ok(bce(forward(spec, params, ex)?, ex.label))
}

/// Forward and backward pass for one example. Gradients of `scale * loss` are
/// added into `grad`; returns `(loss, prediction)`.
pub fn forward_backward(
    spec: &ModelSpec,
    params: &ModelParams,
    ex: &TrainingExample,
    grad: &mut ModelParams,
    scale: f64,
) -> Result<(f64, f64)> {
    check_indices(params, ex)?;
    let cache = forward_cached(spec, params, ex)?;
    let loss = bce(cache.pred, ex.label);
    // d(loss)/d(logit) of the cross-entropy on a sigmoid output
    let d_logit = (cache.pred - f64::from(ex.label)) * scale;

    let d = spec.d;
    let f = &cache.feature;
    let gu = params.factors.users.row(ex.user_idx);
    let gv = params.factors.videos.row(ex.video_idx);
    let mut d_feature = vec![0.0; d];
    {
        let grad_u = grad.factors.users.row_mut(ex.user_idx);
        for k in 0..d {
            grad_u[k] += d_logit * gv[k] * f[k] * f[k];
        }
    }
    {
        let grad_v = grad.factors.videos.row_mut(ex.video_idx);
        for k in 0..d {
            grad_v[k] += d_logit * gu[k] * f[k] * f[k];
        }
    }
    for k in 0..d {
        d_feature[k] = d_logit * 2.0 * gu[k] * gv[k] * f[k];
    }

    let d_text = match (&params.fusion, &cache.fusion) {
        (Some(fp), Some(fc)) => {
            let visual = ex.visual.as_deref().expect("checked in forward");
            fusion_backward(fp, fc, visual, &d_feature, grad.fusion.as_mut().expect("grad matches params"))
        }
        _ => d_feature,
    };

    match (&params.hea, &cache.text.hea) {
        (Some(hp), Some(hc)) => {
            let d_seq = hea_backward(hp, hc, &d_text, grad.hea.as_mut().expect("grad matches params"));
            for (trace, ds) in cache.text.encodes.iter().zip(&d_seq) {
                if let Some(trace) = trace {
                    encode_backward(&params.encoder, trace, ds, &mut grad.encoder);
                }
            }
        }
        _ => {
            let trace = cache.text.encodes.last().and_then(Option::as_ref).expect("target encoded");
            encode_backward(&params.encoder, trace, &d_text, &mut grad.encoder);
        }
    }
    Ok((loss, cache.pred))
}

/// `GU_u . GV_v` for every requested video.
pub fn score_videos(params: &ModelParams, user: usize, videos: &[usize]) -> Result<Vec<f64>> {
    videos
        .iter()
        .map(|&v| crate::cf_core::score_user_video(&params.factors, user, v))
        .collect()
}
