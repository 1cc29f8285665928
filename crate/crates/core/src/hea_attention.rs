//! Herding-effect attention over a comment's context window.
//!
//! Each slot `j` attends to earlier slots `k < j` with weight driven by the
//! cosine similarity of their sentence features and an exponential decay in
//! their timestamp gap. The attended encoder states feed a decoder LSTM whose
//! final hidden state is the context-aware text feature.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmCell, LstmTrace};
use crate::tensor::{axpy, dot, norm, softmax, softmax_backward, Tensor};

/// How the final per-row softmax treats entries whose decay is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Softmax over all `M` scores; zero scores still receive weight `e^0`.
    #[default]
    Literal,
    /// Future, self, and PAD entries are excluded. A row with no valid
    /// predecessor attends to itself.
    Masked,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Literal => "literal",
            AttentionMode::Masked => "masked",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "literal" => Ok(AttentionMode::Literal),
            "masked" => Ok(AttentionMode::Masked),
            other => Err(Error::InvalidArgument(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Influence of slot `k` on slot `j`: `exp(-beta (t_j - t_k))` when `j > k`,
/// zero otherwise. Negative gaps are clamped to zero.
pub fn time_decay(t_j: f64, t_k: f64, j: usize, k: usize, beta: f64) -> f64 {
    if j <= k {
        return 0.0;
    }
    let gap = (t_j - t_k).max(0.0);
    (-beta * gap).exp()
}

/// Full attention state for one window. All matrices are `M x M` except
/// `encoder_states` and `context` which are `M x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub sim: Vec<Vec<f64>>,
    pub sim_norm: Vec<Vec<f64>>,
    pub decay: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub encoder_states: Vec<Vec<f64>>,
    pub context: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Normalized similarities, decay factors, raw scores, and final attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub sim: Vec<Vec<f64>>,
    pub sim_norm: Vec<Vec<f64>>,
    pub decay: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    /// Entries that took part in the final softmax of each row.
    active: Vec<Vec<bool>>,
}

pub fn attention_scores(
    seq: &[Vec<f64>],
    timestamps: &[f64],
    pad_mask: &[bool],
    beta: f64,
    mode: AttentionMode,
) -> Result<AttentionScores> {
    let m = seq.len();
    if m == 0 {
        return Err(Error::InvalidArgument("attention needs at least one slot".into()));
    }
    if timestamps.len() != m || pad_mask.len() != m {
        return Err(Error::InvalidArgument(format!(
            "window has {m} slots but {} timestamps and {} mask entries",
            timestamps.len(),
            pad_mask.len()
        )));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }

    let mut sim = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in j..m {
            let s = cosine_similarity(&seq[j], &seq[k]);
            sim[j][k] = s;
            sim[k][j] = s;
        }
    }
    let sim_norm: Vec<Vec<f64>> = sim.iter().map(|row| softmax(row)).collect();
    let decay: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|k| time_decay(timestamps[j], timestamps[k], j, k, beta)).collect())
        .collect();
    let scores: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|k| sim_norm[j][k] * decay[j][k]).collect())
        .collect();

    let mut weights = Vec::with_capacity(m);
    let mut active = Vec::with_capacity(m);
    for j in 0..m {
        match mode {
            AttentionMode::Literal => {
                weights.push(softmax(&scores[j]));
                active.push(vec![true; m]);
            }
            AttentionMode::Masked => {
                let valid: Vec<bool> = (0..m).map(|k| k < j && pad_mask[k] && decay[j][k] > 0.0).collect();
                let idx: Vec<usize> = (0..m).filter(|&k| valid[k]).collect();
                let mut row = vec![0.0; m];
                if idx.is_empty() {
                    row[j] = 1.0;
                } else {
                    let sub: Vec<f64> = idx.iter().map(|&k| scores[j][k]).collect();
                    for (&k, p) in idx.iter().zip(softmax(&sub)) {
                        row[k] = p;
                    }
                }
                weights.push(row);
                active.push(valid);
            }
        }
    }
    Ok(AttentionScores {
        sim,
        sim_norm,
        decay,
        scores,
        weights,
        active,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaParams {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
}

impl HeaParams {
    pub fn new<R: Rng>(d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        HeaParams {
            encoder: LstmCell::new(d, d, bound, rng),
            decoder: LstmCell::new(d, d, bound, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        HeaParams {
            encoder: LstmCell::zeros(d, d),
            decoder: LstmCell::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.hidden_size()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(6);
        for (n, t) in self.encoder.tensors() {
            out.push((format!("hea.encoder.{n}"), t));
        }
        for (n, t) in self.decoder.tensors() {
            out.push((format!("hea.decoder.{n}"), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(6);
        for (n, t) in self.encoder.tensors_mut() {
            out.push((format!("hea.encoder.{n}"), t));
        }
        for (n, t) in self.decoder.tensors_mut() {
            out.push((format!("hea.decoder.{n}"), t));
        }
        out
    }
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeaCache {
    seq: Vec<Vec<f64>>,
    scores: AttentionScores,
    encoder: LstmTrace,
    decoder: LstmTrace,
}

impl HeaCache {
    pub fn to_trace(&self) -> AttentionTrace {
        let s = &self.scores;
        AttentionTrace {
            sim: s.sim.clone(),
            sim_norm: s.sim_norm.clone(),
            decay: s.decay.clone(),
            scores: s.scores.clone(),
            weights: s.weights.clone(),
            encoder_states: self.encoder.hidden.clone(),
            context: self.decoder.inputs.clone(),
            output: self.decoder.last_hidden().map(<[f64]>::to_vec).unwrap_or_default(),
        }
    }
}

/// Runs attention plus the encoder/decoder recurrences; returns the final decoder state.
pub fn apply_hea(
    seq: &[Vec<f64>],
    timestamps: &[f64],
    pad_mask: &[bool],
    beta: f64,
    mode: AttentionMode,
    params: &HeaParams,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let (out, cache) = hea_forward(seq, timestamps, pad_mask, beta, mode, params)?;
    Ok((out, cache.to_trace()))
}

pub fn hea_forward(
    seq: &[Vec<f64>],
    timestamps: &[f64],
    pad_mask: &[bool],
    beta: f64,
    mode: AttentionMode,
    params: &HeaParams,
) -> Result<(Vec<f64>, HeaCache)> {
    let d = params.dim();
    if let Some(bad) = seq.iter().find(|row| row.len() != d) {
        return Err(Error::InvalidArgument(format!(
            "context feature has length {}, expected {d}",
            bad.len()
        )));
    }
    let scores = attention_scores(seq, timestamps, pad_mask, beta, mode)?;
    let encoder = params.encoder.forward(seq.to_vec());
    let h = &encoder.hidden;
    let context: Vec<Vec<f64>> = scores
        .weights
        .iter()
        .map(|row| {
            let mut c = vec![0.0; d];
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    axpy(w, &h[k], &mut c);
                }
            }
            c
        })
        .collect();
    let decoder = params.decoder.forward(context);
    let out = decoder.last_hidden().expect("window is nonempty").to_vec();
    Ok((
        out,
        HeaCache {
            seq: seq.to_vec(),
            scores,
            encoder,
            decoder,
        },
    ))
}

/// Accumulates parameter gradients for `d_out = dL/d(output)` and returns `dL/dSEQ`.
pub fn hea_backward(params: &HeaParams, cache: &HeaCache, d_out: &[f64], grad: &mut HeaParams) -> Vec<Vec<f64>> {
    let m = cache.seq.len();
    let d = params.dim();
    let s = &cache.scores;

    let mut d_dec = vec![vec![0.0; d]; m];
    d_dec[m - 1].copy_from_slice(d_out);
    let d_context = params.decoder.backward(&cache.decoder, &d_dec, &mut grad.decoder);

    let h = &cache.encoder.hidden;
    let mut d_h = vec![vec![0.0; d]; m];
    let mut d_sim = vec![vec![0.0; m]; m];
    for j in 0..m {
        let w = &s.weights[j];
        let dw: Vec<f64> = (0..m).map(|k| dot(&d_context[j], &h[k])).collect();
        for k in 0..m {
            if w[k] != 0.0 {
                axpy(w[k], &d_context[j], &mut d_h[k]);
            }
        }
        // through the final softmax, restricted to the entries that took part in it
        let idx: Vec<usize> = (0..m).filter(|&k| s.active[j][k]).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<f64> = idx.iter().map(|&k| w[k]).collect();
        let dp: Vec<f64> = idx.iter().map(|&k| dw[k]).collect();
        let d_scores_sub = softmax_backward(&p, &dp);
        let mut d_sim_norm = vec![0.0; m];
        for (&k, ds) in idx.iter().zip(d_scores_sub) {
            d_sim_norm[k] = ds * s.decay[j][k];
        }
        let d_row = softmax_backward(&s.sim_norm[j], &d_sim_norm);
        for k in 0..m {
            d_sim[j][k] += d_row[k];
        }
    }

    let mut d_seq = params.encoder.backward(&cache.encoder, &d_h, &mut grad.encoder);

    let norms: Vec<f64> = cache.seq.iter().map(|v| norm(v)).collect();
    for j in 0..m {
        for k in 0..m {
            let g = d_sim[j][k];
            if g == 0.0 || norms[j] == 0.0 || norms[k] == 0.0 {
                continue;
            }
            let (a, b) = (&cache.seq[j], &cache.seq[k]);
            let cos = s.sim[j][k];
            let inv = 1.0 / (norms[j] * norms[k]);
            let (ra, rb) = (cos / (norms[j] * norms[j]), cos / (norms[k] * norms[k]));
            for i in 0..d {
                d_seq[j][i] += g * (b[i] * inv - a[i] * ra);
                d_seq[k][i] += g * (a[i] * inv - b[i] * rb);
            }
        }
    }
    d_seq
}
