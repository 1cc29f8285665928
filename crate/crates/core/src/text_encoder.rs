//! Tokenization, vocabulary, and the bidirectional LSTM sentence encoder.
//!
//! A comment's feature is the mean over positions of the concatenated forward
//! and backward hidden states. Each direction has width `d / 2`, so the
//! feature lives in `R^d`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmCell, LstmTrace};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Longest token sequence fed to the encoder.
pub const MAX_TOKENS: usize = 50;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F     // CJK symbols and punctuation
        | 0x3040..=0x30FF   // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF   // fullwidth forms
        | 0x20000..=0x2FA1F)
}

/// Whitespace tokenizer that also splits every CJK character into its own token.
/// Output is truncated to [`MAX_TOKENS`].
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_limit(text, MAX_TOKENS)
}

pub fn tokenize_with_limit(text: &str, max_tokens: usize) -> Vec<String> {
    let mut out = Vec::new();
    'words: for word in text.split_whitespace() {
        let mut run = String::new();
        for ch in word.chars() {
            if is_cjk(ch) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(ch.to_string());
            } else {
                run.push(ch);
            }
            if out.len() >= max_tokens {
                break 'words;
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
        if out.len() >= max_tokens {
            break;
        }
    }
    out.truncate(max_tokens);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens seen at least `min_count` times get ids, most frequent first,
    /// ties broken lexicographically.
    pub fn build<'a, I>(texts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_texts = 0usize;
        for text in texts {
            n_texts += 1;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if n_texts == 0 {
            return Err(Error::Empty("vocabulary corpus has no texts".into()));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.ids.iter().map(|(t, &i)| (t.clone(), i)).collect()
    }

    /// Rebuilds a vocabulary from a token-to-id map; ids must be dense and
    /// include the PAD and UNK entries.
    pub fn from_map(map: BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![None; map.len()];
        for (tok, id) in map {
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| Error::Corrupt(format!("vocabulary id {id} out of range")))?;
            if slot.replace(tok).is_some() {
                return Err(Error::Corrupt(format!("vocabulary id {id} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Corrupt("vocabulary ids are not dense".into()))?;
        if tokens.get(PAD_ID).map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(UNK_ID).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Corrupt("vocabulary is missing PAD/UNK entries".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        Vocabulary::from_map(map).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `vocab x d`
    pub embedding: Tensor,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl EncoderParams {
    pub fn new<R: Rng>(vocab_size: usize, d: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || !d.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("d must be a positive even number, got {d}")));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let mut embedding = Tensor::uniform(vocab_size, d, bound, rng);
        embedding.row_mut(PAD_ID).fill(0.0);
        Ok(EncoderParams {
            embedding,
            forward: LstmCell::new(d, d / 2, bound, rng),
            backward: LstmCell::new(d, d / 2, bound, rng),
        })
    }

    pub fn zeros(vocab_size: usize, d: usize) -> Self {
        EncoderParams {
            embedding: Tensor::zeros(vocab_size, d),
            forward: LstmCell::zeros(d, d / 2),
            backward: LstmCell::zeros(d, d / 2),
        }
    }

    /// Output feature width.
    pub fn dim(&self) -> usize {
        2 * self.forward.hidden_size()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.embedding)];
        for (n, t) in self.forward.tensors() {
            out.push((format!("encoder.forward.{n}"), t));
        }
        for (n, t) in self.backward.tensors() {
            out.push((format!("encoder.backward.{n}"), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &mut self.embedding)];
        for (n, t) in self.forward.tensors_mut() {
            out.push((format!("encoder.forward.{n}"), t));
        }
        for (n, t) in self.backward.tensors_mut() {
            out.push((format!("encoder.backward.{n}"), t));
        }
        out
    }
}

/// Intermediate state of one sentence encoding.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    tokens: Vec<usize>,
    forward: LstmTrace,
    /// Run over the reversed sequence; step `s` corresponds to position `L-1-s`.
    backward: LstmTrace,
}

/// Encodes a token-id sequence into a `d`-vector. An empty sequence maps to zeros.
pub fn encode_tsc(tokens: &[usize], params: &EncoderParams) -> Result<Vec<f64>> {
    encode_with_trace(tokens, params).map(|(seq, _)| seq)
}

pub fn encode_with_trace(tokens: &[usize], params: &EncoderParams) -> Result<(Vec<f64>, EncodeTrace)> {
    if let Some(&bad) = tokens.iter().find(|&&t| t >= params.vocab_size()) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} out of range for vocabulary of size {}",
            params.vocab_size()
        )));
    }
    let half = params.forward.hidden_size();
    let d = 2 * half;
    let embedded: Vec<Vec<f64>> = tokens.iter().map(|&t| params.embedding.row(t).to_vec()).collect();
    let reversed: Vec<Vec<f64>> = embedded.iter().rev().cloned().collect();
    let fwd = params.forward.forward(embedded);
    let bwd = params.backward.forward(reversed);

    let mut seq = vec![0.0; d];
    let len = tokens.len();
    if len > 0 {
        for t in 0..len {
            let hf = &fwd.hidden[t];
            let hb = &bwd.hidden[len - 1 - t];
            for k in 0..half {
                seq[k] += hf[k];
                seq[half + k] += hb[k];
            }
        }
        let inv = 1.0 / len as f64;
        seq.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((
        seq,
        EncodeTrace {
            tokens: tokens.to_vec(),
            forward: fwd,
            backward: bwd,
        },
    ))
}

/// Accumulates encoder parameter gradients given `d_seq = dL/dseq`.
pub fn encode_backward(params: &EncoderParams, trace: &EncodeTrace, d_seq: &[f64], grad: &mut EncoderParams) {
    let len = trace.tokens.len();
    if len == 0 {
        return;
    }
    let half = params.forward.hidden_size();
    let inv = 1.0 / len as f64;
    let df: Vec<f64> = d_seq[..half].iter().map(|v| v * inv).collect();
    let db: Vec<f64> = d_seq[half..].iter().map(|v| v * inv).collect();
    // every position contributes equally to the mean
    let d_fwd = vec![df; len];
    let d_bwd = vec![db; len];
    let dx_f = params.forward.backward(&trace.forward, &d_fwd, &mut grad.forward);
    let dx_b = params.backward.backward(&trace.backward, &d_bwd, &mut grad.backward);
    for (t, &tok) in trace.tokens.iter().enumerate() {
        let row = grad.embedding.row_mut(tok);
        let from_b = &dx_b[len - 1 - t];
        for ((g, a), b) in row.iter_mut().zip(&dx_f[t]).zip(from_b) {
            *g += a + b;
        }
    }
}
