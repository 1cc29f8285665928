//! Mini-batch training with Adam, example preparation, and the
//! finite-difference gradient check.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf_core::{TrainingExample, Variant};
use crate::corpus_io::{match_frame_feature, Checkpoint, VisualFeatureTable};
use crate::data_model::{build_context_windows, Dataset};
use crate::error::{Error, Result};
use crate::hea_attention::AttentionMode;
use crate::model::{content_feature, example_loss, forward_backward, ModelParams, ModelSpec};
use crate::tensor::Tensor;
use crate::text_encoder::Vocabulary;

/// Examples per parallel work unit. Gradients are summed chunk by chunk in a
/// fixed order, so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub m: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub hea_mode: AttentionMode,
    pub min_count: usize,
    /// Stop once validation loss has not improved for this many epochs.
    pub patience: Option<usize>,
    /// Tensor names excluded from updates.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 128,
            m: 10,
            beta: 0.2,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            variant: Variant::ItfHea,
            hea_mode: AttentionMode::Literal,
            min_count: 1,
            patience: None,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d must be a positive even number, got {}", self.d));
        }
        if self.m == 0 {
            return bad("context size M must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and nonnegative, got {}", self.beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        Ok(())
    }

    pub fn model_spec(&self, visual_dim: usize) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            d: self.d,
            visual_dim,
            context_size: self.m,
            beta: self.beta,
            hea_mode: self.hea_mode,
        }
    }
}

/// Turns a corpus into per-comment examples using the given indices.
///
/// Comments whose user or video is not indexed are skipped; the count of
/// skipped comments is returned alongside the examples.
pub fn build_examples(
    dataset: &Dataset,
    vocab: &Vocabulary,
    users: &HashMap<&str, usize>,
    videos: &HashMap<&str, usize>,
    visual: Option<&VisualFeatureTable>,
    spec: &ModelSpec,
) -> Result<(Vec<TrainingExample>, usize)> {
    if spec.variant.uses_visual() {
        let table = visual.ok_or_else(|| {
            Error::Config(format!("variant {} needs a visual feature table", spec.variant))
        })?;
        if table.dim != spec.visual_dim {
            return Err(Error::Config(format!(
                "feature table has dimension {}, model expects {}",
                table.dim, spec.visual_dim
            )));
        }
    }
    let zero: Arc<[f64]> = vec![0.0; spec.visual_dim].into();
    let mut missing_videos: HashSet<String> = HashSet::new();
    let mut examples = Vec::with_capacity(dataset.len());
    let mut skipped = 0;
    for window in build_context_windows(dataset, spec.context_size)? {
        let target = &window.target;
        let (Some(&user_idx), Some(&video_idx)) = (users.get(target.user_id.as_str()), videos.get(target.video_id.as_str()))
        else {
            skipped += 1;
            continue;
        };
        let visual = match visual.filter(|_| spec.variant.uses_visual()) {
            None => None,
            Some(table) => match match_frame_feature(table, &target.video_id, target.video_time) {
                Ok(v) => Some(v),
                Err(Error::MissingFeature(v)) => {
                    if missing_videos.insert(v.clone()) {
                        warn!("no frame features for video {v}; substituting zeros");
                    }
                    Some(zero.clone())
                }
                Err(e) => return Err(e),
            },
        };
        let slots = window
            .members
            .iter()
            .map(|m| m.as_ref().map(|c| vocab.encode(&c.text)).unwrap_or_default())
            .collect();
        examples.push(TrainingExample {
            tsc_id: target.tsc_id.clone(),
            slots,
            timestamps: window.timestamps,
            pad_mask: window.pad_mask,
            user_idx,
            video_idx,
            visual,
            label: target.polarity,
        });
    }
    Ok((examples, skipped))
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|(_, t)| t.zeros_like()).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grad: &ModelParams, frozen: &HashSet<String>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((name, p), (_, g)), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            if frozen.contains(&name) {
                continue;
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub users: Vec<String>,
    pub videos: Vec<String>,
    pub loss_log: Vec<EpochLoss>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.spec,
            self.seed,
            self.params.clone(),
            self.vocab.clone(),
            self.users.clone(),
            self.videos.clone(),
        )
    }

    /// `epoch,mean_loss` rows with a header line.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for e in &self.loss_log {
            s.push_str(&format!("{},{}\n", e.epoch, e.mean_loss));
        }
        s
    }
}

fn mean_loss(spec: &ModelSpec, params: &ModelParams, examples: &[TrainingExample]) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|ex| example_loss(spec, params, ex))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn format_norms(params: &ModelParams) -> String {
    params
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn fit(dataset: &Dataset, visual: Option<&VisualFeatureTable>, config: &TrainConfig) -> Result<TrainedModel> {
    fit_with_validation(dataset, visual, config, None)
}

/// Trains a model. When `validation` is given its mean loss is logged per
/// epoch and drives early stopping if `config.patience` is set; the
/// best-validation parameters are returned in that case.
pub fn fit_with_validation(
    dataset: &Dataset,
    visual: Option<&VisualFeatureTable>,
    config: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training corpus has no comments".into()));
    }
    let visual_dim = match (config.variant.uses_visual(), visual) {
        (true, Some(t)) => t.dim,
        (true, None) => {
            return Err(Error::Config(format!(
                "variant {} needs a visual feature table",
                config.variant
            )))
        }
        (false, _) => 0,
    };
    let spec = config.model_spec(visual_dim);
    let vocab = Vocabulary::build(dataset.comments.iter().map(|c| c.text.as_str()), config.min_count)?;
    let users: Vec<String> = dataset.user_index.keys().cloned().collect();
    let videos: Vec<String> = dataset.video_index.keys().cloned().collect();
    let user_lookup: HashMap<&str, usize> = dataset.user_index.iter().map(|(k, &v)| (k.as_str(), v)).collect();
    let video_lookup: HashMap<&str, usize> = dataset.video_index.iter().map(|(k, &v)| (k.as_str(), v)).collect();
    let (examples, _) = build_examples(dataset, &vocab, &user_lookup, &video_lookup, visual, &spec)?;
    let valid_examples = match validation {
        Some(v) => {
            let (ex, skipped) = build_examples(v, &vocab, &user_lookup, &video_lookup, visual, &spec)?;
            if skipped > 0 {
                info!("validation: skipped {skipped} comments with unseen users or videos");
            }
            Some(ex)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&spec, vocab.len(), users.len(), videos.len(), &mut rng)?;
    let mut adam = Adam::new(config.learning_rate, &params);
    let frozen: HashSet<String> = config.frozen.iter().cloned().collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; examples.len()];
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let partials = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grad = params.zeros_like();
                    let mut out = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let (loss, _) = forward_backward(&spec, &params, &examples[i], &mut grad, scale)?;
                        out.push((i, loss));
                    }
                    Ok((grad, out))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut partials = partials.into_iter();
            let (mut grad, first) = partials.next().expect("batch is nonempty");
            let mut batch_losses = first;
            for (g, l) in partials {
                grad.add_assign(&g);
                batch_losses.extend(l);
            }
            for (i, loss) in batch_losses {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_no + 1,
                        norms: format_norms(&params),
                    });
                }
                losses[i] = loss;
            }
            adam.update(&mut params, &grad, &frozen);
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                norms: format_norms(&params),
            });
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let validation_loss = match &valid_examples {
            Some(v) if !v.is_empty() => Some(mean_loss(&spec, &params, v)?),
            _ => None,
        };
        info!("epoch {epoch}: mean loss {mean:.6}");
        loss_log.push(EpochLoss {
            epoch,
            mean_loss: mean,
            validation_loss,
        });
        if let (Some(patience), Some(vl)) = (config.patience, validation_loss) {
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainedModel {
        spec,
        seed: config.seed,
        params,
        vocab,
        users,
        videos,
        loss_log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TensorCheckStatus {
    Checked { max_rel_error: f64, coordinates: usize },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    #[serde(flatten)]
    pub status: TensorCheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| match t.status {
                TensorCheckStatus::Checked { max_rel_error, .. } => Some(max_rel_error),
                TensorCheckStatus::Skipped => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Coordinates sampled per tensor among those with a nonzero analytic gradient.
pub const FD_SAMPLES: usize = 20;
const GRADCHECK_VISUAL_DIM: usize = 12;
const GRADCHECK_VOCAB: usize = 12;

/// Floor on the relative-error denominator. Central differences at step
/// `1e-5` carry roughly `1e-11` of round-off on an O(1) loss, so gradients
/// smaller than this cannot be compared meaningfully.
pub const REL_ERROR_FLOOR: f64 = 1e-6;
/// Coordinates with at least this much gradient are sampled first.
const RESOLVABLE_GRADIENT: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares analytic gradients against central finite differences on a small
/// random instance of the configured variant.
pub fn gradient_check(config: &TrainConfig, tolerance: f64) -> Result<GradCheckReport> {
    if config.d > 8 || config.m > 3 || config.d == 0 || !config.d.is_multiple_of(2) || config.m == 0 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs an even d <= 8 and 1 <= M <= 3 (got d={}, M={})",
            config.d, config.m
        )));
    }
    let visual_dim = if config.variant.uses_visual() { GRADCHECK_VISUAL_DIM } else { 0 };
    let spec = config.model_spec(visual_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&spec, GRADCHECK_VOCAB, 3, 3, &mut rng)?;
    // wider weights than the training init keep gradients well above round-off
    for (name, t) in params.tensors_mut() {
        let bound = if name.starts_with("factors.") { 2.0 } else { 0.9 };
        for v in &mut t.data {
            *v = rng.random_range(-bound..bound);
        }
    }
    let m = spec.context_size;
    let mut t = 0.0;
    let mut timestamps = Vec::with_capacity(m);
    let slots: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            t += rng.random_range(0.5..4.0);
            timestamps.push(t);
            let len = rng.random_range(2..=5);
            (0..len).map(|_| rng.random_range(1..GRADCHECK_VOCAB)).collect()
        })
        .collect();
    let visual = spec
        .variant
        .uses_visual()
        .then(|| (0..visual_dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>().into());
    let example = TrainingExample {
        tsc_id: "gradcheck".into(),
        slots,
        timestamps,
        pad_mask: vec![true; m],
        user_idx: 1,
        video_idx: 2,
        visual,
        label: rng.random_range(0..=1),
    };

    // keep the logit away from the prediction clamp, where the loss is flat
    let feature = content_feature(&spec, &params, &example)?;
    let gv = params.factors.videos.row(example.video_idx).to_vec();
    let logit: f64 = (0..spec.d).map(|k| gv[k] * feature[k] * feature[k] * params.factors.users.get(example.user_idx, k)).sum();
    if logit.abs() > 2.0 {
        let shrink = 2.0 / logit.abs();
        params.factors.users.row_mut(example.user_idx).iter_mut().for_each(|v| *v *= shrink);
    }

    let mut grad = params.zeros_like();
    forward_backward(&spec, &params, &example, &mut grad, 1.0)?;
    let frozen: HashSet<&str> = config.frozen.iter().map(String::as_str).collect();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor> = grad.tensors().into_iter().map(|(_, t)| t.clone()).collect();

    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        if frozen.contains(name.as_str()) {
            tensors.push(TensorCheck {
                name: name.clone(),
                status: TensorCheckStatus::Skipped,
            });
            continue;
        }
        let g = &analytic[ti];
        let mut large: Vec<usize> = (0..g.len()).filter(|&i| g.data[i].abs() >= RESOLVABLE_GRADIENT).collect();
        let mut small: Vec<usize> = (0..g.len())
            .filter(|&i| g.data[i] != 0.0 && g.data[i].abs() < RESOLVABLE_GRADIENT)
            .collect();
        let mut zero: Vec<usize> = (0..g.len()).filter(|&i| g.data[i] == 0.0).collect();
        large.shuffle(&mut rng);
        small.shuffle(&mut rng);
        zero.shuffle(&mut rng);
        let coords: Vec<usize> = large
            .into_iter()
            .chain(small)
            .take(FD_SAMPLES)
            .chain(zero.into_iter().take(5))
            .collect();
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let original = params.tensors()[ti].1.data[c];
            params.tensors_mut()[ti].1.data[c] = original + FD_STEP;
            let plus = example_loss(&spec, &params, &example)?;
            params.tensors_mut()[ti].1.data[c] = original - FD_STEP;
            let minus = example_loss(&spec, &params, &example)?;
            params.tensors_mut()[ti].1.data[c] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g.data[c], numeric));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            status: TensorCheckStatus::Checked {
                max_rel_error: worst,
                coordinates: coords.len(),
            },
        });
    }
    Ok(GradCheckReport {
        variant: config.variant,
        tolerance,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::TimeSyncComment;

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comments = (0..n)
            .map(|i| {
                let pos = rng.random_bool(0.5);
                let words: Vec<String> = (0..3)
                    .map(|_| format!("{}{}", if pos { "good" } else { "bad" }, rng.random_range(0..4)))
                    .collect();
                TimeSyncComment {
                    tsc_id: format!("c{i:03}"),
                    user_id: format!("u{}", i % 5),
                    video_id: format!("v{}", i % 4),
                    video_time: rng.random_range(0.0..60.0),
                    text: words.join(" "),
                    polarity: u8::from(pos),
                }
            })
            .collect();
        Dataset::new(comments).unwrap()
    }

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            d: 8,
            m: 3,
            batch_size: 8,
            epochs: 5,
            learning_rate: 0.01,
            seed: 11,
            variant,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_small_set() {
        let ds = tiny_dataset(50, 1);
        let model = fit(&ds, None, &small_config(Variant::Tm)).unwrap();
        let log = &model.loss_log;
        assert_eq!(log.len(), 5);
        assert!(log[4].mean_loss < log[0].mean_loss, "{log:?}");
    }

    #[test]
    fn same_seed_same_log() {
        let ds = tiny_dataset(40, 2);
        let cfg = small_config(Variant::THea);
        let a = fit(&ds, None, &cfg).unwrap();
        let b = fit(&ds, None, &cfg).unwrap();
        assert_eq!(a.loss_log, b.loss_log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let ds = tiny_dataset(30, 3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config(Variant::THea)
        };
        let model = fit(&ds, None, &cfg).unwrap();
        let first = model.loss_log[0].mean_loss;
        assert!(model.loss_log.iter().all(|e| e.mean_loss == first));
    }

    #[test]
    fn visual_variants_require_a_table() {
        let ds = tiny_dataset(10, 4);
        assert!(matches!(fit(&ds, None, &small_config(Variant::Itf)), Err(Error::Config(_))));
    }

    #[test]
    fn missing_frames_fall_back_to_zeros() {
        let ds = tiny_dataset(20, 5);
        let mut table = VisualFeatureTable::new(3).unwrap();
        table.insert("v0", 0.0, vec![1.0, 2.0, 3.0]).unwrap();
        let cfg = small_config(Variant::Itf);
        let spec = cfg.model_spec(3);
        let vocab = Vocabulary::build(ds.comments.iter().map(|c| c.text.as_str()), 1).unwrap();
        let users: HashMap<&str, usize> = ds.user_index.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        let videos: HashMap<&str, usize> = ds.video_index.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        let (examples, skipped) = build_examples(&ds, &vocab, &users, &videos, Some(&table), &spec).unwrap();
        assert_eq!(skipped, 0);
        for ex in &examples {
            let v = ex.visual.as_ref().unwrap();
            if ex.video_idx == 0 {
                assert_eq!(&v[..], &[1.0, 2.0, 3.0]);
            } else {
                assert_eq!(&v[..], &[0.0; 3]);
            }
        }
        assert!(fit(&ds, Some(&table), &cfg).is_ok());
    }

    #[test]
    fn early_stopping_uses_validation() {
        let ds = tiny_dataset(40, 6);
        let valid = tiny_dataset(20, 7);
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            patience: Some(1),
            ..small_config(Variant::Tm)
        };
        let model = fit_with_validation(&ds, None, &cfg, Some(&valid)).unwrap();
        assert!(model.loss_log.iter().all(|e| e.validation_loss.is_some()));
        assert!(model.loss_log.len() <= 30);
    }

    #[test]
    fn invalid_configs_rejected() {
        let ds = tiny_dataset(5, 8);
        for cfg in [
            TrainConfig { d: 7, ..small_config(Variant::Tm) },
            TrainConfig { m: 0, ..small_config(Variant::Tm) },
            TrainConfig { batch_size: 0, ..small_config(Variant::Tm) },
            TrainConfig { learning_rate: -1.0, ..small_config(Variant::Tm) },
        ] {
            assert!(matches!(fit(&ds, None, &cfg), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn gradient_check_tm_and_itf_hea() {
        for variant in [Variant::Tm, Variant::ItfHea] {
            let report = gradient_check(&small_config(variant), 1e-4).unwrap();
            assert!(report.passed(), "{report:#?}");
        }
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let cfg = TrainConfig {
            frozen: vec!["factors.users".into()],
            ..small_config(Variant::Tm)
        };
        let report = gradient_check(&cfg, 1e-4).unwrap();
        let users = report.tensors.iter().find(|t| t.name == "factors.users").unwrap();
        assert_eq!(users.status, TensorCheckStatus::Skipped);
        assert!(gradient_check(&TrainConfig { d: 16, ..cfg }, 1e-4).is_err());
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let ds = tiny_dataset(20, 9);
        let cfg = TrainConfig {
            frozen: vec!["encoder.embedding".into()],
            ..small_config(Variant::Tm)
        };
        let model = fit(&ds, None, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spec = cfg.model_spec(0);
        let init = ModelParams::init(&spec, model.vocab.len(), model.users.len(), model.videos.len(), &mut rng).unwrap();
        assert_eq!(init.encoder.embedding, model.params.encoder.embedding);
        assert_ne!(init.factors.users, model.params.factors.users);
    }
}
