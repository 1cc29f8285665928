//! Latent-factor collaborative filtering primitives.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Tensor};

/// Prediction clamp used by the cross-entropy objective.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "T-HEA")]
    THea,
    #[serde(rename = "ITF")]
    Itf,
    #[serde(rename = "ITF-HEA")]
    ItfHea,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tm, Variant::THea, Variant::Itf, Variant::ItfHea];

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::THea | Variant::ItfHea)
    }

    pub fn uses_visual(self) -> bool {
        matches!(self, Variant::Itf | Variant::ItfHea)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tm => "TM",
            Variant::THea => "T-HEA",
            Variant::Itf => "ITF",
            Variant::ItfHea => "ITF-HEA",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tm" => Ok(Variant::Tm),
            "t-hea" | "thea" => Ok(Variant::THea),
            "itf" => Ok(Variant::Itf),
            "itf-hea" | "itfhea" => Ok(Variant::ItfHea),
            other => Err(Error::InvalidArgument(format!("unknown model variant {other:?}"))),
        }
    }
}

/// User and video latent factors, one row per dense index.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTables {
    pub users: Tensor,
    pub videos: Tensor,
}

impl FactorTables {
    pub fn new<R: Rng>(n_users: usize, n_videos: usize, d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        FactorTables {
            users: Tensor::uniform(n_users, d, bound, rng),
            videos: Tensor::uniform(n_videos, d, bound, rng),
        }
    }

    pub fn zeros(n_users: usize, n_videos: usize, d: usize) -> Self {
        FactorTables {
            users: Tensor::zeros(n_users, d),
            videos: Tensor::zeros(n_videos, d),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("factors.users".into(), &self.users),
            ("factors.videos".into(), &self.videos),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("factors.users".into(), &mut self.users),
            ("factors.videos".into(), &mut self.videos),
        ]
    }
}

/// One per-comment training instance, already tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub tsc_id: String,
    /// Token ids per window slot; PAD slots are empty.
    pub slots: Vec<Vec<usize>>,
    pub timestamps: Vec<f64>,
    pub pad_mask: Vec<bool>,
    pub user_idx: usize,
    pub video_idx: usize,
    pub visual: Option<Arc<[f64]>>,
    /// The target comment's polarity.
    pub label: u8,
}

impl TrainingExample {
    pub fn target_tokens(&self) -> &[usize] {
        self.slots.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Element-wise product.
pub fn merge(g: &[f64], feature: &[f64]) -> Result<Vec<f64>> {
    if g.len() != feature.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot merge vectors of lengths {} and {}",
            g.len(),
            feature.len()
        )));
    }
    Ok(g.iter().zip(feature).map(|(a, b)| a * b).collect())
}

/// `sigmoid(p . q)`.
pub fn predict_interaction(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take inner product of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(sigmoid(dot(p, q)))
}

/// Binary cross-entropy of one prediction, with the prediction clamped to `[eps, 1-eps]`.
pub fn bce(pred: f64, label: u8) -> f64 {
    let p = pred.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Summed cross-entropy over a batch (the negated log-likelihood).
pub fn bce_objective(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum())
}

/// Raw inner product of the user's and video's latent factors.
pub fn score_user_video(factors: &FactorTables, user: usize, video: usize) -> Result<f64> {
    if user >= factors.users.rows {
        return Err(Error::UnknownEntity {
            kind: "user",
            id: user.to_string(),
        });
    }
    if video >= factors.videos.rows {
        return Err(Error::UnknownEntity {
            kind: "video",
            id: video.to_string(),
        });
    }
    Ok(dot(factors.users.row(user), factors.videos.row(video)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merge_examples() {
        assert_eq!(merge(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 10.0, 18.0]);
        assert_eq!(merge(&[1.5, -2.0], &[1.0, 1.0]).unwrap(), vec![1.5, -2.0]);
        assert!(merge(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn prediction_examples() {
        assert_eq!(predict_interaction(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        let p = predict_interaction(&[2.0, 0.0, 0.0], &[2.0, 0.0, 0.0]).unwrap();
        assert!((p - 0.98201).abs() < 1e-5);
        assert!(predict_interaction(&[1.0], &[]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_objective(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0 - 1e-12, 1) < 1e-6);
        assert!(bce(0.0, 1).is_finite());
        let h = 1e-6;
        let fd = (bce(0.5 + h, 1) - bce(0.5 - h, 1)) / (2.0 * h);
        assert!((fd + 2.0).abs() < 1e-6);
        assert!(bce_objective(&[0.5], &[]).is_err());
    }

    #[test]
    fn score_examples() {
        let mut f = FactorTables::zeros(2, 3, 2);
        for v in 0..3 {
            assert_eq!(score_user_video(&f, 0, v).unwrap(), 0.0);
        }
        f.users.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        f.videos.row_mut(0).copy_from_slice(&[0.0, 1.0]);
        assert_eq!(score_user_video(&f, 1, 0).unwrap(), 0.0);
        assert!(matches!(score_user_video(&f, 2, 0), Err(Error::UnknownEntity { .. })));
        assert!(matches!(score_user_video(&f, 0, 3), Err(Error::UnknownEntity { .. })));
    }

    #[test]
    fn score_matches_scalar_loop() {
        let mut f = FactorTables::zeros(1, 1, 3);
        f.users.data.copy_from_slice(&[0.3, -1.2, 2.5]);
        f.videos.data.copy_from_slice(&[1.1, 0.4, -0.7]);
        let mut want = 0.0;
        for k in 0..3 {
            want += f.users.data[k] * f.videos.data[k];
        }
        assert_eq!(score_user_video(&f, 0, 0).unwrap(), want);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #[test]
        fn merge_commutes(a in vec_strategy(6), b in vec_strategy(6)) {
            prop_assert_eq!(merge(&a, &b).unwrap(), merge(&b, &a).unwrap());
        }

        #[test]
        fn merged_inner_product_identity(g in vec_strategy(5), h in vec_strategy(5), f in vec_strategy(5)) {
            let lhs = dot(&merge(&g, &f).unwrap(), &merge(&h, &f).unwrap());
            let rhs: f64 = (0..5).map(|k| g[k] * h[k] * f[k] * f[k]).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            let swapped = dot(&merge(&h, &f).unwrap(), &merge(&g, &f).unwrap());
            prop_assert!((lhs - swapped).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn prediction_in_open_unit_interval(p in vec_strategy(4), q in vec_strategy(4)) {
            let y = predict_interaction(&p, &q).unwrap();
            prop_assert!(y > 0.0 && y < 1.0);
        }
    }
}
