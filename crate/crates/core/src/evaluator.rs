//! Test-set ground truth and Top-X precision / recall / F1.

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde::{Deserialize, Serialize};

use crate::cf_core::score_user_video;
use crate::corpus_io::Checkpoint;
use crate::data_model::TimeSyncComment;
use crate::error::{Error, Result};

/// Mean-polarity threshold at or above which a (user, video) pair is positive.
pub const POSITIVE_THRESHOLD: f64 = 0.5;
/// Scored videos per user.
pub type UserScores = BTreeMap<String, Vec<(String, f64)>>;


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPair {
    pub user_id: String,
    pub video_id: String,
    pub tsc_polarities: Vec<u8>,
    /// Mean polarity of the user's comments on the video.
    pub po: f64,
    pub label: u8,
}

/// Groups comments by (user, video); sorted by user then video.
pub fn build_ground_truth(comments: &[TimeSyncComment]) -> Vec<TestPair> {
    let mut groups: BTreeMap<(&str, &str), Vec<u8>> = BTreeMap::new();
    for c in comments {
        groups
            .entry((c.user_id.as_str(), c.video_id.as_str()))
            .or_default()
            .push(c.polarity);
    }
    groups
        .into_iter()
        .map(|((user, video), pols)| {
            let po = pols.iter().map(|&p| f64::from(p)).sum::<f64>() / pols.len() as f64;
            TestPair {
                user_id: user.to_string(),
                video_id: video.to_string(),
                tsc_polarities: pols,
                po,
                label: u8::from(po >= POSITIVE_THRESHOLD),
            }
        })
        .collect()
}

/// Sorts by descending score, ties by ascending video id.
pub fn rank_videos(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopXMetrics {
    pub x: usize,
    /// Mean precision over evaluated users.
    pub precision: f64,
    /// Mean recall over evaluated users with at least one positive.
    pub recall: f64,
    /// Mean per-user F1 over evaluated users with at least one positive.
    pub f1: f64,
    pub users_evaluated: usize,
    pub users_with_positives: usize,
    /// Users with fewer than `x` scored test videos.
    pub users_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub x: usize,
    pub precision: f64,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub topx: Vec<TopXMetrics>,
    pub per_user: Vec<UserMetrics>,
    /// Ground-truth pairs dropped because their user or video had no factors.
    pub excluded_pairs: usize,
}

impl MetricsReport {
    pub fn at(&self, x: usize) -> Option<&TopXMetrics> {
        self.topx.iter().find(|m| m.x == x)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Computes Top-X metrics. `scores` maps each user to scored test videos;
/// only videos that also appear in `ground_truth` for that user count.
pub fn topx_metrics(
    scores: &UserScores,
    ground_truth: &[TestPair],
    xs: &[usize],
) -> Result<MetricsReport> {
    if ground_truth.is_empty() {
        return Err(Error::Empty("ground truth has no (user, video) pairs".into()));
    }
    if xs.contains(&0) {
        return Err(Error::InvalidArgument("top-X cutoffs must be positive".into()));
    }
    let mut labels: BTreeMap<&str, BTreeMap<&str, u8>> = BTreeMap::new();
    for p in ground_truth {
        labels
            .entry(p.user_id.as_str())
            .or_default()
            .insert(p.video_id.as_str(), p.label);
    }

    // each user's labelled, scored candidates in ranked order
    let mut ranked: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for (user, user_labels) in &labels {
        let Some(user_scores) = scores.get(*user) else {
            continue;
        };
        let candidates: Vec<(String, f64)> = user_scores
            .iter()
            .filter(|(v, _)| user_labels.contains_key(v.as_str()))
            .cloned()
            .collect();
        let order = rank_videos(candidates)
            .into_iter()
            .map(|(v, _)| user_labels[v.as_str()])
            .collect();
        ranked.insert(user, order);
    }

    let mut topx = Vec::with_capacity(xs.len());
    let mut per_user = Vec::new();
    for &x in xs {
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        let (mut evaluated, mut with_pos, mut skipped) = (0, 0, 0);
        for (user, order) in &ranked {
            if order.len() < x {
                skipped += 1;
                continue;
            }
            evaluated += 1;
            let positives = order.iter().filter(|&&l| l == 1).count();
            let hits = order[..x].iter().filter(|&&l| l == 1).count();
            let precision = hits as f64 / x as f64;
            p_sum += precision;
            let (recall, f1) = if positives > 0 {
                let recall = hits as f64 / positives as f64;
                let f1 = f1_score(precision, recall);
                with_pos += 1;
                r_sum += recall;
                f_sum += f1;
                (Some(recall), Some(f1))
            } else {
                (None, None)
            };
            per_user.push(UserMetrics {
                user_id: user.to_string(),
                x,
                precision,
                recall,
                f1,
            });
        }
        let users_without_scores = labels.len() - ranked.len();
        skipped += users_without_scores;
        if skipped > 0 {
            info!("top-{x}: skipped {skipped} users with fewer than {x} scored test videos");
        }
        let mean = |sum: f64, n: usize| if n > 0 { sum / n as f64 } else { 0.0 };
        topx.push(TopXMetrics {
            x,
            precision: mean(p_sum, evaluated),
            recall: mean(r_sum, with_pos),
            f1: mean(f_sum, with_pos),
            users_evaluated: evaluated,
            users_with_positives: with_pos,
            users_skipped: skipped,
        });
    }
    Ok(MetricsReport {
        topx,
        per_user,
        excluded_pairs: 0,
    })
}

/// Scores every ground-truth pair whose user and video the checkpoint knows.
/// Returns the per-user scores and the number of excluded pairs.
pub fn score_ground_truth(ckpt: &Checkpoint, ground_truth: &[TestPair]) -> Result<(UserScores, usize)> {
    let videos = ckpt.video_lookup();
    let users: BTreeMap<&str, usize> = ckpt.users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut scores: UserScores = BTreeMap::new();
    let mut excluded = 0;
    let mut unseen_videos = BTreeSet::new();
    for pair in ground_truth {
        let (Some(&u), Some(&v)) = (users.get(pair.user_id.as_str()), videos.get(pair.video_id.as_str())) else {
            if !videos.contains_key(pair.video_id.as_str()) {
                unseen_videos.insert(pair.video_id.as_str());
            }
            excluded += 1;
            continue;
        };
        let s = score_user_video(&ckpt.params.factors, u, v)?;
        scores
            .entry(pair.user_id.clone())
            .or_default()
            .push((pair.video_id.clone(), s));
    }
    if excluded > 0 {
        info!(
            "excluded {excluded} test pairs with untrained users or videos ({} unseen videos)",
            unseen_videos.len()
        );
    }
    Ok((scores, excluded))
}

/// Ground truth, scoring, and metrics for a test corpus in one call.
pub fn evaluate(ckpt: &Checkpoint, test_comments: &[TimeSyncComment], xs: &[usize]) -> Result<MetricsReport> {
    let truth = build_ground_truth(test_comments);
    let (scores, excluded) = score_ground_truth(ckpt, &truth)?;
    let mut report = topx_metrics(&scores, &truth, xs)?;
    report.excluded_pairs = excluded;
    Ok(report)
}

/// The user's top `x` candidates by latent-factor score. Candidates the
/// checkpoint has no factors for are dropped.
pub fn recommend(ckpt: &Checkpoint, user_id: &str, x: usize, candidates: &[String]) -> Result<Vec<(String, f64)>> {
    let u = ckpt.user_index(user_id).ok_or_else(|| Error::UnknownEntity {
        kind: "user",
        id: user_id.to_string(),
    })?;
    let videos = ckpt.video_lookup();
    let mut seen = BTreeSet::new();
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !seen.insert(c.as_str()) {
            continue;
        }
        match videos.get(c.as_str()) {
            Some(&v) => scored.push((c.clone(), score_user_video(&ckpt.params.factors, u, v)?)),
            None => info!("candidate video {c} has no trained factors; skipped"),
        }
    }
    let mut ranked = rank_videos(scored);
    ranked.truncate(x);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::tests::tsc;

    fn with_pol(id: &str, user: &str, video: &str, pol: u8) -> TimeSyncComment {
        let mut c = tsc(id, user, video, 1.0);
        c.polarity = pol;
        c
    }

    #[test]
    fn ground_truth_threshold() {
        let comments = vec![
            with_pol("a", "u", "v1", 1),
            with_pol("b", "u", "v1", 1),
            with_pol("c", "u", "v1", 0),
            with_pol("d", "u", "v2", 0),
            with_pol("e", "u", "v3", 1),
            with_pol("f", "u", "v3", 0),
        ];
        let gt = build_ground_truth(&comments);
        assert_eq!(gt.len(), 3);
        assert!((gt[0].po - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(gt[0].label, 1);
        assert_eq!((gt[1].po, gt[1].label), (0.0, 0));
        assert_eq!((gt[2].po, gt[2].label), (0.5, 1));
    }

    fn pair(user: &str, video: &str, label: u8) -> TestPair {
        TestPair {
            user_id: user.into(),
            video_id: video.into(),
            tsc_polarities: vec![label],
            po: f64::from(label),
            label,
        }
    }

    #[test]
    fn all_positive_user() {
        let gt: Vec<TestPair> = (0..5).map(|i| pair("u", &format!("v{i}"), 1)).collect();
        let scores = BTreeMap::from([("u".to_string(), (0..5).map(|i| (format!("v{i}"), i as f64)).collect())]);
        let r = topx_metrics(&scores, &gt, &[5]).unwrap();
        let m = r.at(5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn positives_ranked_first() {
        let gt: Vec<TestPair> = (0..8).map(|i| pair("u", &format!("v{i}"), u8::from(i < 3))).collect();
        let scores = BTreeMap::from([(
            "u".to_string(),
            (0..8).map(|i| (format!("v{i}"), -(i as f64))).collect(),
        )]);
        let r = topx_metrics(&scores, &gt, &[3, 5]).unwrap();
        assert_eq!(r.at(3).unwrap().precision, 1.0);
        assert_eq!(r.at(5).unwrap().precision, 0.6);
        assert_eq!(r.at(5).unwrap().recall, 1.0);
    }

    #[test]
    fn users_short_of_x_are_skipped() {
        let gt = vec![pair("u", "a", 1), pair("u", "b", 0), pair("w", "a", 1)];
        let scores = BTreeMap::from([
            ("u".to_string(), vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)]),
            ("w".to_string(), vec![("a".to_string(), 1.0)]),
        ]);
        let r = topx_metrics(&scores, &gt, &[2]).unwrap();
        let m = r.at(2).unwrap();
        assert_eq!((m.users_evaluated, m.users_skipped), (1, 1));
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn ties_break_by_video_id() {
        let ranked = rank_videos(vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)]);
        let ids: Vec<&str> = ranked.iter().map(|(v, _)| v.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(topx_metrics(&BTreeMap::new(), &[], &[5]).is_err());
    }

    #[test]
    fn zero_positive_users_only_count_for_precision() {
        let gt = vec![pair("u", "a", 0), pair("u", "b", 0)];
        let scores = BTreeMap::from([("u".to_string(), vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)])]);
        let m = topx_metrics(&scores, &gt, &[1]).unwrap().at(1).unwrap().clone();
        assert_eq!((m.precision, m.users_with_positives, m.f1), (0.0, 0, 0.0));
    }

    mod props {
        use super::*;
        use crate::tensor::sigmoid;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<TestPair>, UserScores)> {
            prop::collection::vec(prop::collection::vec((0u8..2, -3.0f64..3.0), 1..10), 1..5).prop_map(|users| {
                let mut gt = Vec::new();
                let mut scores = BTreeMap::new();
                for (ui, rows) in users.iter().enumerate() {
                    let user = format!("u{ui}");
                    let mut s = Vec::new();
                    for (vi, &(label, score)) in rows.iter().enumerate() {
                        let video = format!("v{vi:02}");
                        gt.push(pair(&user, &video, label));
                        s.push((video, score));
                    }
                    scores.insert(user, s);
                }
                (gt, scores)
            })
        }

        proptest! {
            #[test]
            fn precision_invariant_under_sigmoid((gt, scores) in instance(), x in 1usize..6) {
                let squashed: UserScores = scores
                    .iter()
                    .map(|(u, s)| (u.clone(), s.iter().map(|(v, z)| (v.clone(), sigmoid(*z))).collect()))
                    .collect();
                let a = topx_metrics(&scores, &gt, &[x]).unwrap();
                let b = topx_metrics(&squashed, &gt, &[x]).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn full_cutoff_recall_is_one((gt, scores) in instance()) {
                let x = scores.values().map(Vec::len).min().unwrap();
                let r = topx_metrics(&scores, &gt, &[x]).unwrap();
                for u in r.per_user.iter().filter(|u| scores[&u.user_id].len() == x) {
                    if let Some(recall) = u.recall {
                        prop_assert_eq!(recall, 1.0);
                    }
                }
            }

            #[test]
            fn per_user_f1_matches_harmonic_mean((gt, scores) in instance(), x in 1usize..4) {
                let r = topx_metrics(&scores, &gt, &[x]).unwrap();
                for u in &r.per_user {
                    if let (Some(rec), Some(f1)) = (u.recall, u.f1) {
                        prop_assert_eq!(f1, f1_score(u.precision, rec));
                    }
                }
            }
        }
    }
}
