//! Comment records, corpora and per-comment context windows.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One time-sync comment as posted on a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSyncComment {
    pub tsc_id: String,
    pub user_id: String,
    pub video_id: String,
    /// Seconds from the start of the video.
    pub video_time: f64,
    pub text: String,
    /// 1 for positive or neutral sentiment, 0 for negative.
    pub polarity: u8,
}

impl TimeSyncComment {
    pub fn validate(&self) -> Result<()> {
        if !(self.video_time.is_finite() && self.video_time >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "comment {}: video_time must be a nonnegative number, got {}",
                self.tsc_id, self.video_time
            )));
        }
        if self.polarity > 1 {
            return Err(Error::InvalidArgument(format!(
                "comment {}: polarity must be 0 or 1, got {}",
                self.tsc_id, self.polarity
            )));
        }
        Ok(())
    }
}

fn canonical_cmp(a: &TimeSyncComment, b: &TimeSyncComment) -> Ordering {
    a.video_id
        .cmp(&b.video_id)
        .then(a.video_time.total_cmp(&b.video_time))
        .then_with(|| a.tsc_id.cmp(&b.tsc_id))
}

/// Orders comments by `(video_id, video_time, tsc_id)`.
pub fn sort_canonical(mut comments: Vec<TimeSyncComment>) -> Vec<TimeSyncComment> {
    comments.sort_by(canonical_cmp);
    comments
}

/// The `M` consecutive comments of one video that end at (and include) the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub target: TimeSyncComment,
    /// `None` marks a PAD slot. The last slot is always the target.
    pub members: Vec<Option<TimeSyncComment>>,
    pub timestamps: Vec<f64>,
    /// `true` where the slot holds a real comment.
    pub pad_mask: Vec<bool>,
}

impl ContextWindow {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// A corpus in canonical order together with dense user and video indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub comments: Vec<TimeSyncComment>,
    pub user_index: BTreeMap<String, usize>,
    pub video_index: BTreeMap<String, usize>,
}

impl Dataset {
    /// Validates, sorts, and indexes the comments. Indices follow sorted id order.
    pub fn new(comments: Vec<TimeSyncComment>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(comments.len());
        for c in &comments {
            c.validate()?;
            if !seen.insert(c.tsc_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate tsc_id {}",
                    c.tsc_id
                )));
            }
        }
        let comments = sort_canonical(comments);
        let user_index = dense_index(comments.iter().map(|c| c.user_id.as_str()));
        let video_index = dense_index(comments.iter().map(|c| c.video_id.as_str()));
        Ok(Dataset {
            comments,
            user_index,
            video_index,
        })
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn num_videos(&self) -> usize {
        self.video_index.len()
    }
}

fn dense_index<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut index: BTreeMap<String, usize> = ids.map(|id| (id.to_string(), 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    index
}

/// Builds one window of size `m` per comment, in canonical comment order.
///
/// Short histories are left-padded; PAD slots take the timestamp of the
/// earliest real member. Windows never cross video boundaries.
pub fn build_context_windows(dataset: &Dataset, m: usize) -> Result<Vec<ContextWindow>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "context size M must be at least 1".into(),
        ));
    }
    // Dataset keeps comments canonical, but callers may have built one by hand.
    let sorted_storage;
    let comments: &[TimeSyncComment] = if dataset
        .comments
        .windows(2)
        .all(|w| canonical_cmp(&w[0], &w[1]) != Ordering::Greater)
    {
        &dataset.comments
    } else {
        sorted_storage = sort_canonical(dataset.comments.clone());
        &sorted_storage
    };

    let mut windows = Vec::with_capacity(comments.len());
    let mut start = 0;
    while start < comments.len() {
        let video = &comments[start].video_id;
        let end = comments[start..]
            .iter()
            .position(|c| &c.video_id != video)
            .map_or(comments.len(), |off| start + off);
        let group = &comments[start..end];
        for pos in 0..group.len() {
            let first = (pos + 1).saturating_sub(m);
            let real = &group[first..=pos];
            let pads = m - real.len();
            let earliest = real[0].video_time;

            let mut members = Vec::with_capacity(m);
            let mut timestamps = Vec::with_capacity(m);
            let mut pad_mask = Vec::with_capacity(m);
            for _ in 0..pads {
                members.push(None);
                timestamps.push(earliest);
                pad_mask.push(false);
            }
            for c in real {
                members.push(Some(c.clone()));
                timestamps.push(c.video_time);
                pad_mask.push(true);
            }
            windows.push(ContextWindow {
                target: group[pos].clone(),
                members,
                timestamps,
                pad_mask,
            });
        }
        start = end;
    }
    Ok(windows)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tsc(id: &str, user: &str, video: &str, t: f64) -> TimeSyncComment {
        TimeSyncComment {
            tsc_id: id.into(),
            user_id: user.into(),
            video_id: video.into(),
            video_time: t,
            text: format!("text {id}"),
            polarity: 1,
        }
    }

    fn times(w: &ContextWindow) -> Vec<Option<f64>> {
        w.members
            .iter()
            .map(|m| m.as_ref().map(|c| c.video_time))
            .collect()
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let ds = Dataset::new(vec![
            tsc("a", "u", "v", 1.0),
            tsc("b", "u", "v", 2.0),
            tsc("c", "u", "v", 3.0),
        ])
        .unwrap();
        let ws = build_context_windows(&ds, 3).unwrap();
        let last = &ws[2];
        assert_eq!(times(last), vec![Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(last.pad_mask, vec![true; 3]);
    }

    #[test]
    fn single_comment_is_left_padded() {
        let ds = Dataset::new(vec![tsc("a", "u", "v", 4.5)]).unwrap();
        let ws = build_context_windows(&ds, 3).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(times(&ws[0]), vec![None, None, Some(4.5)]);
        assert_eq!(ws[0].pad_mask, vec![false, false, true]);
        assert_eq!(ws[0].timestamps, vec![4.5, 4.5, 4.5]);
    }

    #[test]
    fn sliding_window_matches_enumeration() {
        let ts = [1.0, 2.0, 3.0, 4.0];
        let ds = Dataset::new(
            ts.iter()
                .enumerate()
                .map(|(i, &t)| tsc(&format!("c{i}"), "u", "v", t))
                .collect(),
        )
        .unwrap();
        let ws = build_context_windows(&ds, 2).unwrap();
        // brute force: for target i, the window is every comment with index in (i-2, i]
        for (i, w) in ws.iter().enumerate() {
            let expected: Vec<Option<f64>> = (i as isize - 1..=i as isize)
                .map(|k| (k >= 0).then(|| ts[k as usize]))
                .collect();
            assert_eq!(times(w), expected);
        }
        assert_eq!(times(&ws[3]), vec![Some(3.0), Some(4.0)]);
    }

    #[test]
    fn windows_do_not_cross_videos() {
        let ds = Dataset::new(vec![
            tsc("a", "u", "v1", 1.0),
            tsc("b", "u", "v2", 2.0),
            tsc("c", "u", "v2", 3.0),
        ])
        .unwrap();
        let ws = build_context_windows(&ds, 3).unwrap();
        for w in &ws {
            for m in w.members.iter().flatten() {
                assert_eq!(m.video_id, w.target.video_id);
            }
        }
        assert_eq!(ws[0].pad_mask, vec![false, false, true]);
        assert_eq!(ws[2].pad_mask, vec![false, true, true]);
    }

    #[test]
    fn zero_context_size_rejected() {
        let ds = Dataset::new(vec![tsc("a", "u", "v", 1.0)]).unwrap();
        assert!(matches!(
            build_context_windows(&ds, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn equal_times_break_ties_by_id() {
        let sorted = sort_canonical(vec![tsc("b", "u", "v", 1.0), tsc("a", "u", "v", 1.0)]);
        assert_eq!(sorted[0].tsc_id, "a");
        assert_eq!(sort_canonical(sorted.clone()), sorted);
    }

    #[test]
    fn reversed_input_matches_independent_sort() {
        let input: Vec<_> = (0..5)
            .map(|i| tsc(&format!("c{i}"), "u", if i % 2 == 0 { "x" } else { "y" }, (5 - i) as f64))
            .rev()
            .collect();
        let mut keys: Vec<(String, u64, String)> = input
            .iter()
            .map(|c| (c.video_id.clone(), c.video_time.to_bits(), c.tsc_id.clone()))
            .collect();
        keys.sort();
        let got: Vec<String> = sort_canonical(input).into_iter().map(|c| c.tsc_id).collect();
        let want: Vec<String> = keys.into_iter().map(|k| k.2).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn dense_sorted_indices() {
        let ds = Dataset::new(vec![
            tsc("a", "zed", "v9", 1.0),
            tsc("b", "amy", "v1", 1.0),
        ])
        .unwrap();
        assert_eq!(ds.user_index["amy"], 0);
        assert_eq!(ds.user_index["zed"], 1);
        assert_eq!(ds.video_index["v1"], 0);
    }

    #[test]
    fn invalid_comments_rejected() {
        let mut c = tsc("a", "u", "v", -1.0);
        assert!(Dataset::new(vec![c.clone()]).is_err());
        c.video_time = 1.0;
        c.polarity = 2;
        assert!(Dataset::new(vec![c]).is_err());
        assert!(Dataset::new(vec![tsc("a", "u", "v", 1.0), tsc("a", "u", "v", 2.0)]).is_err());
    }
}
