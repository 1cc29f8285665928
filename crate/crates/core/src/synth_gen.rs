//! Seeded synthetic corpora with a tunable herding rate.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus_io::{write_tsc_corpus, write_visual_features, VisualFeatureTable};
use crate::data_model::{sort_canonical, TimeSyncComment};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid};
use crate::text_encoder::tokenize;

pub const VIDEO_LENGTH: f64 = 600.0;
pub const FRAME_INTERVAL: f64 = 10.0;
pub const FRAME_NOISE: f64 = 0.1;
pub const MIN_COMMENT_TOKENS: usize = 3;
pub const MAX_COMMENT_TOKENS: usize = 8;
/// Minimum share of a comment's tokens found in a predecessor to count as a copy.
pub const COPY_THRESHOLD: f64 = 0.5;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const FEATURES_FILE: &str = "features.tsv";
pub const AFFINITIES_FILE: &str = "affinities.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_videos: usize,
    pub n_comments: usize,
    pub latent_dim: usize,
    pub herd_prob: f64,
    /// Seconds.
    pub herd_window: f64,
    pub pos_vocab: usize,
    pub neg_vocab: usize,
    pub visual_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 30,
            n_videos: 60,
            n_comments: 5000,
            latent_dim: 128,
            herd_prob: 0.5,
            herd_window: 10.0,
            pos_vocab: 200,
            neg_vocab: 200,
            visual_dim: 64,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_videos", self.n_videos),
            ("n_comments", self.n_comments),
            ("latent_dim", self.latent_dim),
            ("pos_vocab", self.pos_vocab),
            ("neg_vocab", self.neg_vocab),
            ("visual_dim", self.visual_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.herd_prob) {
            return Err(Error::Config(format!("herd_prob must lie in [0, 1], got {}", self.herd_prob)));
        }
        if !(self.herd_window.is_finite() && self.herd_window > 0.0) {
            return Err(Error::Config(format!("herd_window must be positive, got {}", self.herd_window)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affinity {
    pub user_id: String,
    pub video_id: String,
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<TimeSyncComment>,
    pub test: Vec<TimeSyncComment>,
    pub features: VisualFeatureTable,
    /// Every (user, video) pair, user-major.
    pub affinities: Vec<Affinity>,
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn gaussian_rows(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..rows).map(|_| (0..cols).map(|_| normal.sample(rng)).collect()).collect()
}

fn sample_text(pool: &str, size: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..len).map(|_| format!("{pool}{:03}", rng.random_range(0..size))).collect()
}

struct Draft {
    user: usize,
    time: f64,
    tokens: Vec<String>,
    polarity: u8,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let users = ids("u", config.n_users);
    let videos = ids("v", config.n_videos);

    // u·v has variance 4 so affinities spread over (0, 1)
    let std = (4.0 / config.latent_dim as f64).powf(0.25);
    let user_latent = gaussian_rows(config.n_users, config.latent_dim, std, &mut rng);
    let video_latent = gaussian_rows(config.n_videos, config.latent_dim, std, &mut rng);
    let affinity = |u: usize, v: usize| sigmoid(dot(&user_latent[u], &video_latent[v]));

    let mut per_video: Vec<usize> = vec![0; config.n_videos];
    for _ in 0..config.n_comments {
        per_video[rng.random_range(0..config.n_videos)] += 1;
    }

    let mut drafts: Vec<Vec<Draft>> = Vec::with_capacity(config.n_videos);
    for (v, &count) in per_video.iter().enumerate() {
        let mut video_drafts: Vec<Draft> = Vec::with_capacity(count);
        for _ in 0..count {
            let user = rng.random_range(0..config.n_users);
            let polarity = u8::from(rng.random_bool(affinity(user, v)));
            let herd = !video_drafts.is_empty() && rng.random_bool(config.herd_prob);
            let (time, tokens) = if herd {
                let source = &video_drafts[rng.random_range(0..video_drafts.len())];
                let time = source.time + rng.random_range(0.0..config.herd_window);
                let mut tokens = source.tokens.clone();
                let mut slots: Vec<usize> = (0..tokens.len()).collect();
                slots.shuffle(&mut rng);
                for &i in &slots[..tokens.len() / 4] {
                    tokens[i] = own_token(polarity, config, &mut rng);
                }
                (time, tokens)
            } else {
                let len = rng.random_range(MIN_COMMENT_TOKENS..=MAX_COMMENT_TOKENS);
                let tokens = if polarity == 1 {
                    sample_text("p", config.pos_vocab, len, &mut rng)
                } else {
                    sample_text("n", config.neg_vocab, len, &mut rng)
                };
                (rng.random_range(0.0..VIDEO_LENGTH), tokens)
            };
            video_drafts.push(Draft {
                user,
                time,
                tokens,
                polarity,
            });
        }
        drafts.push(video_drafts);
    }

    // visual features: a random projection of the video latent plus frame noise
    let proj_std = 1.0 / (config.latent_dim as f64).sqrt();
    let projection = gaussian_rows(config.visual_dim, config.latent_dim, proj_std, &mut rng);
    let noise = Normal::new(0.0, FRAME_NOISE).expect("positive std");
    let mut features = VisualFeatureTable::new(config.visual_dim)?;
    for (v, video) in videos.iter().enumerate() {
        let base: Vec<f64> = projection.iter().map(|row| dot(row, &video_latent[v])).collect();
        let end = drafts[v].iter().map(|d| d.time).fold(VIDEO_LENGTH, f64::max);
        let frames = (end / FRAME_INTERVAL).floor() as usize + 1;
        for f in 0..frames {
            let values = base.iter().map(|b| b + noise.sample(&mut rng)).collect();
            features.insert(video, f as f64 * FRAME_INTERVAL, values)?;
        }
    }

    // each user's commented videos split in half
    let mut user_videos: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); config.n_users];
    for (v, video_drafts) in drafts.iter().enumerate() {
        for d in video_drafts {
            user_videos[d.user].insert(v);
        }
    }
    let mut test_pairs: HashSet<(usize, usize)> = HashSet::new();
    for (u, set) in user_videos.iter().enumerate() {
        let mut list: Vec<usize> = set.iter().copied().collect();
        list.shuffle(&mut rng);
        for &v in &list[list.len().div_ceil(2)..] {
            test_pairs.insert((u, v));
        }
    }

    let comment_ids = ids("c", config.n_comments);
    let mut next_id = 0;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (v, video_drafts) in drafts.into_iter().enumerate() {
        for d in video_drafts {
            let comment = TimeSyncComment {
                tsc_id: comment_ids[next_id].clone(),
                user_id: users[d.user].clone(),
                video_id: videos[v].clone(),
                video_time: d.time,
                text: d.tokens.join(" "),
                polarity: d.polarity,
            };
            next_id += 1;
            if test_pairs.contains(&(d.user, v)) {
                test.push(comment);
            } else {
                train.push(comment);
            }
        }
    }

    let mut affinities = Vec::with_capacity(config.n_users * config.n_videos);
    for (u, user) in users.iter().enumerate() {
        for (v, video) in videos.iter().enumerate() {
            affinities.push(Affinity {
                user_id: user.clone(),
                video_id: video.clone(),
                affinity: affinity(u, v),
            });
        }
    }

    Ok(SynthCorpus {
        train: sort_canonical(train),
        test: sort_canonical(test),
        features,
        affinities,
    })
}

fn own_token(polarity: u8, config: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    if polarity == 1 {
        format!("p{:03}", rng.random_range(0..config.pos_vocab))
    } else {
        format!("n{:03}", rng.random_range(0..config.neg_vocab))
    }
}

/// Writes the corpus files into `dir`, creating it if needed.
pub fn write_synth_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train = dir.join(TRAIN_FILE);
    let test = dir.join(TEST_FILE);
    let features = dir.join(FEATURES_FILE);
    let affinities = dir.join(AFFINITIES_FILE);
    write_tsc_corpus(&train, &corpus.train)?;
    write_tsc_corpus(&test, &corpus.test)?;
    write_visual_features(&features, &corpus.features)?;

    let file = fs::File::create(&affinities).map_err(|e| Error::io(&affinities, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(&affinities, e);
    writeln!(out, "user_id,video_id,affinity").map_err(io)?;
    for a in &corpus.affinities {
        writeln!(out, "{},{},{}", a.user_id, a.video_id, a.affinity).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(vec![train, test, features, affinities])
}

/// Share of `tokens` (as a multiset) also present in `other`.
fn overlap(tokens: &[String], other: &[String]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let mut pool: BTreeMap<&str, usize> = BTreeMap::new();
    for t in other {
        *pool.entry(t.as_str()).or_default() += 1;
    }
    let mut shared = 0;
    for t in tokens {
        if let Some(n) = pool.get_mut(t.as_str()).filter(|n| **n > 0) {
            *n -= 1;
            shared += 1;
        }
    }
    shared as f64 / tokens.len() as f64
}

/// Fraction of comments sharing at least half their tokens with an earlier
/// comment of the same video at most `window` seconds before. Comments
/// without such a predecessor are left out of the denominator.
pub fn measure_herding(comments: &[TimeSyncComment], window: f64) -> Result<f64> {
    if comments.is_empty() {
        return Err(Error::Empty("cannot measure herding on an empty corpus".into()));
    }
    let sorted = sort_canonical(comments.to_vec());
    let tokens: Vec<Vec<String>> = sorted.iter().map(|c| tokenize(&c.text)).collect();
    let (mut eligible, mut copies) = (0usize, 0usize);
    for j in 0..sorted.len() {
        let c = &sorted[j];
        let predecessors: Vec<usize> = (0..j)
            .rev()
            .take_while(|&k| sorted[k].video_id == c.video_id && c.video_time - sorted[k].video_time <= window)
            .collect();
        if predecessors.is_empty() {
            continue;
        }
        eligible += 1;
        if predecessors.iter().any(|&k| overlap(&tokens[j], &tokens[k]) >= COPY_THRESHOLD) {
            copies += 1;
        }
    }
    Ok(if eligible == 0 { 0.0 } else { copies as f64 / eligible as f64 })
}
