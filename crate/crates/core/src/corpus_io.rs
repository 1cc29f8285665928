//! File formats: JSON Lines comment corpora, TSV frame-feature tables, and
//! checkpoint directories (JSON manifest + binary parameter blob).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cf_core::Variant;
use crate::data_model::{sort_canonical, Dataset, TimeSyncComment};
use crate::error::{Error, Result};
use crate::hea_attention::AttentionMode;
use crate::model::{ModelParams, ModelSpec};
use crate::text_encoder::Vocabulary;

/// Bookkeeping from a tolerant load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: usize,
    /// `(line number, reason)` for every rejected record.
    pub rejected: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a JSON Lines corpus. Malformed records are skipped and reported;
/// the load fails if more than 10% are rejected or a `tsc_id` repeats.
pub fn load_tsc_corpus(path: impl AsRef<Path>) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let mut report = LoadReport::default();
    let mut comments = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let parsed = serde_json::from_str::<TimeSyncComment>(&line)
            .map_err(|e| e.to_string())
            .and_then(|c| c.validate().map(|_| c).map_err(|e| e.to_string()));
        match parsed {
            Ok(c) => {
                if let Some(&first_line) = first_seen.get(&c.tsc_id) {
                    return Err(Error::DuplicateTsc {
                        tsc_id: c.tsc_id,
                        first_line,
                        second_line: lineno,
                    });
                }
                first_seen.insert(c.tsc_id.clone(), lineno);
                comments.push(c);
            }
            Err(msg) => {
                warn!("{}:{}: rejected record: {}", path.display(), lineno, msg);
                report.rejected.push((lineno, msg));
            }
        }
    }
    if report.rejected.len() * 10 > report.records {
        return Err(Error::TooManyRejects {
            path: path.to_path_buf(),
            rejected: report.rejected.len(),
            total: report.records,
        });
    }
    Ok((Dataset::new(comments)?, report))
}

/// Writes comments one JSON object per line in canonical order.
pub fn write_tsc_corpus(path: impl AsRef<Path>, comments: &[TimeSyncComment]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for c in sort_canonical(comments.to_vec()) {
        serde_json::to_writer(&mut out, &c)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `(frame_time, features)` pairs of one video, sorted by time.
pub type Frames = Vec<(f64, Arc<[f64]>)>;

/// Precomputed frame features keyed by video and frame time.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureTable {
    pub dim: usize,
    /// Frames per video, sorted by time.
    entries: BTreeMap<String, Frames>,
}

impl VisualFeatureTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        Ok(VisualFeatureTable {
            dim,
            entries: BTreeMap::new(),
        })
    }

    /// Inserts a frame, replacing any frame at the same time. Returns `true` on replacement.
    pub fn insert(&mut self, video_id: &str, frame_time: f64, values: Vec<f64>) -> Result<bool> {
        if values.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "feature has {} values, expected {}",
                values.len(),
                self.dim
            )));
        }
        if !(frame_time.is_finite() && frame_time >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid frame time {frame_time}")));
        }
        let frames = self.entries.entry(video_id.to_string()).or_default();
        let values: Arc<[f64]> = values.into();
        match frames.binary_search_by(|(t, _)| t.total_cmp(&frame_time)) {
            Ok(i) => {
                frames[i].1 = values;
                Ok(true)
            }
            Err(i) => {
                frames.insert(i, (frame_time, values));
                Ok(false)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self, video_id: &str) -> Option<&[(f64, Arc<[f64]>)]> {
        self.entries.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64, &[f64])> {
        self.entries
            .iter()
            .flat_map(|(v, frames)| frames.iter().map(move |(t, x)| (v.as_str(), *t, &x[..])))
    }
}

/// Rounds to 9 significant decimal digits.
fn round_sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Reads a feature file: a `{"dim": D}` header line, then
/// `video_id TAB frame_time TAB v1,...,vD` rows.
pub fn load_visual_features(path: impl AsRef<Path>) -> Result<(VisualFeatureTable, LoadReport)> {
    #[derive(Deserialize)]
    struct Header {
        dim: usize,
    }
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = open(path)?.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing {\"dim\": D} header".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str::<Header>(&line).map_err(|e| parse_err(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    let mut table = VisualFeatureTable::new(header.dim).map_err(|e| parse_err(1, e.to_string()))?;
    let mut report = LoadReport::default();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(video), Some(time), Some(values), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err(lineno, "expected 3 tab-separated fields".into()));
        };
        let time: f64 = time
            .trim()
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad frame time {time:?}: {e}")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(lineno, format!("bad feature value: {e}")))?;
        if values.len() != header.dim {
            return Err(parse_err(
                lineno,
                format!("expected {} values, found {}", header.dim, values.len()),
            ));
        }
        report.records += 1;
        if table
            .insert(video, time, values)
            .map_err(|e| parse_err(lineno, e.to_string()))?
        {
            let msg = format!("line {lineno}: duplicate frame ({video}, {time}); keeping the later row");
            warn!("{}: {}", path.display(), msg);
            report.warnings.push(msg);
        }
    }
    Ok((table, report))
}

/// Writes a feature table with values rounded to 9 significant digits.
pub fn write_visual_features(path: impl AsRef<Path>, table: &VisualFeatureTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{{\"dim\": {}}}", table.dim).map_err(io)?;
    for (video, time, values) in table.iter() {
        write!(out, "{video}\t{time}\t").map_err(io)?;
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.write_all(b",").map_err(io)?;
            }
            write!(out, "{}", round_sig9(*v)).map_err(io)?;
        }
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// The latest frame at or before `video_time`, or the video's earliest frame
/// when every frame comes later.
pub fn match_frame_feature(table: &VisualFeatureTable, video_id: &str, video_time: f64) -> Result<Arc<[f64]>> {
    let frames = table
        .frames(video_id)
        .filter(|f| !f.is_empty())
        .ok_or_else(|| Error::MissingFeature(video_id.to_string()))?;
    let after = frames.partition_point(|(t, _)| *t <= video_time);
    let idx = after.saturating_sub(1);
    Ok(frames[idx].1.clone())
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const VOCAB_FILE: &str = "vocab.json";
const ENTITIES_FILE: &str = "entities.json";
const BLOB_FILE: &str = "params.bin";
const BLOB_MAGIC: &[u8; 8] = b"HERDPARM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model_variant: Variant,
    pub d: usize,
    pub m: usize,
    pub beta: f64,
    pub hea_mode: AttentionMode,
    pub visual_dim: usize,
    pub vocab_size: usize,
    pub n_users: usize,
    pub n_videos: usize,
    pub seed: u64,
    pub parameter_blob_path: String,
    pub format_version: u32,
}

impl CheckpointManifest {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.model_variant,
            d: self.d,
            visual_dim: self.visual_dim,
            context_size: self.m,
            beta: self.beta,
            hea_mode: self.hea_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entities {
    users: Vec<String>,
    videos: Vec<String>,
}

/// A trained model with everything needed to score users and videos by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    /// User ids in factor-row order.
    pub users: Vec<String>,
    /// Video ids in factor-row order.
    pub videos: Vec<String>,
}

impl Checkpoint {
    pub fn new(spec: &ModelSpec, seed: u64, params: ModelParams, vocab: Vocabulary, users: Vec<String>, videos: Vec<String>) -> Self {
        let manifest = CheckpointManifest {
            model_variant: spec.variant,
            d: spec.d,
            m: spec.context_size,
            beta: spec.beta,
            hea_mode: spec.hea_mode,
            visual_dim: spec.visual_dim,
            vocab_size: vocab.len(),
            n_users: users.len(),
            n_videos: videos.len(),
            seed,
            parameter_blob_path: BLOB_FILE.to_string(),
            format_version: CHECKPOINT_FORMAT_VERSION,
        };
        Checkpoint {
            manifest,
            params,
            vocab,
            users,
            videos,
        }
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user_id)
    }

    pub fn video_lookup(&self) -> HashMap<&str, usize> {
        self.videos.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect()
    }
}

fn encode_blob(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BLOB_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("parameter blob truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_blob(bytes: &[u8], into: &mut ModelParams) -> Result<()> {
    let mut r = BlobReader { bytes, pos: 0 };
    if r.take(BLOB_MAGIC.len())? != BLOB_MAGIC {
        return Err(Error::Corrupt("bad parameter blob magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let mut slots = into.tensors_mut();
    let count = r.u32()? as usize;
    if count != slots.len() {
        return Err(Error::Corrupt(format!(
            "blob holds {count} tensors, model expects {}",
            slots.len()
        )));
    }
    for (name, tensor) in slots.iter_mut() {
        let len = r.u32()? as usize;
        let found = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        if found != name {
            return Err(Error::Corrupt(format!("expected tensor {name}, found {found}")));
        }
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        if rows != tensor.rows || cols != tensor.cols {
            return Err(Error::Corrupt(format!(
                "tensor {name} is {rows}x{cols}, expected {}x{}",
                tensor.rows, tensor.cols
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        for (v, chunk) in tensor.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after parameter blob",
            bytes.len() - r.pos
        )));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the checkpoint directory atomically: files are staged in a sibling
/// temporary directory that is renamed into place only once complete.
pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !ckpt.params.is_finite() {
        return Err(Error::InvalidArgument("refusing to save non-finite parameters".into()));
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".checkpoint-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let stage = staging.path();
    write_file(&stage.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&ckpt.manifest)?)?;
    write_file(&stage.join(VOCAB_FILE), &serde_json::to_vec(&ckpt.vocab)?)?;
    let entities = Entities {
        users: ckpt.users.clone(),
        videos: ckpt.videos.clone(),
    };
    write_file(&stage.join(ENTITIES_FILE), &serde_json::to_vec(&entities)?)?;
    write_file(&stage.join(&ckpt.manifest.parameter_blob_path), &encode_blob(&ckpt.params))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    if let Err(e) = fs::rename(&staged, dir) {
        let _ = fs::remove_dir_all(&staged);
        return Err(Error::io(dir, e));
    }
    Ok([MANIFEST_FILE, VOCAB_FILE, ENTITIES_FILE, ckpt.manifest.parameter_blob_path.as_str()]
        .iter()
        .map(|f| dir.join(f))
        .collect())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let manifest_value: serde_json::Value = serde_json::from_slice(&read(MANIFEST_FILE)?)?;
    // check the version before trusting any other field
    let version = manifest_value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Corrupt("manifest has no format_version".into()))?;
    if version != u64::from(CHECKPOINT_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let manifest: CheckpointManifest = serde_json::from_value(manifest_value)?;
    let vocab: Vocabulary = serde_json::from_slice(&read(VOCAB_FILE)?)?;
    let entities: Entities = serde_json::from_slice(&read(ENTITIES_FILE)?)?;
    if vocab.len() != manifest.vocab_size
        || entities.users.len() != manifest.n_users
        || entities.videos.len() != manifest.n_videos
    {
        return Err(Error::Corrupt("manifest sizes disagree with vocabulary or entity lists".into()));
    }
    let spec = manifest.spec();
    let mut params = ModelParams::zeros(&spec, manifest.vocab_size, manifest.n_users, manifest.n_videos);
    decode_blob(&read(&manifest.parameter_blob_path)?, &mut params)?;
    Ok(Checkpoint {
        manifest,
        params,
        vocab,
        users: entities.users,
        videos: entities.videos,
    })
}
