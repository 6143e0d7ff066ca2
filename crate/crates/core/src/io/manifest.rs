//! Query manifest, video table and parse file.
//!
//! The manifest and the video table are JSON lines. Feature paths are
//! resolved against the directory of the file that names them. The parse
//! file holds one bracketed tree per line; `parse_line_no` is 0-based.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features;
use crate::error::{Error, Result};
use crate::pairdet::EmbeddingSet;
use crate::phrase::{extract_phrases, parse_bracketed};
use crate::record::{Dataset, QueryRecord, VideoRecord};
use crate::temporal::{ClipGrid, TimeInterval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub query_id: String,
    pub text: String,
    pub video_id: String,
    pub t_st: f64,
    pub t_ed: f64,
    pub split: String,
    pub word_feature_path: String,
    pub sentence_embedding_path: String,
    pub phrase_embedding_path: String,
    pub parse_line_no: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub clip_feature_path: String,
    pub duration: f64,
}

/// Clip length and segment-length bounds used to build each video's grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub delta_t: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            delta_t: 1.0,
            n_min: 1,
            n_max: 4,
        }
    }
}

/// Locations of the three text files making up a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub videos: PathBuf,
    pub parses: PathBuf,
}

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const PARSES_FILE: &str = "parses.txt";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetPaths {
    /// The video table and parse file default to siblings of the manifest.
    pub fn beside(manifest: impl Into<PathBuf>) -> Self {
        let manifest = manifest.into();
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Self {
            videos: dir.join(VIDEOS_FILE),
            parses: dir.join(PARSES_FILE),
            manifest,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses JSON lines, skipping blank lines; errors carry the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

pub fn read_video_table(path: &Path) -> Result<Vec<VideoEntry>> {
    read_jsonl(path)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads videos, checking that the clip count matches the stated duration.
pub fn load_videos(path: &Path, grid: &GridOptions) -> Result<Vec<VideoRecord>> {
    videos_from_table(path, read_video_table(path)?, grid)
}

fn videos_from_table(path: &Path, table: Vec<VideoEntry>, grid: &GridOptions) -> Result<Vec<VideoRecord>> {
    let base = base_dir(path);
    table
        .into_iter()
        .map(|e| {
            let clip_path = resolve(&base, &e.clip_feature_path);
            let feats = features::read(&clip_path)?;
            let l_v = feats.rows();
            if !(e.duration.is_finite() && e.duration > 0.0) {
                return Err(Error::format(path, format!("video {}: duration {} must be > 0", e.video_id, e.duration)));
            }
            let expected = (e.duration / grid.delta_t - 1e-9).ceil() as usize;
            if l_v != expected {
                return Err(Error::format(
                    &clip_path,
                    format!(
                        "video {}: {l_v} clips but duration {} at {}s per clip gives {expected}",
                        e.video_id, e.duration, grid.delta_t
                    ),
                ));
            }
            let g = ClipGrid::fitted(grid.delta_t, l_v, grid.n_min, grid.n_max)?;
            VideoRecord::new(e.video_id, g, feats)
        })
        .collect()
}

/// Loads the full dataset named by `paths`.
pub fn load_dataset(paths: &DatasetPaths, grid: &GridOptions) -> Result<Dataset> {
    let table = read_video_table(&paths.videos)?;
    let duration: HashMap<String, f64> = table.iter().map(|e| (e.video_id.clone(), e.duration)).collect();
    let videos = videos_from_table(&paths.videos, table, grid)?;
    let entries = read_manifest(&paths.manifest)?;
    let parses: Vec<String> = if entries.is_empty() {
        Vec::new()
    } else {
        read_text(&paths.parses)?.lines().map(str::to_string).collect()
    };
    let base = base_dir(&paths.manifest);
    let mut queries = Vec::with_capacity(entries.len());
    for e in entries {
        let where_ = |msg: String| Error::format(&paths.manifest, format!("query {}: {msg}", e.query_id));
        let gt = TimeInterval::new(e.t_st, e.t_ed).map_err(|err| where_(err.to_string()))?;
        if let Some(&d) = duration.get(&e.video_id) {
            if e.t_ed > d + 1e-6 {
                return Err(where_(format!("t_ed {} exceeds video duration {d}", e.t_ed)));
            }
        }
        let line = parses
            .get(e.parse_line_no)
            .ok_or_else(|| where_(format!("parse_line_no {} beyond {} parse lines", e.parse_line_no, parses.len())))?;
        let tree = parse_bracketed(line).map_err(|err| {
            Error::format(&paths.parses, format!("line {} (0-based {}): {err}", e.parse_line_no + 1, e.parse_line_no))
        })?;
        let ps = extract_phrases(&tree);
        let words = features::read(&resolve(&base, &e.word_feature_path))?;
        let sent_path = resolve(&base, &e.sentence_embedding_path);
        let sent = features::read(&sent_path)?;
        if sent.rows() != 1 {
            return Err(Error::format(&sent_path, format!("sentence embedding must have 1 row, found {}", sent.rows())));
        }
        let phrase_path = resolve(&base, &e.phrase_embedding_path);
        let phrase_rows = features::read(&phrase_path)?;
        if phrase_rows.cols() != sent.cols() {
            return Err(Error::format(
                &phrase_path,
                format!("phrase embeddings have {} columns, sentence embedding {}", phrase_rows.cols(), sent.cols()),
            ));
        }
        let phrases = EmbeddingSet::from_phrase_set(&ps, phrase_rows).map_err(|err| Error::format(&phrase_path, err.to_string()))?;
        queries.push(QueryRecord {
            query_id: e.query_id,
            text: e.text,
            video_id: e.video_id,
            gt,
            split: e.split,
            word_features: words,
            sentence_embedding: sent.row(0).to_vec(),
            phrases,
        });
    }
    Dataset::new(queries, videos)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the interchange layout under `dir`:
/// `manifest.jsonl`, `videos.jsonl`, `parses.txt` and `features/*.vmrf`.
/// `parses[i]` is the bracketed tree of query `i`.
pub fn write_dataset(dir: &Path, dataset: &Dataset, parses: &[String]) -> Result<DatasetPaths> {
    if parses.len() != dataset.queries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parses for {} queries",
            parses.len(),
            dataset.queries.len()
        )));
    }
    let feat_dir = dir.join("features");
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let rel = format!("features/{}_clips.vmrf", v.video_id);
        features::write(&dir.join(&rel), &v.clip_features)?;
        videos.push(VideoEntry {
            video_id: v.video_id.clone(),
            clip_feature_path: rel,
            duration: v.grid.duration(),
        });
    }
    let mut entries = Vec::with_capacity(dataset.queries.len());
    for (i, q) in dataset.queries.iter().enumerate() {
        let words = format!("features/{}_words.vmrf", q.query_id);
        let sent = format!("features/{}_sentence.vmrf", q.query_id);
        let phrase = format!("features/{}_phrases.vmrf", q.query_id);
        features::write(&dir.join(&words), &q.word_features)?;
        let sent_m = crate::matrix::FeatureMatrix::new(1, q.sentence_embedding.len(), q.sentence_embedding.clone())?;
        features::write(&dir.join(&sent), &sent_m)?;
        features::write(&dir.join(&phrase), q.phrases.vectors())?;
        entries.push(ManifestEntry {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            video_id: q.video_id.clone(),
            t_st: q.gt.t_st,
            t_ed: q.gt.t_ed,
            split: q.split.clone(),
            word_feature_path: words,
            sentence_embedding_path: sent,
            phrase_embedding_path: phrase,
            parse_line_no: i,
        });
    }
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let paths = DatasetPaths::beside(dir.join(MANIFEST_FILE));
    write_lines(&paths.manifest, &entries)?;
    write_lines(&paths.videos, &videos)?;
    let mut text = parses.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&paths.parses, text).map_err(|e| Error::io(&paths.parses, e))?;
    Ok(paths)
}
