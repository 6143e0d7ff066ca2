//! Two-stage corpus inference: shortlist videos by `s_vr`, then score every
//! admissible segment of the shortlisted videos.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::model::{encode_query, encode_video, localization_heads, EncodedQuery, EncodedVideo, ModelParams, DEFAULT_ALPHA};
use crate::record::VideoRecord;
use crate::temporal::{ClipGrid, TimeInterval};

/// Encoded corpus, built once per checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    pub video_ids: Vec<String>,
    pub grids: Vec<ClipGrid>,
    pub encoded: Vec<EncodedVideo>,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn position(&self, video_id: &str) -> Option<usize> {
        self.video_ids.iter().position(|v| v == video_id)
    }
}

pub fn build_index(params: &ModelParams, videos: &[VideoRecord]) -> Result<CorpusIndex> {
    if videos.is_empty() {
        return Err(Error::EmptySet("video corpus".into()));
    }
    let encoded = videos
        .par_iter()
        .map(|v| encode_video(params, &v.clip_features))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusIndex {
        video_ids: videos.iter().map(|v| v.video_id.clone()).collect(),
        grids: videos.iter().map(|v| v.grid).collect(),
        encoded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k_videos: usize,
    pub k_results: usize,
    pub alpha: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_videos: 100,
            k_results: 100,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// A video with its `s_vr`, as ranked by the shortlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoHit {
    pub video_id: String,
    pub s_vr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub video_id: String,
    pub interval: TimeInterval,
    pub st: usize,
    pub ed: usize,
    /// `log s_vcmr`; ranking uses this rather than the exponentiated score.
    pub log_s_vcmr: f64,
    pub s_vcmr: f64,
    pub s_vr: f64,
    pub s_tl: f64,
}

/// Ranked output for one query.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryResults {
    pub query_id: String,
    pub moments: Vec<MomentResult>,
    /// Shortlist order, used for video-level recall.
    pub videos: Vec<VideoHit>,
    /// Moments within the ground-truth video only.
    pub svmr: Vec<MomentResult>,
}

/// Descending score, then `(video_id, t_st, t_ed)` ascending.
pub fn compare_moments(a: &MomentResult, b: &MomentResult) -> Ordering {
    b.log_s_vcmr
        .total_cmp(&a.log_s_vcmr)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then_with(|| a.st.cmp(&b.st))
        .then_with(|| a.ed.cmp(&b.ed))
}

/// Top `k_videos` video indices by `s_vr`, ties broken by video id.
pub fn shortlist_videos(index: &CorpusIndex, q: &EncodedQuery, k_videos: usize) -> Result<Vec<(usize, f64)>> {
    if k_videos == 0 {
        return Err(Error::Config("k_videos must be >= 1".into()));
    }
    let mut scored = index
        .encoded
        .par_iter()
        .enumerate()
        .map(|(v, ev)| crate::model::score_vr(q, ev).map(|s| (v, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| index.video_ids[a.0].cmp(&index.video_ids[b.0])));
    scored.truncate(k_videos);
    Ok(scored)
}

/// Every clip-aligned `(st, ed)` whose length in clips lies in `[n_min, n_max]`,
/// by length then start.
pub fn enumerate_segments(grid: &ClipGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for len in grid.n_min..=grid.n_max.min(grid.l_v) {
        for st in 0..=grid.l_v - len {
            out.push((st, st + len - 1));
        }
    }
    out
}

/// All segments of one video, scored.
pub fn score_video_segments(
    params: &ModelParams,
    index: &CorpusIndex,
    q: &EncodedQuery,
    video: usize,
    alpha: f64,
) -> Result<Vec<MomentResult>> {
    let grid = index.grids[video];
    let bundle = localization_heads(params, q, &index.encoded[video], grid)?;
    enumerate_segments(&grid)
        .into_iter()
        .map(|(st, ed)| {
            let log_s = bundle.log_score_vcmr(st, ed, alpha)?;
            Ok(MomentResult {
                video_id: index.video_ids[video].clone(),
                interval: grid.clips_to_interval(st, ed),
                st,
                ed,
                log_s_vcmr: log_s,
                s_vcmr: log_s.exp(),
                s_vr: bundle.s_vr,
                s_tl: bundle.score_tl(st, ed)?,
            })
        })
        .collect()
}

fn merge_top(params: &ModelParams, index: &CorpusIndex, q: &EncodedQuery, videos: &[usize], cfg: &RetrievalConfig) -> Result<Vec<MomentResult>> {
    let per_video = videos
        .par_iter()
        .map(|&v| score_video_segments(params, index, q, v, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<MomentResult> = per_video.into_iter().flatten().collect();
    all.sort_by(compare_moments);
    all.truncate(cfg.k_results);
    Ok(all)
}

/// VCMR over the shortlist. Returns the ranked moments and the shortlist.
pub fn retrieve_encoded(
    params: &ModelParams,
    index: &CorpusIndex,
    q: &EncodedQuery,
    cfg: &RetrievalConfig,
) -> Result<(Vec<MomentResult>, Vec<VideoHit>)> {
    let shortlist = shortlist_videos(index, q, cfg.k_videos)?;
    let ids: Vec<usize> = shortlist.iter().map(|&(v, _)| v).collect();
    let moments = merge_top(params, index, q, &ids, cfg)?;
    let hits = shortlist
        .into_iter()
        .map(|(v, s)| VideoHit {
            video_id: index.video_ids[v].clone(),
            s_vr: s,
        })
        .collect();
    Ok((moments, hits))
}

pub fn retrieve(params: &ModelParams, index: &CorpusIndex, word_features: &FeatureMatrix, cfg: &RetrievalConfig) -> Result<Vec<MomentResult>> {
    let q = encode_query(params, word_features)?;
    retrieve_encoded(params, index, &q, cfg).map(|(m, _)| m)
}

/// SVMR: the shortlist is forced to the single ground-truth video.
pub fn retrieve_in_video(
    params: &ModelParams,
    index: &CorpusIndex,
    q: &EncodedQuery,
    video: usize,
    cfg: &RetrievalConfig,
) -> Result<Vec<MomentResult>> {
    if video >= index.len() {
        return Err(Error::IndexOutOfRange {
            index: video,
            len: index.len(),
        });
    }
    merge_top(params, index, q, &[video], cfg)
}

/// Runs VCMR and SVMR for a set of queries. `gt_video[i]` names the
/// ground-truth video of query `i` when known.
pub fn retrieve_all(
    params: &ModelParams,
    index: &CorpusIndex,
    queries: &[(String, &FeatureMatrix, Option<usize>)],
    cfg: &RetrievalConfig,
) -> Result<Vec<QueryResults>> {
    queries
        .par_iter()
        .map(|(query_id, words, gt_video)| {
            let q = encode_query(params, words)?;
            let (moments, videos) = retrieve_encoded(params, index, &q, cfg)?;
            let svmr = match gt_video {
                Some(v) => retrieve_in_video(params, index, &q, *v, cfg)?,
                None => Vec::new(),
            };
            Ok(QueryResults {
                query_id: query_id.clone(),
                moments,
                videos,
                svmr,
            })
        })
        .collect()
}
