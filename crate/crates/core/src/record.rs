//! Query and video records and the in-memory dataset.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::pairdet::EmbeddingSet;
use crate::temporal::{ClipGrid, TimeInterval};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub video_id: String,
    pub gt: TimeInterval,
    pub split: String,
    pub word_features: FeatureMatrix,
    pub sentence_embedding: Vec<f64>,
    /// Row 0 is the sentence itself, followed by VPs and NP–VP sentences.
    pub phrases: EmbeddingSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub grid: ClipGrid,
    pub clip_features: FeatureMatrix,
}

impl VideoRecord {
    pub fn new(video_id: impl Into<String>, grid: ClipGrid, clip_features: FeatureMatrix) -> Result<Self> {
        let video_id = video_id.into();
        if clip_features.rows() != grid.l_v {
            return Err(Error::DimensionMismatch(format!(
                "video {video_id}: {} clip rows but grid has l_v={}",
                clip_features.rows(),
                grid.l_v
            )));
        }
        Ok(Self {
            video_id,
            grid,
            clip_features,
        })
    }
}

/// Queries and videos with the query → video join resolved.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub queries: Vec<QueryRecord>,
    pub videos: Vec<VideoRecord>,
    video_of_query: Vec<usize>,
    gt_clips: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn new(queries: Vec<QueryRecord>, videos: Vec<VideoRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            if by_id.insert(v.video_id.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate video id {}", v.video_id)));
            }
        }
        if let Some(first) = videos.first() {
            let d_v = first.clip_features.cols();
            if let Some(v) = videos.iter().find(|v| v.clip_features.cols() != d_v) {
                return Err(Error::DimensionMismatch(format!(
                    "video {} has D_v={} but corpus uses {d_v}",
                    v.video_id,
                    v.clip_features.cols()
                )));
            }
        }
        if let Some(first) = queries.first() {
            let d_q = first.word_features.cols();
            let d_e = first.phrases.dim();
            for q in &queries {
                if q.word_features.cols() != d_q {
                    return Err(Error::DimensionMismatch(format!(
                        "query {} has D_q={} but corpus uses {d_q}",
                        q.query_id,
                        q.word_features.cols()
                    )));
                }
                if q.phrases.dim() != d_e || q.sentence_embedding.len() != d_e {
                    return Err(Error::DimensionMismatch(format!(
                        "query {} embedding dimension differs from corpus D_e={d_e}",
                        q.query_id
                    )));
                }
            }
        }
        let mut video_of_query = Vec::with_capacity(queries.len());
        let mut gt_clips = Vec::with_capacity(queries.len());
        for q in &queries {
            let vi = *by_id.get(q.video_id.as_str()).ok_or_else(|| {
                Error::Config(format!("query {} references unknown video {}", q.query_id, q.video_id))
            })?;
            gt_clips.push(videos[vi].grid.interval_to_clips(&q.gt)?);
            video_of_query.push(vi);
        }
        Ok(Self {
            queries,
            videos,
            video_of_query,
            gt_clips,
        })
    }

    pub fn video_of(&self, query: usize) -> usize {
        self.video_of_query[query]
    }

    pub fn gt_clips(&self, query: usize) -> (usize, usize) {
        self.gt_clips[query]
    }

    pub fn video_index(&self, video_id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.video_id == video_id)
    }

    /// Query indices whose split equals `split`.
    pub fn split_indices(&self, split: &str) -> Vec<usize> {
        (0..self.queries.len())
            .filter(|&i| self.queries[i].split == split)
            .collect()
    }

    pub fn d_q(&self) -> Option<usize> {
        self.queries.first().map(|q| q.word_features.cols())
    }

    pub fn d_v(&self) -> Option<usize> {
        self.videos.first().map(|v| v.clip_features.cols())
    }
}
