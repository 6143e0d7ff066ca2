//! Synthetic corpus where the potentially relevant pairs are known.
//!
//! Each video shows one of `K` actions inside one ground-truth moment; every
//! query describes the action of its video. Two queries on different videos
//! that share an action form a true PR pair.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cosine, dot, normalize, FeatureMatrix};
use crate::pairdet::EmbeddingSet;
use crate::phrase::{extract_phrases, parse_bracketed};
use crate::record::{Dataset, QueryRecord, VideoRecord};
use crate::temporal::{ClipGrid, TimeInterval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub clips_per_video: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Number of actions `K`.
    pub n_actions: usize,
    /// RMS norm of the noise added to each phrase embedding.
    pub sigma: f64,
    pub d_e: usize,
    pub d_q: usize,
    pub d_v: usize,
    /// Noise of word and clip features, relative to the signal norm.
    pub feature_noise: f64,
    pub delta_t: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Upper bound on the cosine between two action vectors.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 200,
            clips_per_video: 8,
            n_train: 400,
            n_val: 0,
            n_test: 100,
            n_actions: 10,
            sigma: 0.05,
            d_e: 64,
            d_q: 24,
            d_v: 32,
            feature_noise: 0.5,
            delta_t: 1.0,
            n_min: 1,
            n_max: 4,
            separation: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_queries(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 {
            return Err(Error::Config("n_actions must be >= 1".into()));
        }
        if self.n_videos == 0 || self.n_queries() == 0 {
            return Err(Error::Config("need at least one video and one query".into()));
        }
        if self.d_e == 0 || self.d_q == 0 || self.d_v == 0 {
            return Err(Error::Config("dimensions must be >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("noise levels must be finite and >= 0".into()));
        }
        ClipGrid::new(self.delta_t, self.clips_per_video, self.n_min, self.n_max)?;
        Ok(())
    }
}

/// Generated corpus plus its construction ground truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    /// `K × D_e`, unit rows.
    pub actions: FeatureMatrix,
    pub action_of_video: Vec<usize>,
    pub action_of_query: Vec<usize>,
    /// Ordered cross-video pairs sharing an action, with the measured
    /// sentence-embedding cosine clamped at 0.
    pub true_pairs: BTreeMap<(usize, usize), f64>,
    /// Bracketed parse of every query, in query order.
    pub parses: Vec<String>,
}

const VERBS: [&str; 10] = [
    "walks", "runs", "jumps", "sits", "dances", "cooks", "reads", "swims", "climbs", "sings",
];

fn verb(k: usize) -> String {
    VERBS.get(k).map(|v| v.to_string()).unwrap_or_else(|| format!("act{k}"))
}

fn gaussian(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// `K` unit vectors with pairwise cosine below `separation`, by rejection.
pub fn sample_actions(k: usize, d_e: usize, separation: f64, rng: &mut ChaCha8Rng) -> Result<FeatureMatrix> {
    const MAX_TRIES: usize = 10_000;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let mut v = gaussian(d_e, 1.0, rng);
            if normalize(&mut v) == 0.0 {
                continue;
            }
            if rows.iter().all(|r| dot(r, &v) < separation) {
                rows.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place {k} action vectors with cosine < {separation} in D_e={d_e}; use a larger D_e"
            )));
        }
    }
    FeatureMatrix::from_rows(&rows)
}

fn random_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    FeatureMatrix::new(rows, cols, gaussian(rows * cols, std, rng)).expect("finite draws")
}

/// Unit-norm `a + noise` where the noise has RMS norm `sigma`.
fn noisy_unit(a: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let per_dim = sigma / (a.len() as f64).sqrt();
    let mut v: Vec<f64> = a.iter().zip(gaussian(a.len(), per_dim, rng)).map(|(x, e)| x + e).collect();
    normalize(&mut v);
    v
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let actions = sample_actions(cfg.n_actions, cfg.d_e, cfg.separation, &mut rng)?;
    let inv_sqrt_e = 1.0 / (cfg.d_e as f64).sqrt();
    let w_v = random_matrix(cfg.d_v, cfg.d_e, inv_sqrt_e, &mut rng);
    let w_q = random_matrix(cfg.d_q, cfg.d_e, inv_sqrt_e, &mut rng);
    let person = gaussian(cfg.d_q, inv_sqrt_e, &mut rng);
    let grid = ClipGrid::new(cfg.delta_t, cfg.clips_per_video, cfg.n_min, cfg.n_max)?;
    let clip_noise = Normal::new(0.0, cfg.feature_noise * inv_sqrt_e).map_err(|e| Error::Config(e.to_string()))?;

    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut action_of_video = Vec::with_capacity(cfg.n_videos);
    let mut moment_of_video = Vec::with_capacity(cfg.n_videos);
    for v in 0..cfg.n_videos {
        let k = rng.random_range(0..cfg.n_actions);
        let len = rng.random_range(cfg.n_min..=cfg.n_max.min(cfg.clips_per_video));
        let st = rng.random_range(0..=cfg.clips_per_video - len);
        let ed = st + len - 1;
        let signal = w_v.matvec(actions.row(k));
        let mut data = Vec::with_capacity(cfg.clips_per_video * cfg.d_v);
        for c in 0..cfg.clips_per_video {
            if (st..=ed).contains(&c) {
                data.extend(signal.iter().map(|s| s + clip_noise.sample(&mut rng)));
            } else {
                data.extend(gaussian(cfg.d_v, inv_sqrt_e, &mut rng));
            }
        }
        let feats = FeatureMatrix::new(cfg.clips_per_video, cfg.d_v, data)?;
        videos.push(VideoRecord::new(format!("vid{v:04}"), grid, feats)?);
        action_of_video.push(k);
        moment_of_video.push(grid.clips_to_interval(st, ed));
    }

    let n_q = cfg.n_queries();
    let mut queries = Vec::with_capacity(n_q);
    let mut action_of_query = Vec::with_capacity(n_q);
    let mut parses = Vec::with_capacity(n_q);
    for i in 0..n_q {
        let v = i % cfg.n_videos;
        let k = action_of_video[v];
        let verb = verb(k);
        let text = format!("person {verb}");
        let parse = format!("(S (NP (NN person)) (VP (VBZ {verb})))");
        let ps = extract_phrases(&parse_bracketed(&parse)?);
        let a = actions.row(k);
        let mut rows = vec![noisy_unit(a, cfg.sigma, &mut rng)];
        for _ in 0..ps.vps.len() + ps.np_vp.len() {
            rows.push(noisy_unit(a, cfg.sigma, &mut rng));
        }
        let phrases = EmbeddingSet::from_phrase_set(&ps, FeatureMatrix::from_rows(&rows)?)?;
        let action_word = w_q.matvec(a);
        let noise_std = cfg.feature_noise * inv_sqrt_e;
        let word_rows = vec![
            person.iter().zip(gaussian(cfg.d_q, noise_std, &mut rng)).map(|(p, e)| p + e).collect::<Vec<_>>(),
            action_word.iter().zip(gaussian(cfg.d_q, noise_std, &mut rng)).map(|(p, e)| p + e).collect(),
        ];
        let split = if i < cfg.n_train {
            "train"
        } else if i < cfg.n_train + cfg.n_val {
            "val"
        } else {
            "test"
        };
        queries.push(QueryRecord {
            query_id: format!("q{i:05}"),
            text,
            video_id: videos[v].video_id.clone(),
            gt: moment_of_video[v],
            split: split.into(),
            word_features: FeatureMatrix::from_rows(&word_rows)?,
            sentence_embedding: rows[0].clone(),
            phrases,
        });
        action_of_query.push(k);
        parses.push(parse);
    }

    let mut true_pairs = BTreeMap::new();
    for i in 0..n_q {
        for j in 0..n_q {
            if i != j && action_of_query[i] == action_of_query[j] && queries[i].video_id != queries[j].video_id {
                let c = cosine(&queries[i].sentence_embedding, &queries[j].sentence_embedding).unwrap_or(0.0);
                true_pairs.insert((i, j), c.max(0.0));
            }
        }
    }
    let dataset = Dataset::new(queries, videos)?;
    Ok(SynthCorpus {
        dataset,
        actions,
        action_of_video,
        action_of_query,
        true_pairs,
        parses,
    })
}

/// Ground-truth moment of each video.
pub fn video_moment(corpus: &SynthCorpus, video: usize) -> Option<TimeInterval> {
    corpus
        .dataset
        .queries
        .iter()
        .enumerate()
        .find(|(i, _)| corpus.dataset.video_of(*i) == video)
        .map(|(_, q)| q.gt)
}
