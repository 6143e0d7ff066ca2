//! Mini-batch training with Adam.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{sample_negatives, Condition, ExperimentCondition, LossTerm, LossWeights, Objective, TrainBatch};
use crate::metrics::{query_truths, EvalTask, RankedLists, ReportRow};
use crate::model::{ModelParams, DEFAULT_ALPHA};
use crate::pairdet::{baseline_labels, mine_pairs, DetectorConfig};
use crate::record::{Dataset, QueryRecord};
use crate::retrieval::{build_index, retrieve_all, RetrievalConfig};

/// `N_pool` is `pool_before` up to and including epoch `epochs_before`,
/// `pool_after` afterwards (epochs count from 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSchedule {
    pub epochs_before: usize,
    pub pool_before: usize,
    pub pool_after: usize,
}

impl Default for PoolSchedule {
    fn default() -> Self {
        Self {
            epochs_before: 20,
            pool_before: 1,
            pool_after: 20,
        }
    }
}

impl PoolSchedule {
    pub fn pool_for(&self, epoch: usize, batch_size: usize) -> usize {
        let p = if epoch <= self.epochs_before {
            self.pool_before
        } else {
            self.pool_after
        };
        p.clamp(1, batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub pool_schedule: PoolSchedule,
    pub seed: u64,
    pub condition: Condition,
    pub c_one: bool,
    pub detector: DetectorConfig,
    pub weights: LossWeights,
    /// Hidden dimension `d`.
    pub dim: usize,
    pub alpha: f64,
}

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_DIM: usize = 16;
pub const SYNTHETIC_EPOCHS: usize = 30;
pub const SYNTHETIC_LR: f64 = 0.1;

impl TrainConfig {
    /// Defaults for a condition: 100 epochs for XML, 200 otherwise.
    pub fn for_condition(condition: Condition, c_one: bool) -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: if condition == Condition::Xml { 100 } else { 200 },
            lr: DEFAULT_LR,
            pool_schedule: PoolSchedule::default(),
            seed: 0,
            condition,
            c_one,
            detector: DetectorConfig::default(),
            weights: LossWeights::for_condition(condition),
            dim: DEFAULT_DIM,
            alpha: DEFAULT_ALPHA,
        }
    }

    /// Schedule for the small synthetic corpus: 30 epochs of 3 batches, so
    /// the step size is raised to 0.1 (the best XML setting on held-out
    /// seeds; 1e-4 does not move off chance in 90 steps).
    pub fn synthetic_reference(condition: Condition, c_one: bool, seed: u64) -> Self {
        Self {
            epochs: SYNTHETIC_EPOCHS,
            lr: SYNTHETIC_LR,
            seed,
            ..Self::for_condition(condition, c_one)
        }
    }

    pub fn experiment(&self) -> ExperimentCondition {
        ExperimentCondition::new(self.condition, self.c_one)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 || self.dim == 0 {
            return Err(Error::Config("epochs and dim must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.pool_schedule.pool_before == 0 || self.pool_schedule.pool_after == 0 {
            return Err(Error::Config("pool sizes must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        self.weights.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.weights,
            c_one: self.c_one,
            alpha: self.alpha,
            only: None,
        }
    }
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: u32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let ps = params.matrices_mut();
        let ms = self.m.matrices_mut();
        let vs = self.v.matrices_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads.matrices()) {
            let (p, m, v, g) = (p.data_mut(), m.data_mut(), v.data_mut(), g.data());
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Assembles a batch of dataset queries with their own videos and labels the
/// pairs: mined when `detector` is given, baseline labels otherwise.
pub fn build_batch(dataset: &Dataset, indices: &[usize], detector: Option<&DetectorConfig>) -> Result<TrainBatch> {
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= dataset.queries.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: dataset.queries.len(),
            });
        }
        if !seen.insert(i) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    let queries: Vec<&QueryRecord> = indices.iter().map(|&i| &dataset.queries[i]).collect();
    let labels = match detector {
        Some(d) => mine_pairs(&queries, d)?,
        None => baseline_labels(&queries),
    };
    let mut words = Vec::with_capacity(indices.len());
    let mut clips = Vec::with_capacity(indices.len());
    let mut grids = Vec::with_capacity(indices.len());
    let mut gts = Vec::with_capacity(indices.len());
    for &i in indices {
        let v = &dataset.videos[dataset.video_of(i)];
        words.push(dataset.queries[i].word_features.clone());
        clips.push(v.clip_features.clone());
        grids.push(v.grid);
        gts.push(dataset.gt_clips(i));
    }
    TrainBatch::new(words, clips, grids, gts, labels)
}

/// Per-epoch record, one line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub n_pool: usize,
    pub batches: usize,
    /// Mean over batches, keyed by term name.
    pub losses: Vec<(String, f64)>,
    pub total: f64,
    /// VCMR-0.5 R@10 on the validation split, when there is one.
    pub val_score: Option<f64>,
    pub wall_secs: f64,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    dataset: &'a Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    params: ModelParams,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    best: Option<(usize, f64, ModelParams)>,
}

impl<'a> Trainer<'a> {
    /// Trains on split `train`; split `val`, if present, selects the best checkpoint.
    pub fn new(config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let train = dataset.split_indices("train");
        if train.len() < config.batch_size {
            return Err(Error::Config(format!(
                "{} training queries cannot fill a batch of {}",
                train.len(),
                config.batch_size
            )));
        }
        let d_q = dataset.d_q().ok_or_else(|| Error::EmptySet("queries".into()))?;
        let d_v = dataset.d_v().ok_or_else(|| Error::EmptySet("videos".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::random(config.dim, d_q, d_v, &mut rng);
        Ok(Self {
            adam: Adam::new(&params),
            config,
            dataset,
            train,
            val: dataset.split_indices("val"),
            params,
            rng,
            epoch: 0,
            best: None,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `(epoch, score, params)` of the best validation epoch so far.
    pub fn best(&self) -> Option<&(usize, f64, ModelParams)> {
        self.best.as_ref()
    }

    fn detector(&self) -> Option<&DetectorConfig> {
        self.config.condition.uses_pairs().then_some(&self.config.detector)
    }

    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let started = Instant::now();
        self.epoch += 1;
        let n = self.config.batch_size;
        let n_pool = self.config.pool_schedule.pool_for(self.epoch, n);
        let obj = self.config.objective();
        let mut order = self.train.clone();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0; 8];
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks_exact(n) {
            let batch = build_batch(self.dataset, chunk, self.detector())?;
            let fwd = obj.forward(&self.params, &batch)?;
            let negs = sample_negatives(&fwd, &batch.labels, n_pool, &mut self.rng)?;
            let (terms, grads) = obj.backward(&self.params, &batch, &fwd, &negs)?;
            for (k, (_, v)) in terms.iter().enumerate() {
                sums[k] += v;
            }
            total += obj.total(&terms);
            self.adam.step(&mut self.params, &grads, self.config.lr);
            batches += 1;
        }
        if !self.params.is_finite() {
            return Err(Error::NonFiniteLoss("parameters after update".into()));
        }
        let denom = batches.max(1) as f64;
        let losses = LossTerm::ALL
            .iter()
            .zip(sums)
            .map(|(t, s)| (t.name().to_string(), s / denom))
            .collect();
        let val_score = self.validate()?;
        if let Some(score) = val_score {
            if self.best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                self.best = Some((self.epoch, score, self.params.clone()));
            }
        }
        Ok(EpochStats {
            epoch: self.epoch,
            n_pool,
            batches,
            losses,
            total: total / denom,
            val_score,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let score = evaluate_split(&self.params, self.dataset, &self.val, self.config.alpha)?;
        Ok(score.vcmr_05_r10)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&EpochStats) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch()?;
            on_epoch(&stats)?;
        }
        Ok(())
    }
}

/// Retrieval metrics of `params` on a subset of the dataset queries.
pub fn evaluate_split(params: &ModelParams, dataset: &Dataset, queries: &[usize], alpha: f64) -> Result<ReportRow> {
    let index = build_index(params, &dataset.videos)?;
    let cfg = RetrievalConfig {
        alpha,
        ..RetrievalConfig::default()
    };
    let qs: Vec<(String, &crate::matrix::FeatureMatrix, Option<usize>)> = queries
        .iter()
        .map(|&i| {
            let q = &dataset.queries[i];
            (q.query_id.clone(), &q.word_features, Some(dataset.video_of(i)))
        })
        .collect();
    let results = retrieve_all(params, &index, &qs, &cfg)?;
    let truth = query_truths(dataset, queries);
    let lists: Vec<RankedLists> = results.iter().map(RankedLists::from).collect();
    let mut row = ReportRow::default();
    for task in [EvalTask::Vcmr, EvalTask::Svmr, EvalTask::Vr] {
        row.fill(task, &lists, &truth);
    }
    Ok(row)
}
