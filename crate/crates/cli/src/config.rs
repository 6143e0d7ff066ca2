//! The TOML config file. Every key is optional; flags override the file and
//! the file overrides the built-in defaults.
//!
//! ```toml
//! [synth]            # any SynthConfig field
//! n_videos = 200
//!
//! [grid]
//! delta_t = 1.0
//! n_min = 1
//! n_max = 4
//!
//! [train]
//! condition = "sl-pr"
//! c_one = false
//! epochs = 30
//! lr = 0.1
//! batch_size = 128
//! seed = 0
//! dim = 16
//! alpha = 20.0
//! pool_switch_epoch = 20
//! pool_before = 1
//! pool_after = 20
//!
//! [detector]
//! phi = "vp"
//! theta = 0.5
//!
//! [loss]             # any LossWeights field
//! lambda_tl = 0.01
//!
//! [retrieval]
//! k_videos = 100
//! k_results = 100
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use vmr_core::io::GridOptions;
use vmr_core::loss::LossWeights;
use vmr_core::synth::SynthConfig;
use vmr_core::trainer::{PoolSchedule, TrainConfig};
use vmr_core::{Condition, DetectorConfig, Phi};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub delta_t: Option<f64>,
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub condition: Option<Condition>,
    pub c_one: Option<bool>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub alpha: Option<f64>,
    pub pool_switch_epoch: Option<usize>,
    pub pool_before: Option<usize>,
    pub pool_after: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub phi: Option<Phi>,
    pub theta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda_tl: Option<f64>,
    pub lambda_vcmr: Option<f64>,
    pub lambda_rel_gt_neg_vr: Option<f64>,
    pub lambda_pos_ge_rel_vr: Option<f64>,
    pub lambda_rel_gt_neg_vcmr: Option<f64>,
    pub lambda_pos_ge_rel_vcmr: Option<f64>,
    pub lambda_tl2: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k_videos: Option<usize>,
    pub k_results: Option<usize>,
    pub alpha: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn grid(&self) -> GridOptions {
        let d = GridOptions::default();
        GridOptions {
            delta_t: self.grid.delta_t.unwrap_or(d.delta_t),
            n_min: self.grid.n_min.unwrap_or(d.n_min),
            n_max: self.grid.n_max.unwrap_or(d.n_max),
        }
    }

    pub fn detector(&self) -> DetectorConfig {
        let d = DetectorConfig::default();
        DetectorConfig {
            phi: self.detector.phi.unwrap_or(d.phi),
            theta: self.detector.theta.unwrap_or(d.theta),
        }
    }

    /// Condition defaults with the file's `[train]`, `[detector]` and `[loss]`
    /// values applied on top.
    pub fn train(&self, condition: Condition, c_one: bool) -> TrainConfig {
        let t = &self.train;
        let mut cfg = TrainConfig::for_condition(condition, c_one);
        cfg.epochs = t.epochs.unwrap_or(cfg.epochs);
        cfg.lr = t.lr.unwrap_or(cfg.lr);
        cfg.batch_size = t.batch_size.unwrap_or(cfg.batch_size);
        cfg.seed = t.seed.unwrap_or(cfg.seed);
        cfg.dim = t.dim.unwrap_or(cfg.dim);
        cfg.alpha = t.alpha.unwrap_or(cfg.alpha);
        let p = PoolSchedule::default();
        cfg.pool_schedule = PoolSchedule {
            epochs_before: t.pool_switch_epoch.unwrap_or(p.epochs_before),
            pool_before: t.pool_before.unwrap_or(p.pool_before),
            pool_after: t.pool_after.unwrap_or(p.pool_after),
        };
        cfg.detector = self.detector();
        cfg.weights = self.loss.apply(cfg.weights);
        cfg
    }
}

impl LossSection {
    fn apply(&self, w: LossWeights) -> LossWeights {
        LossWeights {
            lambda_tl: self.lambda_tl.unwrap_or(w.lambda_tl),
            lambda_vcmr: self.lambda_vcmr.unwrap_or(w.lambda_vcmr),
            lambda_rel_gt_neg_vr: self.lambda_rel_gt_neg_vr.unwrap_or(w.lambda_rel_gt_neg_vr),
            lambda_pos_ge_rel_vr: self.lambda_pos_ge_rel_vr.unwrap_or(w.lambda_pos_ge_rel_vr),
            lambda_rel_gt_neg_vcmr: self.lambda_rel_gt_neg_vcmr.unwrap_or(w.lambda_rel_gt_neg_vcmr),
            lambda_pos_ge_rel_vcmr: self.lambda_pos_ge_rel_vcmr.unwrap_or(w.lambda_pos_ge_rel_vcmr),
            lambda_tl2: self.lambda_tl2.unwrap_or(w.lambda_tl2),
            delta: self.delta.unwrap_or(w.delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: ConfigFile = toml::from_str("[train]\nepochs = 3\n[detector]\ntheta = 0.7\n[synth]\nn_videos = 5\n").unwrap();
        let t = cfg.train(Condition::Pr, false);
        assert_eq!(t.epochs, 3);
        assert_eq!(t.lr, vmr_core::trainer::DEFAULT_LR);
        assert_eq!(t.detector.theta, 0.7);
        assert_eq!(t.weights, LossWeights::for_condition(Condition::Pr));
        assert_eq!(cfg.synth.n_videos, 5);
        assert_eq!(cfg.synth.clips_per_video, SynthConfig::default().clips_per_video);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[train]\nepoch = 3\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[nope]\n").is_err());
    }

    #[test]
    fn condition_names_parse() {
        let cfg: ConfigFile = toml::from_str("[train]\ncondition = \"sl-pr\"\n[detector]\nphi = \"np-vp\"\n").unwrap();
        assert_eq!(cfg.train.condition, Some(Condition::SlPr));
        assert_eq!(cfg.detector.phi, Some(Phi::NpVp));
    }
}
