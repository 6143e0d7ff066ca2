//! Training objectives.
//!
//! The total loss is
//!
//! ```text
//! L = L_vr + λ_tl·L_tl + λ_vcmr·L_vcmr
//! L_vr   = pos>neg(s_vr)   + λ·rel>neg(s_vr)   + λ·pos≥rel(s_vr)
//! L_tl   = nll_pos         + λ_tl2·nll_rel
//! L_vcmr = pos>neg(R_vcmr) + λ·rel>neg(R_vcmr) + λ·pos≥rel(R_vcmr)
//! ```
//!
//! where the ranking terms work on an `N × N` relevance matrix (rows are
//! queries, columns are videos of the same batch) and the `rel` terms are
//! weighted by the confidence of each potentially relevant pair.

mod objective;
mod sampling;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::model::ScoreBundle;
use crate::pairdet::{PairKind, PairMap};

pub use objective::{forward, sample_negatives, BatchForward, Objective, SampledNegatives, TrainBatch};
pub(crate) use objective::kink_signature;
pub use sampling::{sample_hard_negative, Negatives};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "xml")]
    Xml,
    #[serde(rename = "pr")]
    Pr,
    #[serde(rename = "sl")]
    Sl,
    #[serde(rename = "sl-pr")]
    SlPr,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Xml, Condition::Pr, Condition::Sl, Condition::SlPr];

    pub fn uses_pairs(self) -> bool {
        matches!(self, Condition::Pr | Condition::SlPr)
    }

    pub fn uses_segment_loss(self) -> bool {
        matches!(self, Condition::Sl | Condition::SlPr)
    }

    /// Table label: XML, +PR, +SL, +SL+PR.
    pub fn display_name(self) -> &'static str {
        match self {
            Condition::Xml => "XML",
            Condition::Pr => "+PR",
            Condition::Sl => "+SL",
            Condition::SlPr => "+SL+PR",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Xml => "xml",
            Condition::Pr => "pr",
            Condition::Sl => "sl",
            Condition::SlPr => "sl-pr",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Ok(Condition::Xml),
            "pr" | "+pr" => Ok(Condition::Pr),
            "sl" | "+sl" => Ok(Condition::Sl),
            "sl-pr" | "+sl+pr" | "slpr" => Ok(Condition::SlPr),
            other => Err(Error::Config(format!(
                "unknown condition `{other}` (xml|pr|sl|sl-pr)"
            ))),
        }
    }
}

/// A loss condition plus the `C ≡ 1` ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentCondition {
    pub condition: Condition,
    pub c_one: bool,
}

impl ExperimentCondition {
    pub fn new(condition: Condition, c_one: bool) -> Self {
        Self { condition, c_one }
    }

    /// All eight cells: four conditions × {computed C, C ≡ 1}.
    pub fn grid() -> Vec<ExperimentCondition> {
        Condition::ALL
            .iter()
            .flat_map(|&c| [Self::new(c, false), Self::new(c, true)])
            .collect()
    }
}

impl fmt::Display for ExperimentCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.c_one {
            write!(f, "{} (C=1)", self.condition.display_name())
        } else {
            f.write_str(self.condition.display_name())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_tl: f64,
    pub lambda_vcmr: f64,
    pub lambda_rel_gt_neg_vr: f64,
    pub lambda_pos_ge_rel_vr: f64,
    pub lambda_rel_gt_neg_vcmr: f64,
    pub lambda_pos_ge_rel_vcmr: f64,
    pub lambda_tl2: f64,
    /// Ranking margin Δ.
    pub delta: f64,
}

pub const DEFAULT_LAMBDA_TL: f64 = 0.01;
pub const DEFAULT_MARGIN: f64 = 0.1;

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_condition(Condition::Xml)
    }
}

impl LossWeights {
    /// Switches the λ flags on or off for a condition, with default λ_tl and Δ.
    pub fn for_condition(condition: Condition) -> Self {
        let pr = if condition.uses_pairs() { 1.0 } else { 0.0 };
        let sl = if condition.uses_segment_loss() { 1.0 } else { 0.0 };
        Self {
            lambda_tl: DEFAULT_LAMBDA_TL,
            lambda_vcmr: sl,
            lambda_rel_gt_neg_vr: pr,
            lambda_pos_ge_rel_vr: pr,
            lambda_rel_gt_neg_vcmr: pr,
            lambda_pos_ge_rel_vcmr: pr,
            lambda_tl2: pr,
            delta: DEFAULT_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_tl,
            self.lambda_vcmr,
            self.lambda_rel_gt_neg_vr,
            self.lambda_pos_ge_rel_vr,
            self.lambda_rel_gt_neg_vcmr,
            self.lambda_pos_ge_rel_vcmr,
            self.lambda_tl2,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.delta)));
        }
        Ok(())
    }

    /// Effective coefficient of a term in the total loss.
    pub fn coefficient(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::VrPosGtNeg => 1.0,
            LossTerm::VrRelGtNeg => self.lambda_rel_gt_neg_vr,
            LossTerm::VrPosGeRel => self.lambda_pos_ge_rel_vr,
            LossTerm::NllPos => self.lambda_tl,
            LossTerm::NllRel => self.lambda_tl * self.lambda_tl2,
            LossTerm::VcmrPosGtNeg => self.lambda_vcmr,
            LossTerm::VcmrRelGtNeg => self.lambda_vcmr * self.lambda_rel_gt_neg_vcmr,
            LossTerm::VcmrPosGeRel => self.lambda_vcmr * self.lambda_pos_ge_rel_vcmr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossTerm {
    VrPosGtNeg,
    VrRelGtNeg,
    VrPosGeRel,
    NllPos,
    NllRel,
    VcmrPosGtNeg,
    VcmrRelGtNeg,
    VcmrPosGeRel,
}

impl LossTerm {
    pub const ALL: [LossTerm; 8] = [
        LossTerm::VrPosGtNeg,
        LossTerm::VrRelGtNeg,
        LossTerm::VrPosGeRel,
        LossTerm::NllPos,
        LossTerm::NllRel,
        LossTerm::VcmrPosGtNeg,
        LossTerm::VcmrRelGtNeg,
        LossTerm::VcmrPosGeRel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::VrPosGtNeg => "vr_pos_gt_neg",
            LossTerm::VrRelGtNeg => "vr_rel_gt_neg",
            LossTerm::VrPosGeRel => "vr_pos_ge_rel",
            LossTerm::NllPos => "nll_pos",
            LossTerm::NllRel => "nll_rel",
            LossTerm::VcmrPosGtNeg => "vcmr_pos_gt_neg",
            LossTerm::VcmrRelGtNeg => "vcmr_rel_gt_neg",
            LossTerm::VcmrPosGeRel => "vcmr_pos_ge_rel",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Value of every loss term for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    values: [f64; 8],
}

impl LossTerms {
    pub fn get(&self, term: LossTerm) -> f64 {
        self.values[term.index()]
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        self.values[term.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (LossTerm, f64)> + '_ {
        LossTerm::ALL.iter().map(move |&t| (t, self.get(t)))
    }

    /// Weighted sum of the terms.
    pub fn total(&self, weights: &LossWeights) -> f64 {
        loss_total(self, weights)
    }
}

/// Composes the term values into the overall objective.
pub fn loss_total(terms: &LossTerms, weights: &LossWeights) -> f64 {
    let w = |t| weights.coefficient(t) * terms.get(t);
    let l_vr = terms.get(LossTerm::VrPosGtNeg) + w(LossTerm::VrRelGtNeg) + w(LossTerm::VrPosGeRel);
    let l_tl = w(LossTerm::NllPos) + w(LossTerm::NllRel);
    let l_vcmr = w(LossTerm::VcmrPosGtNeg) + w(LossTerm::VcmrRelGtNeg) + w(LossTerm::VcmrPosGeRel);
    l_vr + l_tl + l_vcmr
}

/// Relevance matrix of one batch with its pair labels.
#[derive(Debug, Clone)]
pub struct BatchRelevance<'a> {
    /// `r[i][j]`: relevance of query `i` to the video of pair `j`.
    pub r: FeatureMatrix,
    pub labels: &'a PairMap,
    pub n_pool: usize,
}

impl<'a> BatchRelevance<'a> {
    pub fn new(r: FeatureMatrix, labels: &'a PairMap, n_pool: usize) -> Result<Self> {
        if r.rows() != r.cols() {
            return Err(Error::DimensionMismatch(format!(
                "relevance matrix must be square, got {}x{}",
                r.rows(),
                r.cols()
            )));
        }
        if n_pool == 0 || n_pool > r.rows() {
            return Err(Error::Config(format!(
                "n_pool must lie in [1, {}], got {n_pool}",
                r.rows()
            )));
        }
        Ok(Self { r, labels, n_pool })
    }

    pub fn n(&self) -> usize {
        self.r.rows()
    }
}

/// Where a ranking term sends `d(scale·loss)/dR`, and optionally which hinges
/// were active.
pub(crate) struct Sink<'a> {
    pub grad: Option<&'a mut FeatureMatrix>,
    pub scale: f64,
    pub trace: Option<&'a mut Vec<bool>>,
}

impl Sink<'_> {
    pub fn none() -> Self {
        Sink {
            grad: None,
            scale: 0.0,
            trace: None,
        }
    }

    /// Records a hinge `[arg]_+` whose argument is `Σ coeff·R[idx]`.
    fn hinge(&mut self, arg: f64, norm: f64, parts: &[((usize, usize), f64)]) -> f64 {
        let active = arg > 0.0;
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(active);
        }
        if active {
            if let Some(g) = self.grad.as_deref_mut() {
                for &((i, j), c) in parts {
                    let cur = g.get(i, j);
                    g.set(i, j, cur + self.scale * c / norm);
                }
            }
            arg
        } else {
            0.0
        }
    }
}

/// `(query, video, confidence)` for every potentially relevant ordered pair.
pub(crate) fn relevant_pairs(labels: &PairMap, c_one: bool) -> Vec<(usize, usize, f64)> {
    labels
        .iter()
        .filter(|(_, l)| l.kind == PairKind::PotentiallyRelevant)
        .map(|(&(a, b), l)| (a, b, if c_one { 1.0 } else { l.confidence }))
        .collect()
}

pub(crate) fn pos_gt_neg_impl(r: &FeatureMatrix, negs: &Negatives, delta: f64, sink: &mut Sink) -> f64 {
    let n = r.rows() as f64;
    let mut q_side = 0.0;
    for (i, neg) in negs.query_side.iter().enumerate() {
        if let Some(j) = *neg {
            let arg = delta + r.get(i, j) - r.get(i, i);
            q_side += sink.hinge(arg, n, &[((i, j), 1.0), ((i, i), -1.0)]);
        }
    }
    let mut v_side = 0.0;
    for (j, neg) in negs.video_side.iter().enumerate() {
        if let Some(i) = *neg {
            let arg = delta + r.get(i, j) - r.get(j, j);
            v_side += sink.hinge(arg, n, &[((i, j), 1.0), ((j, j), -1.0)]);
        }
    }
    (q_side + v_side) / n
}

pub(crate) fn rel_gt_neg_impl(
    r: &FeatureMatrix,
    labels: &PairMap,
    negs: &Negatives,
    delta: f64,
    c_one: bool,
    sink: &mut Sink,
) -> f64 {
    let pairs = relevant_pairs(labels, c_one);
    if pairs.is_empty() {
        return 0.0;
    }
    let n_pairs = pairs.len() as f64;
    let mut q_side = 0.0;
    let mut v_side = 0.0;
    for &(a, b, c) in &pairs {
        if let Some(j) = negs.query_side[a] {
            let arg = delta + r.get(a, j) - c * r.get(a, b);
            q_side += sink.hinge(arg, n_pairs, &[((a, j), 1.0), ((a, b), -c)]);
        }
        if let Some(i) = negs.video_side[b] {
            let arg = delta + r.get(i, b) - c * r.get(a, b);
            v_side += sink.hinge(arg, n_pairs, &[((i, b), 1.0), ((a, b), -c)]);
        }
    }
    (q_side + v_side) / n_pairs
}

pub(crate) fn pos_ge_rel_impl(r: &FeatureMatrix, labels: &PairMap, c_one: bool, sink: &mut Sink) -> f64 {
    let pairs = relevant_pairs(labels, c_one);
    if pairs.is_empty() {
        return 0.0;
    }
    let n_pairs = pairs.len() as f64;
    let mut q_side = 0.0;
    let mut v_side = 0.0;
    for &(a, b, c) in &pairs {
        let arg = r.get(a, b) - c * r.get(a, a);
        q_side += sink.hinge(arg, n_pairs, &[((a, b), 1.0), ((a, a), -c)]);
        let arg = r.get(a, b) - c * r.get(b, b);
        v_side += sink.hinge(arg, n_pairs, &[((a, b), 1.0), ((b, b), -c)]);
    }
    (q_side + v_side) / n_pairs
}

/// Positive-over-negative ranking loss with sampled hard negatives, summed
/// over the query side and the video side.
pub fn loss_pos_gt_neg(batch: &BatchRelevance, negs: &Negatives, delta: f64) -> f64 {
    pos_gt_neg_impl(&batch.r, negs, delta, &mut Sink::none())
}

/// Potentially-relevant-over-negative ranking loss; each PR pair's
/// relevance is scaled by its confidence (or by 1 when `c_one`).
pub fn loss_rel_gt_neg(batch: &BatchRelevance, negs: &Negatives, delta: f64, c_one: bool) -> f64 {
    rel_gt_neg_impl(&batch.r, batch.labels, negs, delta, c_one, &mut Sink::none())
}

/// Margin-free hinge `[R_rel − C·R_pos]_+`, both orientations.
pub fn loss_pos_ge_rel(batch: &BatchRelevance, c_one: bool) -> f64 {
    pos_ge_rel_impl(&batch.r, batch.labels, c_one, &mut Sink::none())
}

/// Negative log-likelihood of the ground-truth start/end clips.
pub fn loss_nll_pos(bundles: &[&ScoreBundle], gt: &[(usize, usize)]) -> f64 {
    if bundles.is_empty() {
        return 0.0;
    }
    let sum: f64 = bundles
        .iter()
        .zip(gt)
        .map(|(b, &(st, ed))| b.log_p_st[st] + b.log_p_ed[ed])
        .sum();
    -sum / bundles.len() as f64
}

/// Confidence-weighted NLL of each PR pair's *partner* moment.
pub fn loss_nll_rel(bundles: &[&ScoreBundle], partner_gt: &[(usize, usize)], confidences: &[f64]) -> f64 {
    if bundles.is_empty() {
        return 0.0;
    }
    let sum: f64 = bundles
        .iter()
        .zip(partner_gt)
        .zip(confidences)
        .map(|((b, &(st, ed)), &c)| c * (b.log_p_st[st] + b.log_p_ed[ed]))
        .sum();
    -sum / bundles.len() as f64
}
