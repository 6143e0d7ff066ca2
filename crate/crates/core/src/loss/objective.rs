//! Batch forward pass, loss evaluation and hand-written backpropagation.

use rand::Rng;
use rayon::prelude::*;

use super::sampling::Negatives;
use super::{
    loss_nll_pos, loss_nll_rel, pos_ge_rel_impl, pos_gt_neg_impl, rel_gt_neg_impl, relevant_pairs,
    ExperimentCondition, LossTerm, LossTerms, LossWeights, Sink,
};
use crate::error::{Error, Result};
use crate::matrix::{norm, FeatureMatrix};
use crate::model::{
    bundle_from_parts, encode_video, score_vr_argmax, sigmoid, EncodedQuery, EncodedVideo,
    ModelParams, ScoreBundle, DEFAULT_ALPHA,
};
use crate::pairdet::{PairKind, PairMap};
use crate::temporal::ClipGrid;

/// Features and labels of one mini-batch. Pair `j` is query `j` with its
/// own video, so column `j` of every relevance matrix refers to that video.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub word_features: Vec<FeatureMatrix>,
    pub clip_features: Vec<FeatureMatrix>,
    pub grids: Vec<ClipGrid>,
    pub gt_clips: Vec<(usize, usize)>,
    pub labels: PairMap,
}

impl TrainBatch {
    pub fn new(
        word_features: Vec<FeatureMatrix>,
        clip_features: Vec<FeatureMatrix>,
        grids: Vec<ClipGrid>,
        gt_clips: Vec<(usize, usize)>,
        labels: PairMap,
    ) -> Result<Self> {
        let n = word_features.len();
        if n < 2 {
            return Err(Error::Config(format!("a batch needs at least 2 pairs, got {n}")));
        }
        if clip_features.len() != n || grids.len() != n || gt_clips.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "batch parts disagree: {n} queries, {} videos, {} grids, {} moments",
                clip_features.len(),
                grids.len(),
                gt_clips.len()
            )));
        }
        for j in 0..n {
            if clip_features[j].rows() != grids[j].l_v {
                return Err(Error::DimensionMismatch(format!(
                    "pair {j}: {} clips but grid has {}",
                    clip_features[j].rows(),
                    grids[j].l_v
                )));
            }
            let (st, ed) = gt_clips[j];
            if st > ed || ed >= grids[j].l_v {
                return Err(Error::IndexOutOfRange {
                    index: ed.max(st),
                    len: grids[j].l_v,
                });
            }
        }
        for (&(i, j), label) in &labels {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), len: n });
            }
            if (i == j) != (label.kind == PairKind::Positive) {
                return Err(Error::Config(format!(
                    "pair ({i},{j}) labeled {} but only diagonal pairs are positive",
                    label.kind
                )));
            }
        }
        Ok(Self {
            word_features,
            clip_features,
            grids,
            gt_clips,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.word_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_features.is_empty()
    }
}

/// Everything the loss and its gradient need from one forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub means: Vec<Vec<f64>>,
    pub queries: Vec<EncodedQuery>,
    pub u_st: Vec<Vec<f64>>,
    pub u_ed: Vec<Vec<f64>>,
    pub videos: Vec<EncodedVideo>,
    /// Row-major `N × N`.
    pub bundles: Vec<ScoreBundle>,
    pub r_vr: FeatureMatrix,
    pub r_vcmr: FeatureMatrix,
    n: usize,
}

impl BatchForward {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bundle(&self, i: usize, j: usize) -> &ScoreBundle {
        &self.bundles[i * self.n + j]
    }
}

pub fn forward(params: &ModelParams, batch: &TrainBatch, alpha: f64) -> Result<BatchForward> {
    let n = batch.len();
    let means: Vec<Vec<f64>> = batch.word_features.iter().map(|w| w.mean_rows()).collect();
    for (i, m) in means.iter().enumerate() {
        if m.len() != params.d_q() {
            return Err(Error::DimensionMismatch(format!(
                "query {i} has D_q={} but the model expects {}",
                m.len(),
                params.d_q()
            )));
        }
    }
    let queries: Vec<EncodedQuery> = means
        .iter()
        .map(|m| EncodedQuery {
            q: params.p_q.matvec(m),
        })
        .collect();
    let u_st: Vec<Vec<f64>> = queries.iter().map(|q| params.a_st.matvec(&q.q)).collect();
    let u_ed: Vec<Vec<f64>> = queries.iter().map(|q| params.a_ed.matvec(&q.q)).collect();
    let videos = batch
        .clip_features
        .par_iter()
        .map(|x| encode_video(params, x))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (s, clip) = score_vr_argmax(&queries[i], &videos[j])?;
                    Ok(bundle_from_parts(s, clip, &u_st[i], &u_ed[i], &videos[j], batch.grids[j]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let bundles: Vec<ScoreBundle> = rows.into_iter().flatten().collect();
    let mut r_vr = FeatureMatrix::zeros(n, n);
    let mut r_vcmr = FeatureMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let b = &bundles[i * n + j];
            let (st, ed) = batch.gt_clips[j];
            r_vr.set(i, j, b.s_vr);
            r_vcmr.set(i, j, b.o_st[st].ln() + b.o_ed[ed].ln() + alpha * b.s_vr);
        }
    }
    Ok(BatchForward {
        means,
        queries,
        u_st,
        u_ed,
        videos,
        bundles,
        r_vr,
        r_vcmr,
        n,
    })
}

/// Hard negatives for both relevance kinds, frozen for differentiation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledNegatives {
    pub vr: Negatives,
    pub vcmr: Negatives,
}

/// Always samples both kinds, in a fixed order, so the generator advances the
/// same way under every condition.
pub fn sample_negatives<R: Rng + ?Sized>(
    fwd: &BatchForward,
    labels: &PairMap,
    n_pool: usize,
    rng: &mut R,
) -> Result<SampledNegatives> {
    let vr = Negatives::sample(&fwd.r_vr, labels, n_pool, rng)?;
    let vcmr = Negatives::sample(&fwd.r_vcmr, labels, n_pool, rng)?;
    Ok(SampledNegatives { vr, vcmr })
}

/// Loss weights with the `C ≡ 1` switch and the VCMR score weight α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub c_one: bool,
    pub alpha: f64,
    /// When set, the objective is this single term with coefficient 1.
    pub only: Option<LossTerm>,
}

/// One NLL target on a bundle: `−w·[log p_st(st) + log p_ed(ed)]`.
#[derive(Debug, Clone, Copy)]
struct NllTarget {
    weight: f64,
    st: usize,
    ed: usize,
}

/// Per-pair gradient with respect to the score bundle's inputs.
struct PairGrad {
    s_vr: f64,
    raw_st: Vec<f64>,
    raw_ed: Vec<f64>,
}

impl Objective {
    pub fn new(weights: LossWeights, c_one: bool) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            c_one,
            alpha: DEFAULT_ALPHA,
            only: None,
        })
    }

    pub fn for_condition(cond: ExperimentCondition) -> Self {
        Self {
            weights: LossWeights::for_condition(cond.condition),
            c_one: cond.c_one,
            alpha: DEFAULT_ALPHA,
            only: None,
        }
    }

    /// Objective reduced to one term, keeping the condition's `C` handling.
    pub fn isolate(self, term: LossTerm) -> Self {
        Self {
            only: Some(term),
            ..self
        }
    }

    pub fn coefficient(&self, term: LossTerm) -> f64 {
        match self.only {
            Some(t) if t == term => 1.0,
            Some(_) => 0.0,
            None => self.weights.coefficient(term),
        }
    }

    /// Scalar being minimized.
    pub fn total(&self, terms: &LossTerms) -> f64 {
        match self.only {
            Some(t) => terms.get(t),
            None => terms.total(&self.weights),
        }
    }

    pub fn forward(&self, params: &ModelParams, batch: &TrainBatch) -> Result<BatchForward> {
        forward(params, batch, self.alpha)
    }

    /// Value of every term on an already computed forward pass.
    pub fn evaluate_forward(&self, fwd: &BatchForward, batch: &TrainBatch, negs: &SampledNegatives) -> Result<LossTerms> {
        self.terms(fwd, batch, negs, None, None)
    }

    pub fn evaluate(&self, params: &ModelParams, batch: &TrainBatch, negs: &SampledNegatives) -> Result<LossTerms> {
        let fwd = self.forward(params, batch)?;
        self.evaluate_forward(&fwd, batch, negs)
    }

    /// Loss terms and the gradient of the weighted total.
    pub fn gradients(
        &self,
        params: &ModelParams,
        batch: &TrainBatch,
        negs: &SampledNegatives,
    ) -> Result<(LossTerms, ModelParams)> {
        let fwd = self.forward(params, batch)?;
        self.backward(params, batch, &fwd, negs)
    }

    /// Computes the terms and their gradient, once more walking the hinges
    /// with gradient sinks attached.
    fn terms(
        &self,
        fwd: &BatchForward,
        batch: &TrainBatch,
        negs: &SampledNegatives,
        mut grads: Option<(&mut FeatureMatrix, &mut FeatureMatrix)>,
        mut trace: Option<&mut Vec<bool>>,
    ) -> Result<LossTerms> {
        let n = fwd.n();
        let delta = self.weights.delta;
        let mut out = LossTerms::default();

        let ranking: [(LossTerm, bool); 6] = [
            (LossTerm::VrPosGtNeg, false),
            (LossTerm::VrRelGtNeg, false),
            (LossTerm::VrPosGeRel, false),
            (LossTerm::VcmrPosGtNeg, true),
            (LossTerm::VcmrRelGtNeg, true),
            (LossTerm::VcmrPosGeRel, true),
        ];
        for (term, vcmr) in ranking {
            let coef = self.coefficient(term);
            let (r, ng) = if vcmr { (&fwd.r_vcmr, &negs.vcmr) } else { (&fwd.r_vr, &negs.vr) };
            if ng.query_side.len() != n || ng.video_side.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "negatives sampled for a batch of {} but batch has {n}",
                    ng.query_side.len()
                )));
            }
            let grad = match grads.as_mut() {
                Some((g_vr, g_vcmr)) if coef != 0.0 => Some(if vcmr { &mut **g_vcmr } else { &mut **g_vr }),
                _ => None,
            };
            let mut sink = Sink {
                grad,
                scale: coef,
                trace: if coef != 0.0 { trace.as_deref_mut() } else { None },
            };
            let v = match term {
                LossTerm::VrPosGtNeg | LossTerm::VcmrPosGtNeg => pos_gt_neg_impl(r, ng, delta, &mut sink),
                LossTerm::VrRelGtNeg | LossTerm::VcmrRelGtNeg => {
                    rel_gt_neg_impl(r, &batch.labels, ng, delta, self.c_one, &mut sink)
                }
                _ => pos_ge_rel_impl(r, &batch.labels, self.c_one, &mut sink),
            };
            out.set(term, v);
        }

        let diag: Vec<&ScoreBundle> = (0..n).map(|i| fwd.bundle(i, i)).collect();
        out.set(LossTerm::NllPos, loss_nll_pos(&diag, &batch.gt_clips));
        let pairs = relevant_pairs(&batch.labels, self.c_one);
        let pr_bundles: Vec<&ScoreBundle> = pairs.iter().map(|&(a, b, _)| fwd.bundle(a, b)).collect();
        let partner_gt: Vec<(usize, usize)> = pairs.iter().map(|&(_, b, _)| batch.gt_clips[b]).collect();
        let conf: Vec<f64> = pairs.iter().map(|&(_, _, c)| c).collect();
        out.set(LossTerm::NllRel, loss_nll_rel(&pr_bundles, &partner_gt, &conf));

        for (term, v) in out.iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(term.name().to_string()));
            }
        }
        Ok(out)
    }

    fn nll_targets(&self, batch: &TrainBatch) -> Vec<Vec<NllTarget>> {
        let n = batch.len();
        let mut targets = vec![Vec::new(); n * n];
        let c_pos = self.coefficient(LossTerm::NllPos);
        if c_pos != 0.0 {
            for i in 0..n {
                let (st, ed) = batch.gt_clips[i];
                targets[i * n + i].push(NllTarget {
                    weight: c_pos / n as f64,
                    st,
                    ed,
                });
            }
        }
        let c_rel = self.coefficient(LossTerm::NllRel);
        let pairs = relevant_pairs(&batch.labels, self.c_one);
        if c_rel != 0.0 && !pairs.is_empty() {
            let n_pairs = pairs.len() as f64;
            for &(a, b, c) in &pairs {
                let (st, ed) = batch.gt_clips[b];
                targets[a * n + b].push(NllTarget {
                    weight: c_rel * c / n_pairs,
                    st,
                    ed,
                });
            }
        }
        targets
    }

    /// Gradient of the weighted total with respect to `s_vr` and the raw head
    /// logits of pair `(i, j)`; `None` when nothing flows into the pair.
    fn pair_grad(
        &self,
        fwd: &BatchForward,
        batch: &TrainBatch,
        g_vr: &FeatureMatrix,
        g_vcmr: &FeatureMatrix,
        targets: &[NllTarget],
        i: usize,
        j: usize,
    ) -> Option<PairGrad> {
        let gv = g_vcmr.get(i, j);
        let gr = g_vr.get(i, j);
        if gv == 0.0 && gr == 0.0 && targets.is_empty() {
            return None;
        }
        let b = fwd.bundle(i, j);
        let l = b.o_st.len();
        // d/d o first, then through o = softplus(raw) + floor.
        let mut d_ost = vec![0.0; l];
        let mut d_oed = vec![0.0; l];
        if gv != 0.0 {
            let (st, ed) = batch.gt_clips[j];
            d_ost[st] += gv / b.o_st[st];
            d_oed[ed] += gv / b.o_ed[ed];
        }
        for t in targets {
            for k in 0..l {
                d_ost[k] += t.weight * b.p_st[k];
                d_oed[k] += t.weight * b.p_ed[k];
            }
            d_ost[t.st] -= t.weight;
            d_oed[t.ed] -= t.weight;
        }
        let raw_st = (0..l).map(|k| d_ost[k] * sigmoid(b.raw_st[k])).collect();
        let raw_ed = (0..l).map(|k| d_oed[k] * sigmoid(b.raw_ed[k])).collect();
        Some(PairGrad {
            s_vr: gr + self.alpha * gv,
            raw_st,
            raw_ed,
        })
    }

    /// Terms and parameter gradients for a forward pass and frozen negatives.
    pub fn backward(
        &self,
        params: &ModelParams,
        batch: &TrainBatch,
        fwd: &BatchForward,
        negs: &SampledNegatives,
    ) -> Result<(LossTerms, ModelParams)> {
        let n = fwd.n();
        let d = params.d();
        let mut g_vr = FeatureMatrix::zeros(n, n);
        let mut g_vcmr = FeatureMatrix::zeros(n, n);
        let terms = self.terms(fwd, batch, negs, Some((&mut g_vr, &mut g_vcmr)), None)?;
        let targets = self.nll_targets(batch);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();

        // Query side: dq (through the cosine), du_st, du_ed.
        let query_side: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g_q = vec![0.0; d];
                let mut g_ust = vec![0.0; d];
                let mut g_ued = vec![0.0; d];
                let q = &fwd.queries[i].q;
                for j in 0..n {
                    let Some(pg) = self.pair_grad(fwd, batch, &g_vr, &g_vcmr, &targets[i * n + j], i, j) else {
                        continue;
                    };
                    let b = fwd.bundle(i, j);
                    let h2 = &fwd.videos[j].h2;
                    if pg.s_vr != 0.0 {
                        let h = fwd.videos[j].h1.row(b.vr_clip);
                        cosine_grad(q, h, b.s_vr, pg.s_vr, &mut g_q);
                    }
                    for k in 0..h2.rows() {
                        let row = h2.row(k);
                        let (a_st, a_ed) = (pg.raw_st[k] * inv_sqrt_d, pg.raw_ed[k] * inv_sqrt_d);
                        for c in 0..d {
                            g_ust[c] += a_st * row[c];
                            g_ued[c] += a_ed * row[c];
                        }
                    }
                }
                (g_q, g_ust, g_ued)
            })
            .collect();

        // Video side: dh1, dh2 per clip.
        let video_side: Vec<(FeatureMatrix, FeatureMatrix)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let ev = &fwd.videos[j];
                let l = ev.h1.rows();
                let mut g_h1 = FeatureMatrix::zeros(l, d);
                let mut g_h2 = FeatureMatrix::zeros(l, d);
                for i in 0..n {
                    let Some(pg) = self.pair_grad(fwd, batch, &g_vr, &g_vcmr, &targets[i * n + j], i, j) else {
                        continue;
                    };
                    let b = fwd.bundle(i, j);
                    if pg.s_vr != 0.0 {
                        let h = ev.h1.row(b.vr_clip);
                        cosine_grad(h, &fwd.queries[i].q, b.s_vr, pg.s_vr, g_h1.row_mut(b.vr_clip));
                    }
                    let (u_st, u_ed) = (&fwd.u_st[i], &fwd.u_ed[i]);
                    for k in 0..l {
                        let (a_st, a_ed) = (pg.raw_st[k] * inv_sqrt_d, pg.raw_ed[k] * inv_sqrt_d);
                        if a_st == 0.0 && a_ed == 0.0 {
                            continue;
                        }
                        let row = g_h2.row_mut(k);
                        for c in 0..d {
                            row[c] += a_st * u_st[c] + a_ed * u_ed[c];
                        }
                    }
                }
                (g_h1, g_h2)
            })
            .collect();

        let mut grads = params.zeros_like();
        for (i, (g_q, g_ust, g_ued)) in query_side.into_iter().enumerate() {
            let q = &fwd.queries[i].q;
            grads.a_st.add_outer(1.0, &g_ust, q);
            grads.a_ed.add_outer(1.0, &g_ued, q);
            let mut g_q = g_q;
            let back_st = params.a_st.tr_matvec(&g_ust);
            let back_ed = params.a_ed.tr_matvec(&g_ued);
            for c in 0..d {
                g_q[c] += back_st[c] + back_ed[c];
            }
            grads.p_q.add_outer(1.0, &g_q, &fwd.means[i]);
        }
        for (j, (g_h1, g_h2)) in video_side.into_iter().enumerate() {
            let x = &batch.clip_features[j];
            for k in 0..x.rows() {
                let (r1, r2) = (g_h1.row(k), g_h2.row(k));
                if r1.iter().any(|&v| v != 0.0) {
                    grads.p_v1.add_outer(1.0, r1, x.row(k));
                }
                if r2.iter().any(|&v| v != 0.0) {
                    grads.p_v2.add_outer(1.0, r2, x.row(k));
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss("gradient".into()));
        }
        Ok((terms, grads))
    }
}

/// Adds `g · ∂cos(a, b)/∂a` to `out`, given `cos = cos(a, b)`.
fn cosine_grad(a: &[f64], b: &[f64], cos: f64, g: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let inv = 1.0 / (na * nb);
    let self_term = cos / (na * na);
    for c in 0..a.len() {
        out[c] += g * (b[c] * inv - self_term * a[c]);
    }
}

/// Discrete state of the loss surface: chosen VR clips and the sign of every
/// hinge. Finite differences are only meaningful where it does not change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct KinkSignature {
    /// Argmax clip of each bundle whose relevance reaches an active hinge;
    /// `None` elsewhere, since a switch there leaves the loss smooth.
    argmax: Vec<Option<usize>>,
    hinges: Vec<bool>,
}

/// Loss terms together with the kink signature at `params`.
pub(crate) fn kink_signature(
    obj: &Objective,
    fwd: &BatchForward,
    batch: &TrainBatch,
    negs: &SampledNegatives,
) -> Result<(LossTerms, KinkSignature)> {
    let n = fwd.n();
    let mut g_vr = FeatureMatrix::zeros(n, n);
    let mut g_vcmr = FeatureMatrix::zeros(n, n);
    let mut hinges = Vec::new();
    let terms = obj.terms(fwd, batch, negs, Some((&mut g_vr, &mut g_vcmr)), Some(&mut hinges))?;
    let argmax = fwd
        .bundles
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let used = g_vr.data()[k] != 0.0 || g_vcmr.data()[k] != 0.0;
            used.then_some(b.vr_clip)
        })
        .collect();
    Ok((terms, KinkSignature { argmax, hinges }))
}
