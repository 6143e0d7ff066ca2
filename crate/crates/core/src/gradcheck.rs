//! Finite-difference check of the hand-written gradients.
//!
//! Every coordinate of every parameter matrix is perturbed by `±h` and the
//! central difference of the objective is compared with the analytic
//! gradient. Hard negatives are sampled once and frozen. Hinges and the VR
//! argmax make the loss piecewise smooth: when the `±h` probes land in a
//! different piece than the base point the step is shrunk, and a coordinate
//! that still straddles a kink at `h/100` is skipped rather than compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{
    kink_signature, sample_negatives, ExperimentCondition, LossTerm, Objective, SampledNegatives, TrainBatch,
};
use crate::matrix::FeatureMatrix;
use crate::model::ModelParams;
use crate::pairdet::{PairLabel, PairMap};
use crate::temporal::ClipGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub d: usize,
    pub d_q: usize,
    pub d_v: usize,
    /// Pairs per batch.
    pub n: usize,
    pub l_v: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Largest tolerated fraction of coordinates skipped at kinks.
    pub max_skip_fraction: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            d: 16,
            d_q: 24,
            d_v: 32,
            n: 6,
            l_v: 6,
            h: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            max_skip_fraction: 0.05,
        }
    }
}

/// Outcome of one (condition, objective, seed) check.
#[derive(Debug, Clone, Serialize)]
pub struct GradcheckOutcome {
    pub condition: String,
    /// `total` or a single term name.
    pub objective: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// A random small problem with planted potentially relevant pairs.
pub struct Problem {
    pub params: ModelParams,
    pub batch: TrainBatch,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    FeatureMatrix::new(rows, cols, data).expect("finite gaussian draws")
}

pub fn random_problem(cfg: &GradcheckConfig, seed: u64) -> Result<Problem> {
    if cfg.n < 4 {
        return Err(Error::Config("gradcheck needs at least 4 pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::random(cfg.d, cfg.d_q, cfg.d_v, &mut rng);
    let grid = ClipGrid::new(1.0, cfg.l_v, 1, cfg.l_v)?;
    let mut words = Vec::with_capacity(cfg.n);
    let mut clips = Vec::with_capacity(cfg.n);
    let mut gts = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let n_words = rng.random_range(2..6);
        words.push(gaussian_matrix(n_words, cfg.d_q, &mut rng));
        clips.push(gaussian_matrix(cfg.l_v, cfg.d_v, &mut rng));
        let st = rng.random_range(0..cfg.l_v);
        let ed = rng.random_range(st..cfg.l_v);
        gts.push((st, ed));
    }
    let mut labels = PairMap::new();
    for i in 0..cfg.n {
        for j in 0..cfg.n {
            labels.insert((i, j), if i == j { PairLabel::POSITIVE } else { PairLabel::NEGATIVE });
        }
    }
    // (0,1) and (2,3) share content; one orientation of a third pair is
    // given alone to exercise asymmetric maps.
    for &(a, b) in &[(0, 1), (2, 3)] {
        let c = rng.random_range(0.3..1.0);
        labels.insert((a, b), PairLabel::relevant(c));
        labels.insert((b, a), PairLabel::relevant(c));
    }
    labels.insert((0, 3), PairLabel::relevant(rng.random_range(0.3..1.0)));
    let batch = TrainBatch::new(words, clips, vec![grid; cfg.n], gts, labels)?;
    Ok(Problem { params, batch })
}

/// Flat view `(matrix, index)` over every parameter coordinate.
fn coordinates(params: &ModelParams) -> Vec<(usize, usize)> {
    params
        .matrices()
        .iter()
        .enumerate()
        .flat_map(|(m, mat)| (0..mat.data().len()).map(move |k| (m, k)))
        .collect()
}

fn perturbed(params: &ModelParams, (m, k): (usize, usize), delta: f64) -> ModelParams {
    let mut p = params.clone();
    p.matrices_mut()[m].data_mut()[k] += delta;
    p
}

/// Compares analytic and numeric gradients of `obj` on one problem.
/// Returns `(max relative error, checked, skipped)`.
pub fn check_objective(
    cfg: &GradcheckConfig,
    obj: &Objective,
    problem: &Problem,
    negs: &SampledNegatives,
) -> Result<(f64, usize, usize)> {
    Ok(check_objectives(cfg, std::slice::from_ref(obj), problem, negs)?[0])
}

/// [`check_objective`] for several objectives sharing one problem; each
/// perturbed forward pass is computed once and reused by all of them.
pub fn check_objectives(
    cfg: &GradcheckConfig,
    objs: &[Objective],
    problem: &Problem,
    negs: &SampledNegatives,
) -> Result<Vec<(f64, usize, usize)>> {
    let Some(alpha) = objs.first().map(|o| o.alpha) else {
        return Ok(Vec::new());
    };
    if objs.iter().any(|o| o.alpha != alpha) {
        return Err(Error::Config("objectives checked together must share alpha".into()));
    }
    let forward = |p: &ModelParams| crate::loss::forward(p, &problem.batch, alpha);
    let base_fwd = forward(&problem.params)?;
    let mut analytic = Vec::with_capacity(objs.len());
    let mut base_sig = Vec::with_capacity(objs.len());
    for obj in objs {
        let (_, g) = obj.backward(&problem.params, &problem.batch, &base_fwd, negs)?;
        analytic.push(g.matrices().iter().flat_map(|m| m.data().iter().copied()).collect::<Vec<f64>>());
        base_sig.push(kink_signature(obj, &base_fwd, &problem.batch, negs)?.1);
    }
    let coords = coordinates(&problem.params);
    let per_coord = coords
        .par_iter()
        .enumerate()
        .map(|(flat, &c)| {
            let mut errs: Vec<Option<f64>> = vec![None; objs.len()];
            // Near a kink, shrink the step until both probes stay on the
            // base side of it.
            for step in [cfg.h, cfg.h / 10.0, cfg.h / 100.0] {
                if errs.iter().all(Option::is_some) {
                    break;
                }
                let fp = forward(&perturbed(&problem.params, c, step))?;
                let fm = forward(&perturbed(&problem.params, c, -step))?;
                for (k, obj) in objs.iter().enumerate() {
                    if errs[k].is_some() {
                        continue;
                    }
                    let (tp, sp) = kink_signature(obj, &fp, &problem.batch, negs)?;
                    let (tm, sm) = kink_signature(obj, &fm, &problem.batch, negs)?;
                    if sp != base_sig[k] || sm != base_sig[k] {
                        continue;
                    }
                    let numeric = (obj.total(&tp) - obj.total(&tm)) / (2.0 * step);
                    let a = analytic[k][flat];
                    let denom = a.abs().max(numeric.abs()).max(cfg.floor);
                    errs[k] = Some((a - numeric).abs() / denom);
                }
            }
            Ok(errs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![(0.0f64, 0usize, 0usize); objs.len()];
    for errs in per_coord {
        for (o, e) in out.iter_mut().zip(errs) {
            match e {
                Some(e) => {
                    o.0 = o.0.max(e);
                    o.1 += 1;
                }
                None => o.2 += 1,
            }
        }
    }
    Ok(out)
}

/// Objectives exercised for a condition: the weighted total, then each term
/// the condition switches on.
pub fn objectives_for(cond: ExperimentCondition) -> Vec<(String, Objective)> {
    let obj = Objective::for_condition(cond);
    let mut out = vec![("total".to_string(), obj)];
    for term in LossTerm::ALL {
        if obj.weights.coefficient(term) != 0.0 {
            out.push((term.name().to_string(), obj.isolate(term)));
        }
    }
    out
}

/// Runs every condition of the grid over `seeds` seeds.
pub fn run(cfg: &GradcheckConfig, seeds: &[u64]) -> Result<Vec<GradcheckOutcome>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let problem = random_problem(cfg, seed)?;
        let fwd = crate::loss::forward(&problem.params, &problem.batch, crate::model::DEFAULT_ALPHA)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let negs = sample_negatives(&fwd, &problem.batch.labels, 2, &mut rng)?;
        let jobs: Vec<(ExperimentCondition, String, Objective)> = ExperimentCondition::grid()
            .into_iter()
            .flat_map(|cond| objectives_for(cond).into_iter().map(move |(name, obj)| (cond, name, obj)))
            .collect();
        let objs: Vec<Objective> = jobs.iter().map(|j| j.2).collect();
        let results = check_objectives(cfg, &objs, &problem, &negs)?;
        for ((cond, name, _), (max_rel_err, checked, skipped)) in jobs.into_iter().zip(results) {
            let total = checked + skipped;
            let passed = max_rel_err < cfg.tolerance && (skipped as f64) <= cfg.max_skip_fraction * total as f64;
            out.push(GradcheckOutcome {
                condition: cond.to_string(),
                objective: name,
                seed,
                max_rel_err,
                checked,
                skipped,
                passed,
            });
        }
    }
    Ok(out)
}
