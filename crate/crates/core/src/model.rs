//! Projection model and score heads.
//!
//! Queries are mean-pooled word features projected to `d` dimensions; clips
//! are projected twice, once for video-level matching and once for the
//! start/end heads. The start/end heads are bilinear: `raw_n = (A q)·h2_n / √d`,
//! made strictly positive with `softplus(raw) + 1e-6`, then normalised with a
//! softmax over clips.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, FeatureMatrix};
use crate::temporal::ClipGrid;

/// Lower bound on start/end logits so that `log o` is always defined.
pub const LOGIT_FLOOR: f64 = 1e-6;

/// Default trade-off between video and localization scores.
pub const DEFAULT_ALPHA: f64 = 20.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"VMRP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `d × D_q`
    pub p_q: FeatureMatrix,
    /// `d × D_v`
    pub p_v1: FeatureMatrix,
    /// `d × D_v`
    pub p_v2: FeatureMatrix,
    /// `d × d`
    pub a_st: FeatureMatrix,
    /// `d × d`
    pub a_ed: FeatureMatrix,
}

impl ModelParams {
    pub fn new(
        p_q: FeatureMatrix,
        p_v1: FeatureMatrix,
        p_v2: FeatureMatrix,
        a_st: FeatureMatrix,
        a_ed: FeatureMatrix,
    ) -> Result<Self> {
        let d = p_q.rows();
        let d_v = p_v1.cols();
        let ok = p_v1.rows() == d
            && p_v2.rows() == d
            && p_v2.cols() == d_v
            && a_st.rows() == d
            && a_st.cols() == d
            && a_ed.rows() == d
            && a_ed.cols() == d;
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent parameter shapes: P_q {}x{}, P_v1 {}x{}, P_v2 {}x{}, A_st {}x{}, A_ed {}x{}",
                p_q.rows(),
                p_q.cols(),
                p_v1.rows(),
                p_v1.cols(),
                p_v2.rows(),
                p_v2.cols(),
                a_st.rows(),
                a_st.cols(),
                a_ed.rows(),
                a_ed.cols()
            )));
        }
        Ok(Self {
            p_q,
            p_v1,
            p_v2,
            a_st,
            a_ed,
        })
    }

    /// Gaussian init with variance `1/fan_in`.
    pub fn random<R: Rng + ?Sized>(d: usize, d_q: usize, d_v: usize, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("valid std");
            let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            FeatureMatrix::new(rows, cols, data).expect("finite gaussian draws")
        };
        Self {
            p_q: draw(d, d_q),
            p_v1: draw(d, d_v),
            p_v2: draw(d, d_v),
            a_st: draw(d, d),
            a_ed: draw(d, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &FeatureMatrix| FeatureMatrix::zeros(m.rows(), m.cols());
        Self {
            p_q: z(&self.p_q),
            p_v1: z(&self.p_v1),
            p_v2: z(&self.p_v2),
            a_st: z(&self.a_st),
            a_ed: z(&self.a_ed),
        }
    }

    pub fn d(&self) -> usize {
        self.p_q.rows()
    }

    pub fn d_q(&self) -> usize {
        self.p_q.cols()
    }

    pub fn d_v(&self) -> usize {
        self.p_v1.cols()
    }

    /// The five matrices in checkpoint order.
    pub fn matrices(&self) -> [&FeatureMatrix; 5] {
        [&self.p_q, &self.p_v1, &self.p_v2, &self.a_st, &self.a_ed]
    }

    pub fn matrices_mut(&mut self) -> [&mut FeatureMatrix; 5] {
        [
            &mut self.p_q,
            &mut self.p_v1,
            &mut self.p_v2,
            &mut self.a_st,
            &mut self.a_ed,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for m in self.matrices() {
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            for &v in m.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + 8 * 5 + 4 * self.num_params());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let fail = |m: String| Error::format(origin, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| fail("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fail(format!("bad magic {magic:?}, expected \"VMRP\"")));
        }
        let version = read_u32(&mut r).map_err(|_| fail("truncated version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let names = ["P_q", "P_v1", "P_v2", "A_st", "A_ed"];
        let mut mats = Vec::with_capacity(5);
        for name in names {
            let rows = read_u32(&mut r).map_err(|_| fail(format!("{name}: truncated rows")))? as usize;
            let cols = read_u32(&mut r).map_err(|_| fail(format!("{name}: truncated cols")))? as usize;
            let mut raw = vec![0u8; rows * cols * 4];
            r.read_exact(&mut raw)
                .map_err(|_| fail(format!("{name}: truncated payload")))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            mats.push(FeatureMatrix::new(rows, cols, data).map_err(|e| fail(format!("{name}: {e}")))?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::io(origin, e))? != 0 {
            return Err(fail("trailing bytes after A_ed".into()));
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("five matrices");
        Self::new(next(), next(), next(), next(), next()).map_err(|e| fail(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f), path)
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuery {
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub h1: FeatureMatrix,
    pub h2: FeatureMatrix,
}

/// Scores of one (query, video) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub s_vr: f64,
    /// Clip attaining `s_vr`.
    pub vr_clip: usize,
    pub raw_st: Vec<f64>,
    pub raw_ed: Vec<f64>,
    pub o_st: Vec<f64>,
    pub o_ed: Vec<f64>,
    pub p_st: Vec<f64>,
    pub p_ed: Vec<f64>,
    pub log_p_st: Vec<f64>,
    pub log_p_ed: Vec<f64>,
    pub grid: ClipGrid,
}

pub fn encode_query(params: &ModelParams, word_features: &FeatureMatrix) -> Result<EncodedQuery> {
    if word_features.cols() != params.d_q() {
        return Err(Error::DimensionMismatch(format!(
            "word features have D_q={} but the model expects {}",
            word_features.cols(),
            params.d_q()
        )));
    }
    Ok(EncodedQuery {
        q: params.p_q.matvec(&word_features.mean_rows()),
    })
}

pub fn encode_video(params: &ModelParams, clip_features: &FeatureMatrix) -> Result<EncodedVideo> {
    if clip_features.cols() != params.d_v() {
        return Err(Error::DimensionMismatch(format!(
            "clip features have D_v={} but the model expects {}",
            clip_features.cols(),
            params.d_v()
        )));
    }
    Ok(EncodedVideo {
        h1: clip_features.project_rows(&params.p_v1),
        h2: clip_features.project_rows(&params.p_v2),
    })
}

/// Max clip cosine and the clip attaining it (first on ties).
pub fn score_vr_argmax(q: &EncodedQuery, ev: &EncodedVideo) -> Result<(f64, usize)> {
    let nq = norm(&q.q);
    if nq == 0.0 {
        return Err(Error::ZeroNorm {
            which: "encoded query",
            row: 0,
        });
    }
    let mut best: Option<(f64, usize)> = None;
    for (n, h) in ev.h1.row_iter().enumerate() {
        let nh = norm(h);
        if nh == 0.0 {
            continue;
        }
        let c = (dot(&q.q, h) / (nq * nh)).clamp(-1.0, 1.0);
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, n));
        }
    }
    best.ok_or(Error::ZeroNorm {
        which: "encoded video (all clips)",
        row: 0,
    })
}

/// Video-level score: maximum cosine between the query and any clip.
pub fn score_vr(q: &EncodedQuery, ev: &EncodedVideo) -> Result<f64> {
    score_vr_argmax(q, ev).map(|(s, _)| s)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(softmax(o), log_softmax(o))`
pub(crate) fn softmax_with_log(o: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = o.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let log_p: Vec<f64> = o.iter().map(|v| v - lse).collect();
    let p = log_p.iter().map(|v| v.exp()).collect();
    (p, log_p)
}

/// Start/end logits from an already projected query vector `u = A q`.
pub(crate) fn head_logits(u: &[f64], h2: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (u.len() as f64).sqrt();
    let raw: Vec<f64> = h2.row_iter().map(|h| dot(u, h) * scale).collect();
    let o = raw.iter().map(|&r| softplus(r) + LOGIT_FLOOR).collect();
    (raw, o)
}

pub(crate) fn bundle_from_parts(
    s_vr: f64,
    vr_clip: usize,
    u_st: &[f64],
    u_ed: &[f64],
    ev: &EncodedVideo,
    grid: ClipGrid,
) -> ScoreBundle {
    let (raw_st, o_st) = head_logits(u_st, &ev.h2);
    let (raw_ed, o_ed) = head_logits(u_ed, &ev.h2);
    let (p_st, log_p_st) = softmax_with_log(&o_st);
    let (p_ed, log_p_ed) = softmax_with_log(&o_ed);
    ScoreBundle {
        s_vr,
        vr_clip,
        raw_st,
        raw_ed,
        o_st,
        o_ed,
        p_st,
        p_ed,
        log_p_st,
        log_p_ed,
        grid,
    }
}

/// All scores for one (query, video) pair.
pub fn localization_heads(
    params: &ModelParams,
    q: &EncodedQuery,
    ev: &EncodedVideo,
    grid: ClipGrid,
) -> Result<ScoreBundle> {
    if ev.h2.rows() != grid.l_v {
        return Err(Error::DimensionMismatch(format!(
            "encoded video has {} clips, grid has {}",
            ev.h2.rows(),
            grid.l_v
        )));
    }
    let (s_vr, vr_clip) = score_vr_argmax(q, ev)?;
    let u_st = params.a_st.matvec(&q.q);
    let u_ed = params.a_ed.matvec(&q.q);
    Ok(bundle_from_parts(s_vr, vr_clip, &u_st, &u_ed, ev, grid))
}

impl ScoreBundle {
    fn check(&self, st: usize, ed: usize) -> Result<()> {
        let len = self.p_st.len();
        if st >= len {
            return Err(Error::IndexOutOfRange { index: st, len });
        }
        if ed >= len {
            return Err(Error::IndexOutOfRange { index: ed, len });
        }
        if st > ed {
            return Err(Error::InvalidInterval {
                t_st: st as f64,
                t_ed: ed as f64,
            });
        }
        Ok(())
    }

    pub fn score_tl(&self, st: usize, ed: usize) -> Result<f64> {
        self.check(st, ed)?;
        Ok(self.p_st[st] * self.p_ed[ed])
    }

    /// `log s_vcmr = log P_st + log P_ed + α s_vr`
    pub fn log_score_vcmr(&self, st: usize, ed: usize, alpha: f64) -> Result<f64> {
        self.check(st, ed)?;
        Ok(self.log_p_st[st] + self.log_p_ed[ed] + alpha * self.s_vr)
    }

    pub fn score_vcmr(&self, st: usize, ed: usize, alpha: f64) -> Result<f64> {
        self.log_score_vcmr(st, ed, alpha).map(f64::exp)
    }

    /// Segment relevance built from the pre-softmax logits:
    /// `log o_st + log o_ed + α s_vr`.
    pub fn relevance_vcmr(&self, st: usize, ed: usize, alpha: f64) -> Result<f64> {
        self.check(st, ed)?;
        Ok(self.o_st[st].ln() + self.o_ed[ed].ln() + alpha * self.s_vr)
    }
}

pub fn score_tl(bundle: &ScoreBundle, st: usize, ed: usize) -> Result<f64> {
    bundle.score_tl(st, ed)
}

pub fn score_vcmr(bundle: &ScoreBundle, st: usize, ed: usize, alpha: f64) -> Result<f64> {
    bundle.score_vcmr(st, ed, alpha)
}

pub fn relevance_vcmr(bundle: &ScoreBundle, st: usize, ed: usize, alpha: f64) -> Result<f64> {
    bundle.relevance_vcmr(st, ed, alpha)
}
