//! Potentially relevant pair detection and confidence scoring.
//!
//! Two queries form a potentially relevant (PR) pair when some phrase of one
//! is close to some phrase of the other in sentence-embedding space
//! (`max cos ≥ θ`). The pair's confidence is the clamped cosine between the
//! whole-sentence embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cosine, dot, norm, FeatureMatrix};
use crate::phrase::PhraseSet;
use crate::record::QueryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhraseKind {
    Sentence,
    Vp,
    NpVp,
}

/// Embeddings of a sentence and its phrases. Row 0 is always the sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: FeatureMatrix,
    labels: Vec<String>,
    kinds: Vec<PhraseKind>,
}

impl EmbeddingSet {
    pub fn new(vectors: FeatureMatrix, labels: Vec<String>, kinds: Vec<PhraseKind>) -> Result<Self> {
        if labels.len() != vectors.rows() || kinds.len() != vectors.rows() {
            return Err(Error::DimensionMismatch(format!(
                "embedding set has {} rows but {} labels and {} kinds",
                vectors.rows(),
                labels.len(),
                kinds.len()
            )));
        }
        if kinds[0] != PhraseKind::Sentence || kinds[1..].contains(&PhraseKind::Sentence) {
            return Err(Error::Config(
                "embedding set must hold exactly one sentence row, at index 0".into(),
            ));
        }
        Ok(Self {
            vectors,
            labels,
            kinds,
        })
    }

    pub fn sentence_only(text: impl Into<String>, embedding: Vec<f64>) -> Result<Self> {
        let d = embedding.len();
        Self::new(
            FeatureMatrix::new(1, d, embedding)?,
            vec![text.into()],
            vec![PhraseKind::Sentence],
        )
    }

    /// Attaches phrase labels to a `1 + |vps| [+ |np_vp|]` row matrix.
    pub fn from_phrase_set(ps: &PhraseSet, vectors: FeatureMatrix) -> Result<Self> {
        let with_vp = 1 + ps.vps.len();
        let full = with_vp + ps.np_vp.len();
        let rows = vectors.rows();
        if rows != with_vp && rows != full {
            return Err(Error::DimensionMismatch(format!(
                "phrase embeddings have {rows} rows; expected {with_vp} (sentence + VPs) or {full} (+ NP-VP)"
            )));
        }
        let mut labels = vec![ps.sentence.clone()];
        let mut kinds = vec![PhraseKind::Sentence];
        labels.extend(ps.vps.iter().cloned());
        kinds.extend(std::iter::repeat_n(PhraseKind::Vp, ps.vps.len()));
        if rows == full {
            labels.extend(ps.np_vp.iter().cloned());
            kinds.extend(std::iter::repeat_n(PhraseKind::NpVp, ps.np_vp.len()));
        }
        Self::new(vectors, labels, kinds)
    }

    pub fn vectors(&self) -> &FeatureMatrix {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kinds(&self) -> &[PhraseKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn sentence(&self) -> &[f64] {
        self.vectors.row(0)
    }

    /// Rows used by a detector variant.
    pub fn select(&self, phi: Phi) -> EmbeddingSet {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                matches!(
                    (phi, self.kinds[i]),
                    (_, PhraseKind::Sentence) | (Phi::Vp | Phi::NpVp, PhraseKind::Vp) | (Phi::NpVp, PhraseKind::NpVp)
                )
            })
            .collect();
        EmbeddingSet {
            vectors: self.vectors.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            kinds: idx.iter().map(|&i| self.kinds[i]).collect(),
        }
    }
}

/// Detector variant: which phrase rows take part in the max-cosine test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phi {
    #[serde(rename = "sent")]
    Sent,
    #[serde(rename = "vp")]
    Vp,
    #[serde(rename = "np-vp")]
    NpVp,
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phi::Sent => "sent",
            Phi::Vp => "vp",
            Phi::NpVp => "np-vp",
        })
    }
}

impl FromStr for Phi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sent" => Ok(Phi::Sent),
            "vp" => Ok(Phi::Vp),
            "np-vp" | "npvp" => Ok(Phi::NpVp),
            other => Err(Error::Config(format!("unknown detector `{other}` (sent|vp|np-vp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub phi: Phi,
    pub theta: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            phi: Phi::Vp,
            theta: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn new(phi: Phi, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {theta}")));
        }
        Ok(Self { phi, theta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    Positive,
    PotentiallyRelevant,
    Negative,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Positive => "positive",
            PairKind::PotentiallyRelevant => "relevant",
            PairKind::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub kind: PairKind,
    pub confidence: f64,
}

impl PairLabel {
    pub const POSITIVE: PairLabel = PairLabel {
        kind: PairKind::Positive,
        confidence: 1.0,
    };
    pub const NEGATIVE: PairLabel = PairLabel {
        kind: PairKind::Negative,
        confidence: 0.0,
    };

    pub fn relevant(confidence: f64) -> Self {
        Self {
            kind: PairKind::PotentiallyRelevant,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Labels keyed by ordered `(query, video)` batch positions.
pub type PairMap = BTreeMap<(usize, usize), PairLabel>;

/// Pairwise cosine similarities between the rows of two embedding sets.
pub fn cosine_matrix(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<FeatureMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    // squared norms: sqrt(s·s) == s exactly, so self-cosine is exactly 1
    let norms = |s: &EmbeddingSet, which: &'static str| -> Result<Vec<f64>> {
        s.vectors
            .row_iter()
            .enumerate()
            .map(|(row, r)| match dot(r, r) {
                n if n > 0.0 => Ok(n),
                _ => Err(Error::ZeroNorm { which, row }),
            })
            .collect()
    };
    let na = norms(a, "left embedding set")?;
    let nb = norms(b, "right embedding set")?;
    let mut out = Vec::with_capacity(a.len() * b.len());
    for (ra, &ma) in a.vectors.row_iter().zip(&na) {
        for (rb, &mb) in b.vectors.row_iter().zip(&nb) {
            out.push((dot(ra, rb) / (ma * mb).sqrt()).clamp(-1.0, 1.0));
        }
    }
    FeatureMatrix::new(a.len(), b.len(), out)
}

/// Pair detector: true iff the largest cosine between the configured rows
/// reaches `θ` (inclusive).
pub fn phi(q_i: &EmbeddingSet, q_j: &EmbeddingSet, cfg: &DetectorConfig) -> Result<bool> {
    let a = q_i.select(cfg.phi);
    let b = q_j.select(cfg.phi);
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet(format!("no rows for detector {}", cfg.phi)));
    }
    let m = cosine_matrix(&a, &b)?;
    let max = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max >= cfg.theta)
}

/// Confidence of a detected pair: `max(0, cos(sentence_i, sentence_j))`.
pub fn psi(q_i: &EmbeddingSet, q_j: &EmbeddingSet) -> Result<f64> {
    if q_i.dim() != q_j.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            q_i.dim(),
            q_j.dim()
        )));
    }
    if norm(q_i.sentence()) == 0.0 {
        return Err(Error::ZeroNorm {
            which: "left embedding set",
            row: 0,
        });
    }
    let c = cosine(q_i.sentence(), q_j.sentence()).ok_or(Error::ZeroNorm {
        which: "right embedding set",
        row: 0,
    })?;
    Ok(c.max(0.0))
}

/// Labels every ordered pair in a batch.
///
/// `(i, i)` is positive. Cross pairs on different videos are potentially
/// relevant (with confidence `psi`) when `phi` fires and negative otherwise.
/// Cross pairs on the same video get no label at all: they are neither safe
/// negatives nor PR pairs. Each unordered pair is scored once and stored in
/// both directions.
pub fn mine_pairs(batch: &[&QueryRecord], cfg: &DetectorConfig) -> Result<PairMap> {
    let selected: Vec<EmbeddingSet> = batch.iter().map(|q| q.phrases.select(cfg.phi)).collect();
    let mut out = PairMap::new();
    for (i, qi) in batch.iter().enumerate() {
        out.insert((i, i), PairLabel::POSITIVE);
        for (j, qj) in batch.iter().enumerate().skip(i + 1) {
            if qi.video_id == qj.video_id {
                continue;
            }
            let label = if phi_selected(&selected[i], &selected[j], cfg)? {
                PairLabel::relevant(psi(&qi.phrases, &qj.phrases)?)
            } else {
                PairLabel::NEGATIVE
            };
            out.insert((i, j), label);
            out.insert((j, i), label);
        }
    }
    Ok(out)
}

fn phi_selected(a: &EmbeddingSet, b: &EmbeddingSet, cfg: &DetectorConfig) -> Result<bool> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet(format!("no rows for detector {}", cfg.phi)));
    }
    let m = cosine_matrix(a, b)?;
    Ok(m.data().iter().any(|&c| c >= cfg.theta))
}

/// Labels used when no detector runs: diagonal positive, cross-video negative.
pub fn baseline_labels(batch: &[&QueryRecord]) -> PairMap {
    let mut out = PairMap::new();
    for (i, qi) in batch.iter().enumerate() {
        for (j, qj) in batch.iter().enumerate() {
            if i == j {
                out.insert((i, i), PairLabel::POSITIVE);
            } else if qi.video_id != qj.video_id {
                out.insert((i, j), PairLabel::NEGATIVE);
            }
        }
    }
    out
}

/// Deterministic hashed bag-of-words embedder, L2-normalised.
///
/// Stands in for a pretrained sentence encoder when none is available.
#[derive(Debug, Clone, Copy)]
pub struct HashedBowEmbedder {
    pub dim: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HashedBowEmbedder {
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for tok in text.split_whitespace() {
            let tok = tok.to_lowercase();
            let h = fnv1a(tok.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        if crate::matrix::normalize(&mut v) == 0.0 {
            return Err(Error::EmptySet(format!("no tokens to embed in {text:?}")));
        }
        Ok(v)
    }

    /// Sentence, VP and NP–VP rows for a phrase set.
    pub fn embed_phrase_set(&self, ps: &PhraseSet) -> Result<EmbeddingSet> {
        let texts: Vec<&String> = std::iter::once(&ps.sentence)
            .chain(&ps.vps)
            .chain(&ps.np_vp)
            .collect();
        let rows = texts
            .iter()
            .map(|t| self.embed(t))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::from_phrase_set(ps, FeatureMatrix::from_rows(&rows)?)
    }
}
