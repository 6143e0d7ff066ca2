use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::pairdet::{PairKind, PairMap};

/// Draws a negative uniformly from the `n_pool` highest-valued entries whose
/// kind is `Negative`. Ties in value are broken by lower index first.
pub fn sample_hard_negative<R: Rng + ?Sized>(
    values: &[f64],
    kinds: &[Option<PairKind>],
    n_pool: usize,
    rng: &mut R,
) -> Result<usize> {
    if values.len() != kinds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} labels",
            values.len(),
            kinds.len()
        )));
    }
    if n_pool == 0 {
        return Err(Error::Config("n_pool must be >= 1".into()));
    }
    let mut cand: Vec<usize> = (0..values.len())
        .filter(|&k| kinds[k] == Some(PairKind::Negative))
        .collect();
    if cand.is_empty() {
        return Err(Error::NoNegative);
    }
    cand.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let pool = n_pool.min(cand.len());
    Ok(cand[rng.random_range(0..pool)])
}

/// Sampled negative for every query row and video column of a batch.
/// `None` where no negative candidate exists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Negatives {
    /// `query_side[i]`: video index `ī` for query `i`.
    pub query_side: Vec<Option<usize>>,
    /// `video_side[j]`: query index `j̄` for video `j`.
    pub video_side: Vec<Option<usize>>,
}

impl Negatives {
    /// Samples rows first (in index order), then columns.
    pub fn sample<R: Rng + ?Sized>(r: &FeatureMatrix, labels: &PairMap, n_pool: usize, rng: &mut R) -> Result<Self> {
        let n = r.rows();
        let kind = |i: usize, j: usize| labels.get(&(i, j)).map(|l| l.kind);
        let mut query_side = Vec::with_capacity(n);
        for i in 0..n {
            let kinds: Vec<_> = (0..n).map(|j| kind(i, j)).collect();
            query_side.push(optional(sample_hard_negative(r.row(i), &kinds, n_pool, rng))?);
        }
        let mut video_side = Vec::with_capacity(n);
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| r.get(i, j)).collect();
            let kinds: Vec<_> = (0..n).map(|i| kind(i, j)).collect();
            video_side.push(optional(sample_hard_negative(&col, &kinds, n_pool, rng))?);
        }
        Ok(Self {
            query_side,
            video_side,
        })
    }
}

fn optional(r: Result<usize>) -> Result<Option<usize>> {
    match r {
        Ok(k) => Ok(Some(k)),
        Err(Error::NoNegative) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_of_one_is_argmax_over_negatives() {
        let vals = [0.9, 0.8, 0.7, 0.95];
        let kinds = [
            Some(PairKind::Positive),
            Some(PairKind::Negative),
            Some(PairKind::Negative),
            Some(PairKind::PotentiallyRelevant),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_hard_negative(&vals, &kinds, 1, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn unlabeled_and_relevant_are_never_drawn() {
        let vals = [0.1, 0.9, 0.8, 0.2];
        let kinds = [
            Some(PairKind::Negative),
            None,
            Some(PairKind::PotentiallyRelevant),
            Some(PairKind::Negative),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [0usize; 4];
        for _ in 0..2000 {
            seen[sample_hard_negative(&vals, &kinds, 4, &mut rng).unwrap()] += 1;
        }
        assert_eq!(seen[1] + seen[2], 0);
        assert!(seen[0] > 800 && seen[3] > 800, "{seen:?}");
    }

    #[test]
    fn no_negative_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = sample_hard_negative(&[0.5], &[Some(PairKind::Positive)], 1, &mut rng);
        assert!(matches!(err, Err(Error::NoNegative)));
    }

    #[test]
    fn pool_twenty_of_128_stays_in_top_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..128).map(|_| rng.random::<f64>()).collect();
        let mut kinds = vec![Some(PairKind::Negative); 128];
        kinds[7] = Some(PairKind::Positive);
        let mut order: Vec<usize> = (0..128).filter(|&k| k != 7).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let top: std::collections::HashSet<usize> = order[..20].iter().copied().collect();
        let mut hits = std::collections::HashSet::new();
        for _ in 0..100_000 {
            let k = sample_hard_negative(&vals, &kinds, 20, &mut rng).unwrap();
            assert!(top.contains(&k));
            hits.insert(k);
        }
        assert_eq!(hits.len(), 20);
    }
}
