//! k-reciprocal encoding re-ranking (Zhong et al., CVPR 2017), used as a
//! comparator.
//!
//! Queries and gallery are pooled into one graph. Distances are `1 − cos`,
//! each row scaled by its maximum. A sample's k-reciprocal set is expanded
//! with the half-size reciprocal sets of its members when they overlap by
//! more than two thirds, encoded as `exp(−d)` weights, and smoothed by
//! averaging over the `k2` nearest neighbours. The final distance mixes the
//! scaled original distance with the Jaccard distance of the encodings.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::manifest::SampleTag;
use crate::matrix::Matrix;
use crate::sft::{gram_symmetric, normalize_rows};

use super::rank::{check_tags, RankedItem, RankingList};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReciprocalParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for KReciprocalParams {
    fn default() -> Self {
        KReciprocalParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl KReciprocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > self.k2 && self.k2 >= 1) {
            return Err(SftError::Config(format!(
                "need k1 > k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SftError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Query × gallery distance matrices.
#[derive(Clone, Debug)]
pub struct KReciprocalDistances {
    /// Row-max-scaled `1 − cos`.
    pub original: Matrix,
    pub jaccard: Matrix,
    pub combined: Matrix,
    /// Raw cosine, used to break exact distance ties.
    pub cosine: Matrix,
}

/// Indices sorted by distance, ties to the lower index.
fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal));
    idx
}

/// Members `j` of the first `k + 1` neighbours of `i` that also hold `i`
/// among their own first `k + 1`, in neighbour order.
fn reciprocal(ranks: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    let take = (k + 1).min(ranks[i].len());
    ranks[i][..take]
        .iter()
        .copied()
        .filter(|&j| ranks[j][..take.min(ranks[j].len())].contains(&i))
        .collect()
}

pub fn k_reciprocal_distances(
    queries: &FeatureMatrix,
    gallery: &FeatureMatrix,
    params: &KReciprocalParams,
) -> Result<KReciprocalDistances> {
    params.validate()?;
    if queries.d() != gallery.d() {
        return Err(SftError::Shape(format!(
            "query dimension {} differs from gallery dimension {}",
            queries.d(),
            gallery.d()
        )));
    }
    let (nq, ng) = (queries.n(), gallery.n());
    let total = nq + ng;
    let mut pooled = queries.matrix().as_slice().to_vec();
    pooled.extend_from_slice(gallery.matrix().as_slice());
    let (unit, _) = normalize_rows(&Matrix::from_vec(total, queries.d(), pooled)?)?;
    let cos = gram_symmetric(&unit);

    let mut dist = Matrix::zeros(total, total);
    for i in 0..total {
        let row = dist.row_mut(i);
        for (j, d) in row.iter_mut().enumerate() {
            *d = (1.0 - cos[(i, j)]).max(0.0);
        }
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|d| *d /= max);
        }
    }
    let ranks: Vec<Vec<usize>> = (0..total).map(|i| argsort(dist.row(i))).collect();

    let half = (params.k1 as f64 / 2.0).round_ties_even() as usize;
    let mut encoding = Matrix::zeros(total, total);
    for i in 0..total {
        let base = reciprocal(&ranks, i, params.k1);
        let mut expanded = base.clone();
        for &c in &base {
            let cand = reciprocal(&ranks, c, half);
            let shared = cand.iter().filter(|j| base.contains(j)).count();
            if 3 * shared > 2 * cand.len() {
                expanded.extend(cand);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        let weights: Vec<f64> = expanded.iter().map(|&j| (-dist[(i, j)]).exp()).collect();
        let sum: f64 = weights.iter().sum();
        for (&j, w) in expanded.iter().zip(weights) {
            encoding[(i, j)] = w / sum;
        }
    }

    if params.k2 > 1 {
        let mut smoothed = Matrix::zeros(total, total);
        for (i, order) in ranks.iter().enumerate() {
            let nb = &order[..params.k2.min(total)];
            let out = smoothed.row_mut(i);
            for &j in nb {
                for (o, v) in out.iter_mut().zip(encoding.row(j)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= nb.len() as f64);
        }
        encoding = smoothed;
    }

    let mut original = Matrix::zeros(nq, ng);
    let mut jaccard = Matrix::zeros(nq, ng);
    let mut combined = Matrix::zeros(nq, ng);
    let mut raw_cos = Matrix::zeros(nq, ng);
    for q in 0..nq {
        let vq = encoding.row(q);
        for g in 0..ng {
            let vg = encoding.row(nq + g);
            let overlap: f64 = vq
                .iter()
                .zip(vg)
                .filter(|(a, _)| **a != 0.0)
                .map(|(a, b)| a.min(*b))
                .sum();
            let jd = 1.0 - overlap / (2.0 - overlap);
            let od = dist[(q, nq + g)];
            original[(q, g)] = od;
            jaccard[(q, g)] = jd;
            combined[(q, g)] = params.lambda * od + (1.0 - params.lambda) * jd;
            raw_cos[(q, g)] = cos[(q, nq + g)];
        }
    }
    Ok(KReciprocalDistances {
        original,
        jaccard,
        combined,
        cosine: raw_cos,
    })
}

/// Ranks by ascending combined distance; the reported score is
/// `1 − distance`. Exact ties fall back to cosine, then gallery index, so
/// `lambda = 1` reproduces [`super::rank`].
pub fn k_reciprocal_rerank(
    queries: &FeatureMatrix,
    gallery: &FeatureMatrix,
    query_tags: &[SampleTag],
    gallery_tags: &[SampleTag],
    params: &KReciprocalParams,
) -> Result<RankingList> {
    check_tags(queries, gallery, query_tags, gallery_tags)?;
    let d = k_reciprocal_distances(queries, gallery, params)?;
    let mut out = Vec::with_capacity(queries.n());
    for (qi, qt) in query_tags.iter().enumerate() {
        let mut idx: Vec<usize> = (0..gallery.n()).filter(|&g| !gallery_tags[g].is_junk_for(qt)).collect();
        if idx.is_empty() {
            return Err(SftError::NoValidGallery(qi));
        }
        idx.sort_by(|&a, &b| {
            let (da, db) = (d.combined[(qi, a)], d.combined[(qi, b)]);
            da.partial_cmp(&db).unwrap_or(Ordering::Equal).then_with(|| {
                d.cosine[(qi, b)]
                    .partial_cmp(&d.cosine[(qi, a)])
                    .unwrap_or(Ordering::Equal)
            })
        });
        out.push(
            idx.into_iter()
                .map(|g| RankedItem {
                    gallery: g,
                    score: 1.0 - d.combined[(qi, g)],
                })
                .collect(),
        );
    }
    Ok(RankingList { queries: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_checks() {
        let ok = KReciprocalParams::default();
        assert!(ok.validate().is_ok());
        assert!(KReciprocalParams { k1: 3, k2: 3, ..ok }.validate().is_err());
        assert!(KReciprocalParams { k2: 0, ..ok }.validate().is_err());
        assert!(KReciprocalParams { lambda: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn reciprocal_sets_are_mutual() {
        let ranks = vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 1, 0]];
        assert_eq!(reciprocal(&ranks, 0, 1), vec![0]);
        assert_eq!(reciprocal(&ranks, 1, 1), vec![1, 2]);
    }
}
