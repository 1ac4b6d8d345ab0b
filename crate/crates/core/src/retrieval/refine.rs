//! Re-ordering the head of a ranking with the spectral transform.
//!
//! The query and its `top_n` best gallery items form a small graph. After
//! transforming all `top_n + 1` features together, the head is re-sorted by
//! cosine between the transformed query and the transformed items. Items
//! past `top_n` keep their positions and scores.

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::matrix::{cosine, Matrix};
use crate::sft::sft_transform;

use super::rank::{sort_desc, RankedItem, RankingList};

pub const DEFAULT_TOP_N: usize = 50;

pub fn sft_refine(
    query: &[f64],
    ranking: &[RankedItem],
    gallery: &FeatureMatrix,
    top_n: usize,
    sigma: f64,
) -> Result<Vec<RankedItem>> {
    if top_n == 0 {
        return Err(SftError::Config("top_n must be at least 1".into()));
    }
    if query.len() != gallery.d() {
        return Err(SftError::Shape(format!(
            "query dimension {} differs from gallery dimension {}",
            query.len(),
            gallery.d()
        )));
    }
    let n = if top_n > ranking.len() {
        log::warn!("top_n {top_n} exceeds ranking length {}; clamping", ranking.len());
        ranking.len()
    } else {
        top_n
    };
    let mut out = ranking.to_vec();
    if n == 0 {
        return Ok(out);
    }

    let mut rows = Vec::with_capacity((n + 1) * query.len());
    rows.extend_from_slice(query);
    for item in &ranking[..n] {
        rows.extend_from_slice(gallery.row(item.gallery));
    }
    let graph = FeatureMatrix::from_matrix(Matrix::from_vec(n + 1, query.len(), rows)?)?;
    let moved = sft_transform(&graph, sigma)?;
    let q = moved.row(0);
    for (k, item) in out[..n].iter_mut().enumerate() {
        item.score = cosine(q, moved.row(k + 1));
    }
    sort_desc(&mut out[..n]);
    Ok(out)
}

/// [`sft_refine`] applied to every query.
pub fn sft_refine_all(
    queries: &FeatureMatrix,
    ranking: &RankingList,
    gallery: &FeatureMatrix,
    top_n: usize,
    sigma: f64,
) -> Result<RankingList> {
    if ranking.num_queries() != queries.n() {
        return Err(SftError::Shape(format!(
            "ranking has {} queries, features have {}",
            ranking.num_queries(),
            queries.n()
        )));
    }
    let shortest = ranking.queries.iter().map(Vec::len).min().unwrap_or(0);
    if top_n > shortest {
        log::warn!("top_n {top_n} exceeds the shortest ranking ({shortest}); clamping per query");
    }
    let refined = ranking
        .queries
        .iter()
        .enumerate()
        .map(|(q, items)| {
            let n = top_n.min(items.len()).max(1);
            sft_refine(queries.row(q), items, gallery, n, sigma)
        })
        .collect::<Result<_>>()?;
    Ok(RankingList { queries: refined })
}
