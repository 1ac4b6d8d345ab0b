//! Average precision, mAP and CMC under the cross-camera protocol.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::manifest::SampleTag;

use super::rank::RankingList;

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

/// Settings that produced a report, echoed into it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    pub methods: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Accuracy at each rank in [`CMC_RANKS`].
    pub cmc: BTreeMap<usize, f64>,
    pub per_query_ap: Vec<f64>,
    pub num_queries: usize,
    pub config: ConfigEcho,
}

impl EvalReport {
    pub fn cmc_at(&self, rank: usize) -> f64 {
        self.cmc[&rank]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SftError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| SftError::io(path, e))
    }
}

/// Mean over relevant positions `k` of the precision at `k`; `None` when
/// nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, _) in relevant.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (k + 1) as f64;
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Relevance of each ranked item; junk items are skipped.
fn relevance(items: &[super::rank::RankedItem], query: &SampleTag, gallery_tags: &[SampleTag]) -> Vec<bool> {
    items
        .iter()
        .map(|it| &gallery_tags[it.gallery])
        .filter(|g| !g.is_junk_for(query))
        .map(|g| g.is_match_for(query))
        .collect()
}

pub fn evaluate(
    ranking: &RankingList,
    query_tags: &[SampleTag],
    gallery_tags: &[SampleTag],
    config: ConfigEcho,
) -> Result<EvalReport> {
    if ranking.num_queries() != query_tags.len() {
        return Err(SftError::Shape(format!(
            "ranking has {} queries, manifest has {}",
            ranking.num_queries(),
            query_tags.len()
        )));
    }
    let mut per_query_ap = Vec::with_capacity(query_tags.len());
    let mut cmc_hits = [0usize; CMC_RANKS.len()];
    for (qi, (items, qt)) in ranking.queries.iter().zip(query_tags).enumerate() {
        if let Some(bad) = items.iter().find(|it| it.gallery >= gallery_tags.len()) {
            return Err(SftError::Shape(format!(
                "query {qi} ranks gallery item {} of {}",
                bad.gallery,
                gallery_tags.len()
            )));
        }
        let rel = relevance(items, qt, gallery_tags);
        let ap = average_precision(&rel).ok_or(SftError::NoRelevant(qi))?;
        per_query_ap.push(ap);
        let first = rel.iter().position(|&r| r).expect("ap implies a hit");
        for (h, &r) in cmc_hits.iter_mut().zip(&CMC_RANKS) {
            if first < r {
                *h += 1;
            }
        }
    }
    let nq = per_query_ap.len();
    let denom = nq.max(1) as f64;
    Ok(EvalReport {
        map: per_query_ap.iter().sum::<f64>() / denom,
        cmc: CMC_RANKS
            .iter()
            .zip(cmc_hits)
            .map(|(&r, h)| (r, h as f64 / denom))
            .collect(),
        per_query_ap,
        num_queries: nq,
        config,
    })
}
