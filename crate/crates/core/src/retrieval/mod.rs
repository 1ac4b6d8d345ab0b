//! Ranking, evaluation and re-ranking of a gallery against queries.

pub mod kreciprocal;
pub mod metrics;
pub mod rank;
pub mod refine;

pub use kreciprocal::{k_reciprocal_distances, k_reciprocal_rerank, KReciprocalDistances, KReciprocalParams};
pub use metrics::{average_precision, evaluate, ConfigEcho, EvalReport, CMC_RANKS};
pub use rank::{cosine_scores, rank, RankedItem, RankingList};
pub use refine::{sft_refine, sft_refine_all, DEFAULT_TOP_N};

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::manifest::{DatasetManifest, SampleTag};

/// Query and gallery features with their identity/camera tags.
#[derive(Clone, Debug)]
pub struct RetrievalSet {
    pub queries: FeatureMatrix,
    pub gallery: FeatureMatrix,
    pub query_tags: Vec<SampleTag>,
    pub gallery_tags: Vec<SampleTag>,
}

impl RetrievalSet {
    /// Splits `features`, one row per manifest record, into the query and
    /// gallery sets.
    pub fn from_manifest(features: &FeatureMatrix, manifest: &DatasetManifest) -> Result<Self> {
        manifest.check_paired(features)?;
        let split = manifest.retrieval_split();
        Ok(RetrievalSet {
            queries: features.select_rows(&split.query_rows)?,
            gallery: features.select_rows(&split.gallery_rows)?,
            query_tags: split.query,
            gallery_tags: split.gallery,
        })
    }

    pub fn rank(&self) -> Result<RankingList> {
        rank(&self.queries, &self.gallery, &self.query_tags, &self.gallery_tags)
    }

    pub fn evaluate(&self, ranking: &RankingList, config: ConfigEcho) -> Result<EvalReport> {
        evaluate(ranking, &self.query_tags, &self.gallery_tags, config)
    }

    pub fn refine(&self, ranking: &RankingList, top_n: usize, sigma: f64) -> Result<RankingList> {
        sft_refine_all(&self.queries, ranking, &self.gallery, top_n, sigma)
    }

    pub fn k_reciprocal(&self, params: &KReciprocalParams) -> Result<RankingList> {
        k_reciprocal_rerank(
            &self.queries,
            &self.gallery,
            &self.query_tags,
            &self.gallery_tags,
            params,
        )
    }
}
