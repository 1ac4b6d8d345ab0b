//! Cosine ranking of a gallery for each query.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::manifest::SampleTag;
use crate::sft::normalize_rows;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedItem {
    /// Index into the gallery.
    pub gallery: usize,
    pub score: f64,
}

/// Gallery items for every query, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingList {
    pub queries: Vec<Vec<RankedItem>>,
}

impl RankingList {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Header plus one `query_index rank gallery_index score` line per
    /// entry; ranks start at 1.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query_index\trank\tgallery_index\tscore\n");
        for (q, items) in self.queries.iter().enumerate() {
            for (r, item) in items.iter().enumerate() {
                let _ = writeln!(out, "{q}\t{}\t{}\t{}", r + 1, item.gallery, item.score);
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == "query_index\trank\tgallery_index\tscore" => {}
            _ => return Err(SftError::Parse("missing ranking header".into())),
        }
        let mut queries: Vec<Vec<RankedItem>> = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| SftError::Parse(format!("line {}: {what}", no + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let q: usize = fields[0].parse().map_err(|_| bad("bad query_index"))?;
            let rank: usize = fields[1].parse().map_err(|_| bad("bad rank"))?;
            let gallery: usize = fields[2].parse().map_err(|_| bad("bad gallery_index"))?;
            let score: f64 = fields[3].parse().map_err(|_| bad("bad score"))?;
            if q > queries.len() {
                return Err(bad("query indices must be contiguous"));
            }
            if q == queries.len() {
                queries.push(Vec::new());
            }
            let items = &mut queries[q];
            if rank != items.len() + 1 {
                return Err(bad("ranks must be consecutive from 1"));
            }
            items.push(RankedItem { gallery, score });
        }
        Ok(RankingList { queries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SftError::io(path, e))?;
        Self::from_tsv(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| SftError::io(path, e))
    }
}

/// Descending by score; the sort is stable, so equal scores keep their
/// incoming order.
pub(crate) fn sort_desc(items: &mut [RankedItem]) {
    items.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
}

pub(crate) fn check_tags(
    queries: &FeatureMatrix,
    gallery: &FeatureMatrix,
    query_tags: &[SampleTag],
    gallery_tags: &[SampleTag],
) -> Result<()> {
    if queries.d() != gallery.d() {
        return Err(SftError::Shape(format!(
            "query dimension {} differs from gallery dimension {}",
            queries.d(),
            gallery.d()
        )));
    }
    if query_tags.len() != queries.n() || gallery_tags.len() != gallery.n() {
        return Err(SftError::Manifest(format!(
            "{} query / {} gallery tags for {} / {} feature rows",
            query_tags.len(),
            gallery_tags.len(),
            queries.n(),
            gallery.n()
        )));
    }
    Ok(())
}

/// Cosine similarity of every query to every gallery item.
pub fn cosine_scores(queries: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<crate::Matrix> {
    let (q, _) = normalize_rows(queries.matrix())?;
    let (g, _) = normalize_rows(gallery.matrix())?;
    Ok(q.matmul_t(&g))
}

/// Orders each query's gallery by cosine similarity, dropping junk items
/// (same identity and same camera as the query). Ties go to the lower
/// gallery index.
pub fn rank(
    queries: &FeatureMatrix,
    gallery: &FeatureMatrix,
    query_tags: &[SampleTag],
    gallery_tags: &[SampleTag],
) -> Result<RankingList> {
    check_tags(queries, gallery, query_tags, gallery_tags)?;
    let scores = cosine_scores(queries, gallery)?;
    let mut out = Vec::with_capacity(queries.n());
    for (qi, qt) in query_tags.iter().enumerate() {
        let mut items: Vec<RankedItem> = (0..gallery.n())
            .filter(|&g| !gallery_tags[g].is_junk_for(qt))
            .map(|g| RankedItem {
                gallery: g,
                score: scores[(qi, g)],
            })
            .collect();
        if items.is_empty() {
            return Err(SftError::NoValidGallery(qi));
        }
        sort_desc(&mut items);
        out.push(items);
    }
    Ok(RankingList { queries: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(identity: u32, camera: u32) -> SampleTag {
        SampleTag { identity, camera }
    }

    #[test]
    fn exact_copy_ranks_first() {
        let q = FeatureMatrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let g = FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.3, -1.0, 2.0], [0.0, 0.0, 1.0]]).unwrap();
        let r = rank(&q, &g, &[tag(0, 0)], &[tag(1, 1), tag(0, 1), tag(2, 0)]).unwrap();
        assert_eq!(r.queries[0][0].gallery, 1);
        assert!((r.queries[0][0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn junk_is_removed_and_all_junk_is_an_error() {
        let q = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let g = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let r = rank(&q, &g, &[tag(0, 0)], &[tag(0, 0), tag(0, 1)]).unwrap();
        assert_eq!(r.queries[0].len(), 1);
        assert_eq!(r.queries[0][0].gallery, 1);
        assert!(matches!(
            rank(&q, &g, &[tag(0, 0)], &[tag(0, 0), tag(0, 0)]),
            Err(SftError::NoValidGallery(0))
        ));
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let q = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let g = FeatureMatrix::from_rows(&[[0.0, 1.0], [2.0, 0.0], [0.0, -3.0], [1.0, 0.0]]).unwrap();
        let tags = [tag(1, 0), tag(1, 0), tag(1, 0), tag(1, 0)];
        let r = rank(&q, &g, &[tag(0, 0)], &tags).unwrap();
        let order: Vec<usize> = r.queries[0].iter().map(|i| i.gallery).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn tsv_round_trip() {
        let r = RankingList {
            queries: vec![
                vec![
                    RankedItem {
                        gallery: 2,
                        score: 0.1 + 0.2,
                    },
                    RankedItem {
                        gallery: 0,
                        score: -1e-300,
                    },
                ],
                vec![RankedItem { gallery: 1, score: 1.0 }],
            ],
        };
        assert_eq!(RankingList::from_tsv(&r.to_tsv()).unwrap(), r);
        assert!(RankingList::from_tsv("q\tr\n").is_err());
        assert!(RankingList::from_tsv("query_index\trank\tgallery_index\tscore\n0\t2\t0\t1\n").is_err());
    }

    #[test]
    fn errors() {
        let q = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let g = FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            rank(&q, &g, &[tag(0, 0)], &[tag(0, 1)]),
            Err(SftError::Shape(_))
        ));
        let zero = FeatureMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(
            rank(&q, &zero, &[tag(0, 0)], &[tag(0, 1)]),
            Err(SftError::ZeroNormRow { row: 0 })
        ));
    }
}
