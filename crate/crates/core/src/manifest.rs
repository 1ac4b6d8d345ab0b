//! Per-sample metadata: identity, camera and split.
//!
//! On disk a manifest is UTF-8 TSV with the header
//! `sample_id<TAB>identity<TAB>camera<TAB>split`; record `i` describes row `i`
//! of the paired feature matrix.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;

pub const MANIFEST_HEADER: &str = "sample_id\tidentity\tcamera\tsplit";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(SftError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub identity: u32,
    pub camera: u32,
    pub split: Split,
}

/// Identity and camera of one retrieval sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleTag {
    pub identity: u32,
    pub camera: u32,
}

impl SampleTag {
    /// Same identity seen by the same camera: excluded from evaluation.
    pub fn is_junk_for(&self, query: &SampleTag) -> bool {
        self.identity == query.identity && self.camera == query.camera
    }

    /// Same identity from a different camera.
    pub fn is_match_for(&self, query: &SampleTag) -> bool {
        self.identity == query.identity && self.camera != query.camera
    }
}

/// Row indices and tags of the query and gallery sets.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalSplit {
    pub query_rows: Vec<usize>,
    pub gallery_rows: Vec<usize>,
    pub query: Vec<SampleTag>,
    pub gallery: Vec<SampleTag>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Validates unique ids and the cross-camera rule for query identities.
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(SftError::Manifest(format!("duplicate sample_id {:?}", r.sample_id)));
            }
        }
        let mut gallery_cams: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.split == Split::Gallery) {
            gallery_cams.entry(r.identity).or_default().insert(r.camera);
        }
        for r in records.iter().filter(|r| r.split == Split::Query) {
            let ok = gallery_cams
                .get(&r.identity)
                .is_some_and(|cams| cams.iter().any(|&c| c != r.camera));
            if !ok {
                return Err(SftError::Manifest(format!(
                    "query {:?} (identity {}, camera {}) has no gallery match from another camera",
                    r.sample_id, r.identity, r.camera
                )));
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn identities(&self, rows: &[usize]) -> Vec<u32> {
        rows.iter().map(|&i| self.records[i].identity).collect()
    }

    /// Fails unless the manifest describes exactly the rows of `features`.
    pub fn check_paired(&self, features: &FeatureMatrix) -> Result<()> {
        if self.records.len() != features.n() {
            return Err(SftError::Manifest(format!(
                "manifest has {} records but features have {} rows",
                self.records.len(),
                features.n()
            )));
        }
        Ok(())
    }

    /// Train-split rows grouped by identity, in ascending identity order.
    pub fn train_groups(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.split == Split::Train {
                groups.entry(r.identity).or_default().push(i);
            }
        }
        groups
    }

    pub fn retrieval_split(&self) -> RetrievalSplit {
        let query_rows = self.rows_in(Split::Query);
        let gallery_rows = self.rows_in(Split::Gallery);
        let tag = |i: &usize| SampleTag {
            identity: self.records[*i].identity,
            camera: self.records[*i].camera,
        };
        RetrievalSplit {
            query: query_rows.iter().map(tag).collect(),
            gallery: gallery_rows.iter().map(tag).collect(),
            query_rows,
            gallery_rows,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.records.len() + 1));
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.sample_id, r.identity, r.camera, r.split));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
            Some(h) => {
                return Err(SftError::Manifest(format!("unexpected header {h:?}")));
            }
            None => return Err(SftError::Manifest("missing header row".into())),
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(SftError::Manifest(format!(
                    "line {}: expected 4 fields, found {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_u32 = |s: &str, what: &str| {
                s.parse::<u32>()
                    .map_err(|_| SftError::Manifest(format!("line {}: bad {what} {s:?}", lineno + 2)))
            };
            records.push(SampleRecord {
                sample_id: fields[0].to_string(),
                identity: parse_u32(fields[1], "identity")?,
                camera: parse_u32(fields[2], "camera")?,
                split: fields[3].parse()?,
            });
        }
        DatasetManifest::new(records)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SftError::io(path, e))?;
    DatasetManifest::from_tsv(&text)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_tsv()).map_err(|e| SftError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, identity: u32, camera: u32, split: Split) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            identity,
            camera,
            split,
        }
    }

    #[test]
    fn tsv_round_trip() {
        let m = DatasetManifest::new(vec![
            rec("a", 0, 0, Split::Query),
            rec("b", 0, 1, Split::Gallery),
            rec("c", 1, 0, Split::Train),
        ])
        .unwrap();
        let back = DatasetManifest::from_tsv(&m.to_tsv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_query_without_cross_camera_match() {
        let err = DatasetManifest::new(vec![
            rec("a", 0, 0, Split::Query),
            rec("b", 0, 0, Split::Gallery),
            rec("c", 1, 1, Split::Gallery),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("no gallery match"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids() {
        assert!(DatasetManifest::new(vec![rec("a", 0, 0, Split::Train), rec("a", 1, 0, Split::Train),]).is_err());
    }

    #[test]
    fn header_required() {
        assert!(DatasetManifest::from_tsv("a\t0\t0\ttrain\n").is_err());
        assert!(DatasetManifest::from_tsv("").is_err());
    }

    #[test]
    fn bad_fields() {
        let text = format!("{MANIFEST_HEADER}\na\tx\t0\ttrain\n");
        assert!(DatasetManifest::from_tsv(&text).is_err());
        let text = format!("{MANIFEST_HEADER}\na\t0\t0\tvalidation\n");
        assert!(DatasetManifest::from_tsv(&text).is_err());
    }

    #[test]
    fn pairing_checks_row_count() {
        let m = DatasetManifest::new(vec![rec("a", 0, 0, Split::Train)]).unwrap();
        let f = FeatureMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(m.check_paired(&f).is_err());
    }
}
