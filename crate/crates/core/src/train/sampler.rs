//! PK mini-batches: P identities, K samples each.

use std::collections::BTreeMap;

use crate::error::{Result, SftError};
use crate::manifest::DatasetManifest;
use crate::partition::Partition;
use crate::rng::PortableRng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    /// Manifest rows, grouped by identity: `K` consecutive rows per identity.
    pub rows: Vec<usize>,
    /// Class index of every row within the training label space.
    pub labels: Vec<usize>,
    pub k: usize,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.rows.len() / self.k
    }

    /// Labels over the whole training label space.
    pub fn partition(&self, num_classes: usize) -> Result<Partition> {
        Partition::with_classes(self.labels.clone(), num_classes)
    }

    /// Labels renumbered `0..P` in batch order.
    pub fn local_partition(&self) -> Partition {
        let labels = (0..self.rows.len()).map(|i| i / self.k).collect();
        Partition::with_classes(labels, self.num_identities()).expect("dense labels")
    }
}

/// Train-split rows grouped by identity; the class index of an identity is
/// its position in ascending identity order.
#[derive(Clone, Debug)]
pub struct PkSampler {
    groups: Vec<(u32, Vec<usize>)>,
}

impl PkSampler {
    pub fn new(manifest: &DatasetManifest) -> Self {
        Self::from_groups(manifest.train_groups())
    }

    pub fn from_groups(groups: BTreeMap<u32, Vec<usize>>) -> Self {
        PkSampler {
            groups: groups.into_iter().filter(|(_, r)| !r.is_empty()).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn identities(&self) -> Vec<u32> {
        self.groups.iter().map(|(id, _)| *id).collect()
    }

    pub fn num_samples(&self) -> usize {
        self.groups.iter().map(|(_, r)| r.len()).sum()
    }

    pub fn sample(&self, p: usize, k: usize, rng: &mut PortableRng) -> Result<PkBatch> {
        if self.groups.len() < p {
            return Err(SftError::NotEnoughIdentities {
                needed: p,
                found: self.groups.len(),
            });
        }
        let mut rows = Vec::with_capacity(p * k);
        let mut labels = Vec::with_capacity(p * k);
        for class in rng.sample_without_replacement(self.groups.len(), p) {
            let members = &self.groups[class].1;
            if members.len() >= k {
                for j in rng.sample_without_replacement(members.len(), k) {
                    rows.push(members[j]);
                }
            } else {
                for _ in 0..k {
                    rows.push(members[rng.below(members.len())]);
                }
            }
            labels.extend(std::iter::repeat_n(class, k));
        }
        Ok(PkBatch { rows, labels, k })
    }
}

pub fn sample_pk(manifest: &DatasetManifest, p: usize, k: usize, rng: &mut PortableRng) -> Result<PkBatch> {
    PkSampler::new(manifest).sample(p, k, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{SampleRecord, Split};

    fn manifest(sizes: &[usize]) -> DatasetManifest {
        let mut records = Vec::new();
        for (id, &n) in sizes.iter().enumerate() {
            for j in 0..n {
                records.push(SampleRecord {
                    sample_id: format!("{id}_{j}"),
                    identity: id as u32 * 10,
                    camera: j as u32,
                    split: Split::Train,
                });
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn exact_fit_covers_the_train_split() {
        let m = manifest(&[3, 3]);
        let batch = sample_pk(&m, 2, 3, &mut PortableRng::seed_from_u64(0)).unwrap();
        let mut rows = batch.rows.clone();
        rows.sort_unstable();
        assert_eq!(rows, (0..6).collect::<Vec<_>>());
        for (&r, &l) in batch.rows.iter().zip(&batch.labels) {
            assert_eq!(m.records()[r].identity, l as u32 * 10);
        }
    }

    #[test]
    fn singleton_identity_repeats() {
        let m = manifest(&[1, 5]);
        let batch = sample_pk(&m, 2, 4, &mut PortableRng::seed_from_u64(1)).unwrap();
        let ones: Vec<usize> = batch
            .rows
            .iter()
            .zip(&batch.labels)
            .filter(|(_, &l)| l == 0)
            .map(|(&r, _)| r)
            .collect();
        assert_eq!(ones, vec![0; 4]);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let m = manifest(&[4, 6, 2, 9, 5]);
        let a = sample_pk(&m, 3, 4, &mut PortableRng::seed_from_u64(9)).unwrap();
        let b = sample_pk(&m, 3, 4, &mut PortableRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        let local = a.local_partition();
        assert_eq!(local.num_classes(), 3);
        for c in 0..3 {
            let block = &a.labels[c * 4..(c + 1) * 4];
            assert!(block.iter().all(|&l| l == block[0]));
            assert_eq!(local.class_size(c), 4);
        }
        let mut ids: Vec<usize> = a.labels.iter().step_by(4).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn too_few_identities() {
        let m = manifest(&[2, 2]);
        assert!(matches!(
            sample_pk(&m, 3, 2, &mut PortableRng::seed_from_u64(0)),
            Err(SftError::NotEnoughIdentities { needed: 3, found: 2 })
        ));
    }
}
