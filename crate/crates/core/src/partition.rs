use std::collections::BTreeMap;

use crate::error::{Result, SftError};

/// Class assignment of `n` samples to `num_classes` dense indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    num_classes: usize,
}

impl Partition {
    /// `num_classes` is one more than the largest label.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(labels, num_classes)
    }

    pub fn with_classes(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(SftError::DegeneratePartition("no samples".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(SftError::LabelOutOfRange { label, num_classes });
        }
        Ok(Partition { labels, num_classes })
    }

    /// Maps arbitrary identity values to dense class indices in ascending
    /// identity order. Returns the partition and the identity of each class.
    pub fn from_identities(identities: &[u32]) -> Result<(Self, Vec<u32>)> {
        let mut index = BTreeMap::new();
        for &id in identities {
            index.entry(id).or_insert(0usize);
        }
        let classes: Vec<u32> = index.keys().copied().collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let labels = identities.iter().map(|id| index[id]).collect();
        Ok((Self::with_classes(labels, classes.len())?, classes))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Number of classes with at least one member.
    pub fn occupied_classes(&self) -> usize {
        let mut seen = vec![false; self.num_classes];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.into_iter().filter(|&s| s).count()
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(SftError::LabelOutOfRange {
                label: class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Reorders samples: sample `i` of the result is sample `perm[i]` here.
    pub fn permuted(&self, perm: &[usize]) -> Partition {
        Partition {
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            num_classes: self.num_classes,
        }
    }
}
