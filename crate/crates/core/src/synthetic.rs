//! Seeded clustered data standing in for re-identification datasets.
//!
//! Two topologies are available:
//!
//! * `GaussianBlobs`: identity centres drawn from an isotropic Gaussian with
//!   norm about `inter_class_separation`, samples scattered around them with
//!   norm about `intra_class_spread`.
//! * `IntertwinedSpirals`: every identity is one arm of a family of
//!   interleaved spirals living in a random 2-D plane. Arm `c` starts at
//!   phase `2πc / num_identities`; a sample at radius `r ∈ [1, 3)` sits at
//!   angle `phase + (π/2)·r`. The plane is scaled by
//!   `inter_class_separation` and isotropic noise of norm about
//!   `intra_class_spread` is added in all dimensions. Arms overlap in angle
//!   across radii, so raw cosine similarity confuses identities.
//!
//! Sample `j` of an identity is seen by camera `j mod num_cameras`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::manifest::{DatasetManifest, SampleRecord, Split};
use crate::matrix::{dot, Matrix};
use crate::rng::PortableRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    GaussianBlobs,
    IntertwinedSpirals,
}

impl std::str::FromStr for Topology {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" | "blobs" => Ok(Topology::GaussianBlobs),
            "intertwined_spirals" | "spirals" => Ok(Topology::IntertwinedSpirals),
            other => Err(SftError::Config(format!("unknown topology {other:?}"))),
        }
    }
}

/// How generated samples are assigned to splits.
///
/// The last `test_identities` identities are held out entirely (open set).
/// Of the remaining identities, the last `heldout_per_identity` samples are
/// held out (closed set). Within each held-out group, the first
/// `queries_per_identity` samples are queries and the rest gallery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_identities: usize,
    pub heldout_per_identity: usize,
    pub queries_per_identity: usize,
}

impl SplitPlan {
    pub const ALL_TRAIN: SplitPlan = SplitPlan {
        test_identities: 0,
        heldout_per_identity: 0,
        queries_per_identity: 0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub intra_class_spread: f64,
    pub inter_class_separation: f64,
    pub topology: Topology,
    pub num_cameras: usize,
    pub seed: u64,
    pub split: SplitPlan,
}

impl Default for SyntheticSpec {
    /// 16 identities × 8 samples × 32 dimensions of spirals, half of each
    /// identity's samples held out with one query.
    fn default() -> Self {
        SyntheticSpec {
            num_identities: 16,
            samples_per_identity: 8,
            dim: 32,
            intra_class_spread: 0.1,
            inter_class_separation: 1.0,
            topology: Topology::IntertwinedSpirals,
            num_cameras: 4,
            seed: 0,
            split: SplitPlan {
                test_identities: 0,
                heldout_per_identity: 4,
                queries_per_identity: 1,
            },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SftError::Config(msg));
        if self.num_identities == 0 || self.samples_per_identity == 0 || self.dim == 0 {
            return bad("identity, sample and dimension counts must be at least 1".into());
        }
        if self.num_cameras == 0 {
            return bad("num_cameras must be at least 1".into());
        }
        if !(self.intra_class_spread > 0.0 && self.intra_class_spread.is_finite()) {
            return bad(format!(
                "intra_class_spread must be positive, got {}",
                self.intra_class_spread
            ));
        }
        if !(self.inter_class_separation > 0.0 && self.inter_class_separation.is_finite()) {
            return bad(format!(
                "inter_class_separation must be positive, got {}",
                self.inter_class_separation
            ));
        }
        if self.topology == Topology::IntertwinedSpirals && self.dim < 2 {
            return bad("spirals need dim >= 2".into());
        }
        let plan = &self.split;
        if plan.test_identities > self.num_identities {
            return bad("more test identities than identities".into());
        }
        if plan.heldout_per_identity > self.samples_per_identity {
            return bad("more held-out samples than samples per identity".into());
        }
        let mut groups = Vec::new();
        if plan.test_identities > 0 {
            groups.push(self.samples_per_identity);
        }
        if plan.heldout_per_identity > 0 && plan.test_identities < self.num_identities {
            groups.push(plan.heldout_per_identity);
        }
        if plan.queries_per_identity > 0 && groups.iter().any(|&g| plan.queries_per_identity >= g) {
            return bad("each held-out group needs at least one gallery sample".into());
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_identities * self.samples_per_identity
    }
}

fn random_unit(rng: &mut PortableRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gram–Schmidt of `b` against unit `a`.
fn orthonormal_to(a: &[f64], b: Vec<f64>) -> Vec<f64> {
    let p = dot(a, &b);
    let v: Vec<f64> = b.iter().zip(a).map(|(bi, ai)| bi - p * ai).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Generates features and a manifest; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, DatasetManifest)> {
    spec.validate()?;
    let dim = spec.dim;
    let mut rng = PortableRng::seed_from_u64(spec.seed);
    let noise_scale = spec.intra_class_spread / (dim as f64).sqrt();

    let mut data = Matrix::zeros(spec.num_samples(), dim);
    match spec.topology {
        Topology::GaussianBlobs => {
            let center_scale = spec.inter_class_separation / (dim as f64).sqrt();
            let centers: Vec<Vec<f64>> = (0..spec.num_identities)
                .map(|_| (0..dim).map(|_| rng.normal() * center_scale).collect())
                .collect();
            for (c, center) in centers.iter().enumerate() {
                for j in 0..spec.samples_per_identity {
                    let row = data.row_mut(c * spec.samples_per_identity + j);
                    for (x, mu) in row.iter_mut().zip(center) {
                        *x = mu + rng.normal() * noise_scale;
                    }
                }
            }
        }
        Topology::IntertwinedSpirals => {
            let e1 = random_unit(&mut rng, dim);
            let e2 = loop {
                let e2 = orthonormal_to(&e1, random_unit(&mut rng, dim));
                if e2.iter().all(|v| v.is_finite()) {
                    break e2;
                }
            };
            let winding = std::f64::consts::FRAC_PI_2;
            for c in 0..spec.num_identities {
                let phase = std::f64::consts::TAU * c as f64 / spec.num_identities as f64;
                for j in 0..spec.samples_per_identity {
                    let r = 1.0 + 2.0 * rng.uniform();
                    let theta = phase + winding * r;
                    let (a, b) = (
                        spec.inter_class_separation * r * theta.cos() / 3.0,
                        spec.inter_class_separation * r * theta.sin() / 3.0,
                    );
                    let row = data.row_mut(c * spec.samples_per_identity + j);
                    for k in 0..dim {
                        row[k] = a * e1[k] + b * e2[k] + rng.normal() * noise_scale;
                    }
                }
            }
        }
    }

    let manifest = DatasetManifest::new(assign_splits(spec))?;
    Ok((FeatureMatrix::from_matrix(data)?, manifest))
}

fn assign_splits(spec: &SyntheticSpec) -> Vec<SampleRecord> {
    let plan = &spec.split;
    let first_test_identity = spec.num_identities - plan.test_identities;
    let mut records = Vec::with_capacity(spec.num_samples());
    for c in 0..spec.num_identities {
        let held_from = if c >= first_test_identity {
            0
        } else {
            spec.samples_per_identity - plan.heldout_per_identity
        };
        for j in 0..spec.samples_per_identity {
            let split = if j < held_from {
                Split::Train
            } else if j - held_from < plan.queries_per_identity {
                Split::Query
            } else {
                Split::Gallery
            };
            records.push(SampleRecord {
                sample_id: format!("id{c:04}_s{j:04}"),
                identity: c as u32,
                camera: (j % spec.num_cameras) as u32,
                split,
            });
        }
    }
    records
}
